#include "eegbridge/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "eegbridge/csv.hpp"
#include "eegbridge/error.hpp"

namespace eegbridge {

namespace {

constexpr std::string_view kParticipantColumn = "participant_id";
constexpr std::string_view kPortionColumn = "task_portion";

bool looks_non_finite(std::string_view field) {
  std::string lower;
  for (char c : field) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (!lower.empty() && (lower.front() == '-' || lower.front() == '+')) lower.erase(0, 1);
  return lower == "nan" || lower == "inf" || lower == "infinity";
}

}  // namespace

std::string_view to_string(Portion p) {
  switch (p) {
    case Portion::P1: return "P1";
    case Portion::P2: return "P2";
    case Portion::P3: return "P3";
    case Portion::P4: return "P4";
  }
  return "P?";
}

Portion parse_portion(std::string_view label) {
  if (label == "P1") return Portion::P1;
  if (label == "P2") return Portion::P2;
  if (label == "P3") return Portion::P3;
  if (label == "P4") return Portion::P4;
  fail(ErrorCode::kUnknownPortion, "task portion '" + std::string(label) + "' is not one of P1-P4");
}

std::string_view to_string(FeatureSpace s) {
  return s == FeatureSpace::kRaw ? "raw" : "normalized";
}

FeatureSchema::FeatureSchema(std::vector<std::string> names) : names_(std::move(names)) {
  if (names_.empty()) fail(ErrorCode::kInvalidArgument, "feature schema needs at least one feature");
  std::unordered_set<std::string> seen;
  for (const auto& n : names_) {
    if (n.empty()) fail(ErrorCode::kInvalidArgument, "feature names must be non-empty");
    if (!seen.insert(n).second) fail(ErrorCode::kInvalidArgument, "duplicate feature name '" + n + "'");
  }
}

Dataset::Dataset(FeatureSchema schema, FeatureSpace space)
    : schema_(std::move(schema)), space_(space) {}

void Dataset::add(Sample sample) {
  if (static_cast<std::size_t>(sample.features.size()) != schema_.dimension()) {
    fail(ErrorCode::kDimensionMismatch,
         "sample has " + std::to_string(sample.features.size()) + " features, schema has " +
             std::to_string(schema_.dimension()));
  }
  if (!sample.features.allFinite()) {
    fail(ErrorCode::kNonFiniteValue, "sample for participant '" + sample.participant + "' is not finite");
  }
  samples_.push_back(std::move(sample));
}

std::vector<std::string> Dataset::participants() const {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& s : samples_) {
    if (seen.insert(s.participant).second) out.push_back(s.participant);
  }
  return out;
}

std::size_t Dataset::group_size(std::string_view participant, Portion portion) const {
  return static_cast<std::size_t>(std::count_if(samples_.begin(), samples_.end(), [&](const Sample& s) {
    return s.portion == portion && s.participant == participant;
  }));
}

bool Dataset::has_group(std::string_view participant, Portion portion) const {
  return std::any_of(samples_.begin(), samples_.end(), [&](const Sample& s) {
    return s.portion == portion && s.participant == participant;
  });
}

Dataset read_dataset(std::istream& in, const std::optional<FeatureSchema>& schema,
                     const std::string& source_name) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (csv::is_skippable(line)) continue;
    header = csv::split_line(line);
    break;
  }
  if (header.empty()) fail(ErrorCode::kEmptyFile, source_name + " has no header row");

  const auto column_of = [&](std::string_view name) -> std::optional<std::size_t> {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto pid_col = column_of(kParticipantColumn);
  const auto portion_col = column_of(kPortionColumn);
  if (!pid_col) fail(ErrorCode::kMissingColumn, source_name + ": missing column participant_id");
  if (!portion_col) fail(ErrorCode::kMissingColumn, source_name + ": missing column task_portion");

  std::vector<std::string> names;
  std::vector<std::size_t> feature_cols;
  if (schema) {
    for (const auto& n : schema->names()) {
      const auto c = column_of(n);
      if (!c) fail(ErrorCode::kMissingColumn, source_name + ": missing feature column " + n);
      feature_cols.push_back(*c);
    }
    names = schema->names();
  } else {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (c == *pid_col || c == *portion_col) continue;
      names.push_back(header[c]);
      feature_cols.push_back(c);
    }
  }
  Dataset dataset(FeatureSchema(names), FeatureSpace::kRaw);

  std::size_t data_row = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (csv::is_skippable(line)) continue;
    ++data_row;
    const auto fields = csv::split_line(line);
    if (fields.size() != header.size()) {
      fail(ErrorCode::kParseError, source_name + " line " + std::to_string(line_no) + ": expected " +
                                       std::to_string(header.size()) + " fields, got " +
                                       std::to_string(fields.size()));
    }
    Sample s;
    s.participant = fields[*pid_col];
    if (s.participant.empty()) {
      fail(ErrorCode::kParseError, source_name + " line " + std::to_string(line_no) + ": empty participant_id");
    }
    s.portion = parse_portion(fields[*portion_col]);
    s.features.resize(static_cast<Eigen::Index>(feature_cols.size()));
    for (std::size_t k = 0; k < feature_cols.size(); ++k) {
      const auto& field = fields[feature_cols[k]];
      double v = 0.0;
      const bool ok = csv::parse_double(field, v);
      if (looks_non_finite(field) || (ok && !std::isfinite(v))) {
        fail(ErrorCode::kNonFiniteValue, source_name + " row " + std::to_string(data_row) + " (line " +
                                             std::to_string(line_no) + "), column " + names[k] +
                                             ": value '" + field + "' is not finite");
      }
      if (!ok) {
        fail(ErrorCode::kParseError, source_name + " line " + std::to_string(line_no) + ", column " +
                                         names[k] + ": cannot parse '" + field + "'");
      }
      s.features[static_cast<Eigen::Index>(k)] = v;
    }
    dataset.add(std::move(s));
  }
  return dataset;
}

Dataset load_dataset(const std::filesystem::path& path, const std::optional<FeatureSchema>& schema) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIoError, "cannot open " + path.string());
  return read_dataset(in, schema, path.string());
}

void write_dataset(std::ostream& out, const Dataset& dataset) {
  out << kParticipantColumn << ',' << kPortionColumn;
  for (const auto& n : dataset.schema().names()) out << ',' << n;
  out << '\n';
  for (const auto& s : dataset.samples()) {
    out << s.participant << ',' << to_string(s.portion);
    for (Eigen::Index i = 0; i < s.features.size(); ++i) out << ',' << csv::format_double(s.features[i]);
    out << '\n';
  }
}

void save_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIoError, "cannot write " + path.string());
  write_dataset(out, dataset);
}

FeatureMatrix group(const Dataset& dataset, std::string_view participant, Portion portion) {
  const auto n = dataset.group_size(participant, portion);
  if (n == 0) {
    fail(ErrorCode::kEmptyGroup, "no samples for participant '" + std::string(participant) + "' portion " +
                                     std::string(to_string(portion)));
  }
  FeatureMatrix out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dataset.schema().dimension()));
  Eigen::Index row = 0;
  for (const auto& s : dataset.samples()) {
    if (s.portion == portion && s.participant == participant) out.row(row++) = s.features.transpose();
  }
  return out;
}

FeatureStats feature_statistics(const FeatureMatrix& samples) {
  if (samples.rows() == 0) fail(ErrorCode::kEmptyGroup, "feature statistics of an empty set");
  FeatureStats st;
  const double n = static_cast<double>(samples.rows());
  st.mean = samples.colwise().sum().transpose() / n;
  const FeatureMatrix centered = samples.rowwise() - st.mean.transpose();
  st.std = (centered.array().square().colwise().sum().transpose() / n).sqrt().matrix();
  return st;
}

FeatureStats feature_statistics(const Dataset& dataset) {
  return feature_statistics(to_matrix(dataset));
}

FeatureStats feature_statistics(const Dataset& dataset, std::string_view participant, Portion portion) {
  return feature_statistics(group(dataset, participant, portion));
}

FeatureMatrix to_matrix(const Dataset& dataset) {
  FeatureMatrix out(static_cast<Eigen::Index>(dataset.size()),
                    static_cast<Eigen::Index>(dataset.schema().dimension()));
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = dataset.samples()[i].features.transpose();
  }
  return out;
}

}  // namespace eegbridge
