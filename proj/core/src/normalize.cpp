#include "eegbridge/normalize.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "eegbridge/csv.hpp"
#include "eegbridge/error.hpp"

namespace eegbridge {

void ClipRange::validate() const {
  if (!(lo < hi)) {
    fail(ErrorCode::kInvalidArgument,
         "clip range requires lo < hi, got [" + csv::format_double(lo) + ", " + csv::format_double(hi) + "]");
  }
}

BaselineStats compute_baseline(const Dataset& dataset, const std::string& participant,
                               Portion baseline_portion, double eps) {
  if (!(eps > 0.0)) fail(ErrorCode::kInvalidArgument, "normalization eps must be positive");
  const auto st = feature_statistics(group(dataset, participant, baseline_portion));
  return BaselineStats{participant, st.mean, st.std, eps, baseline_portion};
}

Eigen::VectorXd apply(const Eigen::VectorXd& x, const BaselineStats& stats, const ClipRange& clip) {
  if (x.size() != stats.mu.size()) {
    fail(ErrorCode::kDimensionMismatch, "vector of length " + std::to_string(x.size()) +
                                            " against baseline of length " + std::to_string(stats.mu.size()));
  }
  Eigen::VectorXd out(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    out[i] = std::clamp((x[i] - stats.mu[i]) / (stats.sigma[i] + stats.eps), clip.lo, clip.hi);
  }
  return out;
}

Eigen::VectorXd invert(const Eigen::VectorXd& x_norm, const BaselineStats& stats) {
  if (x_norm.size() != stats.mu.size()) {
    fail(ErrorCode::kDimensionMismatch, "vector of length " + std::to_string(x_norm.size()) +
                                            " against baseline of length " + std::to_string(stats.mu.size()));
  }
  return (x_norm.array() * (stats.sigma.array() + stats.eps) + stats.mu.array()).matrix();
}

const BaselineStats& find_stats(const std::vector<BaselineStats>& stats, const std::string& participant) {
  const auto it = std::find_if(stats.begin(), stats.end(),
                               [&](const BaselineStats& s) { return s.participant == participant; });
  if (it == stats.end()) fail(ErrorCode::kEmptyGroup, "no baseline statistics for participant '" + participant + "'");
  return *it;
}

NormalizationResult normalize_dataset(const Dataset& dataset, Portion baseline_portion, double eps,
                                      const ClipRange& clip) {
  clip.validate();
  NormalizationResult result{Dataset(dataset.schema(), FeatureSpace::kNormalized), {}};
  for (const auto& p : dataset.participants()) {
    if (!dataset.has_group(p, baseline_portion)) {
      fail(ErrorCode::kEmptyGroup, p);
    }
    result.stats.push_back(compute_baseline(dataset, p, baseline_portion, eps));
  }
  for (const auto& s : dataset.samples()) {
    const auto& st = find_stats(result.stats, s.participant);
    result.dataset.add(Sample{s.participant, s.portion, apply(s.features, st, clip)});
  }
  return result;
}

Dataset denormalize_dataset(const Dataset& normalized, const std::vector<BaselineStats>& stats) {
  Dataset out(normalized.schema(), FeatureSpace::kRaw);
  for (const auto& s : normalized.samples()) {
    out.add(Sample{s.participant, s.portion, invert(s.features, find_stats(stats, s.participant))});
  }
  return out;
}

void write_baseline_stats(std::ostream& out, const FeatureSchema& schema,
                          const std::vector<BaselineStats>& stats) {
  const double eps = stats.empty() ? kDefaultNormalizationEps : stats.front().eps;
  const auto baseline = stats.empty() ? Portion::P1 : stats.front().baseline_portion;
  out << "# eps=" << csv::format_double(eps) << " baseline=" << to_string(baseline) << '\n';
  out << "participant_id";
  for (const auto& n : schema.names()) out << ",mu_" << n;
  for (const auto& n : schema.names()) out << ",sigma_" << n;
  out << '\n';
  for (const auto& s : stats) {
    out << s.participant;
    for (Eigen::Index i = 0; i < s.mu.size(); ++i) out << ',' << csv::format_double(s.mu[i]);
    for (Eigen::Index i = 0; i < s.sigma.size(); ++i) out << ',' << csv::format_double(s.sigma[i]);
    out << '\n';
  }
}

void save_baseline_stats(const std::filesystem::path& path, const FeatureSchema& schema,
                         const std::vector<BaselineStats>& stats) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIoError, "cannot write " + path.string());
  write_baseline_stats(out, schema, stats);
}

std::vector<BaselineStats> read_baseline_stats(std::istream& in, const FeatureSchema& schema) {
  double eps = kDefaultNormalizationEps;
  Portion baseline = Portion::P1;
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    const auto t = csv::trim(line);
    if (t.empty()) continue;
    if (t.front() == '#') {
      std::istringstream meta(t.substr(1));
      std::string token;
      while (meta >> token) {
        const auto eq = token.find('=');
        if (eq == std::string::npos) continue;
        const auto key = token.substr(0, eq);
        const auto value = token.substr(eq + 1);
        if (key == "eps" && !csv::parse_double(value, eps)) {
          fail(ErrorCode::kParseError, "baseline stats: bad eps '" + value + "'");
        }
        if (key == "baseline") baseline = parse_portion(value);
      }
      continue;
    }
    header = csv::split_line(t);
    break;
  }
  const auto d = schema.dimension();
  if (header.size() != 1 + 2 * d || header[0] != "participant_id") {
    fail(ErrorCode::kSchemaMismatch, "baseline stats header does not match the feature schema");
  }
  for (std::size_t i = 0; i < d; ++i) {
    if (header[1 + i] != "mu_" + schema.names()[i] || header[1 + d + i] != "sigma_" + schema.names()[i]) {
      fail(ErrorCode::kSchemaMismatch, "baseline stats column order does not match the feature schema");
    }
  }
  std::vector<BaselineStats> stats;
  while (std::getline(in, line)) {
    if (csv::is_skippable(line)) continue;
    const auto f = csv::split_line(line);
    if (f.size() != header.size()) fail(ErrorCode::kParseError, "baseline stats: wrong field count");
    BaselineStats s{f[0], Eigen::VectorXd(static_cast<Eigen::Index>(d)),
                    Eigen::VectorXd(static_cast<Eigen::Index>(d)), eps, baseline};
    for (std::size_t i = 0; i < d; ++i) {
      if (!csv::parse_double(f[1 + i], s.mu[static_cast<Eigen::Index>(i)]) ||
          !csv::parse_double(f[1 + d + i], s.sigma[static_cast<Eigen::Index>(i)])) {
        fail(ErrorCode::kParseError, "baseline stats: bad number for participant '" + f[0] + "'");
      }
    }
    stats.push_back(std::move(s));
  }
  return stats;
}

std::vector<BaselineStats> load_baseline_stats(const std::filesystem::path& path, const FeatureSchema& schema) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIoError, "cannot open " + path.string());
  return read_baseline_stats(in, schema);
}

}  // namespace eegbridge
