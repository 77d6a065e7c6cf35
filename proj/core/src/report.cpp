#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "eegbridge/csv.hpp"
#include "eegbridge/error.hpp"
#include "eegbridge/harness.hpp"

namespace eegbridge {

namespace {

using Json = nlohmann::ordered_json;

Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

double number_from(const Json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

Json matrix_json(const Eigen::MatrixXd& m) {
  auto rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    auto row = Json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(number_or_null(m(i, k)));
    rows.push_back(row);
  }
  return rows;
}

Eigen::MatrixXd matrix_from(const Json& j, std::size_t rows, std::size_t cols) {
  if (!j.is_array() || j.size() != rows) fail(ErrorCode::kParseError, "energy matrix has the wrong row count");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows; ++i) {
    if (!j[i].is_array() || j[i].size() != cols) fail(ErrorCode::kParseError, "energy matrix has a ragged row");
    for (std::size_t k = 0; k < cols; ++k) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = number_from(j[i][k]);
    }
  }
  return m;
}

std::string fixed(double v, int digits) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(digits) << v;
  return out.str();
}

std::string svg_escape(const std::string& s) {
  std::string out;
  for (const char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

const char* const kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};

}  // namespace

void write_comparison_json(std::ostream& out, const ComparisonReport& r) {
  Json j;
  j["participants"] = r.participants;
  auto labels = Json::array();
  for (const auto& t : r.transitions) labels.push_back(t.label());
  j["transitions"] = labels;
  j["direction_agreement"] = number_or_null(r.direction_agreement);
  j["real_direction_consistency"] = number_or_null(r.real_direction_consistency);
  j["synth_direction_consistency"] = number_or_null(r.synth_direction_consistency);
  auto per = Json::array();
  for (std::size_t k = 0; k < r.transitions.size(); ++k) {
    Json t;
    t["transition"] = r.transitions[k].label();
    t["rank_correlation"] = number_or_null(r.rank_correlation[k]);
    t["real_mean"] = number_or_null(r.real_summary[k].mean);
    t["real_std"] = number_or_null(r.real_summary[k].std);
    t["synth_mean"] = number_or_null(r.synth_summary[k].mean);
    t["synth_std"] = number_or_null(r.synth_summary[k].std);
    per.push_back(t);
  }
  j["per_transition"] = per;
  j["energies_real"] = matrix_json(r.real);
  j["energies_synth"] = matrix_json(r.synth);
  out << j.dump(2) << '\n';
}

void save_comparison_json(const std::filesystem::path& path, const ComparisonReport& report) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIoError, "cannot write " + path.string());
  write_comparison_json(out, report);
}

ComparisonReport read_comparison_json(std::istream& in) {
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParseError, std::string("comparison report: ") + e.what());
  }
  ComparisonReport r;
  try {
    r.participants = j.at("participants").get<std::vector<std::string>>();
    for (const auto& label : j.at("transitions")) {
      const auto parsed = parse_transitions(label.get<std::string>());
      r.transitions.push_back(parsed.at(0));
    }
    r.direction_agreement = number_from(j.at("direction_agreement"));
    r.real_direction_consistency = number_from(j.at("real_direction_consistency"));
    r.synth_direction_consistency = number_from(j.at("synth_direction_consistency"));
    const auto& per = j.at("per_transition");
    if (per.size() != r.transitions.size()) fail(ErrorCode::kParseError, "per_transition length mismatch");
    for (const auto& t : per) {
      r.rank_correlation.push_back(number_from(t.at("rank_correlation")));
      r.real_summary.push_back({number_from(t.at("real_mean")), number_from(t.at("real_std"))});
      r.synth_summary.push_back({number_from(t.at("synth_mean")), number_from(t.at("synth_std"))});
    }
    r.real = matrix_from(j.at("energies_real"), r.participants.size(), r.transitions.size());
    r.synth = matrix_from(j.at("energies_synth"), r.participants.size(), r.transitions.size());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParseError, std::string("comparison report: ") + e.what());
  }
  return r;
}

ComparisonReport load_comparison_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIoError, "cannot open " + path.string());
  return read_comparison_json(in);
}

FeatureReport feature_report(const Dataset& real, const Dataset& synth, const ClipRange& clip, int bins) {
  if (!(real.schema() == synth.schema())) fail(ErrorCode::kSchemaMismatch, "real and synthetic schemas differ");
  clip.validate();
  if (bins < 1) fail(ErrorCode::kInvalidArgument, "histogram needs at least one bin");
  if (real.empty() || synth.empty()) fail(ErrorCode::kEmptyGroup, "feature report needs samples from both sources");
  FeatureReport r;
  r.names = real.schema().names();
  const auto xr = to_matrix(real);
  const auto xs = to_matrix(synth);
  r.real = feature_statistics(xr);
  r.synth = feature_statistics(xs);
  const double width = (clip.hi - clip.lo) / bins;
  const auto fill = [&](const FeatureMatrix& x, Eigen::Index f, std::vector<long>& counts) {
    counts.assign(static_cast<std::size_t>(bins), 0);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double v = x(i, f);
      if (v < clip.lo || v > clip.hi) continue;
      const auto b = std::min(bins - 1, static_cast<int>(std::floor((v - clip.lo) / width)));
      ++counts[static_cast<std::size_t>(b)];
    }
  };
  for (Eigen::Index f = 0; f < xr.cols(); ++f) {
    FeatureHistogram h;
    h.lo = clip.lo;
    h.hi = clip.hi;
    fill(xr, f, h.real);
    fill(xs, f, h.synth);
    r.histograms.push_back(std::move(h));
  }
  return r;
}

void write_feature_report(std::ostream& out, const FeatureReport& r) {
  out << "feature,real_mean,real_std,gan_mean,gan_std\n";
  for (std::size_t f = 0; f < r.names.size(); ++f) {
    const auto i = static_cast<Eigen::Index>(f);
    out << r.names[f] << ',' << csv::format_double(r.real.mean[i]) << ',' << csv::format_double(r.real.std[i]) << ','
        << csv::format_double(r.synth.mean[i]) << ',' << csv::format_double(r.synth.std[i]) << '\n';
  }
}

FeatureReport read_feature_report(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::kEmptyFile, "feature report is empty");
  if (csv::split_line(line) != std::vector<std::string>{"feature", "real_mean", "real_std", "gan_mean", "gan_std"}) {
    fail(ErrorCode::kSchemaMismatch, "unexpected feature report header '" + line + "'");
  }
  FeatureReport r;
  std::vector<std::array<double, 4>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (csv::is_skippable(line)) continue;
    const auto fields = csv::split_line(line);
    if (fields.size() != 5) fail(ErrorCode::kParseError, "feature report line " + std::to_string(line_no));
    std::array<double, 4> v{};
    for (std::size_t k = 0; k < 4; ++k) {
      if (!csv::parse_double(fields[k + 1], v[k])) {
        fail(ErrorCode::kParseError, "feature report line " + std::to_string(line_no) + ": '" + fields[k + 1] + "'");
      }
    }
    r.names.push_back(fields[0]);
    rows.push_back(v);
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  r.real.mean.resize(n);
  r.real.std.resize(n);
  r.synth.mean.resize(n);
  r.synth.std.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& v = rows[static_cast<std::size_t>(i)];
    r.real.mean[i] = v[0];
    r.real.std[i] = v[1];
    r.synth.mean[i] = v[2];
    r.synth.std[i] = v[3];
  }
  return r;
}

void write_feature_histograms(std::ostream& out, const FeatureReport& r) {
  out << "feature,source,bin,lo,hi,count\n";
  for (std::size_t f = 0; f < r.histograms.size(); ++f) {
    const auto& h = r.histograms[f];
    const auto bins = h.real.size();
    const double width = (h.hi - h.lo) / static_cast<double>(bins);
    for (const auto& [source, counts] : {std::pair{"real", &h.real}, std::pair{"gan", &h.synth}}) {
      for (std::size_t b = 0; b < bins; ++b) {
        out << r.names[f] << ',' << source << ',' << b << ',' << csv::format_double(h.lo + width * b) << ','
            << csv::format_double(h.lo + width * (b + 1)) << ',' << (*counts)[b] << '\n';
      }
    }
  }
}

std::string format_feature_row(const std::string& name, double real_mean, double real_std, double gan_mean,
                               double gan_std) {
  std::ostringstream out;
  out << std::left << std::setw(12) << name << std::right;
  for (const double v : {real_mean, real_std, gan_mean, gan_std}) out << std::setw(10) << fixed(v, 4);
  return out.str();
}

void write_feature_table(std::ostream& out, const FeatureReport& r) {
  std::ostringstream header;
  header << std::left << std::setw(12) << "feature" << std::right << std::setw(10) << "real_mean" << std::setw(10)
         << "real_std" << std::setw(10) << "gan_mean" << std::setw(10) << "gan_std";
  out << header.str() << '\n';
  for (std::size_t f = 0; f < r.names.size(); ++f) {
    const auto i = static_cast<Eigen::Index>(f);
    out << format_feature_row(r.names[f], r.real.mean[i], r.real.std[i], r.synth.mean[i], r.synth.std[i]) << '\n';
  }
}

void write_plots(const std::filesystem::path& dir, const ComparisonReport& r) {
  std::filesystem::create_directories(dir);
  const auto nt = r.transitions.size();
  const auto np = r.participants.size();

  {
    std::ofstream csv_out(dir / "group_summary.csv");
    csv_out << "transition,source,mean,std\n";
    for (std::size_t k = 0; k < nt; ++k) {
      csv_out << r.transitions[k].label() << ",real," << csv::format_double(r.real_summary[k].mean) << ','
              << csv::format_double(r.real_summary[k].std) << '\n';
      csv_out << r.transitions[k].label() << ",gan," << csv::format_double(r.synth_summary[k].mean) << ','
              << csv::format_double(r.synth_summary[k].std) << '\n';
    }
  }
  {
    std::ofstream csv_out(dir / "participant_trends.csv");
    csv_out << "participant_id";
    for (const auto& t : r.transitions) csv_out << ",real_" << t.label() << ",gan_" << t.label();
    csv_out << '\n';
    for (std::size_t i = 0; i < np; ++i) {
      csv_out << r.participants[i];
      for (std::size_t k = 0; k < nt; ++k) {
        const auto ii = static_cast<Eigen::Index>(i);
        const auto kk = static_cast<Eigen::Index>(k);
        csv_out << ',' << csv::format_double(r.real(ii, kk)) << ',' << csv::format_double(r.synth(ii, kk));
      }
      csv_out << '\n';
    }
  }

  constexpr double kW = 640.0;
  constexpr double kH = 400.0;
  constexpr double kLeft = 70.0;
  constexpr double kRight = 20.0;
  constexpr double kTop = 30.0;
  constexpr double kBottom = 60.0;
  const double plot_w = kW - kLeft - kRight;
  const double plot_h = kH - kTop - kBottom;
  const auto header = [&](std::ostream& out, const std::string& title) {
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << kW / 2 << "\" y=\"18\" text-anchor=\"middle\">" << svg_escape(title) << "</text>\n";
    out << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + plot_h << "\" x2=\"" << kLeft + plot_w << "\" y2=\""
        << kTop + plot_h << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kTop + plot_h
        << "\" stroke=\"black\"/>\n";
  };
  const auto y_axis = [&](std::ostream& out, double ymax) {
    for (int tick = 0; tick <= 4; ++tick) {
      const double v = ymax * tick / 4.0;
      const double y = kTop + plot_h - plot_h * tick / 4.0;
      out << "<text x=\"" << kLeft - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << fixed(v, 3)
          << "</text>\n";
    }
  };

  {
    double ymax = 0.0;
    for (std::size_t k = 0; k < nt; ++k) {
      ymax = std::max({ymax, r.real_summary[k].mean + r.real_summary[k].std,
                       r.synth_summary[k].mean + r.synth_summary[k].std});
    }
    if (!(ymax > 0.0) || !std::isfinite(ymax)) ymax = 1.0;
    std::ofstream out(dir / "group_summary.svg");
    header(out, "Group SBP energy (mean +/- std)");
    y_axis(out, ymax);
    const double slot = plot_w / static_cast<double>(std::max<std::size_t>(nt, 1));
    const double bar = slot * 0.3;
    for (std::size_t k = 0; k < nt; ++k) {
      const double x0 = kLeft + slot * k + slot * 0.2;
      for (int s = 0; s < 2; ++s) {
        const auto& g = s == 0 ? r.real_summary[k] : r.synth_summary[k];
        const double x = x0 + bar * s;
        const double h = plot_h * std::max(0.0, g.mean) / ymax;
        out << "<rect x=\"" << x << "\" y=\"" << kTop + plot_h - h << "\" width=\"" << bar * 0.9 << "\" height=\""
            << h << "\" fill=\"" << kPalette[s] << "\"/>\n";
        const double cx = x + bar * 0.45;
        const double y_lo = kTop + plot_h - plot_h * std::max(0.0, g.mean - g.std) / ymax;
        const double y_hi = kTop + plot_h - plot_h * (g.mean + g.std) / ymax;
        out << "<line x1=\"" << cx << "\" y1=\"" << y_lo << "\" x2=\"" << cx << "\" y2=\"" << y_hi
            << "\" stroke=\"black\"/>\n";
      }
      out << "<text x=\"" << x0 + bar << "\" y=\"" << kTop + plot_h + 18 << "\" text-anchor=\"middle\">"
          << svg_escape(r.transitions[k].label()) << "</text>\n";
    }
    out << "<rect x=\"" << kLeft + 10 << "\" y=\"" << kH - 24 << "\" width=\"10\" height=\"10\" fill=\""
        << kPalette[0] << "\"/><text x=\"" << kLeft + 24 << "\" y=\"" << kH - 15 << "\">real</text>\n";
    out << "<rect x=\"" << kLeft + 80 << "\" y=\"" << kH - 24 << "\" width=\"10\" height=\"10\" fill=\""
        << kPalette[1] << "\"/><text x=\"" << kLeft + 94 << "\" y=\"" << kH - 15 << "\">gan</text>\n";
    out << "</svg>\n";
  }

  {
    double ymax = std::max(r.real.size() ? r.real.maxCoeff() : 0.0, r.synth.size() ? r.synth.maxCoeff() : 0.0);
    if (!(ymax > 0.0) || !std::isfinite(ymax)) ymax = 1.0;
    std::ofstream out(dir / "participant_trends.svg");
    header(out, "Per-participant SBP energy");
    y_axis(out, ymax);
    const double step = np > 1 ? plot_w / static_cast<double>(np - 1) : 0.0;
    for (std::size_t i = 0; i < np; ++i) {
      out << "<text x=\"" << kLeft + step * i << "\" y=\"" << kTop + plot_h + 18 << "\" text-anchor=\"middle\">"
          << svg_escape(r.participants[i]) << "</text>\n";
    }
    std::size_t series = 0;
    for (std::size_t k = 0; k < nt; ++k) {
      for (int s = 0; s < 2; ++s, ++series) {
        const auto& m = s == 0 ? r.real : r.synth;
        out << "<polyline fill=\"none\" stroke=\"" << kPalette[series % 6] << "\""
            << (s == 1 ? " stroke-dasharray=\"5,3\"" : "") << " points=\"";
        for (std::size_t i = 0; i < np; ++i) {
          const double v = m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
          out << kLeft + step * i << ',' << kTop + plot_h - plot_h * std::max(0.0, v) / ymax << ' ';
        }
        out << "\"/>\n";
        out << "<text x=\"" << kLeft + 10 + 150 * (series % 4) << "\" y=\"" << kH - 15 - 14 * (series / 4)
            << "\" fill=\"" << kPalette[series % 6] << "\">" << (s == 0 ? "real " : "gan ")
            << svg_escape(r.transitions[k].label()) << "</text>\n";
      }
    }
    out << "</svg>\n";
  }
}

}  // namespace eegbridge
