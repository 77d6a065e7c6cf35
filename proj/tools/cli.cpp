#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <CLI11.hpp>

#include "eegbridge/adaptive.hpp"
#include "eegbridge/config.hpp"
#include "eegbridge/csv.hpp"
#include "eegbridge/dataset.hpp"
#include "eegbridge/gan.hpp"
#include "eegbridge/harness.hpp"
#include "eegbridge/manifest.hpp"
#include "eegbridge/normalize.hpp"
#include "eegbridge/random.hpp"
#include "eegbridge/sbp.hpp"

namespace fs = std::filesystem;

namespace eegbridge::cli {

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNotConverged:
    case ErrorCode::kNumericalOverflow:
    case ErrorCode::kDivergenceDetected:
    case ErrorCode::kIoError:
      return kExitRuntime;
    default:
      return kExitValidation;
  }
}

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string config_path;
  std::vector<std::string> overrides;
  bool strict = false;
};

struct Invocation {
  Config effective;
  ExperimentConfig cfg;
};

Invocation resolve(const Globals& g) {
  Invocation inv;
  if (!g.config_path.empty()) inv.effective = Config::load(g.config_path);
  for (const auto& o : g.overrides) inv.effective.set_override(o);
  if (g.seed) inv.effective.set("seed", std::to_string(*g.seed));
  if (g.threads) inv.effective.set("threads", std::to_string(*g.threads));
  if (g.strict) inv.effective.set("strict", "true");
  apply_config(inv.effective, inv.cfg);
  if (inv.cfg.threads < 1) fail(ErrorCode::kInvalidConfig, "threads must be at least 1");
  inv.cfg.sbp.validate();
  inv.cfg.clip.validate();
  return inv;
}

fs::path sidecar(const fs::path& out) { return fs::path(out.string() + ".manifest.json"); }

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

std::size_t count_unconverged(const EnergyTable& t) {
  std::size_t n = 0;
  for (const auto& d : t.diagnostics) n += d.converged ? 0 : 1;
  return n;
}

FeatureSchema stream_schema(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIoError, "cannot open " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    if (!csv::is_skippable(line)) return FeatureSchema(csv::split_line(line));
  }
  fail(ErrorCode::kEmptyFile, path.string() + " has no header");
}

struct AdaptiveSettings {
  WindowConfig window;
  CalibrationConfig calibration;
  std::size_t participant = 0;
};

AdaptiveSettings adaptive_settings(const Invocation& inv) {
  const auto& c = inv.effective;
  AdaptiveSettings s;
  s.window.window = static_cast<std::size_t>(c.get_int("adaptive.window", static_cast<int>(s.window.window)));
  s.window.stride = static_cast<std::size_t>(c.get_int("adaptive.stride", static_cast<int>(s.window.stride)));
  s.window.sbp = inv.cfg.sbp;
  s.calibration.q_low = c.get_double("adaptive.q_low", s.calibration.q_low);
  s.calibration.q_high = c.get_double("adaptive.q_high", s.calibration.q_high);
  s.calibration.hysteresis_fraction = c.get_double("adaptive.hysteresis_fraction", s.calibration.hysteresis_fraction);
  s.calibration.cooldown = c.get_int("adaptive.cooldown", s.calibration.cooldown);
  const int p = c.get_int("adaptive.participant", 0);
  if (p < 0) fail(ErrorCode::kInvalidConfig, "adaptive.participant must be non-negative");
  s.participant = static_cast<std::size_t>(p);
  s.window.validate();
  s.calibration.validate();
  return s;
}

Config manifest_config(const Invocation& inv, bool with_adaptive = false) {
  Config c = echo_config(inv.cfg);
  if (with_adaptive) {
    const auto a = adaptive_settings(inv);
    c.set("adaptive.window", std::to_string(a.window.window));
    c.set("adaptive.stride", std::to_string(a.window.stride));
    c.set("adaptive.q_low", csv::format_double(a.calibration.q_low));
    c.set("adaptive.q_high", csv::format_double(a.calibration.q_high));
    c.set("adaptive.hysteresis_fraction", csv::format_double(a.calibration.hysteresis_fraction));
    c.set("adaptive.cooldown", std::to_string(a.calibration.cooldown));
    c.set("adaptive.participant", std::to_string(a.participant));
  }
  return c;
}

Dataset load_normalized(const fs::path& path) {
  auto d = load_dataset(path);
  d.assume_space(FeatureSpace::kNormalized);
  return d;
}

class Runner {
 public:
  Runner(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

  Manifest& open(const std::string& command, const fs::path& path, const Invocation& inv, bool adaptive = false) {
    ensure_parent(path);
    manifest_.emplace(command, path);
    manifest_->set_config(manifest_config(inv, adaptive));
    manifest_->set_seed("global", inv.cfg.seed);
    manifest_->begin_stage(command);
    return *manifest_;
  }

  void done() {
    if (manifest_) manifest_->finish_stage();
  }

  int guard(const std::function<void()>& body) {
    try {
      body();
      return kExitOk;
    } catch (const Error& e) {
      if (manifest_) manifest_->fail_stage(e.what());
      err_ << "error: " << e.what() << '\n';
      return exit_code(e.code());
    } catch (const std::exception& e) {
      if (manifest_) manifest_->fail_stage(e.what());
      err_ << "error: " << e.what() << '\n';
      return kExitRuntime;
    }
  }

  std::ostream& out() { return out_; }

 private:
  std::ostream& out_;
  std::ostream& err_;
  std::optional<Manifest> manifest_;
};

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Schrodinger-bridge energy analysis of baseline-referenced EEG features", "eegbridge"};
  app.fallthrough();
  app.require_subcommand(1);

  Globals g;
  app.add_option("--seed", g.seed, "Global seed; every random stream derives from it");
  app.add_option("--threads", g.threads, "Worker threads for independent SBP solves");
  app.add_option("--config", g.config_path, "Flat key = value configuration file")->check(CLI::ExistingFile);
  app.add_option("--set", g.overrides, "Override one config key, e.g. --set sbp.epsilon=0.02");
  app.add_flag("--strict", g.strict, "Treat non-converged SBP solves as failures");

  Runner runner(out, err);
  int status = kExitOk;
  const auto run = [&](const std::function<void()>& body) { status = runner.guard(body); };

  struct Paths {
    std::string in, out, stats, log, model, like, participant, portion, transitions, diagnostics, real, synth,
        comparison, out_dir, stream, reference, calibration, script, oracle;
    std::size_t n = 0;
    std::optional<double> theta_low, theta_high, hysteresis;
  } p;

  auto* ingest = app.add_subcommand("ingest", "Validate a raw feature CSV and write it in canonical form");
  ingest->add_option("--in", p.in, "Raw CSV: participant_id,task_portion,<features>")->required()->check(CLI::ExistingFile);
  ingest->add_option("--out", p.out, "Canonical dataset CSV")->required();
  ingest->callback([&] {
    run([&] {
      const auto inv = resolve(g);
      auto& m = runner.open("ingest", sidecar(p.out), inv);
      m.add_input(p.in);
      const auto data = load_dataset(p.in);
      ensure_parent(p.out);
      save_dataset(p.out, data);
      m.add_output(p.out);
      runner.done();
      runner.out() << "ingested " << data.size() << " rows, " << data.participants().size() << " participants, "
                   << data.schema().dimension() << " features\n";
    });
  });

  auto* normalize = app.add_subcommand("normalize", "Baseline-referenced z-scoring per participant");
  normalize->add_option("--in", p.in, "Raw dataset CSV")->required()->check(CLI::ExistingFile);
  normalize->add_option("--out", p.out, "Normalized dataset CSV")->required();
  normalize->add_option("--stats", p.stats, "Baseline statistics CSV (default <out>.baseline_stats.csv)");
  normalize->callback([&] {
    run([&] {
      const auto inv = resolve(g);
      auto& m = runner.open("normalize", sidecar(p.out), inv);
      m.add_input(p.in);
      const auto raw = load_dataset(p.in);
      const auto res = normalize_dataset(raw, inv.cfg.baseline_portion, inv.cfg.normalization_eps, inv.cfg.clip);
      const fs::path stats = p.stats.empty() ? fs::path(p.out + ".baseline_stats.csv") : fs::path(p.stats);
      ensure_parent(p.out);
      ensure_parent(stats);
      save_dataset(p.out, res.dataset);
      save_baseline_stats(stats, res.dataset.schema(), res.stats);
      m.add_output(p.out);
      m.add_output(stats);
      runner.done();
      runner.out() << "normalized " << res.dataset.size() << " rows against " << to_string(inv.cfg.baseline_portion)
                   << '\n';
    });
  });

  auto* cohort = app.add_subcommand("cohort", "Generate a virtual cohort with known Gaussian groups");
  cohort->add_option("--out", p.out, "Raw dataset CSV")->required();
  cohort->add_option("--oracle", p.oracle, "Closed-form normalized energies per participant and transition");
  cohort->callback([&] {
    run([&] {
      const auto inv = resolve(g);
      auto& m = runner.open("cohort", sidecar(p.out), inv);
      auto cc = inv.cfg.cohort;
      cc.seed = derive_seed(inv.cfg.seed, "cohort");
      m.set_seed("cohort", cc.seed);
      const auto vc = generate_virtual_cohort(cc);
      ensure_parent(p.out);
      save_dataset(p.out, vc.data);
      m.add_output(p.out);
      if (!p.oracle.empty()) {
        EnergyTable t;
        t.transitions = inv.cfg.transitions;
        t.energies.resize(static_cast<Eigen::Index>(vc.participants.size()),
                          static_cast<Eigen::Index>(t.transitions.size()));
        for (std::size_t i = 0; i < vc.participants.size(); ++i) {
          t.participants.push_back(vc.participants[i].id);
          for (std::size_t k = 0; k < t.transitions.size(); ++k) {
            t.energies(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
                vc.normalized_oracle_energy(i, t.transitions[k]);
          }
        }
        ensure_parent(p.oracle);
        save_energy_table(p.oracle, t);
        m.add_output(p.oracle);
      }
      runner.done();
      runner.out() << "cohort of " << vc.participants.size() << " participants, " << vc.data.size() << " rows\n";
    });
  });

  auto* trainc = app.add_subcommand("train", "Train the conditional packed WGAN-GP on a normalized dataset");
  trainc->add_option("--in", p.in, "Normalized dataset CSV")->required()->check(CLI::ExistingFile);
  trainc->add_option("--out", p.out, "Checkpoint file")->required();
  trainc->add_option("--log", p.log, "Training log CSV (default <out>.training_log.csv)");
  trainc->callback([&] {
    run([&] {
      const auto inv = resolve(g);
      auto& m = runner.open("train", sidecar(p.out), inv);
      m.add_input(p.in);
      const auto data = load_normalized(p.in);
      auto tc = inv.cfg.train;
      tc.seed = derive_seed(inv.cfg.seed, "train");
      m.set_seed("train", tc.seed);
      const fs::path out_path(p.out);
      if (tc.checkpoint_every > 0) {
        tc.checkpoint_dir = out_path.has_parent_path() ? out_path.parent_path() / "checkpoints" : fs::path("checkpoints");
      }
      const auto gan = train(data, inv.cfg.generator, inv.cfg.critic, tc, inv.cfg.clip);
      ensure_parent(out_path);
      save_checkpoint(out_path, gan.generator, gan.critic, echo_config(inv.cfg).echo());
      m.add_output(out_path);
      const fs::path log_path = p.log.empty() ? fs::path(p.out + ".training_log.csv") : fs::path(p.log);
      ensure_parent(log_path);
      std::ofstream log(log_path);
      if (!log) fail(ErrorCode::kIoError, "cannot write " + log_path.string());
      write_training_log(log, gan.log);
      m.add_output(log_path);
      m.set_note("variance_skips", std::to_string(gan.variance_skips));
      runner.done();
      runner.out() << "trained " << tc.generator_steps << " generator steps, " << gan.log.records.size()
                   << " log records\n";
    });
  });

  auto* gen = app.add_subcommand("generate", "Sample normalized feature vectors from a trained generator");
  gen->add_option("--model", p.model, "Checkpoint written by train")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", p.out, "Synthetic dataset CSV")->required();
  gen->add_option("--like", p.like, "Match every group size of this dataset")->check(CLI::ExistingFile);
  gen->add_option("--participant", p.participant, "Participant id for a single group");
  gen->add_option("--portion", p.portion, "Portion label for a single group");
  gen->add_option("--n", p.n, "Sample count for a single group");
  gen->callback([&] {
    run([&] {
      const auto inv = resolve(g);
      auto& m = runner.open("generate", sidecar(p.out), inv);
      m.add_input(p.model);
      const auto ckpt = load_checkpoint(p.model);
      const auto seed = derive_seed(inv.cfg.seed, "generate");
      m.set_seed("generate", seed);
      Dataset synth;
      if (!p.like.empty()) {
        m.add_input(p.like);
        synth = generate_matching(ckpt.generator, load_dataset(p.like), seed);
      } else {
        if (p.participant.empty() || p.portion.empty()) {
          fail(ErrorCode::kInvalidArgument, "generate needs --like or --participant, --portion and --n");
        }
        const auto portion = parse_portion(p.portion);
        const auto x = generate(ckpt.generator, p.participant, portion, p.n, seed);
        synth = Dataset(ckpt.generator.schema(), FeatureSpace::kNormalized);
        for (Eigen::Index r = 0; r < x.rows(); ++r) synth.add(Sample{p.participant, portion, x.row(r).transpose()});
      }
      ensure_parent(p.out);
      save_dataset(p.out, synth);
      m.add_output(p.out);
      runner.done();
      runner.out() << "generated " << synth.size() << " rows\n";
    });
  });

  auto* energy = app.add_subcommand("energy", "Per-participant SBP transport energies");
  energy->add_option("--in", p.in, "Normalized dataset CSV")->required()->check(CLI::ExistingFile);
  energy->add_option("--out", p.out, "Energy table CSV")->required();
  energy->add_option("--transitions", p.transitions, "e.g. P1:P2,P1:P3 (default sbp.transitions)");
  energy->add_option("--diagnostics", p.diagnostics, "Per-solve JSON lines (default <out>.diagnostics.jsonl)");
  energy->callback([&] {
    run([&] {
      const auto inv = resolve(g);
      auto& m = runner.open("energy", sidecar(p.out), inv);
      m.add_input(p.in);
      const auto transitions = p.transitions.empty() ? inv.cfg.transitions : parse_transitions(p.transitions);
      const auto data = load_dataset(p.in);
      const auto table = energy_table(data, transitions, inv.cfg.sbp, inv.cfg.threads);
      ensure_parent(p.out);
      save_energy_table(p.out, table);
      m.add_output(p.out);
      const fs::path diag = p.diagnostics.empty() ? fs::path(p.out + ".diagnostics.jsonl") : fs::path(p.diagnostics);
      ensure_parent(diag);
      std::ofstream d(diag);
      if (!d) fail(ErrorCode::kIoError, "cannot write " + diag.string());
      write_diagnostics_jsonl(d, table.diagnostics);
      m.add_output(diag);
      const auto unconverged = count_unconverged(table);
      m.set_note("unconverged_solves", std::to_string(unconverged));
      if (unconverged > 0) {
        if (inv.cfg.strict) fail(ErrorCode::kNotConverged, std::to_string(unconverged) + " SBP solves did not converge");
        runner.out() << "warning: " << unconverged << " SBP solves did not converge\n";
      }
      runner.done();
      runner.out() << "energies for " << table.participants.size() << " participants x " << transitions.size()
                   << " transitions\n";
    });
  });

  auto* cmp = app.add_subcommand("compare", "Agreement metrics between real and synthetic energy tables");
  cmp->add_option("--real", p.real, "Real-data energy table")->required()->check(CLI::ExistingFile);
  cmp->add_option("--synth", p.synth, "Synthetic-data energy table")->required()->check(CLI::ExistingFile);
  cmp->add_option("--out", p.out, "Comparison JSON")->default_val("comparison.json");
  cmp->callback([&] {
    run([&] {
      const auto inv = resolve(g);
      auto& m = runner.open("compare", sidecar(p.out), inv);
      m.add_input(p.real);
      m.add_input(p.synth);
      const auto report = compare(load_energy_table(p.real), load_energy_table(p.synth));
      ensure_parent(p.out);
      save_comparison_json(p.out, report);
      m.add_output(p.out);
      runner.done();
      runner.out() << "direction agreement " << csv::format_double(report.direction_agreement) << '\n';
      for (std::size_t k = 0; k < report.transitions.size(); ++k) {
        runner.out() << "rank correlation " << report.transitions[k].label() << ' '
                     << csv::format_double(report.rank_correlation[k]) << '\n';
      }
    });
  });

  auto* rep = app.add_subcommand("report", "Feature statistics, histograms and plots");
  rep->add_option("--real", p.real, "Normalized real dataset")->required()->check(CLI::ExistingFile);
  rep->add_option("--synth", p.synth, "Synthetic dataset")->required()->check(CLI::ExistingFile);
  rep->add_option("--comparison", p.comparison, "comparison.json to plot")->check(CLI::ExistingFile);
  rep->add_option("--out-dir", p.out_dir, "Output directory")->required();
  rep->callback([&] {
    run([&] {
      const auto inv = resolve(g);
      const fs::path dir(p.out_dir);
      fs::create_directories(dir);
      auto& m = runner.open("report", dir / "manifest.json", inv);
      m.add_input(p.real);
      m.add_input(p.synth);
      const auto fr = feature_report(load_dataset(p.real), load_dataset(p.synth), inv.cfg.clip);
      const auto write = [&](const std::string& name, const auto& fn) {
        std::ofstream o(dir / name);
        if (!o) fail(ErrorCode::kIoError, "cannot write " + (dir / name).string());
        fn(o);
        m.add_output(dir / name);
      };
      write("feature_report.csv", [&](std::ostream& o) { write_feature_report(o, fr); });
      write("feature_histograms.csv", [&](std::ostream& o) { write_feature_histograms(o, fr); });
      write("feature_table.txt", [&](std::ostream& o) { write_feature_table(o, fr); });
      if (!p.comparison.empty()) {
        m.add_input(p.comparison);
        write_plots(dir / "plots", load_comparison_json(p.comparison));
        m.add_output(dir / "plots");
      }
      runner.done();
      write_feature_table(runner.out(), fr);
    });
  });

  auto* sim = app.add_subcommand("simulate", "Closed-loop controller over a sliding-window energy stream");
  sim->add_option("--out", p.out, "Decision trace CSV")->required();
  sim->add_option("--stream", p.stream, "Normalized sample stream (header of feature names)")
      ->check(CLI::ExistingFile);
  sim->add_option("--reference", p.reference, "Baseline reference samples, same format")->check(CLI::ExistingFile);
  sim->add_option("--calibration", p.calibration, "Calibration stream; its energy quantiles set the thresholds")
      ->check(CLI::ExistingFile);
  sim->add_option("--theta-low", p.theta_low, "Explicit lower threshold");
  sim->add_option("--theta-high", p.theta_high, "Explicit upper threshold");
  sim->add_option("--hysteresis", p.hysteresis, "Explicit hysteresis margin");
  sim->add_option("--script", p.script, "Virtual-cohort stream instead of files: baseline or ramp")
      ->check(CLI::IsMember({"baseline", "ramp"}));
  sim->callback([&] {
    run([&] {
      const auto inv = resolve(g);
      const auto a = adaptive_settings(inv);
      auto& m = runner.open("simulate", sidecar(p.out), inv, true);
      Eigen::MatrixXd stream;
      std::optional<EmpiricalDistribution> reference;
      std::optional<Eigen::MatrixXd> calibration;
      if (!p.script.empty()) {
        auto cc = inv.cfg.cohort;
        cc.seed = derive_seed(inv.cfg.seed, "cohort");
        m.set_seed("cohort", cc.seed);
        const auto vc = generate_virtual_cohort(cc);
        if (a.participant >= vc.participants.size()) fail(ErrorCode::kInvalidConfig, "adaptive.participant out of range");
        const auto norm = normalize_dataset(vc.data, inv.cfg.baseline_portion, inv.cfg.normalization_eps, inv.cfg.clip);
        const auto& id = vc.participants[a.participant].id;
        const auto& stats = find_stats(norm.stats, id);
        reference = EmpiricalDistribution::uniform(group(norm.dataset, id, inv.cfg.baseline_portion));
        const auto w = a.window.window;
        const auto stream_seed = derive_seed(inv.cfg.seed, "stream/" + p.script);
        const auto segments = p.script == "ramp" ? ramp_script(w)
                                                 : std::vector<StreamSegment>{{Portion::P1, Portion::P1, 12 * w}};
        stream = cohort_stream(vc, a.participant, segments, stats, inv.cfg.clip, stream_seed);
        m.set_seed("stream", stream_seed);
        if (!p.theta_low && !p.calibration.empty()) fail(ErrorCode::kInvalidArgument, "--script builds its own calibration");
        const auto cal_seed = derive_seed(inv.cfg.seed, "calibration");
        m.set_seed("calibration", cal_seed);
        calibration = calibration_stream(vc, a.participant, *reference, w, stats, inv.cfg.clip, cal_seed);
      } else {
        if (p.stream.empty() || p.reference.empty()) {
          fail(ErrorCode::kInvalidArgument, "simulate needs --stream and --reference, or --script");
        }
        const auto schema = stream_schema(p.reference);
        m.add_input(p.stream);
        m.add_input(p.reference);
        stream = load_stream(p.stream, schema);
        reference = EmpiricalDistribution::uniform(load_stream(p.reference, schema));
        if (!p.calibration.empty()) {
          m.add_input(p.calibration);
          calibration = load_stream(p.calibration, schema);
        }
      }
      ControllerConfig ctl;
      if (p.theta_low || p.theta_high) {
        if (!p.theta_low || !p.theta_high) fail(ErrorCode::kInvalidArgument, "give both --theta-low and --theta-high");
        ctl.theta_low = *p.theta_low;
        ctl.theta_high = *p.theta_high;
        ctl.hysteresis = p.hysteresis.value_or(a.calibration.hysteresis_fraction * (ctl.theta_high - ctl.theta_low));
        ctl.cooldown = a.calibration.cooldown;
      } else if (calibration) {
        std::vector<double> energies;
        for (const auto& e : rolling_energies(*calibration, *reference, a.window)) energies.push_back(e.energy);
        if (energies.empty()) fail(ErrorCode::kInvalidArgument, "calibration stream is shorter than one window");
        ctl = calibrate_controller(energies, a.calibration);
        if (p.hysteresis) ctl.hysteresis = *p.hysteresis;
      } else {
        fail(ErrorCode::kInvalidArgument, "simulate needs --calibration or --theta-low/--theta-high");
      }
      ctl.validate();
      m.set_note("theta_low", csv::format_double(ctl.theta_low));
      m.set_note("theta_high", csv::format_double(ctl.theta_high));
      m.set_note("hysteresis", csv::format_double(ctl.hysteresis));
      const auto trace = simulate(stream, *reference, a.window, ctl);
      ensure_parent(p.out);
      std::ofstream o(p.out);
      if (!o) fail(ErrorCode::kIoError, "cannot write " + p.out);
      write_trace(o, trace);
      o.close();
      m.add_output(p.out);
      runner.done();
      std::map<Decision, int> counts;
      for (const auto& d : trace) ++counts[d.decision];
      runner.out() << "thresholds " << csv::format_double(ctl.theta_low) << ' ' << csv::format_double(ctl.theta_high)
                   << " hysteresis " << csv::format_double(ctl.hysteresis) << '\n';
      runner.out() << trace.size() << " decisions:";
      for (const auto d : {Decision::kIncreaseChallenge, Decision::kHold, Decision::kReduceChallenge}) {
        runner.out() << ' ' << to_string(d) << '=' << counts[d];
      }
      runner.out() << '\n';
    });
  });

  auto* self = app.add_subcommand("selftest", "Run the embedded closed-form checks");
  self->add_option("--out-dir", p.out_dir, "Write selftest.log and a manifest here");
  self->callback([&] {
    run([&] {
      const auto inv = resolve(g);
      std::optional<std::ofstream> log;
      if (!p.out_dir.empty()) {
        const fs::path dir(p.out_dir);
        fs::create_directories(dir);
        runner.open("selftest", dir / "manifest.json", inv);
        log.emplace(dir / "selftest.log");
      }
      std::ostringstream lines;
      const auto report = run_selftest(lines);
      if (log) *log << lines.str();
      runner.out() << lines.str();
      runner.out() << report.passed << '/' << report.total << " checks passed\n";
      if (report.passed != report.total) {
        throw std::runtime_error(std::to_string(report.total - report.passed) + " selftest checks failed");
      }
      runner.done();
    });
  });

  auto* exp = app.add_subcommand("experiment", "Full pipeline: data, normalize, train, generate, energy, report");
  exp->add_option("--out-dir", p.out_dir, "Output directory")->required();
  exp->callback([&] {
    run([&] {
      auto inv = resolve(g);
      inv.cfg.output_dir = p.out_dir;
      const auto res = run_experiment(inv.cfg);
      runner.out() << "direction agreement " << csv::format_double(res.report.direction_agreement) << '\n';
      for (std::size_t k = 0; k < res.report.transitions.size(); ++k) {
        runner.out() << "rank correlation " << res.report.transitions[k].label() << ' '
                     << csv::format_double(res.report.rank_correlation[k]) << '\n';
      }
    });
  });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n\n" << app.help();
    return kExitValidation;
  }
  return status;
}

}  // namespace eegbridge::cli
