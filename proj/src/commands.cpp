#include "adan/commands.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <thread>

#include <json.hpp>

#include "adan/simd/kernels.hpp"

namespace adan {

namespace {

using nlohmann::json;

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArgumentError("cannot write " + path.string());
  out << text;
  if (!out) throw ArgumentError("failed writing " + path.string());
}

std::size_t worker_count(bool deterministic, std::size_t jobs) {
  if (deterministic) return 1;
  const char* env = std::getenv("ADAN_THREADS");
  if (!env) return 1;
  const long v = std::strtol(env, nullptr, 10);
  if (v < 1) return 1;
  return std::min<std::size_t>(static_cast<std::size_t>(v), jobs);
}

template <class Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

json config_json(const RunConfig& cfg) { return json::parse(run_config_to_json(cfg)); }

struct SeedRun {
  std::uint64_t seed = 0;
  std::vector<EpochRecord> history;
  std::optional<AccuracyReport> accuracy;
  std::string error;
};

}  // namespace

int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    validate_run_config(cfg, Command::Train);
    const Dataset source = load_prepared(*cfg.source, Domain::Source, true);
    const Dataset target = load_prepared(*cfg.target, Domain::Target, false);
    std::optional<Dataset> eval;
    if (cfg.eval) eval = load_prepared(*cfg.eval, Domain::Target, true);
    std::filesystem::create_directories(cfg.output_dir);
    out << "source " << source.size() << " samples, target " << target.size() << " samples";
    if (eval) out << ", eval " << eval->size() << " samples";
    out << "; kernels " << simd::isa_name(simd::active_isa()) << "\n";

    std::vector<SeedRun> runs(cfg.seeds.size());
    std::mutex log_mutex;
    auto run_one = [&](std::size_t idx) {
      SeedRun& r = runs[idx];
      r.seed = cfg.seeds[idx];
      try {
        Network net = build_lenet_adan(kDigitClasses);
        net.init_params(r.seed);
        TrainConfig tc = cfg.train;
        tc.seed = r.seed;
        r.history = train(net, source, target, tc, eval ? &*eval : nullptr, [&](const EpochRecord& rec) {
          std::lock_guard<std::mutex> lock(log_mutex);
          out << "seed " << rec.seed << " epoch " << rec.epoch << " loss " << rec.total_loss;
          if (rec.eval_accuracy) out << " eval " << *rec.eval_accuracy;
          out << "\n" << std::flush;
        });
        save_checkpoint(net, cfg.output_dir / ("checkpoint_seed" + std::to_string(r.seed) + ".adan"));
        write_history(cfg.output_dir / ("history_seed" + std::to_string(r.seed) + ".jsonl"), r.history);
        if (eval) r.accuracy = evaluate_accuracy(net, *eval);
      } catch (const std::exception& e) {
        r.error = e.what();
      }
    };
    const std::size_t workers = worker_count(cfg.deterministic, runs.size());
    if (workers <= 1) {
      for (std::size_t i = 0; i < runs.size(); ++i) run_one(i);
    } else {
      std::vector<std::thread> pool;
      std::atomic<std::size_t> next{0};
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
          for (std::size_t i; (i = next.fetch_add(1)) < runs.size();) run_one(i);
        });
      }
      for (auto& t : pool) t.join();
    }

    json summary;
    summary["config"] = config_json(cfg);
    summary["kernels"] = std::string(simd::isa_name(simd::active_isa()));
    summary["runs"] = json::array();
    std::vector<double> accs;
    bool failed = false;
    for (const auto& r : runs) {
      json j{{"seed", r.seed}};
      if (!r.error.empty()) {
        j["error"] = r.error;
        failed = true;
        err << "seed " << r.seed << ": " << r.error << "\n";
      }
      if (r.accuracy) {
        j["accuracy"] = r.accuracy->accuracy;
        j["exit_accuracy"] = r.accuracy->exit_accuracy;
        accs.push_back(r.accuracy->accuracy);
      }
      summary["runs"].push_back(j);
    }
    if (!accs.empty()) {
      double mean = 0.0;
      for (double a : accs) mean += a;
      mean /= static_cast<double>(accs.size());
      double var = 0.0;
      for (double a : accs) var += (a - mean) * (a - mean);
      const double sd = accs.size() > 1 ? std::sqrt(var / static_cast<double>(accs.size() - 1)) : 0.0;
      summary["accuracy_mean"] = mean;
      summary["accuracy_std"] = sd;
      out << "eval accuracy " << std::fixed << std::setprecision(4) << mean << " +- " << sd << " over " << accs.size()
          << " seed(s)\n"
          << std::defaultfloat;
    }
    write_text(cfg.output_dir / "summary.json", summary.dump(2) + "\n");
    return failed ? 1 : 0;
  });
}

int cmd_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint, const std::vector<double>& thresholds,
             std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    validate_run_config(cfg, Command::Eval);
    const Network net = load_checkpoint(checkpoint);
    const Dataset data = load_prepared(*cfg.eval, Domain::Target, true);
    const AccuracyReport base = evaluate_accuracy(net, data);
    json j{{"checkpoint", checkpoint.string()},
           {"samples", data.size()},
           {"accuracy", base.accuracy},
           {"exit_accuracy", base.exit_accuracy},
           {"routed", json::array()}};
    out << "final-exit accuracy " << base.accuracy << "\n";
    for (std::size_t e = 0; e < base.exit_accuracy.size(); ++e)
      out << "  exit " << e + 1 << " accuracy " << base.exit_accuracy[e] << "\n";
    for (double t : thresholds) {
      const ThresholdPolicy policy = ThresholdPolicy::uniform(t, net.exit_count());
      const AccuracyReport r = evaluate_accuracy(net, data, &policy);
      out << "threshold " << t << ": accuracy " << r.accuracy << ", exit ratios";
      for (double v : r.exit_ratios) out << " " << v;
      out << "\n";
      j["routed"].push_back({{"threshold", t}, {"accuracy", r.accuracy}, {"exit_ratios", r.exit_ratios}});
    }
    std::filesystem::create_directories(cfg.output_dir);
    write_text(cfg.output_dir / "eval.json", j.dump(2) + "\n");
    return 0;
  });
}

int cmd_sweep(const RunConfig& cfg, const std::filesystem::path& checkpoint, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    validate_run_config(cfg, Command::Sweep);
    const Network net = load_checkpoint(checkpoint);
    const Dataset data = load_prepared(*cfg.eval, Domain::Target, true);
    SweepReport report = sweep_thresholds(net, data, cfg.thresholds, cfg.repeats);
    report.seed = cfg.seeds.front();
    std::filesystem::create_directories(cfg.output_dir);
    const std::string csv = sweep_to_csv(report);
    write_text(cfg.output_dir / "sweep.csv", csv);
    write_text(cfg.output_dir / "sweep.json", sweep_to_json(report) + "\n");
    out << csv;
    if (report.warning) err << "warning: " << *report.warning << "\n";
    return 0;
  });
}

int cmd_selfcheck(const SelfcheckOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto t0 = std::chrono::steady_clock::now();
    const auto results = run_selfcheck(opt);
    print_check_table(out, results);
    std::size_t failed = 0;
    for (const auto& r : results) failed += !r.passed;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out << results.size() - failed << "/" << results.size() << " checks passed in " << std::setprecision(3) << secs
        << " s\n";
    return failed ? 1 : 0;
  });
}

}  // namespace adan
