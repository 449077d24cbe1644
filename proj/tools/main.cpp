#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "kerntune/runner.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json load_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw kerntune::ConfigError("cannot open " + path);
  try {
    return json::parse(f, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw kerntune::ConfigError(path + ": " + e.what());
  }
}

// Shared tuning-run flags. Flags override the config file.
struct CommonOpts {
  std::string config_path;
  std::optional<std::string> core;
  std::optional<std::string> tuner;
  std::optional<int> epochs;
  std::optional<double> accuracy;
  std::optional<std::string> evaluator;
  std::optional<std::string> external_spec;
  std::optional<int> workers;
  std::optional<std::string> out;
  std::optional<uint64_t> seed;
  std::optional<int> static_size;
  std::optional<uint64_t> n_dyn;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run configuration (JSON)");
    cmd->add_option("--core", core, "core preset (large|small) or JSON file");
    cmd->add_option("--tuner", tuner, "gd|ga");
    cmd->add_option("--epochs", epochs, "maximum tuning epochs");
    cmd->add_option("--accuracy", accuracy, "clone accuracy target (0,1]");
    cmd->add_option("--evaluator", evaluator, "builtin|external");
    cmd->add_option("--external-spec", external_spec,
                    "external evaluator spec (JSON file)");
    cmd->add_option("--workers", workers, "concurrent evaluations");
    cmd->add_option("--out", out, "output directory for run artifacts");
    cmd->add_option("--seed", seed, "run seed (default 42)");
    cmd->add_option("--static-size", static_size, "loop body instructions");
    cmd->add_option("--ndyn", n_dyn, "dynamic instructions per evaluation");
  }

  json core_json() const {
    if (*core == "large" || *core == "small") return json(*core);
    if (fs::exists(*core)) return load_json_file(*core);
    try {
      return json::parse(*core);
    } catch (const json::exception&) {
      throw kerntune::ConfigError("core '" + *core +
                                  "' is neither a preset nor a JSON file");
    }
  }

  json merged(const char* use_case) const {
    json j = config_path.empty() ? json::object() : load_json_file(config_path);
    if (use_case) j["use_case"] = use_case;
    if (core) j["core"] = core_json();
    if (tuner) j["tuner"] = *tuner;
    if (epochs) {
      j["gd"]["max_epochs"] = *epochs;
      j["ga"]["max_epochs"] = *epochs;
    }
    if (accuracy) j["target"]["accuracy"] = *accuracy;
    if (evaluator) j["evaluator"] = *evaluator;
    if (external_spec) j["external_spec"] = load_json_file(*external_spec);
    if (workers) j["workers"] = *workers;
    if (out) j["out"] = *out;
    if (seed) j["seed"] = *seed;
    if (static_size) j["static_size"] = *static_size;
    if (n_dyn) j["n_dyn"] = *n_dyn;
    return j;
  }
};

void print_summary(const kerntune::RunResult& r) {
  std::printf("stop: %s (%s)\n", kerntune::stop_reason_name(r.report.stop),
              r.report.stop_detail.c_str());
  std::printf("epochs: %zu  evaluations: %llu\n", r.report.epochs.size(),
              static_cast<unsigned long long>(r.report.total_evaluations));
  std::printf("best loss: %.6g\n", r.report.best_loss);
  if (r.acc)
    std::printf("accuracy: min %.4f  mean error %.4f\n", r.acc->min,
                r.acc->mean_error);
  std::printf("metrics: %s\n", r.metrics.to_json().dump().c_str());
  if (!r.out_dir.empty())
    std::printf("artifacts: %s\n", r.out_dir.string().c_str());
}

int run_tuning(const CommonOpts& opts, const char* use_case,
               std::optional<kerntune::TunerKind> force_tuner) {
  json j = opts.merged(use_case);
  if (force_tuner) {
    j["tuner"] = "brute";
    if (!j.contains("use_case")) j["use_case"] = "stress";
  }
  int worst = kerntune::kExitOk;
  for (auto& config : kerntune::RunConfig::expand_batch(j)) {
    kerntune::RunResult r = kerntune::run(config);
    print_summary(r);
    worst = std::max(worst, r.exit_code);
  }
  return worst;
}

int cmd_gen(const CommonOpts& opts, const std::string& knobs_inline) {
  json j = opts.merged(nullptr);
  j["use_case"] = j.value("use_case", "stress");
  if (!j.contains("target")) j["target"] = {{"mode", j["use_case"]}};
  kerntune::RunConfig config = kerntune::RunConfig::from_json(j);

  kerntune::KnobConfig kc;
  if (!knobs_inline.empty()) {
    kc = kerntune::KnobConfig::from_json(json::parse(knobs_inline));
    kc = config.full_config(kc);
  } else if (j.contains("knob_values")) {
    kc = config.full_config(kerntune::KnobConfig::from_json(j.at("knob_values")));
  } else {
    kc = snap(kerntune::random_point(config.space, config.seed), config.space);
  }
  kerntune::Kernel kernel = kerntune::generate(kc, config.space,
                                               config.static_size, config.seed);
  fs::path dir = config.out_dir.empty() ? "." : config.out_dir;
  fs::create_directories(dir);
  std::ofstream(dir / "kernel.s") << kerntune::emit_asm(kernel);
  std::ofstream(dir / "kernel.json") << kernel.to_json().dump(2) << "\n";
  std::printf("kernel: %s\n", (dir / "kernel.s").string().c_str());
  return kerntune::kExitOk;
}

int cmd_eval(const CommonOpts& opts, const std::string& kernel_path,
             const std::string& stats_out, const std::string& metrics_out) {
  json j = opts.merged(nullptr);
  kerntune::CoreConfig core = j.contains("core")
                                  ? kerntune::CoreConfig::from_json(j.at("core"))
                                  : kerntune::CoreConfig::large_core();
  kerntune::EnergyModel em = j.contains("energy")
                                 ? kerntune::EnergyModel::from_json(j.at("energy"))
                                 : kerntune::EnergyModel{};
  uint64_t n_dyn = j.value("n_dyn", static_cast<uint64_t>(10000000));

  kerntune::Kernel kernel = kerntune::Kernel::from_json(load_json_file(kernel_path));
  kerntune::MetricVector m = kerntune::simulate(kernel, core, n_dyn, em);

  std::string stats = kerntune::to_stats_text(m);
  if (stats_out.empty()) {
    std::fputs(stats.c_str(), stdout);
  } else {
    std::ofstream f(stats_out);
    f << stats;
    if (!f) throw std::runtime_error("cannot write " + stats_out);
  }
  if (!metrics_out.empty()) {
    std::ofstream f(metrics_out);
    f << m.to_json().dump(2) << "\n";
  }
  return kerntune::kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic kernel generation and knob tuning"};
  app.require_subcommand(1);

  CommonOpts clone_opts, stress_opts, brute_opts, gen_opts, eval_opts;

  CLI::App* clone = app.add_subcommand("clone", "tune a kernel to match target metrics");
  clone_opts.attach(clone);

  CLI::App* stress = app.add_subcommand("stress", "tune a kernel to extremize a metric");
  stress_opts.attach(stress);

  CLI::App* brute = app.add_subcommand("brute", "exhaustive grid search over the knob space");
  brute_opts.attach(brute);

  CLI::App* gen = app.add_subcommand("gen", "generate a kernel from knob values");
  gen_opts.attach(gen);
  std::string gen_knobs;
  gen->add_option("--knob-values", gen_knobs, "inline JSON knob assignment");

  CLI::App* eval = app.add_subcommand("eval", "evaluate one kernel on the built-in core model");
  eval_opts.attach(eval);
  std::string kernel_path, stats_out, metrics_out;
  eval->add_option("--kernel", kernel_path, "kernel JSON file")->required();
  eval->add_option("--stats-out", stats_out, "write stats dump here (default: stdout)");
  eval->add_option("--metrics-out", metrics_out, "write metrics JSON here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (clone->parsed()) return run_tuning(clone_opts, "clone", std::nullopt);
    if (stress->parsed()) return run_tuning(stress_opts, "stress", std::nullopt);
    if (brute->parsed())
      return run_tuning(brute_opts, nullptr, kerntune::TunerKind::Brute);
    if (gen->parsed()) return cmd_gen(gen_opts, gen_knobs);
    if (eval->parsed())
      return cmd_eval(eval_opts, kernel_path, stats_out, metrics_out);
  } catch (const kerntune::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kerntune::kExitConfig;
  } catch (const kerntune::EvalFailure& e) {
    std::cerr << "evaluation failure: " << e.what() << "\n";
    if (!e.captured_output().empty())
      std::cerr << "--- captured output ---\n" << e.captured_output() << "\n";
    return kerntune::kExitEvaluator;
  } catch (const std::invalid_argument& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kerntune::kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
