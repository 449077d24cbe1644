#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "kerntune/runner.hpp"

using namespace kerntune;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
  fs::path dir = fs::temp_directory_path() /
                 (std::string("kerntune_runner_") + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Reference metrics of a known configuration; small scale.
RunConfig round_trip_config(const fs::path& out) {
  RunConfig c;
  c.use_case = TargetMode::Clone;
  c.static_size = 200;
  c.n_dyn = 20000;
  c.seed = 11;
  c.core = CoreConfig::small_core();
  KnobConfig ref = snap(random_point(c.space, 1234), c.space);
  Kernel k = generate(ref, c.space, c.static_size, c.seed);
  MetricVector m = simulate(k, c.core, c.n_dyn);
  c.target = TargetSpec::clone_of(m);
  c.gd.seed = c.seed;
  c.gd.start = random_point(c.space, 1234);
  c.out_dir = out.string();
  return c;
}

}  // namespace

TEST_CASE("run config JSON round trip is the identity") {
  RunConfig c;
  c.use_case = TargetMode::Stress;
  c.target.mode = TargetMode::Stress;
  c.target.stress_metric = "dyn_power";
  c.active = {"ADD", "MUL", "MEM_SIZE"};
  c.pinned = {{"REG_DIST", 9}};
  c.workers = 4;
  c.seed = 77;
  nlohmann::json j1 = c.to_json();
  RunConfig back = RunConfig::from_json(j1);
  CHECK(back.to_json() == j1);
  CHECK(RunConfig::from_json(back.to_json()).to_json() == j1);
}

TEST_CASE("reduced space and pinning") {
  RunConfig c;
  c.use_case = TargetMode::Stress;
  c.target.mode = TargetMode::Stress;
  c.active = {"ADD", "LD"};
  c.pinned = {{"REG_DIST", 9}, {"MEM_SIZE", 0}};

  KnobSpace reduced = c.reduced_space();
  REQUIRE(reduced.dim() == 2);
  CHECK(reduced.knobs[0].name == "ADD");
  CHECK(reduced.knobs[1].name == "LD");

  KnobConfig r;
  r.items = {{"ADD", 10.0}, {"LD", 3.0}};
  KnobConfig full = c.full_config(r);
  CHECK(full.items.size() == c.space.dim());
  CHECK(full.at("ADD") == 10.0);
  CHECK(full.at("LD") == 3.0);
  CHECK(full.at("REG_DIST") == 10.0);  // pinned to index 9
  CHECK(full.at("MEM_SIZE") == 2.0);   // pinned to index 0
  CHECK(full.at("MUL") == 5.0);        // unpinned: middle of the list
}

TEST_CASE("config validation failures name the problem") {
  nlohmann::json j = {{"use_case", "clone"},
                      {"target",
                       {{"mode", "clone"},
                        {"targets", {{"no_such_metric", 1.0}}}}}};
  CHECK_THROWS_WITH_AS(RunConfig::from_json(j),
                       doctest::Contains("no_such_metric"), ConfigError);

  nlohmann::json bad_active = {{"use_case", "stress"},
                               {"target", {{"mode", "stress"}}},
                               {"active_knobs", {"NOPE"}}};
  CHECK_THROWS_WITH_AS(RunConfig::from_json(bad_active),
                       doctest::Contains("NOPE"), ConfigError);

  nlohmann::json mismatch = {{"use_case", "stress"},
                             {"target",
                              {{"mode", "clone"},
                               {"targets", {{"ipc", 1.0}}}}}};
  CHECK_THROWS_AS(RunConfig::from_json(mismatch), ConfigError);
}

TEST_CASE("round-trip clone starting at the reference stops immediately") {
  fs::path out = temp_dir("roundtrip");
  RunConfig c = round_trip_config(out);
  c.gd.start = random_point(c.space, 1234);  // the reference point itself
  RunResult r = run_clone(c);
  CHECK(r.exit_code == kExitOk);
  CHECK(r.report.stop == StopReason::TargetMet);
  REQUIRE(r.acc.has_value());
  CHECK(r.acc->min >= 0.99);
}

TEST_CASE("zero-epoch budget exits with the budget code and artifacts") {
  fs::path out = temp_dir("zeroepoch");
  RunConfig c = round_trip_config(out);
  c.gd.start.reset();
  c.gd.max_epochs = 0;
  RunResult r = run_clone(c);
  CHECK(r.exit_code == kExitBudget);
  CHECK(fs::exists(out / "report.json"));
  CHECK(fs::exists(out / "epochs.csv"));
  CHECK(fs::exists(out / "kernel.s"));
  CHECK(fs::exists(out / "kernel.json"));
  CHECK(fs::exists(out / "metrics.json"));
}

TEST_CASE("failing evaluator surfaces as the evaluator exit code") {
  fs::path out = temp_dir("evalfail");
  RunConfig c = round_trip_config(out);
  c.evaluator = EvaluatorKind::External;
  ExternalEvalSpec spec;
  spec.command = "exit 7";
  // Map every targeted metric so validation passes.
  for (const auto& [name, v] : c.target.clone_targets)
    spec.metric_map.emplace_back(name, MetricMapping{name});
  c.external = spec;
  RunResult r = run_clone(c);
  CHECK(r.exit_code == kExitEvaluator);
  CHECK(r.report.stop == StopReason::Error);
}

TEST_CASE("emitted artifacts are consistent and reproducible") {
  fs::path out = temp_dir("artifacts");
  RunConfig c = round_trip_config(out);
  c.gd.start.reset();
  c.gd.max_epochs = 10;
  c.gd.epsilon = 1e-9;  // run all 10 epochs
  c.gd.skip = {0.0, 1.0, 0.0};
  c.target.target_accuracy = 1.0;  // unreachable: exercise the full budget
  RunResult r = run_clone(c);

  std::string csv = slurp(out / "epochs.csv");
  size_t rows = std::count(csv.begin(), csv.end(), '\n');
  CHECK(rows == r.report.epochs.size() + 1);

  // Best loss equals the minimum of the CSV best_loss column.
  double min_best = 1e300;
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);  // header
  while (std::getline(lines, line)) {
    std::istringstream ls(line);
    std::string cell;
    for (int i = 0; i < 3; ++i) std::getline(ls, cell, ',');
    min_best = std::min(min_best, std::stod(cell));
  }
  CHECK(r.report.best_loss == doctest::Approx(min_best).epsilon(1e-12));

  // kernel.json regenerates kernel.s byte for byte.
  nlohmann::json kj = nlohmann::json::parse(slurp(out / "kernel.json"));
  Kernel from_file = Kernel::from_json(kj);
  KnobConfig best = KnobConfig::from_json(kj.at("knob_config"));
  Kernel regen = generate(best, c.space, c.static_size, c.seed);
  CHECK(regen == from_file);
  CHECK(emit_asm(regen) == slurp(out / "kernel.s"));

  // Re-running the identical config reproduces identical artifacts.
  fs::path out2 = temp_dir("artifacts2");
  RunConfig c2 = c;
  c2.out_dir = out2.string();
  run_clone(c2);
  CHECK(slurp(out / "report.json") == slurp(out2 / "report.json"));
  CHECK(slurp(out / "kernel.s") == slurp(out2 / "kernel.s"));
  CHECK(slurp(out / "epochs.csv") == slurp(out2 / "epochs.csv"));
}

TEST_CASE("stress run reports the instruction mix") {
  fs::path out = temp_dir("stressmix");
  RunConfig c;
  c.use_case = TargetMode::Stress;
  c.target.mode = TargetMode::Stress;
  c.target.stress_metric = "ipc";
  c.static_size = 100;
  c.n_dyn = 5000;
  c.core = CoreConfig::small_core();
  c.gd.max_epochs = 2;
  c.out_dir = out.string();
  RunResult r = run_stress(c);
  (void)r;
  nlohmann::json m = nlohmann::json::parse(slurp(out / "metrics.json"));
  CHECK(m.contains("instruction_mix"));
  double mix_total = 0;
  for (const char* k : {"integer", "float", "branch", "load", "store"})
    mix_total += m["instruction_mix"][k].get<double>();
  CHECK(mix_total == doctest::Approx(1.0));
}

TEST_CASE("brute run writes the full grid CSV") {
  fs::path out = temp_dir("brute");
  RunConfig c;
  c.use_case = TargetMode::Stress;
  c.target.mode = TargetMode::Stress;
  c.tuner = TunerKind::Brute;
  c.active = {"ADD", "LD", "SD"};
  c.grid_indices = {{"ADD", {0, 9}}, {"LD", {0, 9}}, {"SD", {0, 9}}};
  c.static_size = 100;
  c.n_dyn = 5000;
  c.core = CoreConfig::small_core();
  c.out_dir = out.string();
  RunResult r = run_brute(c);
  CHECK(r.exit_code == kExitOk);
  std::string csv = slurp(out / "grid.csv");
  size_t rows = std::count(csv.begin(), csv.end(), '\n');
  CHECK(rows == 8 + 1);  // 2^3 grid points + header
}

TEST_CASE("batch clone configs expand one run per target") {
  nlohmann::json j = {
      {"use_case", "clone"},
      {"out", "batchout"},
      {"target",
       {{"mode", "clone"},
        {"targets",
         nlohmann::json::array({{{"ipc", 1.0}}, {{"ipc", 2.0}}})}}}};
  auto runs = RunConfig::expand_batch(j);
  REQUIRE(runs.size() == 2);
  CHECK(runs[0].target.clone_targets[0].second == 1.0);
  CHECK(runs[1].target.clone_targets[0].second == 2.0);
  CHECK(runs[0].out_dir != runs[1].out_dir);
}
