#include "kerntune/runner.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

namespace kerntune {

namespace fs = std::filesystem;

void RunConfig::validate() const {
  space.validate();
  target.validate();
  core.validate();
  energy.validate();
  if (static_size < 10) throw ConfigError("static_size must be at least 10");
  if (n_dyn < static_cast<uint64_t>(static_size))
    throw ConfigError("n_dyn must cover at least one loop iteration");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  for (const auto& name : active)
    if (space.index_of(name) < 0)
      throw ConfigError("active knob '" + name + "' is not in the knob space");
  for (const auto& [name, idx] : pinned) {
    const KnobDef* def = space.find(name);
    if (!def) throw ConfigError("pinned knob '" + name + "' is not in the knob space");
    if (idx < 0 || idx >= static_cast<int>(def->size()))
      throw ConfigError("pin index out of range for knob '" + name + "'");
  }
  for (const auto& [name, idx] : grid_indices)
    if (space.index_of(name) < 0)
      throw ConfigError("grid knob '" + name + "' is not in the knob space");
  if (evaluator == EvaluatorKind::External) {
    if (!external) throw ConfigError("external evaluator needs external_spec");
    // Every metric the objective reads must be produced by the backend.
    std::vector<std::string> caps;
    for (const auto& [field, mapping] : external->metric_map)
      caps.push_back(field);
    auto require = [&](const std::string& field) {
      if (std::find(caps.begin(), caps.end(), field) == caps.end())
        throw ConfigError("external evaluator does not map metric '" + field +
                          "' required by the target");
    };
    if (target.mode == TargetMode::Clone) {
      for (const auto& [name, v] : target.clone_targets)
        if (target.weight_of(name) > 0) require(name);
    } else {
      require(target.stress_metric);
    }
  }
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["schema"] = 1;
  j["use_case"] = use_case == TargetMode::Clone ? "clone" : "stress";
  j["knobs"] = space.to_json().at("knobs");
  if (!active.empty()) j["active_knobs"] = active;
  if (!pinned.empty()) {
    nlohmann::json p = nlohmann::json::object();
    for (const auto& [name, idx] : pinned) p[name] = idx;
    j["pinned"] = p;
  }
  j["target"] = target.to_json();
  j["evaluator"] = evaluator == EvaluatorKind::Builtin ? "builtin" : "external";
  if (external) j["external_spec"] = external->to_json();
  j["core"] = core.to_json();
  j["energy"] = energy.to_json();
  j["tuner"] = tuner == TunerKind::GD   ? "gd"
               : tuner == TunerKind::GA ? "ga"
                                        : "brute";
  j["gd"] = gd.to_json();
  j["ga"] = ga.to_json();
  nlohmann::json grid;
  if (!grid_indices.empty()) {
    nlohmann::json gi = nlohmann::json::object();
    for (const auto& [name, idx] : grid_indices) gi[name] = idx;
    grid["indices"] = gi;
  }
  grid["levels_fraction"] = grid_levels_fraction;
  grid["levels_scalar"] = grid_levels_scalar;
  grid["cap"] = grid_cap;
  j["grid"] = grid;
  j["static_size"] = static_size;
  j["n_dyn"] = n_dyn;
  j["seed"] = seed;
  j["workers"] = workers;
  if (!out_dir.empty()) j["out"] = out_dir;
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    if (j.contains("use_case")) {
      std::string u = j.at("use_case").get<std::string>();
      if (u == "clone") c.use_case = TargetMode::Clone;
      else if (u == "stress") c.use_case = TargetMode::Stress;
      else throw ConfigError("unknown use_case '" + u + "'");
    }
    if (j.contains("knobs"))
      c.space = KnobSpace::from_json({{"knobs", j.at("knobs")}});
    if (j.contains("active_knobs"))
      c.active = j.at("active_knobs").get<std::vector<std::string>>();
    if (j.contains("pinned"))
      for (auto it = j.at("pinned").begin(); it != j.at("pinned").end(); ++it)
        c.pinned[it.key()] = it.value().get<int>();
    if (j.contains("target")) c.target = TargetSpec::from_json(j.at("target"));
    else if (c.use_case == TargetMode::Stress) c.target.mode = TargetMode::Stress;
    if (c.use_case != c.target.mode)
      throw ConfigError("use_case and target mode disagree");
    if (j.contains("evaluator")) {
      std::string e = j.at("evaluator").get<std::string>();
      if (e == "builtin") c.evaluator = EvaluatorKind::Builtin;
      else if (e == "external") c.evaluator = EvaluatorKind::External;
      else throw ConfigError("unknown evaluator '" + e + "'");
    }
    if (j.contains("external_spec"))
      c.external = ExternalEvalSpec::from_json(j.at("external_spec"));
    if (j.contains("core")) c.core = CoreConfig::from_json(j.at("core"));
    if (j.contains("energy")) c.energy = EnergyModel::from_json(j.at("energy"));
    if (j.contains("tuner")) {
      std::string t = j.at("tuner").get<std::string>();
      if (t == "gd") c.tuner = TunerKind::GD;
      else if (t == "ga") c.tuner = TunerKind::GA;
      else if (t == "brute") c.tuner = TunerKind::Brute;
      else throw ConfigError("unknown tuner '" + t + "'");
    }
    if (j.contains("gd")) c.gd = GDSettings::from_json(j.at("gd"));
    if (j.contains("ga")) c.ga = GASettings::from_json(j.at("ga"));
    if (j.contains("grid")) {
      const auto& g = j.at("grid");
      if (g.contains("indices"))
        for (auto it = g.at("indices").begin(); it != g.at("indices").end(); ++it)
          c.grid_indices[it.key()] = it.value().get<std::vector<int>>();
      if (g.contains("levels_fraction"))
        c.grid_levels_fraction = g.at("levels_fraction").get<int>();
      if (g.contains("levels_scalar"))
        c.grid_levels_scalar = g.at("levels_scalar").get<int>();
      if (g.contains("cap")) c.grid_cap = g.at("cap").get<uint64_t>();
    }
    if (j.contains("static_size")) c.static_size = j.at("static_size").get<int>();
    if (j.contains("n_dyn")) c.n_dyn = j.at("n_dyn").get<uint64_t>();
    if (j.contains("seed")) c.seed = j.at("seed").get<uint64_t>();
    if (j.contains("workers")) c.workers = j.at("workers").get<int>();
    if (j.contains("out")) c.out_dir = j.at("out").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
  // Tuner seeds follow the run seed unless set explicitly.
  if (!j.contains("gd") || !j.at("gd").contains("seed")) c.gd.seed = c.seed;
  if (!j.contains("ga") || !j.at("ga").contains("seed")) c.ga.seed = c.seed;
  c.validate();
  return c;
}

std::vector<RunConfig> RunConfig::expand_batch(const nlohmann::json& j) {
  if (!(j.contains("target") && j.at("target").contains("targets") &&
        j.at("target").at("targets").is_array()))
    return {from_json(j)};
  // One clone per target vector; outputs land in clone000/, clone001/, ...
  std::vector<RunConfig> out;
  nlohmann::json base = j;
  const auto& list = j.at("target").at("targets");
  for (size_t i = 0; i < list.size(); ++i) {
    base["target"]["targets"] = list[i];
    RunConfig c = from_json(base);
    char sub[32];
    std::snprintf(sub, sizeof(sub), "clone%03zu", i);
    c.out_dir = (fs::path(c.out_dir.empty() ? "." : c.out_dir) / sub).string();
    out.push_back(std::move(c));
  }
  return out;
}

KnobSpace RunConfig::reduced_space() const {
  if (active.empty()) return space;
  KnobSpace r;
  for (const auto& k : space.knobs)
    if (std::find(active.begin(), active.end(), k.name) != active.end())
      r.knobs.push_back(k);
  return r;
}

KnobConfig RunConfig::full_config(const KnobConfig& reduced) const {
  KnobConfig full;
  for (const auto& k : space.knobs) {
    if (const double* v = reduced.try_get(k.name)) {
      full.items.emplace_back(k.name, *v);
      continue;
    }
    auto pin = pinned.find(k.name);
    size_t idx = pin != pinned.end() ? static_cast<size_t>(pin->second)
                                     : (k.size() - 1) / 2;
    full.items.emplace_back(k.name, k.values[idx]);
  }
  return full;
}

namespace {

std::unique_ptr<Evaluator> make_evaluator(const RunConfig& config) {
  if (config.evaluator == EvaluatorKind::Builtin)
    return std::make_unique<BuiltinEvaluator>(config.core, config.n_dyn,
                                              config.energy);
  fs::path root = fs::path(config.out_dir.empty() ? "." : config.out_dir) / "runs";
  return std::make_unique<ExternalEvaluator>(*config.external, config.core, root);
}

EvalFn make_eval_fn(const RunConfig& config, const KnobSpace& reduced,
                    Evaluator& evaluator) {
  return [&config, &reduced, &evaluator](const KnobPoint& p,
                                         const EvalContext& ctx) -> PointEval {
    PointEval out;
    try {
      KnobConfig full = config.full_config(snap(p, reduced));
      Kernel kernel =
          generate(full, config.space, config.static_size, config.seed);
      out.metrics = evaluator.evaluate(kernel, ctx);
      out.loss = compute_loss(out.metrics, config.target).value;
      out.ok = true;
    } catch (const EvalFailure& e) {
      out.error = e.what();
    }
    return out;
  };
}

void write_atomic(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp);
    f << content;
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

RunResult finish_run(const RunConfig& config, TuningReport report) {
  RunResult result;
  result.kernel = generate(config.full_config(report.best_config), config.space,
                           config.static_size, config.seed);
  result.metrics = report.best_metrics;
  if (config.target.mode == TargetMode::Clone)
    result.acc = accuracy(report.best_metrics, config.target);
  result.report = std::move(report);

  switch (result.report.stop) {
    case StopReason::TargetMet:
      result.exit_code = kExitOk;
      break;
    case StopReason::Converged:
      result.exit_code = config.target.mode == TargetMode::Stress
                             ? kExitOk
                             : kExitBudget;
      break;
    case StopReason::MaxEpochs:
      result.exit_code = kExitBudget;
      break;
    case StopReason::Error:
      result.exit_code = kExitEvaluator;
      break;
  }
  if (config.target.mode == TargetMode::Clone && result.acc &&
      result.acc->min >= config.target.target_accuracy)
    result.exit_code = kExitOk;

  if (!config.out_dir.empty()) {
    result.out_dir = config.out_dir;
    emit_report(result, result.out_dir);
  }
  return result;
}

}  // namespace

RunResult run_clone(const RunConfig& config) {
  if (config.target.mode != TargetMode::Clone)
    throw ConfigError("clone run needs a clone-mode target");
  config.validate();
  KnobSpace reduced = config.reduced_space();
  auto evaluator = make_evaluator(config);
  EvalFn eval = make_eval_fn(config, reduced, *evaluator);
  TuningReport report =
      config.tuner == TunerKind::GA
          ? ga_tune(reduced, config.target, config.ga, eval, config.workers)
          : gd_tune(reduced, config.target, config.gd, eval, config.workers);
  return finish_run(config, std::move(report));
}

RunResult run_stress(const RunConfig& config) {
  if (config.target.mode != TargetMode::Stress)
    throw ConfigError("stress run needs a stress-mode target");
  config.validate();
  KnobSpace reduced = config.reduced_space();
  auto evaluator = make_evaluator(config);
  EvalFn eval = make_eval_fn(config, reduced, *evaluator);
  TuningReport report =
      config.tuner == TunerKind::GA
          ? ga_tune(reduced, config.target, config.ga, eval, config.workers)
          : gd_tune(reduced, config.target, config.gd, eval, config.workers);
  return finish_run(config, std::move(report));
}

RunResult run_brute(const RunConfig& config) {
  config.validate();
  KnobSpace reduced = config.reduced_space();
  auto evaluator = make_evaluator(config);
  EvalFn eval = make_eval_fn(config, reduced, *evaluator);

  std::vector<std::vector<int>> grid;
  for (const auto& k : reduced.knobs) {
    auto it = config.grid_indices.find(k.name);
    if (it != config.grid_indices.end()) {
      grid.push_back(it->second);
    } else {
      int levels = k.kind == KnobKind::InstructionFraction
                       ? config.grid_levels_fraction
                       : config.grid_levels_scalar;
      grid.push_back(quantize_indices(k.size(), levels));
    }
  }

  BruteResult brute = brute_force(reduced, config.target, eval, grid,
                                  config.grid_cap, config.workers);

  // Pack the search as a single-epoch report so artifacts share one shape.
  TuningReport report;
  report.settings = {{"tuner", "brute"}, {"target", config.target.to_json()}};
  report.total_evaluations = brute.evaluations;
  report.stop = StopReason::TargetMet;
  report.stop_detail = "exhaustive grid search complete";
  report.best_point = brute.best_point;
  report.best_config = brute.best_config;
  report.best_metrics = brute.best_metrics;
  report.best_loss = brute.best_loss;
  EpochRecord rec;
  rec.epoch = 0;
  rec.base = brute.best_point;
  rec.base_config = brute.best_config;
  rec.base_metrics = brute.best_metrics;
  rec.base_loss = brute.best_loss;
  rec.next = brute.best_point;
  rec.eval_count = static_cast<int>(brute.evaluations);
  rec.best_loss_so_far = brute.best_loss;
  report.epochs.push_back(std::move(rec));

  RunResult result = finish_run(config, std::move(report));
  result.exit_code = kExitOk;

  if (!config.out_dir.empty()) {
    std::ostringstream csv;
    csv.precision(17);
    for (const auto& k : reduced.knobs) csv << k.name << ",";
    csv << "loss";
    for (const auto& f : MetricVector::field_names()) csv << "," << f;
    csv << "\n";
    for (const auto& e : brute.entries) {
      for (size_t i = 0; i < e.indices.size(); ++i)
        csv << reduced.knobs[i].values[e.indices[i]] << ",";
      if (e.eval.ok) {
        csv << e.eval.loss;
        for (const auto& f : MetricVector::field_names())
          csv << "," << e.eval.metrics.get(f);
      } else {
        csv << "failed";
        for (size_t i = 0; i < MetricVector::field_names().size(); ++i)
          csv << ",";
      }
      csv << "\n";
    }
    write_atomic(fs::path(config.out_dir) / "grid.csv", csv.str());
  }
  return result;
}

RunResult run(const RunConfig& config) {
  if (config.tuner == TunerKind::Brute) return run_brute(config);
  return config.use_case == TargetMode::Clone ? run_clone(config)
                                              : run_stress(config);
}

void emit_report(const RunResult& result, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec && !fs::exists(dir))
    throw std::runtime_error("cannot create output directory " + dir.string() +
                             ": " + ec.message());

  write_atomic(dir / "report.json", result.report.to_json().dump(2) + "\n");
  write_atomic(dir / "epochs.csv", result.report.epochs_csv());
  write_atomic(dir / "kernel.s", emit_asm(result.kernel));
  write_atomic(dir / "kernel.json", result.kernel.to_json().dump(2) + "\n");

  nlohmann::json metrics;
  metrics["schema"] = 1;
  metrics["metrics"] = result.metrics.to_json();
  metrics["instruction_mix"] = {{"integer", result.metrics.frac_int},
                                {"float", result.metrics.frac_fp},
                                {"branch", result.metrics.frac_branch},
                                {"load", result.metrics.frac_load},
                                {"store", result.metrics.frac_store}};
  if (result.acc) {
    nlohmann::json per = nlohmann::json::object();
    for (const auto& [name, a] : result.acc->per_metric) per[name] = a;
    metrics["accuracy"] = {{"per_metric", per},
                           {"min", result.acc->min},
                           {"mean_error", result.acc->mean_error}};
  }
  write_atomic(dir / "metrics.json", metrics.dump(2) + "\n");
}

}  // namespace kerntune
