#include "kerntune/tuners.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "kerntune/rng.hpp"

namespace kerntune {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Runs f(0..n-1) on up to `workers` threads. Results must be written to
// disjoint slots; assembly order is up to the caller, so parallel runs are
// bit-identical to serial ones.
template <typename F>
void parallel_for(size_t n, int workers, const F& f) {
  if (workers <= 1 || n <= 1) {
    for (size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        f(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  size_t count = std::min<size_t>(workers, n);
  pool.reserve(count);
  for (size_t t = 0; t < count; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

nlohmann::json point_json(const KnobPoint& p) { return p.pos; }

}  // namespace

double Schedule::at(int epoch) const {
  return std::max(floor, initial * std::pow(decay, epoch));
}

void Schedule::validate(const char* what) const {
  if (initial < 0 || floor < 0 || decay < 0 || decay > 1.0)
    throw std::invalid_argument(std::string(what) +
                                " schedule needs initial/floor >= 0 and decay in [0,1]");
}

nlohmann::json Schedule::to_json() const {
  return {{"initial", initial}, {"decay", decay}, {"floor", floor}};
}

Schedule Schedule::from_json(const nlohmann::json& j, Schedule defaults) {
  Schedule s = defaults;
  if (j.contains("initial")) s.initial = j.at("initial").get<double>();
  if (j.contains("decay")) s.decay = j.at("decay").get<double>();
  if (j.contains("floor")) s.floor = j.at("floor").get<double>();
  return s;
}

void GDSettings::validate() const {
  if (!(delta > 0)) throw std::invalid_argument("gd delta must be > 0");
  step.validate("step");
  skip.validate("skip");
  if (!(step.at(0) > 0)) throw std::invalid_argument("step sizes must be > 0");
  if (skip.at(0) >= 1.0)
    throw std::invalid_argument("skip probability must be < 1");
  if (!(epsilon > 0)) throw std::invalid_argument("gd epsilon must be > 0");
  if (max_epochs < 0) throw std::invalid_argument("gd max_epochs must be >= 0");
}

nlohmann::json GDSettings::to_json() const {
  nlohmann::json j{{"delta", delta},
                   {"step", step.to_json()},
                   {"skip", skip.to_json()},
                   {"epsilon", epsilon},
                   {"max_epochs", max_epochs},
                   {"patience", patience},
                   {"seed", seed}};
  if (start) j["start"] = start->pos;
  return j;
}

GDSettings GDSettings::from_json(const nlohmann::json& j) {
  GDSettings s;
  if (j.contains("delta")) s.delta = j.at("delta").get<double>();
  if (j.contains("step")) s.step = Schedule::from_json(j.at("step"), s.step);
  if (j.contains("skip")) s.skip = Schedule::from_json(j.at("skip"), s.skip);
  if (j.contains("epsilon")) s.epsilon = j.at("epsilon").get<double>();
  if (j.contains("max_epochs")) s.max_epochs = j.at("max_epochs").get<int>();
  if (j.contains("patience")) s.patience = j.at("patience").get<int>();
  if (j.contains("seed")) s.seed = j.at("seed").get<uint64_t>();
  if (j.contains("start")) {
    KnobPoint p;
    p.pos = j.at("start").get<std::vector<double>>();
    s.start = p;
  }
  s.validate();
  return s;
}

void GASettings::validate() const {
  if (population < 2) throw std::invalid_argument("ga population must be >= 2");
  if (tournament_size < 2 || tournament_size > population)
    throw std::invalid_argument("ga tournament size must be in [2, population]");
  if (mutation_rate < 0 || mutation_rate > 1)
    throw std::invalid_argument("ga mutation rate must be in [0,1]");
  if (crossover_rate < 0 || crossover_rate > 1)
    throw std::invalid_argument("ga crossover rate must be in [0,1]");
  if (max_epochs < 0) throw std::invalid_argument("ga max_epochs must be >= 0");
}

nlohmann::json GASettings::to_json() const {
  return {{"population", population},
          {"mutation_rate", mutation_rate},
          {"mutation", mutation},
          {"crossover", crossover},
          {"crossover_rate", crossover_rate},
          {"elitism", elitism},
          {"tournament_size", tournament_size},
          {"max_epochs", max_epochs},
          {"patience", patience},
          {"epsilon", epsilon},
          {"seed", seed}};
}

GASettings GASettings::from_json(const nlohmann::json& j) {
  GASettings s;
  if (j.contains("population")) s.population = j.at("population").get<int>();
  if (j.contains("mutation_rate"))
    s.mutation_rate = j.at("mutation_rate").get<double>();
  if (j.contains("crossover_rate"))
    s.crossover_rate = j.at("crossover_rate").get<double>();
  if (j.contains("elitism")) s.elitism = j.at("elitism").get<bool>();
  if (j.contains("tournament_size"))
    s.tournament_size = j.at("tournament_size").get<int>();
  if (j.contains("max_epochs")) s.max_epochs = j.at("max_epochs").get<int>();
  if (j.contains("patience")) s.patience = j.at("patience").get<int>();
  if (j.contains("epsilon")) s.epsilon = j.at("epsilon").get<double>();
  if (j.contains("seed")) s.seed = j.at("seed").get<uint64_t>();
  s.validate();
  return s;
}

const char* stop_reason_name(StopReason r) {
  switch (r) {
    case StopReason::Converged: return "converged";
    case StopReason::TargetMet: return "target_met";
    case StopReason::MaxEpochs: return "max_epochs";
    case StopReason::Error: return "error";
  }
  return "unknown";
}

nlohmann::json EpochRecord::to_json() const {
  nlohmann::json checks_j = nlohmann::json::array();
  for (const auto& c : checks) {
    nlohmann::json cj{{"knob", c.knob},
                      {"sign", c.sign},
                      {"point", point_json(c.point)},
                      {"ok", c.eval.ok}};
    if (c.eval.ok) {
      cj["loss"] = c.eval.loss;
      cj["metrics"] = c.eval.metrics.to_json();
    } else {
      cj["error"] = c.eval.error;
    }
    checks_j.push_back(cj);
  }
  return {{"epoch", epoch},
          {"base", point_json(base)},
          {"base_config", base_config.to_json()},
          {"base_metrics", base_metrics.to_json()},
          {"base_loss", base_loss},
          {"checks", checks_j},
          {"gradient", gradient},
          {"skipped", skipped},
          {"next", point_json(next)},
          {"eval_count", eval_count},
          {"step_size", step_size},
          {"skip_probability", skip_probability},
          {"best_loss", best_loss_so_far}};
}

nlohmann::json TuningReport::to_json() const {
  nlohmann::json epochs_j = nlohmann::json::array();
  for (const auto& e : epochs) epochs_j.push_back(e.to_json());
  return {{"schema", 1},
          {"settings", settings},
          {"epochs", epochs_j},
          {"stop_reason", stop_reason_name(stop)},
          {"stop_detail", stop_detail},
          {"best", {{"point", point_json(best_point)},
                    {"config", best_config.to_json()},
                    {"metrics", best_metrics.to_json()},
                    {"loss", best_loss}}},
          {"total_evaluations", total_evaluations}};
}

std::string TuningReport::epochs_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,loss,best_loss,evals,step,skip_p";
  for (const auto& f : MetricVector::field_names()) out << "," << f;
  out << "\n";
  for (const auto& e : epochs) {
    out << e.epoch << "," << e.base_loss << "," << e.best_loss_so_far << ","
        << e.eval_count << "," << e.step_size << "," << e.skip_probability;
    for (const auto& f : MetricVector::field_names())
      out << "," << e.base_metrics.get(f);
    out << "\n";
  }
  return out.str();
}

GdEpochResult gd_epoch(const KnobSpace& space, const KnobPoint& base,
                       const PointEval& base_eval, int epoch,
                       const GDSettings& settings, const EvalFn& eval_fn,
                       int workers) {
  size_t dim = space.dim();
  GdEpochResult out;
  EpochRecord& rec = out.record;
  rec.epoch = epoch;
  rec.base = base;
  rec.base_config = snap(base, space);
  rec.base_metrics = base_eval.metrics;
  rec.base_loss = base_eval.loss;
  rec.step_size = settings.step.at(epoch);
  rec.skip_probability = settings.skip.at(epoch);
  rec.gradient.assign(dim, 0.0);

  // Skip decisions are derived from (seed, epoch, knob) so they do not
  // depend on evaluation order.
  std::vector<uint8_t> skipped(dim, 0);
  for (size_t i = 0; i < dim; ++i) {
    Rng rng(derive_seed(settings.seed, 0x51c5, epoch, i));
    skipped[i] = rng.next_bool(rec.skip_probability);
    if (skipped[i]) rec.skipped.push_back(static_cast<int>(i));
  }

  std::vector<size_t> active;
  for (size_t i = 0; i < dim; ++i)
    if (!skipped[i]) active.push_back(i);

  rec.checks.resize(active.size() * 2);
  parallel_for(active.size() * 2, workers, [&](size_t idx) {
    size_t knob = active[idx / 2];
    int sign = idx % 2 == 0 ? +1 : -1;
    CheckRecord& c = rec.checks[idx];
    c.knob = static_cast<int>(knob);
    c.sign = sign;
    c.point = perturb(base, space, knob, sign * settings.delta);
    c.eval = eval_fn(c.point, EvalContext{epoch, static_cast<int>(knob), sign});
  });

  int failures = 0;
  for (size_t a = 0; a < active.size(); ++a) {
    size_t knob = active[a];
    const PointEval& plus = rec.checks[2 * a].eval;
    const PointEval& minus = rec.checks[2 * a + 1].eval;
    if (!plus.ok || !minus.ok) {
      // A failed check leaves this knob untouched for the epoch.
      rec.skipped.push_back(static_cast<int>(knob));
      ++failures;
      continue;
    }
    rec.eval_count += 2;
    rec.gradient[knob] = (plus.loss - minus.loss) / (2.0 * settings.delta);
  }
  std::sort(rec.skipped.begin(), rec.skipped.end());
  out.all_checks_failed = !active.empty() && failures == static_cast<int>(active.size());

  // Steepest movable knob moves one full step, the rest proportionally.
  // A gradient component pushing into a bound the coordinate already sits
  // on cannot produce movement, so it is left out of the normalization.
  double g_inf = 0.0;
  for (size_t i = 0; i < dim; ++i) {
    double g = rec.gradient[i];
    double hi = static_cast<double>(space.knobs[i].size() - 1);
    bool saturated = (g < 0.0 && base.pos[i] >= hi) ||
                     (g > 0.0 && base.pos[i] <= 0.0);
    if (!saturated) g_inf = std::max(g_inf, std::abs(g));
  }
  KnobPoint next = base;
  if (g_inf > 0.0) {
    for (size_t i = 0; i < dim; ++i) {
      double move = rec.step_size * rec.gradient[i] / g_inf;
      double hi = static_cast<double>(space.knobs[i].size() - 1);
      next.pos[i] = std::clamp(next.pos[i] - move, 0.0, hi);
    }
  }
  rec.next = next;
  out.next = next;
  return out;
}

namespace {

struct BestTracker {
  double loss = kInf;
  KnobPoint point;
  PointEval eval;

  void offer(const KnobPoint& p, const PointEval& e) {
    if (e.ok && e.loss < loss) {
      loss = e.loss;
      point = p;
      eval = e;
    }
  }
};

void finish_report(TuningReport& report, const KnobSpace& space,
                   const BestTracker& best) {
  report.best_point = best.point;
  report.best_config = snap(best.point, space);
  report.best_metrics = best.eval.metrics;
  report.best_loss = best.loss;
}

}  // namespace

TuningReport gd_tune(const KnobSpace& space, const TargetSpec& target,
                     const GDSettings& settings, const EvalFn& eval_fn,
                     int workers) {
  settings.validate();
  target.validate();
  space.validate();

  TuningReport report;
  report.settings = {{"tuner", "gd"},
                     {"gd", settings.to_json()},
                     {"target", target.to_json()}};

  KnobPoint base = settings.start ? *settings.start
                                  : random_point(space, settings.seed);
  PointEval base_eval = eval_fn(base, EvalContext{0, -1, 0});
  ++report.total_evaluations;
  BestTracker best;
  best.offer(base, base_eval);
  if (!base_eval.ok) {
    report.stop = StopReason::Error;
    report.stop_detail = "base evaluation failed: " + base_eval.error;
    report.best_point = base;
    report.best_config = snap(base, space);
    return report;
  }

  double patience_ref = kInf;
  int last_improved = 0;
  StopReason stop = StopReason::MaxEpochs;
  std::string detail;

  int epoch = 0;
  for (; epoch < settings.max_epochs; ++epoch) {
    if (target.mode == TargetMode::Clone) {
      Accuracy acc = accuracy(base_eval.metrics, target);
      if (acc.min >= target.target_accuracy) {
        stop = StopReason::TargetMet;
        detail = "accuracy target reached";
        break;
      }
    } else if (settings.patience > 0) {
      if (best.loss < patience_ref - settings.epsilon) {
        patience_ref = best.loss;
        last_improved = epoch;
      } else if (epoch - last_improved >= settings.patience) {
        stop = StopReason::Converged;
        detail = "no loss improvement within patience window";
        break;
      }
    }

    GdEpochResult er =
        gd_epoch(space, base, base_eval, epoch, settings, eval_fn, workers);
    report.total_evaluations += er.record.eval_count;
    for (const auto& c : er.record.checks) best.offer(c.point, c.eval);
    er.record.best_loss_so_far = best.loss;
    report.epochs.push_back(er.record);

    if (er.all_checks_failed) {
      stop = StopReason::Error;
      detail = "all gradient checks failed";
      break;
    }

    double moved = distance(er.next, base);
    if (moved < settings.epsilon) {
      stop = StopReason::Converged;
      detail = "configuration moved less than epsilon";
      break;
    }

    base = er.next;
    base_eval = eval_fn(base, EvalContext{epoch + 1, -1, 0});
    ++report.total_evaluations;
    if (!base_eval.ok) {
      stop = StopReason::Error;
      detail = "base evaluation failed: " + base_eval.error;
      break;
    }
    best.offer(base, base_eval);
  }

  if (stop == StopReason::MaxEpochs && target.mode == TargetMode::Clone &&
      base_eval.ok) {
    // The final update may land on target right at the budget edge.
    Accuracy acc = accuracy(base_eval.metrics, target);
    if (acc.min >= target.target_accuracy) {
      stop = StopReason::TargetMet;
      detail = "accuracy target reached";
    }
  }

  report.stop = stop;
  report.stop_detail = detail;
  finish_report(report, space, best);
  return report;
}

TuningReport ga_tune(const KnobSpace& space, const TargetSpec& target,
                     const GASettings& settings, const EvalFn& eval_fn,
                     int workers) {
  settings.validate();
  target.validate();
  space.validate();

  TuningReport report;
  report.settings = {{"tuner", "ga"},
                     {"ga", settings.to_json()},
                     {"target", target.to_json()}};

  size_t dim = space.dim();
  size_t pop_size = static_cast<size_t>(settings.population);
  Rng rng(derive_seed(settings.seed, 0x6e7c));

  using Genome = std::vector<int>;
  std::vector<Genome> pop(pop_size, Genome(dim));
  for (auto& g : pop)
    for (size_t i = 0; i < dim; ++i)
      g[i] = static_cast<int>(rng.next_index(space.knobs[i].size()));

  auto to_point = [](const Genome& g) {
    KnobPoint p;
    p.pos.assign(g.begin(), g.end());
    return p;
  };

  BestTracker best;
  double patience_ref = kInf;
  int last_improved = 0;
  StopReason stop = StopReason::MaxEpochs;
  std::string detail;

  for (int gen = 0; gen < settings.max_epochs; ++gen) {
    std::vector<PointEval> evals(pop_size);
    parallel_for(pop_size, workers, [&](size_t i) {
      evals[i] =
          eval_fn(to_point(pop[i]), EvalContext{gen, static_cast<int>(i), 0});
    });
    report.total_evaluations += pop_size;

    size_t gen_best = pop_size;
    int ok_count = 0;
    for (size_t i = 0; i < pop_size; ++i) {
      if (!evals[i].ok) continue;
      ++ok_count;
      if (gen_best == pop_size || evals[i].loss < evals[gen_best].loss)
        gen_best = i;
      best.offer(to_point(pop[i]), evals[i]);
    }
    if (ok_count == 0) {
      stop = StopReason::Error;
      detail = "all individuals failed to evaluate";
      break;
    }

    EpochRecord rec;
    rec.epoch = gen;
    rec.base = to_point(pop[gen_best]);
    rec.base_config = snap(rec.base, space);
    rec.base_metrics = evals[gen_best].metrics;
    rec.base_loss = evals[gen_best].loss;
    rec.eval_count = static_cast<int>(pop_size);
    rec.next = rec.base;
    rec.best_loss_so_far = best.loss;
    rec.checks.resize(pop_size);
    for (size_t i = 0; i < pop_size; ++i) {
      rec.checks[i].knob = static_cast<int>(i);
      rec.checks[i].point = to_point(pop[i]);
      rec.checks[i].eval = evals[i];
    }
    report.epochs.push_back(std::move(rec));

    if (target.mode == TargetMode::Clone) {
      Accuracy acc = accuracy(evals[gen_best].metrics, target);
      if (acc.min >= target.target_accuracy) {
        stop = StopReason::TargetMet;
        detail = "accuracy target reached";
        break;
      }
    } else if (settings.patience > 0) {
      if (best.loss < patience_ref - settings.epsilon) {
        patience_ref = best.loss;
        last_improved = gen;
      } else if (gen - last_improved >= settings.patience) {
        stop = StopReason::Converged;
        detail = "no loss improvement within patience window";
        break;
      }
    }

    auto fitness = [&](size_t i) {
      return evals[i].ok ? -evals[i].loss : -kInf;
    };
    auto tournament = [&]() -> size_t {
      size_t winner = pop_size;
      for (int t = 0; t < settings.tournament_size; ++t) {
        size_t cand = rng.next_index(pop_size);
        if (winner == pop_size || fitness(cand) > fitness(winner))
          winner = cand;
      }
      return winner;
    };

    std::vector<Genome> next_pop;
    next_pop.reserve(pop_size);
    if (settings.elitism) next_pop.push_back(pop[gen_best]);
    while (next_pop.size() < pop_size) {
      const Genome& a = pop[tournament()];
      const Genome& b = pop[tournament()];
      Genome child = a;
      if (dim > 1 && rng.next_bool(settings.crossover_rate)) {
        size_t cut = 1 + rng.next_index(dim - 1);
        for (size_t i = cut; i < dim; ++i) child[i] = b[i];
      }
      for (size_t i = 0; i < dim; ++i)
        if (rng.next_bool(settings.mutation_rate))
          child[i] = static_cast<int>(rng.next_index(space.knobs[i].size()));
      next_pop.push_back(std::move(child));
    }
    pop = std::move(next_pop);
  }

  report.stop = stop;
  report.stop_detail = detail;
  finish_report(report, space, best);
  return report;
}

std::vector<int> quantize_indices(size_t list_size, int levels) {
  std::vector<int> out;
  if (levels <= 1 || list_size <= 1) {
    out.push_back(0);
    return out;
  }
  size_t n = std::min<size_t>(levels, list_size);
  for (size_t i = 0; i < n; ++i) {
    int idx = static_cast<int>(
        std::lround(static_cast<double>(i) * (list_size - 1) / (n - 1)));
    if (out.empty() || out.back() != idx) out.push_back(idx);
  }
  return out;
}

BruteResult brute_force(const KnobSpace& space, const TargetSpec& target,
                        const EvalFn& eval_fn,
                        const std::vector<std::vector<int>>& grid,
                        uint64_t cap, int workers) {
  target.validate();
  space.validate();
  if (grid.size() != space.dim())
    throw std::invalid_argument("grid must list index subsets for every knob");
  uint64_t total = 1;
  for (size_t i = 0; i < grid.size(); ++i) {
    if (grid[i].empty())
      throw std::invalid_argument("empty grid for knob '" +
                                  space.knobs[i].name + "'");
    for (int idx : grid[i])
      if (idx < 0 || idx >= static_cast<int>(space.knobs[i].size()))
        throw std::invalid_argument("grid index out of range for knob '" +
                                    space.knobs[i].name + "'");
    total *= grid[i].size();
    if (total > cap)
      throw std::invalid_argument(
          "grid has more than " + std::to_string(cap) +
          " points; reduce the per-knob levels or the knob subset");
  }

  BruteResult result;
  result.entries.resize(total);
  result.evaluations = total;

  parallel_for(total, workers, [&](size_t flat) {
    GridEntry& entry = result.entries[flat];
    entry.indices.resize(grid.size());
    size_t rem = flat;
    for (size_t i = 0; i < grid.size(); ++i) {
      entry.indices[i] = grid[i][rem % grid[i].size()];
      rem /= grid[i].size();
    }
    KnobPoint p;
    p.pos.assign(entry.indices.begin(), entry.indices.end());
    entry.eval = eval_fn(p, EvalContext{0, static_cast<int>(flat), 0});
  });

  size_t best = total;
  for (size_t i = 0; i < total; ++i) {
    if (!result.entries[i].eval.ok) continue;
    if (best == total ||
        result.entries[i].eval.loss < result.entries[best].eval.loss)
      best = i;
  }
  if (best == total) throw EvalFailure("every grid point failed to evaluate");

  KnobPoint p;
  p.pos.assign(result.entries[best].indices.begin(),
               result.entries[best].indices.end());
  result.best_point = p;
  result.best_config = snap(p, space);
  result.best_metrics = result.entries[best].eval.metrics;
  result.best_loss = result.entries[best].eval.loss;
  return result;
}

}  // namespace kerntune
