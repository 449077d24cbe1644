#include "kerntune/evaluator.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <thread>

namespace kerntune {

namespace fs = std::filesystem;

std::string EvalContext::dir_name() const {
  char buf[64];
  if (check < 0) {
    std::snprintf(buf, sizeof(buf), "epoch%03d/base", epoch < 0 ? 0 : epoch);
  } else {
    const char* suffix = sign > 0 ? "p" : (sign < 0 ? "m" : "");
    std::snprintf(buf, sizeof(buf), "epoch%03d/check%03d%s",
                  epoch < 0 ? 0 : epoch, check, suffix);
  }
  return buf;
}

MetricVector BuiltinEvaluator::evaluate(const Kernel& kernel,
                                        const EvalContext&) {
  return simulate(kernel, core_, n_dyn_, energy_);
}

std::vector<std::string> BuiltinEvaluator::capabilities() const {
  return MetricVector::field_names();
}

nlohmann::json MetricMapping::to_json() const {
  nlohmann::json j{{"key", key}};
  switch (transform) {
    case StatTransform::Identity: break;
    case StatTransform::OneMinus: j["transform"] = "one-minus"; break;
    case StatTransform::DivideBy:
      j["transform"] = "divide-by";
      j["divisor"] = divisor;
      break;
  }
  return j;
}

MetricMapping MetricMapping::from_json(const nlohmann::json& j) {
  MetricMapping m;
  if (j.is_string()) {
    m.key = j.get<std::string>();
    return m;
  }
  m.key = j.at("key").get<std::string>();
  if (j.contains("transform")) {
    std::string t = j.at("transform").get<std::string>();
    if (t == "identity") {
      m.transform = StatTransform::Identity;
    } else if (t == "one-minus") {
      m.transform = StatTransform::OneMinus;
    } else if (t == "divide-by") {
      m.transform = StatTransform::DivideBy;
      m.divisor = j.at("divisor").get<std::string>();
    } else {
      throw std::invalid_argument("unknown stats transform '" + t + "'");
    }
  }
  return m;
}

void ExternalEvalSpec::validate() const {
  if (command.empty())
    throw std::invalid_argument("external evaluator command is empty");
  if (stats_path.empty())
    throw std::invalid_argument("external evaluator stats path is empty");
  if (!(timeout_seconds > 0))
    throw std::invalid_argument("external evaluator timeout must be > 0");
  for (const auto& [field, mapping] : metric_map) {
    if (!MetricVector::is_field(field))
      throw std::invalid_argument("unknown metric field '" + field +
                                  "' in metric map");
    if (mapping.key.empty())
      throw std::invalid_argument("empty stats key for metric '" + field + "'");
    if (mapping.transform == StatTransform::DivideBy && mapping.divisor.empty())
      throw std::invalid_argument("divide-by mapping for '" + field +
                                  "' needs a divisor key");
  }
}

nlohmann::json ExternalEvalSpec::to_json() const {
  nlohmann::json metrics = nlohmann::json::object();
  for (const auto& [field, mapping] : metric_map)
    metrics[field] = mapping.to_json();
  return {{"command", command},
          {"stats_path", stats_path},
          {"metrics", metrics},
          {"timeout", timeout_seconds}};
}

ExternalEvalSpec ExternalEvalSpec::from_json(const nlohmann::json& j) {
  ExternalEvalSpec s;
  s.command = j.at("command").get<std::string>();
  if (j.contains("stats_path")) s.stats_path = j.at("stats_path").get<std::string>();
  if (j.contains("metrics"))
    for (auto it = j.at("metrics").begin(); it != j.at("metrics").end(); ++it)
      s.metric_map.emplace_back(it.key(), MetricMapping::from_json(it.value()));
  if (j.contains("timeout")) s.timeout_seconds = j.at("timeout").get<double>();
  s.validate();
  return s;
}

namespace {

struct StatsTable {
  // key -> (value, line number), first occurrence wins
  std::vector<std::pair<std::string, std::pair<double, int>>> entries;

  const std::pair<double, int>* find(const std::string& key) const {
    for (const auto& [k, v] : entries)
      if (k == key) return &v;
    return nullptr;
  }
};

StatsTable scan_stats(const std::string& text,
                      const std::vector<std::string>& wanted) {
  StatsTable table;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string key, value;
    if (!(ls >> key >> value)) continue;
    bool needed = false;
    for (const auto& w : wanted)
      if (w == key) {
        needed = true;
        break;
      }
    if (!needed || table.find(key)) continue;
    char* end = nullptr;
    errno = 0;
    double v = std::strtod(value.c_str(), &end);
    if (end != value.c_str() + value.size() || errno == ERANGE)
      throw EvalFailure("unparseable value '" + value + "' for stats key '" +
                        key + "' at line " + std::to_string(line_no));
    table.entries.emplace_back(key, std::make_pair(v, line_no));
  }
  return table;
}

}  // namespace

MetricVector parse_stats(const std::string& text, const MetricMap& map) {
  if (map.empty()) throw EvalFailure("no metrics mapped");
  if (text.empty()) throw EvalFailure("empty stats dump");
  std::vector<std::string> wanted;
  for (const auto& [field, mapping] : map) {
    wanted.push_back(mapping.key);
    if (mapping.transform == StatTransform::DivideBy)
      wanted.push_back(mapping.divisor);
  }
  StatsTable table = scan_stats(text, wanted);

  MetricVector m;
  for (const auto& [field, mapping] : map) {
    const auto* entry = table.find(mapping.key);
    if (!entry)
      throw EvalFailure("stats key '" + mapping.key + "' not found for metric '" +
                        field + "'");
    double v = entry->first;
    switch (mapping.transform) {
      case StatTransform::Identity:
        break;
      case StatTransform::OneMinus:
        v = 1.0 - v;
        break;
      case StatTransform::DivideBy: {
        const auto* div = table.find(mapping.divisor);
        if (!div)
          throw EvalFailure("stats key '" + mapping.divisor +
                            "' (divisor) not found for metric '" + field + "'");
        if (div->first == 0.0)
          throw EvalFailure("zero divisor '" + mapping.divisor +
                            "' for metric '" + field + "'");
        v = v / div->first;
        break;
      }
    }
    m.set(field, v);
  }
  return m;
}

CommandResult run_command(const std::string& command, double timeout_seconds,
                          const fs::path& output_file) {
  CommandResult result;
  FILE* out = std::fopen(output_file.c_str(), "w");
  if (!out)
    throw EvalFailure("cannot open command output file " +
                      output_file.string());
  int out_fd = fileno(out);

  pid_t pid = fork();
  if (pid < 0) {
    std::fclose(out);
    throw EvalFailure("fork failed: " + std::string(std::strerror(errno)));
  }
  if (pid == 0) {
    dup2(out_fd, STDOUT_FILENO);
    dup2(out_fd, STDERR_FILENO);
    execl("/bin/sh", "sh", "-c", command.c_str(), nullptr);
    _exit(127);
  }
  std::fclose(out);

  auto deadline = std::chrono::steady_clock::now() +
                  std::chrono::duration<double>(timeout_seconds);
  int status = 0;
  for (;;) {
    pid_t done = waitpid(pid, &status, WNOHANG);
    if (done == pid) break;
    if (done < 0)
      throw EvalFailure("waitpid failed: " + std::string(std::strerror(errno)));
    if (std::chrono::steady_clock::now() >= deadline) {
      kill(pid, SIGKILL);
      waitpid(pid, &status, 0);
      result.timed_out = true;
      break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
  if (!result.timed_out)
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;

  std::ifstream in(output_file);
  std::stringstream ss;
  ss << in.rdbuf();
  result.output = ss.str();
  return result;
}

ExternalEvaluator::ExternalEvaluator(ExternalEvalSpec spec,
                                     const CoreConfig& core,
                                     fs::path run_root)
    : spec_(std::move(spec)), run_root_(std::move(run_root)) {
  spec_.validate();
  core_json_ = core.to_json().dump(2);
}

std::vector<std::string> ExternalEvaluator::capabilities() const {
  std::vector<std::string> fields;
  for (const auto& [field, mapping] : spec_.metric_map) fields.push_back(field);
  return fields;
}

namespace {

std::string substitute(std::string text, const std::string& placeholder,
                       const std::string& value) {
  size_t at;
  while ((at = text.find(placeholder)) != std::string::npos)
    text.replace(at, placeholder.size(), value);
  return text;
}

std::string tail_of(const std::string& text, size_t max_bytes = 2048) {
  if (text.size() <= max_bytes) return text;
  return "..." + text.substr(text.size() - max_bytes);
}

}  // namespace

MetricVector ExternalEvaluator::evaluate(const Kernel& kernel,
                                         const EvalContext& ctx) {
  fs::path dir = run_root_ / ctx.dir_name();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw EvalFailure("cannot create evaluation directory " + dir.string() +
                      ": " + ec.message());

  auto write = [&](const fs::path& p, const std::string& content) {
    std::ofstream f(p);
    f << content;
    if (!f) throw EvalFailure("cannot write " + p.string());
  };
  fs::path asm_path = dir / "kernel.s";
  write(asm_path, emit_asm(kernel));
  write(dir / "kernel.json", kernel.to_json().dump(2) + "\n");
  fs::path core_path = dir / "core_config.json";
  write(core_path, core_json_ + "\n");

  auto expand = [&](const std::string& t) {
    std::string s = substitute(t, "{asm}", asm_path.string());
    s = substitute(s, "{workdir}", dir.string());
    return substitute(s, "{core_config}", core_path.string());
  };
  std::string command = expand(spec_.command);

  CommandResult res =
      run_command(command, spec_.timeout_seconds, dir / "cmd_output.txt");
  if (res.timed_out)
    throw EvalFailure("evaluation command timed out after " +
                          std::to_string(spec_.timeout_seconds) + "s: " + command,
                      tail_of(res.output));
  if (res.exit_code != 0)
    throw EvalFailure(
        "evaluation command exited with " + std::to_string(res.exit_code) +
            ": " + command,
        tail_of(res.output));

  fs::path stats_path = expand(spec_.stats_path);
  std::ifstream stats(stats_path);
  if (!stats)
    throw EvalFailure("stats dump not found at " + stats_path.string(),
                      tail_of(res.output));
  std::stringstream ss;
  ss << stats.rdbuf();
  return parse_stats(ss.str(), spec_.metric_map);
}

}  // namespace kerntune
