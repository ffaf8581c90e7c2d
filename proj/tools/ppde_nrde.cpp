// ppde-nrde: simulate, train, evaluate and query oracles from a config file.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "ppde/checkpoint.h"
#include "ppde/config.h"
#include "ppde/parallel.h"
#include "ppde/train.h"

namespace fs = std::filesystem;
using namespace ppde;

namespace {

// Usage or input problems; mapped to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool config_required) {
  auto* opt = cmd->add_option("--config", c.config, "experiment config file");
  if (config_required) opt->required();
  cmd->add_option("--seed", c.seed, "override every seed in the config");
  cmd->add_option("--threads", c.threads, "cap on worker threads (0 = all cores)");
  cmd->add_option("--out", c.out, "output directory (overrides out_dir)");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = load_config(c.config);
  if (c.seed) apply_seed(cfg, *c.seed);
  if (c.threads) cfg.threads = static_cast<int>(*c.threads);
  if (!c.out.empty()) cfg.out_dir = c.out;
  set_max_threads(static_cast<unsigned>(std::max(cfg.threads, 0)));
  return cfg;
}

fs::path prepare_out(const ExperimentConfig& cfg) {
  fs::path dir(cfg.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw UsageError("cannot create output directory '" + cfg.out_dir + "'");
  auto echo = config_to_json(cfg);
  echo["config_hash"] = config_hash(cfg);
  std::ofstream out(dir / "config.json");
  out << echo.dump(2) << '\n';
  if (!out) throw UsageError("cannot write to output directory '" + cfg.out_dir + "'");
  return dir;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw UsageError("cannot write '" + p.string() + "'");
  return out;
}

// Rows of `t,x_1,...,x_d`; a non-numeric first line is taken as a header.
PiecewisePath read_path_csv(const std::string& file) {
  std::ifstream in(file);
  if (!in) throw UsageError("cannot read path file '" + file + "'");
  std::vector<double> times, values;
  std::size_t width = 0;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t pos = 0;
        row.push_back(std::stod(cell, &pos));
        if (cell.find_first_not_of(" \t", pos) != std::string::npos) numeric = false;
      } catch (const std::exception&) {
        numeric = false;
      }
    }
    if (!numeric) {
      if (times.empty() && width == 0 && lineno == 1) continue;
      throw UsageError(file + ":" + std::to_string(lineno) + ": expected numbers");
    }
    if (row.size() < 2) throw UsageError(file + ":" + std::to_string(lineno) + ": need a time and at least one coordinate");
    if (width == 0) width = row.size();
    if (row.size() != width) throw UsageError(file + ":" + std::to_string(lineno) + ": inconsistent column count");
    times.push_back(row[0]);
    values.insert(values.end(), row.begin() + 1, row.end());
  }
  return PiecewisePath(times, values, width == 0 ? 1 : static_cast<int>(width - 1));
}

std::string format_coeff(double v, double scale) {
  if (std::abs(v) <= 1e-13 * std::max(1.0, scale)) v = 0.0;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

int cmd_logsig(const Common& c, std::string input, std::optional<int> depth) {
  std::optional<ExperimentConfig> cfg;
  if (!c.config.empty()) cfg = resolve(c);
  if (input.empty() && cfg) input = cfg->logsig_input;
  if (input.empty()) throw UsageError("logsig needs --input or logsig.input in the config");
  const int n = depth ? *depth : (cfg ? cfg->logsig_depth : 2);
  const auto path = read_path_csv(input);
  LyndonBasis basis(path.dim(), n);
  const auto ls = logsig(path, n);
  double scale = 0.0;
  for (double v : ls.coeffs) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < ls.coeffs.size(); ++i)
    std::cout << (i ? ", " : "") << basis.label(i) << ": " << format_coeff(ls.coeffs[i], scale);
  std::cout << '\n';
  if (cfg) prepare_out(*cfg);
  return 0;
}

int cmd_simulate(const Common& c) {
  auto cfg = resolve(c);
  auto dir = prepare_out(cfg);
  const auto& p = cfg.problem;
  auto paths = simulate_batch(p.dynamics, p.init, p.grid, cfg.simulate_paths, cfg.train.seed);
  auto out = open_out(dir / "paths.csv");
  write_paths_csv(out, paths);
  std::cout << "wrote " << paths.size() << " paths to " << (dir / "paths.csv").string() << '\n';
  return 0;
}

int cmd_train(const Common& c) {
  auto cfg = resolve(c);
  auto dir = prepare_out(cfg);
  NrdeModel model(cfg.model);
  model.initialize(cfg.init_seed);
  TrainResult result;
  try {
    result = train(model, cfg.problem, cfg.train);
  } catch (const DivergenceError& e) {
    std::cerr << "ppde-nrde: " << e.what() << '\n';
    return 1;
  }
  {
    auto out = open_out(dir / "learning_curve.csv");
    write_learning_curve(out, result);
  }
  save_checkpoint((dir / "checkpoint.json").string(), model, cfg.init_seed);
  std::cout << "trained " << cfg.train.epochs << " epochs, final loss " << result.losses.back() << '\n';
  return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint, bool oracle_self_test) {
  auto cfg = resolve(c);
  if (!oracle_self_test && checkpoint.empty()) throw UsageError("eval needs --checkpoint or --oracle-self-test");
  std::optional<Checkpoint> ck;
  if (!oracle_self_test) {
    try {
      ck = load_checkpoint(checkpoint);
    } catch (const CheckpointError& e) {
      throw UsageError(e.what());
    }
    if (ck->model.config().input_dim != cfg.problem.dim())
      throw UsageError("checkpoint input_dim does not match the problem dimension");
  }
  auto dir = prepare_out(cfg);
  const auto start = std::chrono::steady_clock::now();

  OracleCache cache;
  if (!cfg.eval.cache.empty() && fs::exists(cfg.eval.cache)) cache.load(cfg.eval.cache);
  EvalConfig e;
  e.n_test = cfg.eval.n_test;
  e.n_batches = cfg.eval.n_batches;
  e.oracle_sims = cfg.eval.oracle_sims;
  e.trace_paths = cfg.eval.trace_paths;
  e.seed = cfg.eval.seed;
  e.cache = cfg.eval.cache.empty() ? nullptr : &cache;

  Predictor predictor;
  if (oracle_self_test) {
    // an independent oracle run plays the model
    const auto& problem = cfg.problem;
    const int sims = cfg.eval.oracle_sims;
    const auto seed = mix_seed(cfg.eval.seed, 0x5e1f7e57ULL);
    predictor = [&problem, sims, seed](const PiecewisePath& fine) {
      std::vector<double> u;
      for (const auto& r : reference_solution(problem, fine, sims, mix_seed(seed, prefix_hash(fine.values()))))
        u.push_back(r.mean);
      return u;
    };
  } else {
    predictor = model_predictor(ck->model, cfg.problem.grid);
  }
  const auto report = evaluate(predictor, cfg.problem, e);
  if (e.cache) cache.save(cfg.eval.cache);
  const double runtime = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  nlohmann::ordered_json j;
  j["config_hash"] = config_hash(cfg);
  j["abs_err"] = {{"mean", report.abs_mean}, {"std", report.abs_std}};
  j["rel_err"] = {{"mean", report.rel_mean}, {"std", report.rel_std}};
  j["runtime_s"] = runtime;
  {
    auto out = open_out(dir / "report.json");
    out << j.dump(2) << '\n';
  }
  {
    auto out = open_out(dir / "eval.csv");
    write_eval_csv(out, report);
  }
  {
    auto out = open_out(dir / "traces.csv");
    write_traces_csv(out, report);
  }
  {
    auto out = open_out(dir / "rel_profile.csv");
    out.precision(17);
    out << "t,rel_err\n";
    for (std::size_t k = 0; k < report.rel_profile.size(); ++k)
      out << cfg.problem.grid.coarse_time(static_cast<int>(k)) << ',' << report.rel_profile[k] << '\n';
  }
  std::cout << "abs_err " << report.abs_mean << " +- " << report.abs_std << ", rel_err " << report.rel_mean
            << " +- " << report.rel_std << '\n';
  return 0;
}

int cmd_oracle(const Common& c, std::optional<int> n_sims, std::optional<int> node) {
  auto cfg = resolve(c);
  if (n_sims) cfg.oracle.n_sims = *n_sims;
  if (node) cfg.oracle.node = *node;
  const auto& p = cfg.problem;
  if (cfg.oracle.node < 0 || cfg.oracle.node > p.grid.coarse_steps)
    throw UsageError("oracle.node must lie in [0, " + std::to_string(p.grid.coarse_steps) + "]");
  if (cfg.oracle.n_sims < 2) throw UsageError("oracle n_sims must be >= 2");
  const auto rows = static_cast<std::size_t>(cfg.oracle.node * p.grid.refine) + 1;
  const auto d = static_cast<std::size_t>(p.dim());
  std::vector<double> prefix;
  if (!cfg.oracle.prefix.empty()) {
    const auto path = read_path_csv(cfg.oracle.prefix);
    if (path.dim() != p.dim()) throw UsageError("prefix dimension does not match the problem");
    if (path.size() != rows)
      throw UsageError("prefix must hold " + std::to_string(rows) + " fine-grid samples ending on node " +
                       std::to_string(cfg.oracle.node));
    prefix = path.values();
  } else {
    auto path = simulate_batch(p.dynamics, p.init, p.grid, 1, cfg.oracle.path_seed)[0];
    prefix.assign(path.values().begin(), path.values().begin() + static_cast<long>(rows * d));
  }
  auto dir = prepare_out(cfg);
  const auto est = mc_oracle(p, prefix, cfg.oracle.node, cfg.oracle.n_sims, mix_seed(cfg.oracle.path_seed, 1));
  nlohmann::ordered_json j;
  j["node"] = cfg.oracle.node;
  j["n_sims"] = cfg.oracle.n_sims;
  j["mean"] = est.mean;
  j["std_err"] = est.std_err;
  if (p.has_analytic()) j["analytic"] = heat_analytic(prefix, p.dim(), p.grid.fine_dt(), p.grid.horizon);
  {
    auto out = open_out(dir / "oracle.json");
    out << j.dump(2) << '\n';
  }
  std::cout << j.dump() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learn path-dependent PDE solutions with neural rough differential equations"};
  app.name("ppde-nrde");
  app.require_subcommand(1);

  Common common;
  std::string input, checkpoint;
  std::optional<int> depth, n_sims, node;
  bool self_test = false;

  auto* logsig_cmd = app.add_subcommand("logsig", "print the log-signature of a CSV path");
  add_common(logsig_cmd, common, false);
  logsig_cmd->add_option("--input", input, "CSV path file: t,x_1,...,x_d per row");
  logsig_cmd->add_option("--depth", depth, "truncation depth");

  auto* train_cmd = app.add_subcommand("train", "train a model; writes checkpoint and learning curve");
  add_common(train_cmd, common, true);

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint against the reference solution");
  add_common(eval_cmd, common, true);
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint written by train");
  eval_cmd->add_flag("--oracle-self-test", self_test, "evaluate an independent oracle run as the model");

  auto* oracle_cmd = app.add_subcommand("oracle", "Monte-Carlo conditional expectation at a node");
  add_common(oracle_cmd, common, true);
  oracle_cmd->add_option("--n-sims", n_sims, "number of continuations");
  oracle_cmd->add_option("--node", node, "coarse node index of the prefix end");

  auto* simulate_cmd = app.add_subcommand("simulate", "write simulated fine-grid paths as CSV");
  add_common(simulate_cmd, common, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*logsig_cmd) return cmd_logsig(common, input, depth);
    if (*train_cmd) return cmd_train(common);
    if (*eval_cmd) return cmd_eval(common, checkpoint, self_test);
    if (*oracle_cmd) return cmd_oracle(common, n_sims, node);
    if (*simulate_cmd) return cmd_simulate(common);
  } catch (const ConfigError& e) {
    std::cerr << "ppde-nrde: " << e.what() << '\n';
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "ppde-nrde: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "ppde-nrde: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "ppde-nrde: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
