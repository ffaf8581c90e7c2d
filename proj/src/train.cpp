#include "ppde/train.h"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include "ppde/parallel.h"

namespace ppde {

Method parse_method(const std::string& name) {
  if (name == "m1" || name == "M1" || name == "1") return Method::M1;
  if (name == "m2" || name == "M2" || name == "2") return Method::M2;
  throw std::invalid_argument("unknown training method '" + name + "' (m1, m2)");
}

std::string method_name(Method m) { return m == Method::M1 ? "m1" : "m2"; }

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train.epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train.batch_size must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("train.lr must be positive");
  if (!(eps > 0.0)) throw std::invalid_argument("train.eps must be positive");
  for (const auto& b : frozen_blocks)
    if (b != "embedding" && b != "xi" && b != "field" && b != "readout_u" && b != "readout_dx")
      throw std::invalid_argument("unknown parameter block '" + b + "'");
}

namespace {

double path_loss_m1(const std::vector<double>& u, const std::vector<double>& f, double scale,
                    std::vector<double>* cot) {
  if (u.size() != f.size()) throw std::invalid_argument("loss_method1: prediction/target shapes differ");
  double s = 0.0;
  if (cot) cot->assign(u.size(), 0.0);
  for (std::size_t j = 0; j < u.size(); ++j) {
    const double r = u[j] - f[j];
    s += r * r;
    if (cot) (*cot)[j] = 2.0 * r * scale;
  }
  return s;
}

Method2Terms path_loss_m2(const Method2Sample& p, std::span<const double> times, double rate,
                          bool squared, double scale, NodeCotangents* cot) {
  const std::size_t nodes = times.size();
  if (p.u.size() != nodes) throw std::invalid_argument("loss_method2: u must have one entry per node");
  if (p.dx.empty()) throw std::invalid_argument("loss_method2: requires the dx head");
  if (p.x.size() % nodes != 0 || p.dx.size() != p.x.size())
    throw std::invalid_argument("loss_method2: x and dx must both be nodes x d");
  const std::size_t d = p.x.size() / nodes;
  if (cot) {
    cot->u.assign(nodes, 0.0);
    cot->dx.assign(nodes * d, 0.0);
  }
  Method2Terms t;
  for (std::size_t j = 1; j < nodes; ++j) {
    const double e1 = std::exp(-rate * times[j]);
    const double e0 = std::exp(-rate * times[j - 1]);
    double r = e1 * p.u[j] - e0 * p.u[j - 1];
    for (std::size_t i = 0; i < d; ++i)
      r -= p.dx[(j - 1) * d + i] * (e1 * p.x[j * d + i] - e0 * p.x[(j - 1) * d + i]);
    const double w = squared ? 2.0 * r : 1.0;
    t.bracket += squared ? r * r : r;
    if (cot) {
      cot->u[j] += w * e1 * scale;
      cot->u[j - 1] -= w * e0 * scale;
      for (std::size_t i = 0; i < d; ++i)
        cot->dx[(j - 1) * d + i] -= w * (e1 * p.x[j * d + i] - e0 * p.x[(j - 1) * d + i]) * scale;
    }
  }
  const double m = p.payoff - p.u[nodes - 1];
  t.terminal = m * m;
  if (cot) cot->u[nodes - 1] -= 2.0 * m * scale;
  t.total = t.bracket + t.terminal;
  return t;
}

}  // namespace

double loss_method1(const std::vector<std::vector<double>>& u_hat,
                    const std::vector<std::vector<double>>& targets,
                    std::vector<std::vector<double>>* cot) {
  if (u_hat.size() != targets.size() || u_hat.empty())
    throw std::invalid_argument("loss_method1: batch sizes differ or are empty");
  const double scale = 1.0 / static_cast<double>(u_hat.size());
  if (cot) cot->resize(u_hat.size());
  double total = 0.0;
  for (std::size_t i = 0; i < u_hat.size(); ++i)
    total += path_loss_m1(u_hat[i], targets[i], scale, cot ? &(*cot)[i] : nullptr);
  return total * scale;
}

Method2Terms loss_method2(std::span<const Method2Sample> batch, std::span<const double> times,
                          double rate, bool squared, std::vector<NodeCotangents>* cot) {
  if (batch.empty()) throw std::invalid_argument("loss_method2: empty batch");
  const double scale = 1.0 / static_cast<double>(batch.size());
  if (cot) cot->resize(batch.size());
  Method2Terms sum;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto t = path_loss_m2(batch[i], times, rate, squared, scale, cot ? &(*cot)[i] : nullptr);
    sum.bracket += t.bracket;
    sum.terminal += t.terminal;
  }
  sum.bracket *= scale;
  sum.terminal *= scale;
  sum.total = sum.bracket + sum.terminal;
  return sum;
}

namespace {

std::vector<char> frozen_mask(const NrdeModel& model, const std::vector<std::string>& blocks) {
  const auto& lay = model.layout();
  std::vector<char> mask(model.param_count(), 0);
  auto freeze = [&](std::size_t a, std::size_t b) { std::fill(mask.begin() + static_cast<long>(a), mask.begin() + static_cast<long>(b), 1); };
  for (const auto& b : blocks) {
    if (b == "embedding") freeze(lay.embedding, lay.xi);
    if (b == "xi") freeze(lay.xi, lay.field);
    if (b == "field") freeze(lay.field, lay.readout_u);
    if (b == "readout_u") freeze(lay.readout_u, lay.readout_dx);
    if (b == "readout_dx") freeze(lay.readout_dx, lay.total);
  }
  return mask;
}

std::vector<double> coarse_values(const PiecewisePath& fine, const GridSpec& grid) {
  return restrict_to_coarse(fine, grid).values();
}

}  // namespace

TrainResult train(NrdeModel& model, const ProblemSpec& problem, const TrainConfig& config,
                  const std::function<void(int, double)>& on_epoch) {
  config.validate();
  problem.validate();
  if (model.config().input_dim != problem.dim())
    throw std::invalid_argument("model input_dim does not match the problem dimension");
  if (config.method == Method::M2 && !model.config().dx_head)
    throw std::invalid_argument("method m2 needs a model with the dx head");

  const GridSpec& grid = problem.grid;
  const auto times = grid.coarse_times();
  const auto mask = frozen_mask(model, config.frozen_blocks);
  const auto batch = static_cast<std::size_t>(config.batch_size);
  const double scale = 1.0 / static_cast<double>(batch);

  AdagradState opt{config.lr, config.eps, {}};
  auto params = model.params();
  TrainResult result;
  std::vector<std::vector<double>> grads(batch);
  std::vector<double> path_loss(batch), path_terminal(batch);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto paths = simulate_batch(problem.dynamics, problem.init, grid, config.batch_size,
                                      mix_seed(config.seed, static_cast<std::uint64_t>(epoch)));
    parallel_for(batch, [&](std::size_t i) {
      const auto driven = drive(model, paths[i], grid);
      const auto states = forward_hidden(model, driven);
      const auto pred = readout(model, states);
      NodeCotangents cot;
      if (config.method == Method::M1) {
        const auto targets = target_F_all(problem, paths[i]);
        path_loss[i] = path_loss_m1(pred.u, targets, scale, &cot.u);
        path_terminal[i] = 0.0;
      } else {
        const auto x = coarse_values(paths[i], grid);
        Method2Sample s{x, pred.u, pred.dx, payoff(problem, paths[i])};
        auto t = path_loss_m2(s, times, problem.rate, config.squared_bracket, scale, &cot);
        path_loss[i] = t.total;
        path_terminal[i] = t.terminal;
      }
      grads[i] = adjoint_grad(model, driven, states, cot);
    });

    double loss = 0.0, terminal = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
      loss += path_loss[i];
      terminal += path_terminal[i];
    }
    loss *= scale;
    terminal *= scale;
    std::vector<double> g(params.size(), 0.0);
    for (const auto& gi : grads)
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += gi[k];
    bool finite = std::isfinite(loss);
    for (double v : g) finite = finite && std::isfinite(v);
    if (!finite) {
      std::ostringstream os;
      os << "training diverged: non-finite loss at epoch " << epoch;
      throw DivergenceError(os.str(), epoch);
    }
    for (std::size_t k = 0; k < g.size(); ++k)
      if (mask[k]) g[k] = 0.0;
    adagrad_step(opt, params, g);
    model.set_params(params);
    result.losses.push_back(loss);
    result.terminal.push_back(terminal);
    if (on_epoch) on_epoch(epoch, loss);
  }
  return result;
}

Predictor model_predictor(const NrdeModel& model, const GridSpec& grid) {
  return [&model, grid](const PiecewisePath& fine) { return predict(model, fine, grid).u; };
}

std::vector<OracleEstimate> reference_solution(const ProblemSpec& problem, const PiecewisePath& fine,
                                               int n_sims, std::uint64_t seed, OracleCache* cache) {
  const GridSpec& grid = problem.grid;
  const auto d = static_cast<std::size_t>(problem.dim());
  std::vector<OracleEstimate> out(static_cast<std::size_t>(grid.coarse_steps) + 1);
  const auto phash = cache ? problem_hash(problem) : 0;
  for (int j = 0; j <= grid.coarse_steps; ++j) {
    const auto rows = static_cast<std::size_t>(j * grid.refine) + 1;
    std::span<const double> prefix(fine.values().data(), rows * d);
    auto& est = out[static_cast<std::size_t>(j)];
    if (problem.has_analytic()) {
      est = {heat_analytic(prefix, problem.dim(), grid.fine_dt(), grid.horizon), 0.0};
      continue;
    }
    OracleCache::Key key{phash, prefix_hash(prefix), j, n_sims};
    if (cache) {
      if (auto hit = cache->find(key)) {
        est = *hit;
        continue;
      }
    }
    est = mc_oracle(problem, prefix, j, n_sims, mix_seed(seed, static_cast<std::uint64_t>(j)));
    if (cache) cache->insert(key, est);
  }
  return out;
}

namespace {
double sample_std(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

constexpr std::uint64_t kEvalSalt = 0x6a09e667f3bcc909ULL;
}  // namespace

EvalReport evaluate(const Predictor& predictor, const ProblemSpec& problem, const EvalConfig& config) {
  problem.validate();
  if (config.n_test < 1 || config.n_batches < 1)
    throw std::invalid_argument("evaluate: n_test and n_batches must be >= 1");
  const GridSpec& grid = problem.grid;
  const auto nodes = static_cast<std::size_t>(grid.coarse_steps) + 1;
  const double dt = grid.coarse_dt();
  const double per_path = dt / config.n_test;

  EvalReport rep;
  std::vector<double> prof_num(nodes, 0.0), prof_den(nodes, 0.0);
  double se_total = 0.0;
  for (int b = 0; b < config.n_batches; ++b) {
    const std::uint64_t batch_seed = mix_seed(config.seed ^ kEvalSalt, static_cast<std::uint64_t>(b));
    const auto paths = simulate_batch(problem.dynamics, problem.init, grid, config.n_test, batch_seed);
    double num = 0.0, den = 0.0, se = 0.0;
    for (std::size_t i = 0; i < paths.size(); ++i) {
      const auto ref = reference_solution(problem, paths[i], config.oracle_sims,
                                          mix_seed(batch_seed, i), config.cache);
      const auto u_hat = predictor(paths[i]);
      if (u_hat.size() != nodes) throw std::invalid_argument("evaluate: predictor returned wrong length");
      for (std::size_t j = 0; j < nodes; ++j) {
        const double err = std::abs(ref[j].mean - u_hat[j]);
        num += err;
        den += std::abs(ref[j].mean);
        se += ref[j].std_err;
        prof_num[j] += err;
        prof_den[j] += std::abs(ref[j].mean);
        if (b == 0 && static_cast<int>(i) < config.trace_paths)
          rep.traces.push_back({static_cast<int>(i), grid.coarse_time(static_cast<int>(j)),
                                ref[j].mean, u_hat[j]});
      }
    }
    if (!(den > 0.0)) throw std::domain_error("evaluate: reference solution is identically zero");
    rep.abs_err.push_back(per_path * num);
    rep.rel_err.push_back(num / den);
    se_total += per_path * se;
  }
  const double nb = config.n_batches;
  for (double v : rep.abs_err) rep.abs_mean += v / nb;
  for (double v : rep.rel_err) rep.rel_mean += v / nb;
  rep.abs_std = sample_std(rep.abs_err, rep.abs_mean);
  rep.rel_std = sample_std(rep.rel_err, rep.rel_mean);
  rep.mean_oracle_std_err = se_total / nb;
  rep.rel_profile.resize(nodes);
  for (std::size_t j = 0; j < nodes; ++j)
    rep.rel_profile[j] = prof_den[j] > 0.0 ? prof_num[j] / prof_den[j] : 0.0;
  return rep;
}

void write_learning_curve(std::ostream& os, const TrainResult& result) {
  const auto p = os.precision(17);
  os << "epoch,loss\n";
  for (std::size_t e = 0; e < result.losses.size(); ++e) os << e << ',' << result.losses[e] << '\n';
  os.precision(p);
}

void write_eval_csv(std::ostream& os, const EvalReport& report) {
  const auto p = os.precision(17);
  os << "batch,abs_err,rel_err\n";
  for (std::size_t b = 0; b < report.abs_err.size(); ++b)
    os << b << ',' << report.abs_err[b] << ',' << report.rel_err[b] << '\n';
  os.precision(p);
}

void write_traces_csv(std::ostream& os, const EvalReport& report) {
  const auto p = os.precision(17);
  os << "path_id,t,u_true,u_hat\n";
  for (const auto& r : report.traces)
    os << r.path_id << ',' << r.t << ',' << r.u_true << ',' << r.u_hat << '\n';
  os.precision(p);
}

}  // namespace ppde
