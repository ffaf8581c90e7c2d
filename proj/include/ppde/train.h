#ifndef PPDE_TRAIN_H
#define PPDE_TRAIN_H

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ppde/adjoint.h"
#include "ppde/net.h"
#include "ppde/nrde.h"
#include "ppde/problems.h"

namespace ppde {

enum class Method { M1, M2 };

Method parse_method(const std::string& name);
std::string method_name(Method m);

struct TrainConfig {
  int epochs = 2000;
  int batch_size = 64;
  std::uint64_t seed = 0;
  double lr = 0.1;
  double eps = 1e-10;
  Method method = Method::M1;
  bool squared_bracket = true;
  // parameter blocks held fixed: embedding, xi, field, readout_u, readout_dx
  std::vector<std::string> frozen_blocks;

  void validate() const;
};

// Raised when a loss or gradient stops being finite.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, int epoch) : std::runtime_error(what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

// Mean over paths of sum_j (F_j - u_j)^2. When cot is given it receives the
// derivative with respect to every u_j.
double loss_method1(const std::vector<std::vector<double>>& u_hat,
                    const std::vector<std::vector<double>>& targets,
                    std::vector<std::vector<double>>* cot = nullptr);

struct Method2Terms {
  double total = 0.0;
  double bracket = 0.0;   // martingale increments (squared or raw)
  double terminal = 0.0;  // (g - u(T))^2
};

// Per path: node values x (nodes x d), node times, predictions u (nodes) and
// dx (nodes x d), terminal payoff g. Increments of the discounted path
// e^{-rt} X are paired with dx at the left node.
struct Method2Sample {
  std::span<const double> x;
  std::span<const double> u;
  std::span<const double> dx;
  double payoff = 0.0;
};

Method2Terms loss_method2(std::span<const Method2Sample> batch, std::span<const double> times,
                          double rate, bool squared, std::vector<NodeCotangents>* cot = nullptr);

struct TrainResult {
  std::vector<double> losses;     // per epoch
  std::vector<double> terminal;   // per epoch, Method 2 terminal component
};

TrainResult train(NrdeModel& model, const ProblemSpec& problem, const TrainConfig& config,
                  const std::function<void(int, double)>& on_epoch = {});

// Predictions u at every coarse node of a fine path.
using Predictor = std::function<std::vector<double>(const PiecewisePath&)>;
Predictor model_predictor(const NrdeModel& model, const GridSpec& grid);

struct EvalConfig {
  int n_test = 50;
  int n_batches = 10;
  int oracle_sims = 2000;
  std::uint64_t seed = 0;
  int trace_paths = 5;
  OracleCache* cache = nullptr;
};

struct TraceRow {
  int path_id = 0;
  double t = 0.0;
  double u_true = 0.0;
  double u_hat = 0.0;
};

struct EvalReport {
  double abs_mean = 0.0, abs_std = 0.0;
  double rel_mean = 0.0, rel_std = 0.0;
  std::vector<double> abs_err, rel_err;  // per batch
  std::vector<double> rel_profile;       // per coarse node, all batches pooled
  double mean_oracle_std_err = 0.0;      // 0 for analytic oracles
  std::vector<TraceRow> traces;
};

// Reference solution at every coarse node of a path: analytic for the heat
// problem, conditional Monte-Carlo otherwise.
std::vector<OracleEstimate> reference_solution(const ProblemSpec& problem,
                                               const PiecewisePath& fine, int n_sims,
                                               std::uint64_t seed, OracleCache* cache = nullptr);

EvalReport evaluate(const Predictor& predictor, const ProblemSpec& problem, const EvalConfig& config);

void write_learning_curve(std::ostream& os, const TrainResult& result);
void write_eval_csv(std::ostream& os, const EvalReport& report);
void write_traces_csv(std::ostream& os, const EvalReport& report);

}  // namespace ppde

#endif  // PPDE_TRAIN_H
