#ifndef PPDE_PROBLEMS_H
#define PPDE_PROBLEMS_H

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

#include "ppde/logsig.h"
#include "ppde/sde.h"

namespace ppde {

// g = (int_0^T sum_i X^i(u) du)^2
struct HeatIntegralSquared {};

// g = max_t sum_i X^i(t) - sum_i X^i(T)
struct Lookback {};

// Pays coupons[j] at the first observation date with S >= barrier, otherwise
// redemption * S(T). S is coordinate 0 of the state.
struct Autocallable {
  double barrier = 1.02;
  std::vector<double> obs_times{1.0 / 6.0, 1.0 / 3.0};
  std::vector<double> coupons{1.1, 1.2};
  double redemption = 0.9;
};

using PayoffKind = std::variant<HeatIntegralSquared, Lookback, Autocallable>;

// PPDE instance with zero source term and constant discount rate.
struct ProblemSpec {
  Dynamics dynamics = BrownianMotion{1};
  InitSampler init = FixedInit{{0.0}};
  double rate = 0.0;
  PayoffKind payoff = HeatIntegralSquared{};
  GridSpec grid;

  int dim() const { return state_dim(dynamics); }
  bool has_analytic() const { return std::holds_alternative<HeatIntegralSquared>(payoff) &&
                                     std::holds_alternative<BrownianMotion>(dynamics); }
  void validate() const;
};

// Payoff of a full fine-grid trajectory (values row-major, fine_steps+1 rows).
double payoff_values(const ProblemSpec& spec, std::span<const double> fine_values);
double payoff(const ProblemSpec& spec, const PiecewisePath& fine);

// e^{-r(T - t_j)} g(X).
double target_F(const ProblemSpec& spec, const PiecewisePath& fine, int node);
std::vector<double> target_F_all(const ProblemSpec& spec, const PiecewisePath& fine);

// Closed-form heat solution given the prefix samples on the fine grid (the
// last sample sits at time t = (samples-1) * fine_dt). Time integrals use the
// left-point rule.
double heat_analytic(std::span<const double> prefix_values, int dim, double fine_dt,
                     double horizon);

struct OracleEstimate {
  double mean = 0.0;
  double std_err = 0.0;
};

// Conditional Monte-Carlo estimate of u(t_node, prefix). prefix_values holds
// the fine samples 0..node*refine.
OracleEstimate mc_oracle(const ProblemSpec& spec, std::span<const double> prefix_values, int node,
                         int n_sims, std::uint64_t seed);
OracleEstimate mc_oracle(const ProblemSpec& spec, const PiecewisePath& fine, int node, int n_sims,
                         std::uint64_t seed);

std::uint64_t fnv1a(std::span<const unsigned char> bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t problem_hash(const ProblemSpec& spec);
std::uint64_t prefix_hash(std::span<const double> prefix_values);

// Persistent (problem, prefix, node, n_sims) -> estimate table stored as CSV.
class OracleCache {
 public:
  using Key = std::tuple<std::uint64_t, std::uint64_t, int, int>;

  std::optional<OracleEstimate> find(const Key& key) const;
  void insert(const Key& key, OracleEstimate value);
  std::size_t size() const { return entries_.size(); }

  void load(const std::string& path);  // missing file is an empty cache
  void save(const std::string& path) const;

 private:
  std::map<Key, OracleEstimate> entries_;
};

}  // namespace ppde

#endif  // PPDE_PROBLEMS_H
