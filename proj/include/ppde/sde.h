#ifndef PPDE_SDE_H
#define PPDE_SDE_H

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <stdexcept>
#include <variant>
#include <vector>

#include "ppde/logsig.h"

namespace ppde {

// Solution grid [0, T] with coarse_steps intervals, each split into refine
// fine Euler steps.
struct GridSpec {
  double horizon = 1.0;
  int coarse_steps = 10;
  int refine = 10;

  void validate() const;
  int fine_steps() const { return coarse_steps * refine; }
  double coarse_dt() const { return horizon / coarse_steps; }
  double fine_dt() const { return horizon / fine_steps(); }
  double fine_time(int k) const { return horizon * k / fine_steps(); }
  double coarse_time(int j) const { return horizon * j / coarse_steps; }
  std::vector<double> fine_times() const;
  std::vector<double> coarse_times() const;
};

struct BrownianMotion {
  int dim = 1;
};

// dX^i = r X^i dt + vol^i X^i sum_j L^{ij} dW^j with Sigma = L L^T.
struct BlackScholes {
  int dim = 1;
  double rate = 0.05;
  std::vector<double> vols;      // per asset
  std::vector<double> cholesky;  // row-major lower-triangular dim x dim

  static BlackScholes with_covariance(int dim, double rate, std::vector<double> vols,
                                      std::span<const double> covariance);
};

// State (S, V); full-truncation Euler keeps V+ = max(V, 0) in every
// coefficient.
struct Heston {
  double mu = 0.05;
  double kappa = 0.8;
  double mean_variance = 0.3;
  double vol_of_variance = 0.05;
};

using Dynamics = std::variant<BrownianMotion, BlackScholes, Heston>;

int state_dim(const Dynamics& dyn);
void validate(const Dynamics& dyn);

struct FixedInit {
  std::vector<double> x0;
};

// x0^i = scale^i * exp((mu - sigma^2/2) tau + sigma sqrt(tau) xi^i)
struct LognormalInit {
  double mu = 0.08;
  double tau = 0.1;
  double sigma = 0.1;
  std::vector<double> scale;  // empty means all ones
};

using InitSampler = std::variant<FixedInit, LognormalInit>;

// Error raised when the Euler state leaves the finite range.
class SimulationError : public std::runtime_error {
 public:
  SimulationError(const std::string& what, int step)
      : std::runtime_error(what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

// Independent normal stream keyed by (seed, stream index).
class StreamRng {
 public:
  StreamRng(std::uint64_t seed, std::uint64_t stream);
  double normal() { return normal_(engine_); }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

std::vector<double> sample_initial(const InitSampler& init, int dim, StreamRng& rng);

// One Euler-Maruyama step in place.
void euler_step(const Dynamics& dyn, double dt, double sqrt_dt, std::span<double> state,
                StreamRng& rng);

// Fine-grid values from fine index `start` (holding `state`) to the end of the
// grid, row-major, including the starting sample.
std::vector<double> simulate_from(const Dynamics& dyn, const GridSpec& grid, int start,
                                  std::span<const double> state, StreamRng& rng);

PiecewisePath simulate_path(const Dynamics& dyn, const InitSampler& init, const GridSpec& grid,
                            std::uint64_t seed, std::uint64_t path_index);

std::vector<PiecewisePath> simulate_batch(const Dynamics& dyn, const InitSampler& init,
                                          const GridSpec& grid, int batch, std::uint64_t seed);

PiecewisePath restrict_to_coarse(const PiecewisePath& fine, const GridSpec& grid);

// Fine sub-path over coarse interval i: refine + 1 samples.
PiecewisePath coarse_interval(const PiecewisePath& fine, const GridSpec& grid, int i);

// CSV with header path_id,t,x_0..x_{d-1}.
void write_paths_csv(std::ostream& os, std::span<const PiecewisePath> paths);

}  // namespace ppde

#endif  // PPDE_SDE_H
