#include "ppde/problems.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ppde/parallel.h"

namespace ppde {

void ProblemSpec::validate() const {
  grid.validate();
  ppde::validate(dynamics);
  if (!std::isfinite(rate)) throw std::invalid_argument("problem rate must be finite");
  if (const auto* ac = std::get_if<Autocallable>(&payoff)) {
    if (ac->obs_times.empty() || ac->obs_times.size() != ac->coupons.size())
      throw std::invalid_argument("autocallable needs one coupon per observation time");
    for (std::size_t i = 0; i < ac->obs_times.size(); ++i) {
      if (!(ac->obs_times[i] > 0.0) || !(ac->obs_times[i] < grid.horizon))
        throw std::invalid_argument("autocallable observation times must lie in (0, T)");
      if (i > 0 && !(ac->obs_times[i] > ac->obs_times[i - 1]))
        throw std::invalid_argument("autocallable observation times must be strictly increasing");
    }
  }
}

double payoff_values(const ProblemSpec& spec, std::span<const double> fine_values) {
  const GridSpec& grid = spec.grid;
  const auto d = static_cast<std::size_t>(spec.dim());
  const auto rows = static_cast<std::size_t>(grid.fine_steps()) + 1;
  if (fine_values.size() != rows * d)
    throw std::invalid_argument("payoff: path does not cover [0, T] on the fine grid");

  auto coord_sum = [&](std::size_t k) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += fine_values[k * d + i];
    return s;
  };

  return std::visit(
      [&](const auto& kind) -> double {
        using T = std::decay_t<decltype(kind)>;
        if constexpr (std::is_same_v<T, HeatIntegralSquared>) {
          double integral = 0.0;
          for (std::size_t k = 0; k + 1 < rows; ++k) integral += coord_sum(k);
          integral *= grid.fine_dt();
          return integral * integral;
        } else if constexpr (std::is_same_v<T, Lookback>) {
          double running_max = coord_sum(0);
          for (std::size_t k = 1; k < rows; ++k) running_max = std::max(running_max, coord_sum(k));
          return running_max - coord_sum(rows - 1);
        } else {
          const double dt = grid.fine_dt();
          for (std::size_t j = 0; j < kind.obs_times.size(); ++j) {
            const auto k = static_cast<std::size_t>(std::lround(kind.obs_times[j] / dt));
            if (fine_values[k * d] >= kind.barrier) return kind.coupons[j];
          }
          return kind.redemption * fine_values[(rows - 1) * d];
        }
      },
      spec.payoff);
}

namespace {
void check_horizon(const ProblemSpec& spec, const PiecewisePath& fine) {
  const double tol = 1e-9 * spec.grid.horizon;
  if (std::abs(fine.end_time() - spec.grid.horizon) > tol || std::abs(fine.start_time()) > tol)
    throw std::invalid_argument("payoff: path horizon does not match T");
  if (fine.dim() != spec.dim()) throw std::invalid_argument("payoff: path dimension mismatch");
}
}  // namespace

double payoff(const ProblemSpec& spec, const PiecewisePath& fine) {
  check_horizon(spec, fine);
  return payoff_values(spec, fine.values());
}

double target_F(const ProblemSpec& spec, const PiecewisePath& fine, int node) {
  if (node < 0 || node > spec.grid.coarse_steps) throw std::out_of_range("target_F: node");
  const double g = payoff(spec, fine);
  const double remaining = spec.grid.horizon - spec.grid.coarse_time(node);
  return std::exp(-spec.rate * remaining) * g;
}

std::vector<double> target_F_all(const ProblemSpec& spec, const PiecewisePath& fine) {
  const double g = payoff(spec, fine);
  std::vector<double> out(static_cast<std::size_t>(spec.grid.coarse_steps) + 1);
  for (int j = 0; j <= spec.grid.coarse_steps; ++j)
    out[static_cast<std::size_t>(j)] =
        std::exp(-spec.rate * (spec.grid.horizon - spec.grid.coarse_time(j))) * g;
  return out;
}

double heat_analytic(std::span<const double> prefix_values, int dim, double fine_dt,
                     double horizon) {
  const auto d = static_cast<std::size_t>(dim);
  if (prefix_values.empty() || prefix_values.size() % d != 0)
    throw std::invalid_argument("heat_analytic: prefix must hold whole samples");
  const std::size_t rows = prefix_values.size() / d;
  auto coord_sum = [&](std::size_t k) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += prefix_values[k * d + i];
    return s;
  };
  double integral = 0.0;
  for (std::size_t k = 0; k + 1 < rows; ++k) integral += coord_sum(k);
  integral *= fine_dt;
  const double t = static_cast<double>(rows - 1) * fine_dt;
  const double tau = horizon - t;
  const double x_t = coord_sum(rows - 1);
  return integral * integral + 2.0 * tau * x_t * integral + tau * tau * x_t * x_t +
         dim / 3.0 * tau * tau * tau;
}

OracleEstimate mc_oracle(const ProblemSpec& spec, std::span<const double> prefix_values, int node,
                         int n_sims, std::uint64_t seed) {
  if (n_sims < 2) throw std::invalid_argument("mc_oracle: n_sims must be >= 2");
  const GridSpec& grid = spec.grid;
  if (node < 0 || node > grid.coarse_steps) throw std::out_of_range("mc_oracle: node");
  const auto d = static_cast<std::size_t>(spec.dim());
  const int start = node * grid.refine;
  if (prefix_values.size() != static_cast<std::size_t>(start + 1) * d)
    throw std::invalid_argument("mc_oracle: prefix must end on the requested coarse node");

  const double discount =
      std::exp(-spec.rate * (grid.horizon - grid.coarse_time(node)));
  const auto state = prefix_values.subspan(static_cast<std::size_t>(start) * d, d);
  std::vector<double> samples(static_cast<std::size_t>(n_sims));
  parallel_for(samples.size(), [&](std::size_t s) {
    StreamRng rng(seed, s);
    const auto tail = simulate_from(spec.dynamics, grid, start, state, rng);
    std::vector<double> full(prefix_values.begin(), prefix_values.end());
    full.insert(full.end(), tail.begin() + static_cast<long>(d), tail.end());
    samples[s] = discount * payoff_values(spec, full);
  });

  double mean = 0.0;
  for (double v : samples) mean += v;
  mean /= n_sims;
  double var = 0.0;
  for (double v : samples) var += (v - mean) * (v - mean);
  var /= (n_sims - 1);
  return {mean, std::sqrt(var / n_sims)};
}

OracleEstimate mc_oracle(const ProblemSpec& spec, const PiecewisePath& fine, int node, int n_sims,
                         std::uint64_t seed) {
  const auto d = static_cast<std::size_t>(fine.dim());
  const auto rows = static_cast<std::size_t>(node * spec.grid.refine) + 1;
  if (rows > fine.size()) throw std::invalid_argument("mc_oracle: path shorter than node");
  return mc_oracle(spec, std::span<const double>(fine.values().data(), rows * d), node, n_sims,
                   seed);
}

std::uint64_t fnv1a(std::span<const unsigned char> bytes, std::uint64_t h) {
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {
template <class T>
std::uint64_t hash_value(std::uint64_t h, const T& v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  return fnv1a(buf, h);
}

std::uint64_t hash_doubles(std::uint64_t h, std::span<const double> xs) {
  for (double x : xs) h = hash_value(h, x);
  return h;
}
}  // namespace

std::uint64_t problem_hash(const ProblemSpec& spec) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  h = hash_value(h, spec.dynamics.index());
  std::visit(
      [&](const auto& dyn) {
        using T = std::decay_t<decltype(dyn)>;
        if constexpr (std::is_same_v<T, BrownianMotion>) {
          h = hash_value(h, dyn.dim);
        } else if constexpr (std::is_same_v<T, BlackScholes>) {
          h = hash_value(h, dyn.dim);
          h = hash_value(h, dyn.rate);
          h = hash_doubles(h, dyn.vols);
          h = hash_doubles(h, dyn.cholesky);
        } else {
          h = hash_doubles(h, std::vector<double>{dyn.mu, dyn.kappa, dyn.mean_variance,
                                                  dyn.vol_of_variance});
        }
      },
      spec.dynamics);
  h = hash_value(h, spec.rate);
  h = hash_value(h, spec.payoff.index());
  if (const auto* ac = std::get_if<Autocallable>(&spec.payoff)) {
    h = hash_value(h, ac->barrier);
    h = hash_doubles(h, ac->obs_times);
    h = hash_doubles(h, ac->coupons);
    h = hash_value(h, ac->redemption);
  }
  h = hash_value(h, spec.grid.horizon);
  h = hash_value(h, spec.grid.coarse_steps);
  h = hash_value(h, spec.grid.refine);
  return h;
}

std::uint64_t prefix_hash(std::span<const double> prefix_values) {
  return hash_doubles(0xcbf29ce484222325ULL, prefix_values);
}

std::optional<OracleEstimate> OracleCache::find(const Key& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void OracleCache::insert(const Key& key, OracleEstimate value) { entries_[key] = value; }

void OracleCache::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) return;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string field;
    std::vector<std::string> cols;
    while (std::getline(row, field, ',')) cols.push_back(field);
    if (cols.size() != 6) throw std::runtime_error("oracle cache: malformed row: " + line);
    Key key{std::stoull(cols[0], nullptr, 16), std::stoull(cols[1], nullptr, 16),
            std::stoi(cols[2]), std::stoi(cols[3])};
    entries_[key] = OracleEstimate{std::stod(cols[4]), std::stod(cols[5])};
  }
}

void OracleCache::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("oracle cache: cannot write " + path);
  out << "problem_hash,prefix_hash,node,n_sims,mean,std_err\n";
  out.precision(17);
  for (const auto& [key, est] : entries_) {
    std::ostringstream ph, xh;
    ph << std::hex << std::get<0>(key);
    xh << std::hex << std::get<1>(key);
    out << ph.str() << ',' << xh.str() << ',' << std::get<2>(key) << ',' << std::get<3>(key)
        << ',' << est.mean << ',' << est.std_err << '\n';
  }
}

}  // namespace ppde
