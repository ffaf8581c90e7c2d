#include "ppde/sde.h"

#include <cmath>
#include <ostream>
#include <sstream>

#include "ppde/parallel.h"

namespace ppde {

void GridSpec::validate() const {
  if (!(horizon > 0.0) || !std::isfinite(horizon))
    throw std::invalid_argument("grid horizon must be positive");
  if (coarse_steps < 1) throw std::invalid_argument("grid coarse_steps must be >= 1");
  if (refine < 1) throw std::invalid_argument("grid refine must be >= 1");
}

std::vector<double> GridSpec::fine_times() const {
  std::vector<double> t(static_cast<std::size_t>(fine_steps()) + 1);
  for (int k = 0; k <= fine_steps(); ++k) t[static_cast<std::size_t>(k)] = fine_time(k);
  return t;
}

std::vector<double> GridSpec::coarse_times() const {
  std::vector<double> t(static_cast<std::size_t>(coarse_steps) + 1);
  for (int j = 0; j <= coarse_steps; ++j) t[static_cast<std::size_t>(j)] = coarse_time(j);
  return t;
}

BlackScholes BlackScholes::with_covariance(int dim, double rate, std::vector<double> vols,
                                           std::span<const double> covariance) {
  const auto d = static_cast<std::size_t>(dim);
  if (vols.size() != d) throw std::invalid_argument("BlackScholes: vols must have dim entries");
  if (covariance.size() != d * d)
    throw std::invalid_argument("BlackScholes: covariance must be dim x dim");
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (std::abs(covariance[i * d + j] - covariance[j * d + i]) > 1e-12)
        throw std::invalid_argument("BlackScholes: covariance must be symmetric");
  std::vector<double> l(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = covariance[i * d + j];
      for (std::size_t k = 0; k < j; ++k) s -= l[i * d + k] * l[j * d + k];
      if (i == j) {
        if (!(s > 0.0))
          throw std::invalid_argument("BlackScholes: covariance must be positive definite");
        l[i * d + i] = std::sqrt(s);
      } else {
        l[i * d + j] = s / l[j * d + j];
      }
    }
  }
  return BlackScholes{dim, rate, std::move(vols), std::move(l)};
}

int state_dim(const Dynamics& dyn) {
  return std::visit(
      [](const auto& d) -> int {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, Heston>) {
          return 2;
        } else {
          return d.dim;
        }
      },
      dyn);
}

void validate(const Dynamics& dyn) {
  if (const auto* bm = std::get_if<BrownianMotion>(&dyn)) {
    if (bm->dim < 1) throw std::invalid_argument("BrownianMotion: dim must be >= 1");
  } else if (const auto* bs = std::get_if<BlackScholes>(&dyn)) {
    const auto d = static_cast<std::size_t>(bs->dim);
    if (bs->dim < 1) throw std::invalid_argument("BlackScholes: dim must be >= 1");
    if (bs->vols.size() != d || bs->cholesky.size() != d * d)
      throw std::invalid_argument("BlackScholes: vols/cholesky sizes do not match dim");
  } else if (const auto* h = std::get_if<Heston>(&dyn)) {
    if (h->kappa * h->mean_variance < 0.0 || h->vol_of_variance < 0.0)
      throw std::invalid_argument("Heston: requires kappa*m >= 0 and eta >= 0");
  }
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finaliser over a combination of both keys
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + (stream + 1) * 0xD1B54A32D192ED03ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

StreamRng::StreamRng(std::uint64_t seed, std::uint64_t stream) : engine_(mix_seed(seed, stream)) {}

std::vector<double> sample_initial(const InitSampler& init, int dim, StreamRng& rng) {
  const auto d = static_cast<std::size_t>(dim);
  if (const auto* fixed = std::get_if<FixedInit>(&init)) {
    if (fixed->x0.size() != d) throw std::invalid_argument("fixed initial value has wrong dimension");
    return fixed->x0;
  }
  const auto& ln = std::get<LognormalInit>(init);
  if (!(ln.tau > 0.0) || !(ln.sigma > 0.0))
    throw std::invalid_argument("lognormal initial sampler needs tau > 0 and sigma > 0");
  if (!ln.scale.empty() && ln.scale.size() != d)
    throw std::invalid_argument("lognormal scale has wrong dimension");
  std::vector<double> x(d);
  const double drift = (ln.mu - 0.5 * ln.sigma * ln.sigma) * ln.tau;
  const double vol = ln.sigma * std::sqrt(ln.tau);
  for (std::size_t i = 0; i < d; ++i) {
    const double s = ln.scale.empty() ? 1.0 : ln.scale[i];
    x[i] = s * std::exp(drift + vol * rng.normal());
  }
  return x;
}

void euler_step(const Dynamics& dyn, double dt, double sqrt_dt, std::span<double> state,
                StreamRng& rng) {
  if (const auto* bm = std::get_if<BrownianMotion>(&dyn)) {
    for (int i = 0; i < bm->dim; ++i) state[static_cast<std::size_t>(i)] += sqrt_dt * rng.normal();
  } else if (const auto* bs = std::get_if<BlackScholes>(&dyn)) {
    const auto d = static_cast<std::size_t>(bs->dim);
    double dw_buf[64];
    std::vector<double> dw_heap;
    double* dw = dw_buf;
    if (d > 64) {
      dw_heap.resize(d);
      dw = dw_heap.data();
    }
    for (std::size_t j = 0; j < d; ++j) dw[j] = sqrt_dt * rng.normal();
    for (std::size_t i = 0; i < d; ++i) {
      double noise = 0.0;
      for (std::size_t j = 0; j <= i; ++j) noise += bs->cholesky[i * d + j] * dw[j];
      const double x = state[i];
      state[i] = x + bs->rate * x * dt + bs->vols[i] * x * noise;
    }
  } else {
    const auto& h = std::get<Heston>(dyn);
    const double dws = sqrt_dt * rng.normal();
    const double dwv = sqrt_dt * rng.normal();
    const double s = state[0];
    const double v = state[1];
    const double vp = std::max(v, 0.0);
    const double root = std::sqrt(vp);
    state[0] = s + h.mu * s * dt + root * s * dws;
    state[1] = v + h.kappa * (h.mean_variance - vp) * dt + h.vol_of_variance * root * dwv;
  }
}

std::vector<double> simulate_from(const Dynamics& dyn, const GridSpec& grid, int start,
                                  std::span<const double> state, StreamRng& rng) {
  const int n = grid.fine_steps();
  if (start < 0 || start > n) throw std::invalid_argument("simulate_from: start outside grid");
  const auto d = static_cast<std::size_t>(state_dim(dyn));
  if (state.size() != d) throw std::invalid_argument("simulate_from: state has wrong dimension");
  const double dt = grid.fine_dt();
  const double sqrt_dt = std::sqrt(dt);
  std::vector<double> out(static_cast<std::size_t>(n - start + 1) * d);
  std::copy(state.begin(), state.end(), out.begin());
  for (int k = start; k < n; ++k) {
    const auto row = static_cast<std::size_t>(k - start);
    std::span<double> next(out.data() + (row + 1) * d, d);
    std::copy(out.begin() + static_cast<long>(row * d), out.begin() + static_cast<long>((row + 1) * d),
              next.begin());
    euler_step(dyn, dt, sqrt_dt, next, rng);
    for (double v : next) {
      if (!std::isfinite(v)) {
        std::ostringstream os;
        os << "non-finite state at fine step " << k + 1;
        throw SimulationError(os.str(), k + 1);
      }
    }
  }
  return out;
}

PiecewisePath simulate_path(const Dynamics& dyn, const InitSampler& init, const GridSpec& grid,
                            std::uint64_t seed, std::uint64_t path_index) {
  grid.validate();
  StreamRng rng(seed, path_index);
  const auto x0 = sample_initial(init, state_dim(dyn), rng);
  auto values = simulate_from(dyn, grid, 0, x0, rng);
  return PiecewisePath(grid.fine_times(), std::move(values), state_dim(dyn));
}

std::vector<PiecewisePath> simulate_batch(const Dynamics& dyn, const InitSampler& init,
                                          const GridSpec& grid, int batch, std::uint64_t seed) {
  if (batch < 1) throw std::invalid_argument("simulate_batch: batch must be >= 1");
  validate(dyn);
  grid.validate();
  std::vector<PiecewisePath> out(static_cast<std::size_t>(batch));
  parallel_for(out.size(), [&](std::size_t i) { out[i] = simulate_path(dyn, init, grid, seed, i); });
  return out;
}

namespace {
void check_fine_grid(const PiecewisePath& fine, const GridSpec& grid) {
  if (fine.size() != static_cast<std::size_t>(grid.fine_steps()) + 1)
    throw std::invalid_argument("path length does not match the fine grid");
  const double tol = 1e-9 * grid.horizon;
  if (std::abs(fine.start_time()) > tol || std::abs(fine.end_time() - grid.horizon) > tol)
    throw std::invalid_argument("path horizon does not match the grid");
}
}  // namespace

PiecewisePath restrict_to_coarse(const PiecewisePath& fine, const GridSpec& grid) {
  check_fine_grid(fine, grid);
  std::vector<double> t, v;
  for (int j = 0; j <= grid.coarse_steps; ++j) {
    const auto k = static_cast<std::size_t>(j * grid.refine);
    t.push_back(fine.time(k));
    auto p = fine.point(k);
    v.insert(v.end(), p.begin(), p.end());
  }
  return PiecewisePath(std::move(t), std::move(v), fine.dim());
}

PiecewisePath coarse_interval(const PiecewisePath& fine, const GridSpec& grid, int i) {
  check_fine_grid(fine, grid);
  if (i < 0 || i >= grid.coarse_steps) throw std::out_of_range("coarse interval index");
  const auto first = static_cast<std::size_t>(i * grid.refine);
  return fine.slice(first, first + static_cast<std::size_t>(grid.refine));
}

void write_paths_csv(std::ostream& os, std::span<const PiecewisePath> paths) {
  const int d = paths.empty() ? 0 : paths.front().dim();
  os << "path_id,t";
  for (int i = 0; i < d; ++i) os << ",x_" << i;
  os << '\n';
  const auto old_precision = os.precision(17);
  for (std::size_t p = 0; p < paths.size(); ++p) {
    for (std::size_t k = 0; k < paths[p].size(); ++k) {
      os << p << ',' << paths[p].time(k);
      for (double v : paths[p].point(k)) os << ',' << v;
      os << '\n';
    }
  }
  os.precision(old_precision);
}

}  // namespace ppde
