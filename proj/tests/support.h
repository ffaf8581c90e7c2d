// Shared fixtures for the test binaries.
#ifndef PPDE_TESTS_SUPPORT_H
#define PPDE_TESTS_SUPPORT_H

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "ppde/adjoint.h"
#include "ppde/nrde.h"
#include "ppde/sde.h"

namespace ppde::testing {

struct Miniature {
  NrdeConfig config;
  GridSpec grid;
  std::vector<double> params;
  PiecewisePath path;
  NodeCotangents cot;
};

// Random model (d=2, h=4, N=2, 3 coarse intervals) with a Brownian driving
// path and random node cotangents. Variant bits toggle the embedding layer,
// time channel and dx head.
inline Miniature make_miniature(std::uint64_t seed, Solver solver, int variant) {
  Miniature m;
  m.config.input_dim = 2;
  m.config.hidden = 4;
  m.config.depth = 2;
  m.config.solver = solver;
  m.config.field_hidden = {6};
  m.config.xi_hidden = (variant & 4) ? std::vector<int>{5} : std::vector<int>{};
  m.config.embed_dim = (variant & 1) ? 2 : 0;
  m.config.time_channel = (variant & 2) != 0;
  m.config.dx_head = (variant & 4) != 0;
  m.config.ode_steps = 1 + static_cast<int>(seed % 3);
  m.grid = GridSpec{1.0, 3, 4};

  NrdeModel model(m.config);
  model.initialize(seed);
  std::mt19937_64 rng(seed * 7919 + 1);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  m.params = model.params();
  for (double& p : m.params) p += u(rng);  // non-zero biases everywhere

  m.path = simulate_path(BrownianMotion{2}, FixedInit{{0.4, -0.2}}, m.grid, seed, 0);
  std::normal_distribution<double> n(0.0, 1.0);
  m.cot.u.resize(4);
  for (double& c : m.cot.u) c = n(rng);
  if (m.config.dx_head) {
    m.cot.dx.resize(8);
    for (double& c : m.cot.dx) c = n(rng);
  }
  return m;
}

// <cot, outputs> for a given parameter vector
inline double pairing(const Miniature& m, const std::vector<double>& params) {
  NrdeModel model(m.config);
  model.set_params(params);
  auto p = predict(model, m.path, m.grid);
  double s = 0.0;
  for (std::size_t j = 0; j < p.u.size(); ++j) s += m.cot.u[j] * p.u[j];
  for (std::size_t j = 0; j < m.cot.dx.size(); ++j) s += m.cot.dx[j] * p.dx[j];
  return s;
}

inline std::vector<double> central_differences(const Miniature& m, double h) {
  std::vector<double> g(m.params.size());
  auto p = m.params;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double keep = p[i];
    p[i] = keep + h;
    const double up = pairing(m, p);
    p[i] = keep - h;
    const double down = pairing(m, p);
    p[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

inline double relative_error(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

}  // namespace ppde::testing

#endif  // PPDE_TESTS_SUPPORT_H
