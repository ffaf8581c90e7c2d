#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <sstream>
#include <vector>

#include "ppde/parallel.h"
#include "ppde/sde.h"

using namespace ppde;

namespace {

BlackScholes scalar_bs(double rate, double vol) {
  return BlackScholes{1, rate, {vol}, {1.0}};
}

}  // namespace

TEST_CASE("grid bookkeeping") {
  GridSpec g;
  CHECK(g.fine_steps() == 100);
  CHECK(g.coarse_dt() == doctest::Approx(0.1));
  CHECK(g.fine_dt() == doctest::Approx(0.01));
  CHECK(g.fine_times().size() == 101);
  CHECK(g.fine_time(100) == 1.0);
  CHECK_THROWS_AS((GridSpec{1.0, 0, 10}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((GridSpec{1.0, 10, 0}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((GridSpec{0.0, 10, 10}.validate()), std::invalid_argument);
}

TEST_CASE("zero-volatility Black-Scholes compounds deterministically") {
  const double r = 0.05;
  GridSpec g{1.0, 10, 10};
  auto path = simulate_path(scalar_bs(r, 0.0), FixedInit{{2.0}}, g, 7, 0);
  const double dt = g.fine_dt();
  double expected = 2.0;
  for (int k = 0; k <= g.fine_steps(); ++k) {
    CHECK(path.point(static_cast<std::size_t>(k))[0] == doctest::Approx(expected).epsilon(1e-14));
    expected *= 1.0 + r * dt;
  }
}

TEST_CASE("Brownian terminal mean is centred") {
  const int n = 10000;
  GridSpec g{1.0, 10, 10};
  auto batch = simulate_batch(BrownianMotion{3}, FixedInit{{0.0, 0.0, 0.0}}, g, n, 11);
  for (int i = 0; i < 3; ++i) {
    double mean = 0.0;
    for (const auto& p : batch) mean += p.point(p.size() - 1)[static_cast<std::size_t>(i)];
    mean /= n;
    CHECK(std::abs(mean) < 3.0 / std::sqrt(n) * std::sqrt(g.horizon));
  }
}

TEST_CASE("geometric Brownian mean matches exp(rT)") {
  const int n = 100000;
  GridSpec g{1.0, 10, 10};
  auto batch = simulate_batch(scalar_bs(0.05, 1.0), FixedInit{{1.0}}, g, n, 3);
  double mean = 0.0, sq = 0.0;
  for (const auto& p : batch) {
    const double x = p.point(p.size() - 1)[0];
    mean += x;
    sq += x * x;
  }
  mean /= n;
  const double var = (sq - n * mean * mean) / (n - 1);
  const double se = std::sqrt(var / n);
  // the Euler mean (1 + r dt)^n differs from e^{rT} by about 1e-5, far below se
  CHECK(std::abs(mean - std::exp(0.05)) < 3.0 * se);
}

TEST_CASE("covariance factorisation") {
  std::vector<double> cov{4.0, 2.0, 2.0, 5.0};
  auto bs = BlackScholes::with_covariance(2, 0.05, {1.0, 1.0}, cov);
  CHECK(bs.cholesky[0] == doctest::Approx(2.0));
  CHECK(bs.cholesky[1] == 0.0);
  CHECK(bs.cholesky[2] == doctest::Approx(1.0));
  CHECK(bs.cholesky[3] == doctest::Approx(2.0));
  std::vector<double> asym{1.0, 0.5, 0.2, 1.0};
  CHECK_THROWS_AS(BlackScholes::with_covariance(2, 0.05, {1.0, 1.0}, asym), std::invalid_argument);
  std::vector<double> indefinite{1.0, 2.0, 2.0, 1.0};
  CHECK_THROWS_AS(BlackScholes::with_covariance(2, 0.05, {1.0, 1.0}, indefinite),
                  std::invalid_argument);
}

TEST_CASE("coarse restriction") {
  GridSpec g{1.0, 10, 10};
  auto fine = simulate_path(BrownianMotion{2}, FixedInit{{0.0, 0.0}}, g, 5, 1);
  auto coarse = restrict_to_coarse(fine, g);
  REQUIRE(coarse.size() == 11);
  for (std::size_t j = 0; j < coarse.size(); ++j) {
    CHECK(coarse.time(j) == fine.time(j * 10));
    CHECK(coarse.point(j)[0] == fine.point(j * 10)[0]);
    CHECK(coarse.point(j)[1] == fine.point(j * 10)[1]);
  }

  GridSpec g1{1.0, 10, 1};
  auto fine1 = simulate_path(BrownianMotion{2}, FixedInit{{0.0, 0.0}}, g1, 5, 1);
  auto same = restrict_to_coarse(fine1, g1);
  CHECK(same.values() == fine1.values());
  CHECK(same.times() == fine1.times());

  CHECK_THROWS_AS(restrict_to_coarse(fine, g1), std::invalid_argument);

  auto piece = coarse_interval(fine, g, 3);
  CHECK(piece.size() == 11);
  CHECK(piece.point(0)[0] == fine.point(30)[0]);
  CHECK(piece.point(10)[1] == fine.point(40)[1]);
}

TEST_CASE("identical seeds give identical batches") {
  GridSpec g{1.0, 5, 4};
  Heston h;
  auto a = simulate_batch(h, LognormalInit{0.08, 0.1, 0.1, {1.0, 0.3}}, g, 32, 99);
  auto b = simulate_batch(h, LognormalInit{0.08, 0.1, 0.1, {1.0, 0.3}}, g, 32, 99);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].values() == b[i].values());
  auto c = simulate_batch(h, LognormalInit{0.08, 0.1, 0.1, {1.0, 0.3}}, g, 32, 100);
  CHECK(a[0].values() != c[0].values());
}

TEST_CASE("thread count does not change results") {
  GridSpec g{1.0, 10, 10};
  set_max_threads(1);
  auto serial = simulate_batch(BrownianMotion{2}, FixedInit{{0.0, 0.0}}, g, 16, 4);
  set_max_threads(4);
  auto threaded = simulate_batch(BrownianMotion{2}, FixedInit{{0.0, 0.0}}, g, 16, 4);
  set_max_threads(0);
  for (std::size_t i = 0; i < serial.size(); ++i) CHECK(serial[i].values() == threaded[i].values());
}

TEST_CASE("zero-volatility refinement converges at first order") {
  const double r = 0.5;
  const double exact = std::exp(r);
  double prev_err = 0.0;
  for (int refine : {10, 20, 40}) {
    GridSpec g{1.0, 10, refine};
    auto p = simulate_path(scalar_bs(r, 0.0), FixedInit{{1.0}}, g, 1, 0);
    const double err = exact - p.point(p.size() - 1)[0];
    CHECK(err > 0.0);
    if (prev_err > 0.0) CHECK(prev_err / err == doctest::Approx(2.0).epsilon(0.05));
    prev_err = err;
  }
}

TEST_CASE("Heston variance truncation") {
  // large vol-of-variance drives V negative; the truncated root keeps S finite
  Heston h{0.05, 0.8, 0.3, 3.0};
  GridSpec g{1.0, 10, 10};
  auto batch = simulate_batch(h, FixedInit{{1.0, 0.05}}, g, 200, 8);
  bool saw_negative = false;
  for (const auto& p : batch)
    for (std::size_t k = 0; k < p.size(); ++k) {
      CHECK(std::isfinite(p.point(k)[0]));
      if (p.point(k)[1] < 0.0) saw_negative = true;
    }
  CHECK(saw_negative);

  // with V = 0 and no mean reversion the price moves only by drift
  Heston flat{0.05, 0.0, 0.0, 0.0};
  auto p = simulate_path(flat, FixedInit{{1.0, 0.0}}, g, 1, 0);
  CHECK(p.point(p.size() - 1)[0] == doctest::Approx(std::pow(1.0 + 0.05 * 0.01, 100)));
}

TEST_CASE("lognormal initial values") {
  StreamRng rng(1, 0);
  LognormalInit init{0.08, 0.1, 0.1, {1.0, 0.3}};
  double mean0 = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    auto x = sample_initial(init, 2, rng);
    CHECK(x[0] > 0.0);
    CHECK(x[1] > 0.0);
    mean0 += x[0];
  }
  mean0 /= n;
  CHECK(mean0 == doctest::Approx(std::exp(0.08 * 0.1)).epsilon(0.002));
  CHECK_THROWS_AS(sample_initial(LognormalInit{0.08, 0.0, 0.1, {}}, 1, rng), std::invalid_argument);
  CHECK_THROWS_AS(sample_initial(FixedInit{{1.0}}, 2, rng), std::invalid_argument);
}

TEST_CASE("overflow raises an error naming the step") {
  GridSpec g{1.0, 10, 10};
  auto explosive = scalar_bs(1e300, 0.0);
  try {
    simulate_path(explosive, FixedInit{{1e10}}, g, 1, 0);
    FAIL("expected SimulationError");
  } catch (const SimulationError& e) {
    CHECK(e.step() == 1);
    CHECK(std::string(e.what()).find("step 1") != std::string::npos);
  }
}

TEST_CASE("path CSV") {
  GridSpec g{1.0, 1, 2};
  std::vector<PiecewisePath> paths{simulate_path(BrownianMotion{2}, FixedInit{{0.0, 1.0}}, g, 0, 0)};
  std::ostringstream os;
  write_paths_csv(os, paths);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "path_id,t,x_0,x_1");
  std::getline(in, line);
  CHECK(line == "0,0,0,1");
  int rows = 1;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 3);
}
