#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <vector>

#include "ppde/problems.h"

using namespace ppde;

namespace {

ProblemSpec heat(int d) {
  ProblemSpec s;
  s.dynamics = BrownianMotion{d};
  s.init = FixedInit{std::vector<double>(static_cast<std::size_t>(d), 0.0)};
  s.payoff = HeatIntegralSquared{};
  return s;
}

PiecewisePath path_from(const GridSpec& g, int d, const std::function<double(double, int)>& f) {
  std::vector<double> v;
  for (double t : g.fine_times())
    for (int i = 0; i < d; ++i) v.push_back(f(t, i));
  return PiecewisePath(g.fine_times(), v, d);
}

ProblemSpec heston_autocall() {
  ProblemSpec s;
  s.dynamics = Heston{};
  s.init = FixedInit{{1.0, 0.3}};
  s.rate = 0.05;
  s.payoff = Autocallable{};
  s.grid = GridSpec{0.5, 12, 10};
  return s;
}

}  // namespace

TEST_CASE("heat payoff") {
  auto s = heat(1);
  CHECK(payoff(s, path_from(s.grid, 1, [](double, int) { return 0.0; })) == 0.0);
  // constant path X = 2 in both coordinates: integral of the sum is 4
  auto s2 = heat(2);
  CHECK(payoff(s2, path_from(s2.grid, 2, [](double, int) { return 2.0; })) ==
        doctest::Approx(16.0));
  // left-point sum of t over 100 steps is 0.495
  CHECK(payoff(s, path_from(s.grid, 1, [](double t, int) { return t; })) ==
        doctest::Approx(0.495 * 0.495));
}

TEST_CASE("lookback payoff") {
  ProblemSpec s;
  s.dynamics = BlackScholes{2, 0.05, {1.0, 1.0}, {1.0, 0.0, 0.0, 1.0}};
  s.payoff = Lookback{};
  CHECK(payoff(s, path_from(s.grid, 2, [](double t, int i) { return t + i; })) == 0.0);
  // hump peaking at t = 0.5 with coordinate sum 2 sin(pi t)
  CHECK(payoff(s, path_from(s.grid, 2, [](double t, int) { return std::sin(M_PI * t); })) ==
        doctest::Approx(2.0).epsilon(1e-12));
  auto batch = simulate_batch(s.dynamics, FixedInit{{1.0, 1.0}}, s.grid, 200, 1);
  for (const auto& p : batch) CHECK(payoff(s, p) >= 0.0);
}

TEST_CASE("autocallable payoff") {
  auto s = heston_autocall();
  const double t1 = 1.0 / 6.0;
  const double t2 = 1.0 / 3.0;
  auto at = [&](double first, double second, double last) {
    return path_from(s.grid, 2, [=](double t, int i) {
      if (i == 1) return 0.3;
      if (std::abs(t - t1) < 1e-9) return first;
      if (std::abs(t - t2) < 1e-9) return second;
      if (std::abs(t - 0.5) < 1e-9) return last;
      return 1.0;
    });
  };
  CHECK(payoff(s, at(1.05, 0.5, 0.5)) == 1.1);
  CHECK(payoff(s, at(1.0, 1.02, 0.5)) == 1.2);
  CHECK(payoff(s, at(1.0, 1.0, 1.0)) == doctest::Approx(0.9));
  CHECK(payoff(s, at(1.0, 1.0, 0.8)) == doctest::Approx(0.72));

  auto batch = simulate_batch(s.dynamics, LognormalInit{0.08, 0.1, 0.1, {1.0, 0.3}}, s.grid, 300, 2);
  std::set<double> coupons;
  for (const auto& p : batch) {
    const double g = payoff(s, p);
    const double redemption = 0.9 * p.point(p.size() - 1)[0];
    CHECK((g == 1.1 || g == 1.2 || g == redemption));
    if (g != redemption) coupons.insert(g);
  }
  CHECK(coupons.size() == 2);

  auto bad = s;
  std::get<Autocallable>(bad.payoff).obs_times = {0.3, 0.2};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  std::get<Autocallable>(bad.payoff).obs_times = {0.2, 0.5};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("payoff rejects a path on the wrong horizon") {
  auto s = heat(1);
  GridSpec other{2.0, 10, 10};
  CHECK_THROWS_AS(payoff(s, path_from(other, 1, [](double, int) { return 0.0; })),
                  std::invalid_argument);
}

TEST_CASE("discounted target") {
  auto s = heat(1);
  auto p = path_from(s.grid, 1, [](double, int) { return 1.0; });
  for (int j = 0; j <= 10; ++j) CHECK(target_F(s, p, j) == 1.0);
  s.rate = 0.05;
  CHECK(target_F(s, p, 10) == 1.0);
  CHECK(target_F(s, p, 0) == doctest::Approx(0.951229).epsilon(1e-6));
  auto all = target_F_all(s, p);
  REQUIRE(all.size() == 11);
  for (int j = 0; j <= 10; ++j) CHECK(all[static_cast<std::size_t>(j)] == target_F(s, p, j));
}

TEST_CASE("heat closed form") {
  std::vector<double> zero1{0.0};
  CHECK(heat_analytic(zero1, 1, 0.01, 1.0) == doctest::Approx(1.0 / 3.0));
  std::vector<double> zero3{0.0, 0.0, 0.0};
  CHECK(heat_analytic(zero3, 3, 0.01, 1.0) == doctest::Approx(1.0));

  auto s = heat(2);
  auto batch = simulate_batch(s.dynamics, s.init, s.grid, 20, 5);
  for (const auto& p : batch)
    CHECK(heat_analytic(p.values(), 2, s.grid.fine_dt(), 1.0) ==
          doctest::Approx(payoff(s, p)).epsilon(1e-12));
}

TEST_CASE("Monte-Carlo oracle") {
  auto s = heat(1);
  CHECK_THROWS_AS(mc_oracle(s, std::vector<double>{0.0}, 0, 1, 0), std::invalid_argument);
  CHECK_THROWS_AS(mc_oracle(s, std::vector<double>{0.0, 0.0}, 0, 100, 0), std::invalid_argument);

  SUBCASE("deterministic dynamics return the target exactly") {
    ProblemSpec bs;
    bs.dynamics = BlackScholes{1, 0.0, {0.0}, {1.0}};
    bs.payoff = Lookback{};
    auto p = simulate_path(bs.dynamics, FixedInit{{1.0}}, bs.grid, 0, 0);
    auto est = mc_oracle(bs, p, 4, 50, 3);
    CHECK(est.mean == target_F(bs, p, 4));
    CHECK(est.std_err == 0.0);
  }

  SUBCASE("prefix running max is respected") {
    ProblemSpec bs;
    bs.dynamics = BlackScholes{1, 0.0, {0.0}, {1.0}};
    bs.payoff = Lookback{};
    // the prefix peaks at 3 and ends at 1; the frozen continuation stays at 1
    std::vector<double> prefix(51, 1.0);
    prefix[20] = 3.0;
    auto est = mc_oracle(bs, prefix, 5, 10, 0);
    CHECK(est.mean == 2.0);
  }

  SUBCASE("analytic heat value inside the 3 sigma band") {
    auto s2 = heat(2);
    auto prefix_path = simulate_path(s2.dynamics, s2.init, s2.grid, 77, 0);
    const int node = 4;
    std::span<const double> prefix(prefix_path.values().data(), (node * 10 + 1) * 2);
    const double exact = heat_analytic(prefix, 2, s2.grid.fine_dt(), 1.0);
    int inside = 0;
    for (int rep = 0; rep < 50; ++rep) {
      auto est = mc_oracle(s2, prefix, node, 2000, 1000 + static_cast<std::uint64_t>(rep));
      if (std::abs(est.mean - exact) <= 3.0 * est.std_err) ++inside;
    }
    CHECK(inside >= 45);
  }

  SUBCASE("standard error shrinks like one over root n") {
    std::vector<double> zero{0.0};
    double ratio = 0.0;
    for (int rep = 0; rep < 10; ++rep) {
      auto a = mc_oracle(s, zero, 0, 1000, 50 + static_cast<std::uint64_t>(rep));
      auto b = mc_oracle(s, zero, 0, 2000, 90 + static_cast<std::uint64_t>(rep));
      ratio += b.std_err / a.std_err;
    }
    ratio /= 10;
    CHECK(ratio == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(0.2));
  }
}

TEST_CASE("hashes") {
  auto a = heat(2);
  auto b = heat(2);
  CHECK(problem_hash(a) == problem_hash(b));
  b.grid.refine = 20;
  CHECK(problem_hash(a) != problem_hash(b));
  auto c = heston_autocall();
  auto d = heston_autocall();
  std::get<Autocallable>(d.payoff).barrier = 1.03;
  CHECK(problem_hash(c) != problem_hash(d));
  std::vector<double> x{1.0, 2.0}, y{1.0, 2.0000001};
  CHECK(prefix_hash(x) != prefix_hash(y));
  // FNV-1a reference value of "a"
  const unsigned char bytes[] = {'a'};
  CHECK(fnv1a(bytes) == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("oracle cache round trip") {
  const auto file = std::filesystem::temp_directory_path() / "ppde_oracle_cache_test.csv";
  std::filesystem::remove(file);
  OracleCache cache;
  cache.load(file.string());
  CHECK(cache.size() == 0);
  cache.insert({1, 0xdeadbeefULL, 3, 2000}, {0.125, 1e-3});
  cache.insert({2, 7, 0, 100}, {1.0 / 3.0, 0.01});
  cache.save(file.string());

  OracleCache reloaded;
  reloaded.load(file.string());
  CHECK(reloaded.size() == 2);
  auto hit = reloaded.find({2, 7, 0, 100});
  REQUIRE(hit.has_value());
  CHECK(hit->mean == 1.0 / 3.0);
  CHECK(hit->std_err == 0.01);
  CHECK_FALSE(reloaded.find({2, 7, 1, 100}).has_value());
  std::filesystem::remove(file);
}
