#include <doctest.h>

#include <cmath>
#include <vector>

#include "fedpaq/cost_model.hpp"
#include "fedpaq/error.hpp"
#include "fedpaq/quantizer.hpp"

using namespace fedpaq;

TEST_CASE("communication time") {
  const CostModelParams params{16000.0, 0.001, 1000.0, 32};
  CHECK(round_comm_time(std::vector<std::uint64_t>{}, params) == 0.0);
  const std::vector<std::uint64_t> uploads(50, identity_bits(100, 32));
  CHECK(round_comm_time(uploads, params) == 50.0 * 3200.0 / 16000.0);
  const std::vector<std::uint64_t> one{payload_bits(1, 1, 32) + kHeaderBits};
  CHECK(round_comm_time(one, params) == 98.0 / 16000.0);
}

TEST_CASE("computation time") {
  const CostModelParams params{1.0, 0.001, 1000.0, 32};
  SUBCASE("zero quantile gives the shift alone") {
    CHECK(node_comp_time_at(1, 1, params, 0.0) == 0.001);
    CHECK(node_comp_time_at(5, 10, params, 0.0) == doctest::Approx(0.05).epsilon(1e-15));
  }
  SUBCASE("mean over many draws") {
    Stream rng(1);
    constexpr int kDraws = 100000;
    double sum = 0.0;
    for (int i = 0; i < kDraws; ++i) {
      sum += node_comp_time(1, 1, params, rng);
    }
    CHECK(std::abs(sum / kDraws - 0.002) <= 0.01 * 0.002);
  }
  SUBCASE("doubling the batch doubles both parts") {
    Stream a(2);
    Stream b(2);
    for (int i = 0; i < 1000; ++i) {
      const double one = node_comp_time(3, 4, params, a);
      const double two = node_comp_time(3, 8, params, b);
      CHECK(two == doctest::Approx(2.0 * one).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(node_comp_time_at(0, 1, params, 0.5), InvalidInput);
  CHECK_THROWS_AS(node_comp_time_at(1, 0, params, 0.5), InvalidInput);
}

TEST_CASE("slowest participant") {
  CHECK(round_comp_time(std::vector<double>{0.7}) == 0.7);
  CHECK(round_comp_time(std::vector<double>{1.0, 2.5, 0.3}) == 2.5);
  CHECK_THROWS_AS(round_comp_time(std::vector<double>{}), InvalidInput);

  // Max of r i.i.d. exponentials has mean H_r times the mean.
  const CostModelParams params{1.0, 0.0, 1000.0, 32};
  Stream rng(3);
  constexpr int kRounds = 50000;
  constexpr int kR = 10;
  double sum = 0.0;
  double sum_sq = 0.0;
  for (int i = 0; i < kRounds; ++i) {
    std::vector<double> times(kR);
    for (auto& t : times) {
      t = node_comp_time(1, 1, params, rng);
    }
    const double m = round_comp_time(times);
    sum += m;
    sum_sq += m * m;
  }
  double harmonic = 0.0;
  for (int k = 1; k <= kR; ++k) {
    harmonic += 1.0 / k;
  }
  const double mean = sum / kRounds;
  const double sd = std::sqrt(sum_sq / kRounds - mean * mean);
  CHECK(std::abs(mean - harmonic * 0.001) <= 3.0 * sd / std::sqrt(double(kRounds)));
}

TEST_CASE("communication to computation ratio") {
  CostModelParams params{3200.0 / 0.002, 0.001, 1000.0, 32};
  CHECK(comm_comp_ratio(100, params) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(solve_bandwidth(100, 100.0, 0.001, 1000.0, 32) == doctest::Approx(16000.0).epsilon(1e-15));
  for (double target : {100.0, 1000.0, 0.37, 12345.6}) {
    for (std::size_t p : {1, 50, 785, 100000}) {
      params.bandwidth_bits_per_s = solve_bandwidth(p, target, 0.001, 1000.0, 32);
      CHECK(std::abs(comm_comp_ratio(p, params) - target) <= 1e-12 * target);
    }
  }
  CHECK(solve_bandwidth(50, 1000.0, 0.001, 1000.0) == solve_bandwidth(50, 2000.0, 0.001, 1000.0) * 2.0);
  CHECK_THROWS_AS(solve_bandwidth(50, 0.0, 0.001, 1000.0), InvalidInput);
  CHECK_THROWS_AS(comm_comp_ratio(0, params), InvalidInput);
}

TEST_CASE("parameter validation") {
  CHECK_NOTHROW(validate(CostModelParams{1.0, 0.0, 1.0, 32}));
  CHECK_THROWS_AS(validate(CostModelParams{0.0, 0.0, 1.0, 32}), InvalidInput);
  CHECK_THROWS_AS(validate(CostModelParams{1.0, -1.0, 1.0, 32}), InvalidInput);
  CHECK_THROWS_AS(validate(CostModelParams{1.0, 0.0, 0.0, 32}), InvalidInput);
  CHECK_THROWS_AS(validate(CostModelParams{INFINITY, 0.0, 1.0, 32}), InvalidInput);
}
