#include <doctest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <map>
#include <numeric>
#include <vector>

#include "fedpaq/data.hpp"
#include "fedpaq/error.hpp"
#include "fedpaq/fed_core.hpp"
#include "reference_loops.hpp"

using namespace fedpaq;

namespace {

FedProblem synthetic_problem(std::size_t rows, std::size_t cols, std::size_t nodes, double lambda,
                             std::uint64_t seed) {
  auto syn = gen_synthetic_logreg(rows, cols, lambda, seed);
  FedProblem problem;
  problem.objective = LogisticL2{lambda};
  problem.shards = partition_iid(syn.data, nodes, seed);
  problem.train = std::move(syn.data);
  problem.x0.assign(cols, 0.0);
  problem.x_star = std::move(syn.x_star);
  return problem;
}

double dist_sq(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    s += (a[j] - b[j]) * (a[j] - b[j]);
  }
  return s;
}

bool same_records(const std::vector<RoundRecord>& a, const std::vector<RoundRecord>& b) {
  if (a.size() != b.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = a[i];
    const auto& y = b[i];
    const bool dist_equal = (std::isnan(x.dist_sq_opt) && std::isnan(y.dist_sq_opt)) || x.dist_sq_opt == y.dist_sq_opt;
    if (x.round != y.round || x.iter != y.iter || x.sim_time_s != y.sim_time_s || x.comm_time_s != y.comm_time_s ||
        x.comp_time_s != y.comp_time_s || x.train_loss != y.train_loss || x.grad_norm != y.grad_norm ||
        !dist_equal || x.bits_uplink_cum != y.bits_uplink_cum || x.participants_hash != y.participants_hash) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("stepsize schedules") {
  CHECK(stepsize(ConstantStep{0.3}, 7, 2) == 0.3);
  CHECK(stepsize(StronglyConvexDecay{1.0, 5, 1.0}, 0, 0) == 4.0);
  CHECK(stepsize(StronglyConvexDecay{2.0, 5, 1.0}, 3, 4) == 0.125);
  CHECK(stepsize(StronglyConvexDecay{2.0, 5, 0.5}, 3, 0) == 0.0625);
  for (std::int64_t k = 0; k < 5; ++k) {
    for (std::int64_t t = 0; t < 3; ++t) {
      CHECK(stepsize(NonConvexFlat{1.0, 100, 1.0}, k, t) == doctest::Approx(0.1).epsilon(1e-15));
    }
  }
  CHECK_THROWS_AS(validate(StepsizeSchedule{ConstantStep{0.0}}), InvalidInput);
  CHECK_THROWS_AS(validate(StepsizeSchedule{StronglyConvexDecay{0.0, 1, 1.0}}), InvalidInput);
  CHECK_THROWS_AS(validate(StepsizeSchedule{StronglyConvexDecay{1.0, 1, -1.0}}), InvalidInput);
  CHECK_THROWS_AS(validate(StepsizeSchedule{NonConvexFlat{1.0, 0, 1.0}}), InvalidInput);
}

TEST_CASE("participant sampling") {
  Stream rng(1);
  SUBCASE("full participation") {
    for (int i = 0; i < 10; ++i) {
      CHECK(sample_participants(6, 6, rng) == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});
    }
  }
  SUBCASE("sorted distinct ids") {
    for (int i = 0; i < 200; ++i) {
      const auto ids = sample_participants(50, 25, rng);
      REQUIRE(ids.size() == 25);
      CHECK(std::is_sorted(ids.begin(), ids.end()));
      CHECK(std::adjacent_find(ids.begin(), ids.end()) == ids.end());
      CHECK(ids.back() < 50);
    }
  }
  SUBCASE("chi-square over the six 2-subsets of 4") {
    std::map<std::vector<std::size_t>, int> counts;
    constexpr int kDraws = 60000;
    for (int i = 0; i < kDraws; ++i) {
      ++counts[sample_participants(4, 2, rng)];
    }
    REQUIRE(counts.size() == 6);
    double chi2 = 0.0;
    for (const auto& [subset, count] : counts) {
      const double expected = kDraws / 6.0;
      chi2 += (count - expected) * (count - expected) / expected;
    }
    const double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(5.0), chi2));
    CHECK(p > 0.01);
  }
  SUBCASE("single participant marginals") {
    constexpr int kDraws = 50000;
    std::vector<int> counts(5, 0);
    for (int i = 0; i < kDraws; ++i) {
      ++counts[sample_participants(5, 1, rng)[0]];
    }
    const double half_width = 3.0 * std::sqrt(0.2 * 0.8 / kDraws);
    for (int c : counts) {
      CHECK(std::abs(c / double(kDraws) - 0.2) <= half_width);
    }
  }
  CHECK_THROWS_AS(sample_participants(4, 5, rng), InvalidInput);
  CHECK_THROWS_AS(sample_participants(4, 0, rng), InvalidInput);
}

TEST_CASE("one local step is minus eta times one stochastic gradient") {
  auto problem = synthetic_problem(200, 4, 2, 0.1, 3);
  const std::vector<double> x{0.1, -0.2, 0.3, 0.05};
  Stream a(77);
  Stream b(77);
  const auto delta = local_period(x, problem.shards[1], problem.objective, 1, 5, ConstantStep{0.25}, 0, a);
  const auto g = stoch_grad(problem.objective, x, problem.shards[1].data, 5, b);
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(delta[j] == -(0.25 * g[j]));
  }
}

TEST_CASE("zero-gradient objective leaves the model in place") {
  NodeShard node;
  node.data = Dataset{3, 2, std::vector<double>(6, 0.0), {1, -1, 1}};
  Stream rng(4);
  const std::vector<double> x{0.0, 0.0};
  const auto delta = local_period(x, node, LogisticL2{0.0}, 7, 2, ConstantStep{0.5}, 3, rng);
  CHECK(delta == std::vector<double>{0.0, 0.0});
}

TEST_CASE("three local steps on a one-dimensional quadratic") {
  // Zero features make the loss ln 2 + (lambda / 2) x^2 with gradient lambda x.
  NodeShard node;
  node.data = Dataset{1, 1, {0.0}, {1}};
  const double lambda = 0.8;
  const double x0 = 1.5;
  Stream rng(5);
  SUBCASE("constant step") {
    const double eta = 0.3;
    const std::vector<double> x{x0};
    const auto delta = local_period(x, node, LogisticL2{lambda}, 3, 1, ConstantStep{eta}, 0, rng);
    double x1 = x0 - eta * lambda * x0;
    double x2 = x1 - eta * lambda * x1;
    double x3 = x2 - eta * lambda * x2;
    CHECK(delta[0] == doctest::Approx(x3 - x0).epsilon(1e-15));
    CHECK(delta[0] == doctest::Approx(x0 * (std::pow(1.0 - eta * lambda, 3) - 1.0)).epsilon(1e-14));
  }
  SUBCASE("decaying step is constant within a round") {
    const StronglyConvexDecay schedule{2.0, 3, 0.5};
    const double eta = 0.5 * 4.0 / (2.0 * (2 * 3 + 1));
    const std::vector<double> x{x0};
    const auto delta = local_period(x, node, LogisticL2{lambda}, 3, 1, schedule, 2, rng);
    CHECK(delta[0] == doctest::Approx(x0 * (std::pow(1.0 - eta * lambda, 3) - 1.0)).epsilon(1e-14));
  }
}

TEST_CASE("server aggregation") {
  const std::vector<double> x{1.0, -2.0, 0.5};
  SUBCASE("zero deltas") {
    const std::vector<std::vector<double>> zeros(3, std::vector<double>(3, 0.0));
    CHECK(server_round(x, zeros, 3) == x);
  }
  SUBCASE("two raw deltas") {
    const std::vector<std::vector<double>> d{{0.5, 1.0, -1.0}, {1.5, -3.0, 2.0}};
    CHECK(server_round(x, d, 2) == std::vector<double>{2.0, -3.0, 1.0});
  }
  SUBCASE("one quantized delta") {
    const std::vector<QuantizedVector> d{QuantizedVector{2.0, {1, 0, -1}, {1, 0, 2}, 2}};
    CHECK(server_round(x, d, 1) == std::vector<double>{2.0, -2.0, -1.5});
  }
  SUBCASE("count mismatch") {
    const std::vector<std::vector<double>> d{{0.0, 0.0, 0.0}};
    CHECK_THROWS_AS(server_round(x, d, 2), InvalidInput);
    const std::vector<std::vector<double>> wrong{{0.0, 0.0}};
    CHECK_THROWS_AS(server_round(x, wrong, 1), InvalidInput);
  }
  SUBCASE("linearity") {
    Stream rng(6);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<std::vector<double>> d(4, std::vector<double>(3));
      for (auto& v : d) {
        for (auto& e : v) {
          e = rng.normal();
        }
      }
      const auto base = server_round(x, d, 4);
      for (double c : {2.0, 0.5, 3.0, -1.7}) {
        auto scaled = d;
        for (auto& v : scaled) {
          for (auto& e : v) {
            e *= c;
          }
        }
        const auto moved = server_round(x, scaled, 4);
        for (std::size_t j = 0; j < 3; ++j) {
          CHECK((moved[j] - x[j]) == doctest::Approx(c * (base[j] - x[j])).epsilon(1e-12));
        }
      }
    }
  }
}

TEST_CASE("zero rounds") {
  auto problem = synthetic_problem(100, 3, 4, 0.1, 7);
  problem.x0 = {0.3, 0.2, 0.1};
  FedParams params;
  params.participants = 2;
  params.rounds = 0;
  const auto result = run(problem, params);
  CHECK(result.records.empty());
  CHECK(result.final_model == problem.x0);
  CHECK_FALSE(result.global_grad_sq_mean.has_value());
}

TEST_CASE("degenerate cases match independent reference loops") {
  auto problem = synthetic_problem(600, 5, 6, 0.1, 8);
  FedParams params;
  params.batch = 4;
  params.schedule = ConstantStep{0.2};
  params.seed = 1234;
  params.keep_trajectory = true;

  SUBCASE("parallel SGD") {
    params.participants = 6;
    params.period = 1;
    params.rounds = 60;
    const auto result = run(problem, params);
    const auto ref = testing::parallel_sgd(problem.objective, problem.shards, problem.x0, 60, 4, 0.2, 1234);
    CHECK(result.trajectory == ref);
  }
  SUBCASE("FedAvg") {
    params.participants = 6;
    params.period = 4;
    params.rounds = 20;
    const auto result = run(problem, params);
    const auto ref = testing::local_sgd(problem.objective, problem.shards, problem.x0, 20, 4, 6, 4, 0.2, 0, 1234);
    CHECK(result.trajectory == ref);
  }
  SUBCASE("QSGD") {
    params.participants = 6;
    params.period = 1;
    params.rounds = 40;
    params.quantizer = LowPrecision{3};
    const auto result = run(problem, params);
    const auto ref = testing::local_sgd(problem.objective, problem.shards, problem.x0, 40, 1, 6, 4, 0.2, 3, 1234);
    CHECK(result.trajectory == ref);
  }
  SUBCASE("FedPAQ with partial participation") {
    params.participants = 3;
    params.period = 3;
    params.rounds = 25;
    params.quantizer = LowPrecision{2};
    const auto result = run(problem, params);
    const auto ref = testing::local_sgd(problem.objective, problem.shards, problem.x0, 25, 3, 3, 4, 0.2, 2, 1234);
    CHECK(result.trajectory == ref);
  }
}

TEST_CASE("records") {
  auto problem = synthetic_problem(400, 4, 8, 0.1, 9);
  FedParams params;
  params.participants = 4;
  params.period = 3;
  params.rounds = 10;
  params.quantizer = LowPrecision{1};
  params.cost = CostModelParams{1e5, 0.001, 1000.0, 32};
  params.keep_trajectory = true;
  const auto result = run(problem, params);
  REQUIRE(result.records.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    const auto& rec = result.records[i];
    CHECK(rec.round == static_cast<std::int64_t>(i + 1));
    CHECK(rec.iter == static_cast<std::int64_t>(3 * (i + 1)));
    CHECK(rec.bits_uplink_cum == (i + 1) * 4 * payload_bits(4, 1, 32));
    CHECK(rec.sim_time_s == rec.comm_time_s + rec.comp_time_s);
    CHECK(rec.comm_time_s == doctest::Approx((i + 1) * 4 * payload_bits(4, 1, 32) / 1e5).epsilon(1e-12));
    CHECK(rec.train_loss == loss(problem.objective, result.trajectory[i], problem.train));
    CHECK(rec.dist_sq_opt == dist_sq(result.trajectory[i], *problem.x_star));
    if (i > 0) {
      CHECK(rec.sim_time_s > result.records[i - 1].sim_time_s);
      CHECK(rec.comp_time_s > result.records[i - 1].comp_time_s);
    }
  }
  CHECK(result.final_model == result.trajectory.back());

  problem.x_star.reset();
  params.cost.reset();
  const auto plain = run(problem, params);
  CHECK(std::isnan(plain.records[0].dist_sq_opt));
  CHECK(plain.records.back().sim_time_s == 0.0);
}

TEST_CASE("doubling tau halves cumulative communication time at fixed T") {
  auto problem = synthetic_problem(400, 4, 8, 0.1, 10);
  FedParams params;
  params.participants = 4;
  params.quantizer = LowPrecision{2};
  params.cost = CostModelParams{5e4, 0.001, 1000.0, 32};
  params.period = 2;
  params.rounds = 20;
  const auto a = run(problem, params);
  params.period = 4;
  params.rounds = 10;
  const auto b = run(problem, params);
  CHECK(b.records.back().comm_time_s * 2.0 == a.records.back().comm_time_s);
  CHECK(b.records.back().bits_uplink_cum * 2 == a.records.back().bits_uplink_cum);
}

TEST_CASE("determinism across thread counts and shadow mode") {
  auto problem = synthetic_problem(800, 6, 10, 0.1, 11);
  FedParams params;
  params.participants = 4;
  params.period = 3;
  params.rounds = 15;
  params.quantizer = LowPrecision{4};
  params.cost = CostModelParams{1e6, 0.001, 1000.0, 32};
  params.schedule = StronglyConvexDecay{0.1, 3, 0.05};
  params.seed = 99;
  params.keep_trajectory = true;
  const auto serial = run(problem, params);
  const auto again = run(problem, params);
  CHECK(same_records(serial.records, again.records));
  CHECK(serial.trajectory == again.trajectory);

  params.threads = 4;
  const auto threaded = run(problem, params);
  CHECK(same_records(serial.records, threaded.records));
  CHECK(serial.trajectory == threaded.trajectory);

  params.global_view = true;
  const auto shadow = run(problem, params);
  CHECK(same_records(serial.records, shadow.records));
  CHECK(serial.trajectory == shadow.trajectory);
  CHECK(shadow.global_grad_sq_mean.has_value());

  params.seed = 100;
  const auto other = run(problem, params);
  CHECK_FALSE(serial.trajectory == other.trajectory);
}

TEST_CASE("global view with one local step averages the server gradients") {
  auto problem = synthetic_problem(300, 3, 5, 0.1, 12);
  FedParams params;
  params.participants = 5;
  params.period = 1;
  params.rounds = 8;
  params.global_view = true;
  params.keep_trajectory = true;
  const auto result = run(problem, params);
  double sum = 0.0;
  std::vector<double> x = problem.x0;
  for (std::size_t k = 0; k < 8; ++k) {
    const auto g = grad(problem.objective, x, problem.train);
    sum += std::inner_product(g.begin(), g.end(), g.begin(), 0.0);
    x = result.trajectory[k];
  }
  REQUIRE(result.global_grad_sq_mean.has_value());
  CHECK(*result.global_grad_sq_mean == doctest::Approx(sum / 8.0).epsilon(1e-12));
}

TEST_CASE("run validation") {
  auto problem = synthetic_problem(100, 3, 4, 0.1, 13);
  FedParams params;
  params.participants = 5;
  CHECK_THROWS_AS(run(problem, params), InvalidInput);
  params.participants = 2;
  params.period = 0;
  CHECK_THROWS_AS(run(problem, params), InvalidInput);
  params.period = 1;
  params.batch = 26;
  CHECK_THROWS_AS(run(problem, params), InvalidInput);
  params.batch = 10;
  params.float_bits = 16;
  CHECK_THROWS_AS(run(problem, params), InvalidInput);
  params.float_bits = 32;
  params.quantizer = LowPrecision{0};
  CHECK_THROWS_AS(run(problem, params), InvalidInput);
  params.quantizer = Identity{};
  problem.x0.push_back(0.0);
  CHECK_THROWS_AS(run(problem, params), InvalidInput);
}

TEST_CASE("strongly convex error shrinks as T grows") {
  auto problem = synthetic_problem(1000, 10, 10, 0.1, 14);
  const double mu = 0.1;
  std::vector<double> mean_err;
  for (std::size_t T : {100, 200, 400}) {
    const std::size_t tau = 2;
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      FedParams params;
      params.participants = 5;
      params.period = tau;
      params.rounds = T / tau;
      params.quantizer = LowPrecision{4};
      params.schedule = StronglyConvexDecay{mu, static_cast<std::int64_t>(tau), 0.05};
      params.seed = seed;
      const auto result = run(problem, params);
      total += result.records.back().dist_sq_opt;
    }
    mean_err.push_back(total / 20.0);
  }
  CHECK(mean_err[1] < mean_err[0]);
  CHECK(mean_err[2] < mean_err[1]);
}

TEST_CASE("participants hash") {
  const std::vector<std::size_t> a{1, 2, 3};
  const std::vector<std::size_t> b{1, 2, 4};
  CHECK(participants_hash(a) == participants_hash(a));
  CHECK(participants_hash(a) != participants_hash(b));
  CHECK(participants_hash(std::vector<std::size_t>{}) == 0xCBF29CE484222325ULL);
}
