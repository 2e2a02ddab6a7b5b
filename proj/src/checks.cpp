#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <functional>
#include <map>
#include <ostream>
#include <string>

#include "fedpaq/cost_model.hpp"
#include "fedpaq/data.hpp"
#include "fedpaq/fed_core.hpp"
#include "fedpaq/harness.hpp"
#include "fedpaq/quantizer.hpp"

namespace fedpaq {
namespace {

struct CheckResult {
  bool pass;
  std::string detail;
};

CheckResult check_unbiased(std::uint64_t seed) {
  Stream rng(derive_key(seed, {100}));
  std::vector<double> x(16);
  for (auto& v : x) {
    v = rng.normal();
  }
  const std::size_t draws = 20000;
  std::vector<double> sum(x.size(), 0.0), sum_sq(x.size(), 0.0);
  for (std::size_t d = 0; d < draws; ++d) {
    const auto y = dequantize(quantize(x, 4, rng));
    for (std::size_t i = 0; i < x.size(); ++i) {
      sum[i] += y[i];
      sum_sq[i] += y[i] * y[i];
    }
  }
  double worst = 0.0;
  const auto n = static_cast<double>(draws);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double mean = sum[i] / n;
    const double var = std::max(sum_sq[i] / n - mean * mean, 0.0);
    const double se = std::sqrt(var / n);
    if (se > 0.0) {
      worst = std::max(worst, std::abs(mean - x[i]) / se);
    } else if (mean != x[i]) {
      worst = INFINITY;
    }
  }
  // 16 coordinates at 4 standard errors: false alarm rate about 1e-3.
  return {worst <= 4.0, "max |bias| / se = " + std::to_string(worst)};
}

CheckResult check_variance(std::uint64_t seed) {
  Stream rng(derive_key(seed, {101}));
  const QuantizerMode mode = LowPrecision{4};
  const double ratio = estimate_variance_ratio(mode, 16, 10000, rng, 4);
  const double q = variance_parameter(mode, 16);
  return {ratio <= 1.05 * q, "ratio " + std::to_string(ratio) + " vs q " + std::to_string(q)};
}

CheckResult check_codec(std::uint64_t seed) {
  Stream rng(derive_key(seed, {102}));
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t p = 1 + rng.uniform_index(64);
    const auto s = static_cast<std::uint32_t>(1 + rng.uniform_index(40));
    std::vector<double> x(p);
    for (auto& v : x) {
      v = rng.uniform() < 0.2 ? 0.0 : rng.normal();
    }
    const auto q = quantize(x, s, rng);
    for (unsigned f : {32U, 64U}) {
      const auto bytes = encode(q, f);
      if (decode(bytes, f) != canonical(q, f) || bytes.size() * 8 < kHeaderBits + payload_bits(p, s, f) ||
          bytes.size() * 8 >= kHeaderBits + payload_bits(p, s, f) + 8) {
        return {false, "mismatch at trial " + std::to_string(trial)};
      }
    }
  }
  return {true, "500 vectors, F in {32, 64}"};
}

CheckResult check_sampling(std::uint64_t seed) {
  Stream rng(derive_key(seed, {103}));
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> counts;
  const std::size_t draws = 60000;
  for (std::size_t d = 0; d < draws; ++d) {
    const auto ids = sample_participants(4, 2, rng);
    ++counts[{ids[0], ids[1]}];
  }
  const double expected = static_cast<double>(draws) / 6.0;
  double chi2 = 0.0;
  for (const auto& [subset, c] : counts) {
    chi2 += (static_cast<double>(c) - expected) * (static_cast<double>(c) - expected) / expected;
  }
  chi2 += static_cast<double>(6 - counts.size()) * expected;
  const double p_value = boost::math::cdf(boost::math::complement(boost::math::chi_squared(5.0), chi2));
  return {counts.size() == 6 && p_value > 0.01, "chi2 = " + std::to_string(chi2) + ", p = " + std::to_string(p_value)};
}

CheckResult check_gradients(std::uint64_t seed) {
  const auto data = gen_synthetic_teacher(30, 4, 3, 5, seed);
  const Objective objectives[] = {Mlp{4, 6, 3}};
  Dataset logistic = data;
  for (auto& y : logistic.labels) {
    y = y == 0 ? -1 : 1;
  }
  double worst = 0.0;
  auto check = [&](const Objective& obj, const Dataset& d) {
    auto x = initial_point(obj, d.cols, seed);
    Stream rng(derive_key(seed, {104}));
    for (auto& v : x) {
      v += 0.3 * rng.normal();
    }
    const auto g = grad(obj, x, d);
    const double h = 1e-6;
    for (std::size_t j = 0; j < x.size(); ++j) {
      auto xp = x;
      auto xm = x;
      xp[j] += h;
      xm[j] -= h;
      const double fd = (loss(obj, xp, d) - loss(obj, xm, d)) / (2 * h);
      worst = std::max(worst, std::abs(fd - g[j]) / std::max(1.0, std::abs(g[j])));
    }
  };
  check(objectives[0], data);
  check(LogisticL2{0.1}, logistic);
  return {worst <= 1e-5, "max relative error " + std::to_string(worst)};
}

CheckResult check_cost(std::uint64_t seed) {
  Stream rng(derive_key(seed, {105}));
  CostModelParams params;
  params.shift_s_per_grad = 0.001;
  params.scale = 1000.0;
  double sum = 0.0;
  const std::size_t draws = 100000;
  for (std::size_t d = 0; d < draws; ++d) {
    sum += node_comp_time(1, 1, params, rng);
  }
  const double mean = sum / static_cast<double>(draws);
  return {std::abs(mean - 0.002) <= 0.01 * 0.002, "mean " + std::to_string(mean) + " vs 0.002"};
}

}  // namespace

bool run_self_checks(std::ostream& out, std::uint64_t seed) {
  const std::pair<const char*, std::function<CheckResult(std::uint64_t)>> checks[] = {
      {"quantizer_unbiased", check_unbiased}, {"quantizer_variance", check_variance},
      {"codec_roundtrip", check_codec},       {"participant_sampling", check_sampling},
      {"gradient_fd", check_gradients},       {"comp_time_mean", check_cost},
  };
  bool all = true;
  for (const auto& [name, fn] : checks) {
    CheckResult r{false, ""};
    try {
      r = fn(seed);
    } catch (const std::exception& e) {
      r = {false, std::string("error: ") + e.what()};
    }
    all = all && r.pass;
    out << (r.pass ? "PASS " : "FAIL ") << name << "  " << r.detail << "\n";
  }
  return all;
}

}  // namespace fedpaq
