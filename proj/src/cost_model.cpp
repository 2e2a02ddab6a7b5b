#include "fedpaq/cost_model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedpaq/error.hpp"

namespace fedpaq {

void validate(const CostModelParams& params) {
  if (!(params.bandwidth_bits_per_s > 0.0) || !std::isfinite(params.bandwidth_bits_per_s)) {
    throw InvalidInput("cost model: bandwidth must be positive and finite");
  }
  if (!(params.scale > 0.0) || !std::isfinite(params.scale)) {
    throw InvalidInput("cost model: scale must be positive and finite");
  }
  if (!(params.shift_s_per_grad >= 0.0) || !std::isfinite(params.shift_s_per_grad)) {
    throw InvalidInput("cost model: shift must be finite and nonnegative");
  }
  if (params.float_bits == 0) {
    throw InvalidInput("cost model: float_bits must be positive");
  }
}

double round_comm_time(std::span<const std::uint64_t> participant_bits, const CostModelParams& params) {
  std::uint64_t total = 0;
  for (auto bits : participant_bits) {
    total += bits;
  }
  return static_cast<double>(total) / params.bandwidth_bits_per_s;
}

double node_comp_time_at(std::size_t tau, std::size_t batch, const CostModelParams& params, double u) {
  if (tau == 0 || batch == 0) {
    throw InvalidInput("node_comp_time: tau and batch must be at least 1");
  }
  const double work = static_cast<double>(tau) * static_cast<double>(batch);
  return work * params.shift_s_per_grad - (work / params.scale) * std::log1p(-u);
}

double node_comp_time(std::size_t tau, std::size_t batch, const CostModelParams& params, Stream& rng) {
  return node_comp_time_at(tau, batch, params, rng.uniform());
}

double round_comp_time(std::span<const double> participant_times) {
  if (participant_times.empty()) {
    throw InvalidInput("round_comp_time: no participants");
  }
  return *std::max_element(participant_times.begin(), participant_times.end());
}

double comm_comp_ratio(std::size_t p, const CostModelParams& params) {
  if (p == 0) {
    throw InvalidInput("comm_comp_ratio: p must be positive");
  }
  const double comm = static_cast<double>(p) * params.float_bits / params.bandwidth_bits_per_s;
  return comm / (params.shift_s_per_grad + 1.0 / params.scale);
}

double solve_bandwidth(std::size_t p, double target_ratio, double shift, double scale, unsigned float_bits) {
  if (!(target_ratio > 0.0)) {
    throw InvalidInput("solve_bandwidth: target ratio must be positive");
  }
  if (p == 0 || !(scale > 0.0) || !(shift >= 0.0)) {
    throw InvalidInput("solve_bandwidth: need p >= 1, scale > 0, shift >= 0");
  }
  return static_cast<double>(p) * float_bits / (target_ratio * (shift + 1.0 / scale));
}

}  // namespace fedpaq
