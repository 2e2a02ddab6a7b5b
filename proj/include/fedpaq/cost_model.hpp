#pragma once

// Simulated wall-clock cost of a round: uplink bits over a fixed bandwidth,
// plus the slowest participant's shifted-exponential computation time.

#include <cstddef>
#include <cstdint>
#include <span>

#include "fedpaq/rng.hpp"

namespace fedpaq {

struct CostModelParams {
  double bandwidth_bits_per_s = 1.0;
  double shift_s_per_grad = 0.0;  // deterministic seconds per sample gradient
  double scale = 1.0;             // exponential rate per sample gradient
  unsigned float_bits = 32;
};

/// Throws InvalidInput unless bandwidth > 0, scale > 0 and shift >= 0.
void validate(const CostModelParams& params);

/// (sum of bits) / BW.
double round_comm_time(std::span<const std::uint64_t> participant_bits, const CostModelParams& params);

/// tau * B * shift + Exp(mean tau * B / scale), the exponential part drawn by
/// inversion of the uniform quantile u in [0, 1).
double node_comp_time_at(std::size_t tau, std::size_t batch, const CostModelParams& params, double u);

double node_comp_time(std::size_t tau, std::size_t batch, const CostModelParams& params, Stream& rng);

/// Slowest participant. Throws InvalidInput on an empty list.
double round_comp_time(std::span<const double> participant_times);

/// (pF / BW) / (shift + 1 / scale).
double comm_comp_ratio(std::size_t p, const CostModelParams& params);

/// BW such that comm_comp_ratio(p, ...) == target_ratio.
double solve_bandwidth(std::size_t p, double target_ratio, double shift, double scale, unsigned float_bits = 32);

}  // namespace fedpaq
