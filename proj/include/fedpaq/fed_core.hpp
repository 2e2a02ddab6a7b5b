#pragma once

// Periodic averaging with partial participation and quantized uploads.
//
// Each round k the server samples r of n nodes, every participant runs tau
// local SGD steps from x_k, quantizes its model change, and the server sets
// x_{k+1} = x_k + (1/r) * sum of the dequantized changes. FedAvg (identity
// quantizer), QSGD (tau = 1, r = n) and parallel SGD (tau = 1, identity,
// r = n) are special cases.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "fedpaq/cost_model.hpp"
#include "fedpaq/data.hpp"
#include "fedpaq/objectives.hpp"
#include "fedpaq/quantizer.hpp"
#include "fedpaq/rng.hpp"

namespace fedpaq {

struct ConstantStep {
  double eta = 0.1;
};

/// coeff * 4 / (mu * (k * tau + 1)), constant within a round.
struct StronglyConvexDecay {
  double mu = 1.0;
  std::int64_t tau = 1;
  double coeff = 1.0;
};

/// coeff / (L * sqrt(T)).
struct NonConvexFlat {
  double L = 1.0;
  std::int64_t T = 1;
  double coeff = 1.0;
};

using StepsizeSchedule = std::variant<ConstantStep, StronglyConvexDecay, NonConvexFlat>;

void validate(const StepsizeSchedule& schedule);

/// Step size for local iteration t of round k.
double stepsize(const StepsizeSchedule& schedule, std::int64_t k, std::int64_t t);

/// Uniformly random r-subset of {0, ..., n-1}, sorted ascending.
std::vector<std::size_t> sample_participants(std::size_t n, std::size_t r, Stream& rng);

/// Runs tau local SGD steps from x_k on one node and returns the model
/// change x_{k,tau} - x_k.
std::vector<double> local_period(std::span<const double> x_k, const NodeShard& node, const Objective& obj,
                                 std::size_t tau, std::size_t batch, const StepsizeSchedule& schedule,
                                 std::int64_t k, Stream& rng);

/// x_k + (1/r) * sum of deltas, summed in the given order.
std::vector<double> server_round(std::span<const double> x_k, std::span<const std::vector<double>> deltas,
                                 std::size_t r);

/// As above, dequantizing each message first.
std::vector<double> server_round(std::span<const double> x_k, std::span<const QuantizedVector> deltas,
                                 std::size_t r);

struct FedProblem {
  Objective objective;
  Dataset train;                   // union of the shards; used for logged metrics
  std::vector<NodeShard> shards;   // one per node
  std::vector<double> x0;
  std::optional<std::vector<double>> x_star;
};

struct FedParams {
  std::size_t participants = 1;  // r
  std::size_t period = 1;        // tau
  std::size_t rounds = 0;        // K
  std::size_t batch = 10;
  QuantizerMode quantizer = Identity{};
  unsigned float_bits = kDefaultFloatBits;
  StepsizeSchedule schedule = ConstantStep{};
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  /// Also simulate non-participants and average ||grad f||^2 over the
  /// per-iteration mean of all n local models.
  bool global_view = false;
  std::optional<CostModelParams> cost;
  bool keep_trajectory = false;
};

/// Metrics after a completed round; cumulative fields never decrease.
struct RoundRecord {
  std::int64_t round = 0;  // 1-based index of the completed round
  std::int64_t iter = 0;   // round * tau
  double sim_time_s = 0.0;
  double comm_time_s = 0.0;
  double comp_time_s = 0.0;
  double train_loss = 0.0;
  double grad_norm = 0.0;
  double dist_sq_opt = 0.0;  // NaN when the optimum is unknown
  std::uint64_t bits_uplink_cum = 0;
  std::uint64_t participants_hash = 0;
};

struct RunResult {
  std::vector<RoundRecord> records;
  std::vector<double> final_model;
  std::vector<std::vector<double>> trajectory;  // x_1 .. x_K when requested
  std::optional<double> global_grad_sq_mean;    // (1/T) sum ||grad f(xbar_{k,t})||^2
};

/// Throws InvalidInput if the parameters do not fit the problem.
void validate(const FedProblem& problem, const FedParams& params);

/// Executes params.rounds rounds. The result depends only on the problem
/// and params (thread count included only as a speed knob).
RunResult run(const FedProblem& problem, const FedParams& params);

/// FNV-1a over the sorted participant ids.
std::uint64_t participants_hash(std::span<const std::size_t> ids) noexcept;

}  // namespace fedpaq
