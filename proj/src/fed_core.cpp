#include "fedpaq/fed_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "fedpaq/error.hpp"
#include "parallel.hpp"

namespace fedpaq {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

double squared_norm(std::span<const double> v) {
  double s = 0.0;
  for (double e : v) {
    s += e * e;
  }
  return s;
}

// Local SGD from x_k. When trace is non-null it receives the local model
// before each of the tau steps.
std::vector<double> run_local_period(std::span<const double> x_k, const Dataset& shard, const Objective& obj,
                                     std::size_t tau, std::size_t batch, const StepsizeSchedule& schedule,
                                     std::int64_t k, Stream& rng, std::vector<std::vector<double>>* trace) {
  std::vector<double> delta(x_k.size(), 0.0);
  std::vector<double> local(x_k.begin(), x_k.end());
  for (std::size_t t = 0; t < tau; ++t) {
    if (trace != nullptr) {
      trace->push_back(local);
    }
    const auto g = stoch_grad(obj, local, shard, batch, rng);
    const double eta = stepsize(schedule, k, static_cast<std::int64_t>(t));
    for (std::size_t j = 0; j < delta.size(); ++j) {
      delta[j] -= eta * g[j];
      local[j] = x_k[j] + delta[j];
    }
  }
  return delta;
}

struct NodeOutcome {
  std::vector<double> message;  // what the server receives, dequantized
  std::uint64_t bits = 0;
  double comp_time = 0.0;
  std::vector<std::vector<double>> trace;
};

}  // namespace

void validate(const StepsizeSchedule& schedule) {
  std::visit(Overloaded{
                 [](const ConstantStep& s) {
                   if (!(s.eta > 0.0)) {
                     throw InvalidInput("constant schedule: eta must be positive");
                   }
                 },
                 [](const StronglyConvexDecay& s) {
                   if (!(s.mu > 0.0) || s.tau < 1 || !(s.coeff > 0.0)) {
                     throw InvalidInput("strongly convex schedule: need mu > 0, tau >= 1, coeff > 0");
                   }
                 },
                 [](const NonConvexFlat& s) {
                   if (!(s.L > 0.0) || s.T < 1 || !(s.coeff > 0.0)) {
                     throw InvalidInput("non-convex schedule: need L > 0, T >= 1, coeff > 0");
                   }
                 },
             },
             schedule);
}

double stepsize(const StepsizeSchedule& schedule, std::int64_t k, std::int64_t /*t*/) {
  return std::visit(Overloaded{
                        [](const ConstantStep& s) { return s.eta; },
                        [k](const StronglyConvexDecay& s) {
                          return s.coeff * 4.0 / (s.mu * (static_cast<double>(k * s.tau) + 1.0));
                        },
                        [](const NonConvexFlat& s) {
                          return s.coeff / (s.L * std::sqrt(static_cast<double>(s.T)));
                        },
                    },
                    schedule);
}

std::vector<std::size_t> sample_participants(std::size_t n, std::size_t r, Stream& rng) {
  if (r < 1 || r > n) {
    throw InvalidInput("sample_participants: r = " + std::to_string(r) + " must be in [1, n = " +
                       std::to_string(n) + "]");
  }
  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  if (r < n) {
    // Partial Fisher-Yates: the first r slots are a uniform r-subset.
    for (std::size_t i = 0; i < r; ++i) {
      std::swap(ids[i], ids[i + rng.uniform_index(n - i)]);
    }
    ids.resize(r);
    std::sort(ids.begin(), ids.end());
  }
  return ids;
}

std::vector<double> local_period(std::span<const double> x_k, const NodeShard& node, const Objective& obj,
                                 std::size_t tau, std::size_t batch, const StepsizeSchedule& schedule,
                                 std::int64_t k, Stream& rng) {
  if (tau < 1) {
    throw InvalidInput("local_period: tau must be at least 1");
  }
  return run_local_period(x_k, node.data, obj, tau, batch, schedule, k, rng, nullptr);
}

std::vector<double> server_round(std::span<const double> x_k, std::span<const std::vector<double>> deltas,
                                 std::size_t r) {
  if (deltas.size() != r || r == 0) {
    throw InvalidInput("server_round: expected " + std::to_string(r) + " updates, got " +
                       std::to_string(deltas.size()));
  }
  std::vector<double> sum(x_k.size(), 0.0);
  for (const auto& d : deltas) {
    if (d.size() != x_k.size()) {
      throw InvalidInput("server_round: update dimension mismatch");
    }
    for (std::size_t j = 0; j < sum.size(); ++j) {
      sum[j] += d[j];
    }
  }
  std::vector<double> next(x_k.size());
  const auto dr = static_cast<double>(r);
  for (std::size_t j = 0; j < next.size(); ++j) {
    next[j] = x_k[j] + sum[j] / dr;
  }
  return next;
}

std::vector<double> server_round(std::span<const double> x_k, std::span<const QuantizedVector> deltas,
                                 std::size_t r) {
  std::vector<std::vector<double>> plain;
  plain.reserve(deltas.size());
  for (const auto& q : deltas) {
    validate(q);
    plain.push_back(dequantize(q));
  }
  return server_round(x_k, plain, r);
}

std::uint64_t participants_hash(std::span<const std::size_t> ids) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (std::size_t id : ids) {
    for (int b = 0; b < 8; ++b) {
      h ^= (static_cast<std::uint64_t>(id) >> (8 * b)) & 0xFF;
      h *= 0x100000001B3ULL;
    }
  }
  return h;
}

void validate(const FedProblem& problem, const FedParams& params) {
  validate(problem.objective);
  validate(problem.train);
  const std::size_t n = problem.shards.size();
  if (n == 0) {
    throw InvalidInput("run: no nodes");
  }
  if (params.participants < 1 || params.participants > n) {
    throw InvalidInput("run: r = " + std::to_string(params.participants) + " must be in [1, n = " +
                       std::to_string(n) + "]");
  }
  if (params.period < 1) {
    throw InvalidInput("run: tau must be at least 1");
  }
  if (params.batch < 1) {
    throw InvalidInput("run: batch must be at least 1");
  }
  const std::size_t dim = parameter_dim(problem.objective, problem.train.cols);
  if (problem.x0.size() != dim) {
    throw InvalidInput("run: initial model has dimension " + std::to_string(problem.x0.size()) + ", expected " +
                       std::to_string(dim));
  }
  if (problem.x_star && problem.x_star->size() != dim) {
    throw InvalidInput("run: optimum has the wrong dimension");
  }
  for (const auto& shard : problem.shards) {
    if (shard.data.cols != problem.train.cols) {
      throw InvalidInput("run: shard feature count differs from the training set");
    }
    if (shard.data.rows < params.batch) {
      throw InvalidInput("run: node " + std::to_string(shard.node_id) + " holds " +
                         std::to_string(shard.data.rows) + " samples, fewer than batch " +
                         std::to_string(params.batch));
    }
  }
  if (const auto* lp = std::get_if<LowPrecision>(&params.quantizer); lp != nullptr && lp->levels == 0) {
    throw InvalidInput("run: quantizer level count must be positive");
  }
  if (params.float_bits != 32 && params.float_bits != 64) {
    throw InvalidInput("run: float_bits must be 32 or 64");
  }
  validate(params.schedule);
  if (params.cost) {
    validate(*params.cost);
  }
}

RunResult run(const FedProblem& problem, const FedParams& params) {
  validate(problem, params);
  const std::size_t n = problem.shards.size();
  const std::size_t r = params.participants;
  const std::size_t tau = params.period;
  const std::size_t dim = problem.x0.size();
  const auto* lp = std::get_if<LowPrecision>(&params.quantizer);
  const std::uint64_t bits_per_message = message_bits(params.quantizer, dim, params.float_bits);

  RunResult result;
  result.records.reserve(params.rounds);
  std::vector<double> x = problem.x0;
  double comm_cum = 0.0;
  double comp_cum = 0.0;
  std::uint64_t bits_cum = 0;
  double grad_sq_sum = 0.0;

  std::vector<NodeOutcome> outcomes;
  std::vector<std::vector<double>> messages;
  std::vector<std::uint64_t> bits;
  std::vector<double> comp_times;

  for (std::size_t round = 0; round < params.rounds; ++round) {
    const auto k = static_cast<std::int64_t>(round);
    Stream sampler = node_round_stream(params.seed, StreamPurpose::kParticipants, 0, round);
    const auto ids = sample_participants(n, r, sampler);

    std::vector<std::size_t> active = ids;
    std::vector<char> participates(n, 0);
    for (std::size_t id : ids) {
      participates[id] = 1;
    }
    if (params.global_view) {
      active.resize(n);
      std::iota(active.begin(), active.end(), std::size_t{0});
    }

    outcomes.assign(active.size(), NodeOutcome{});
    detail::parallel_for(active.size(), params.threads, [&](std::size_t slot) {
      const std::size_t node = active[slot];
      NodeOutcome& out = outcomes[slot];
      Stream sgd = node_round_stream(params.seed, StreamPurpose::kLocalSgd, node, round);
      auto delta = run_local_period(x, problem.shards[node].data, problem.objective, tau, params.batch,
                                    params.schedule, k, sgd, params.global_view ? &out.trace : nullptr);
      if (participates[node] == 0) {
        return;
      }
      if (lp != nullptr) {
        Stream qrng = node_round_stream(params.seed, StreamPurpose::kQuantize, node, round);
        const auto wire = encode(quantize(delta, lp->levels, qrng), params.float_bits);
        out.message = dequantize(decode(wire, params.float_bits));
      } else {
        out.message = std::move(delta);
      }
      out.bits = bits_per_message;
      if (params.cost) {
        Stream crng = node_round_stream(params.seed, StreamPurpose::kCompute, node, round);
        out.comp_time = node_comp_time(tau, params.batch, *params.cost, crng);
      }
    });

    // Reduce in ascending node id regardless of which thread finished first.
    messages.clear();
    bits.clear();
    comp_times.clear();
    for (std::size_t slot = 0; slot < active.size(); ++slot) {
      if (participates[active[slot]] != 0) {
        messages.push_back(std::move(outcomes[slot].message));
        bits.push_back(outcomes[slot].bits);
        comp_times.push_back(outcomes[slot].comp_time);
      }
    }

    if (params.global_view) {
      std::vector<double> mean(dim);
      for (std::size_t t = 0; t < tau; ++t) {
        std::fill(mean.begin(), mean.end(), 0.0);
        for (const auto& out : outcomes) {
          for (std::size_t j = 0; j < dim; ++j) {
            mean[j] += out.trace[t][j];
          }
        }
        for (auto& v : mean) {
          v /= static_cast<double>(n);
        }
        grad_sq_sum += squared_norm(grad(problem.objective, mean, problem.train));
      }
    }

    x = server_round(x, messages, r);

    for (auto b : bits) {
      bits_cum += b;
    }
    if (params.cost) {
      comm_cum += round_comm_time(bits, *params.cost);
      comp_cum += round_comp_time(comp_times);
    }

    RoundRecord rec;
    rec.round = k + 1;
    rec.iter = (k + 1) * static_cast<std::int64_t>(tau);
    rec.comm_time_s = comm_cum;
    rec.comp_time_s = comp_cum;
    rec.sim_time_s = comm_cum + comp_cum;
    rec.train_loss = loss(problem.objective, x, problem.train);
    rec.grad_norm = std::sqrt(squared_norm(grad(problem.objective, x, problem.train)));
    rec.dist_sq_opt = std::numeric_limits<double>::quiet_NaN();
    if (problem.x_star) {
      double d = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        d += (x[j] - (*problem.x_star)[j]) * (x[j] - (*problem.x_star)[j]);
      }
      rec.dist_sq_opt = d;
    }
    rec.bits_uplink_cum = bits_cum;
    rec.participants_hash = participants_hash(ids);
    result.records.push_back(rec);
    if (params.keep_trajectory) {
      result.trajectory.push_back(x);
    }
  }

  if (params.global_view && params.rounds > 0) {
    result.global_grad_sq_mean = grad_sq_sum / static_cast<double>(params.rounds * tau);
  }
  result.final_model = std::move(x);
  return result;
}

}  // namespace fedpaq
