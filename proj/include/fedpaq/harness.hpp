#pragma once

// Experiment driver: INI-style run configurations, single runs, parameter
// sweeps, and plot-ready CSV / JSON outputs.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fedpaq/fed_core.hpp"
#include "fedpaq/theory.hpp"

namespace fedpaq {

enum class ProblemKind { kLogistic, kMlp };
enum class DataSource { kSynthetic, kIdx, kFile };
enum class ScheduleKind { kConstant, kStronglyConvex, kNonConvex };

struct ProblemSpec {
  ProblemKind kind = ProblemKind::kLogistic;
  DataSource source = DataSource::kSynthetic;
  std::size_t samples = 10000;
  std::size_t features = 50;
  double lambda = 0.1;
  std::size_t classes = 3;
  std::size_t hidden = 32;
  std::size_t teacher_hidden = 16;
  std::filesystem::path idx_images;
  std::filesystem::path idx_labels;
  std::optional<std::set<int>> keep_labels;
  std::filesystem::path dataset_file;
  std::uint64_t data_seed = 1;
};

struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::kConstant;
  double eta = 0.1;
  double coeff = 1.0;
  std::optional<double> mu;  // strongly convex; defaults to the objective's mu
  std::optional<double> L;   // non-convex; defaults to the objective's L
};

/// Exactly one of bandwidth and ratio is set.
struct CostSpec {
  std::optional<double> bandwidth;
  std::optional<double> ratio;
  double shift = 0.001;
  double scale = 1000.0;
};

/// One point of a sweep. Unset fields keep the base configuration's value.
struct SweepPoint {
  std::optional<QuantizerMode> quantizer;
  std::optional<std::size_t> participants;
  std::optional<std::size_t> period;
};

struct SweepSpec {
  std::vector<QuantizerMode> levels;
  std::vector<std::size_t> participants;
  std::vector<std::size_t> periods;
  std::vector<SweepPoint> points;  // explicit list; overrides the cross product
  bool empty() const noexcept {
    return levels.empty() && participants.empty() && periods.empty() && points.empty();
  }
};

struct RunConfig {
  ProblemSpec problem;
  std::size_t nodes = 50;
  std::size_t participants = 50;
  std::size_t period = 1;
  std::optional<std::size_t> rounds;      // K
  std::optional<std::size_t> iterations;  // T; K = T / tau
  std::size_t batch = 10;
  QuantizerMode quantizer = Identity{};
  unsigned float_bits = kDefaultFloatBits;
  ScheduleSpec schedule;
  std::optional<CostSpec> cost;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  bool global_view = false;
  std::size_t repeats = 1;
  std::optional<double> target_loss;
  SweepSpec sweep;

  /// K, from rounds or iterations / period.
  std::size_t round_count() const;
};

/// Checks every RunConfig invariant; throws ConfigError naming the values.
void validate(const RunConfig& config);

/// Parses the sectioned key = value format. Unknown keys, missing required
/// keys and invariant violations raise ConfigError.
RunConfig parse_config(const std::string& text);
RunConfig parse_config_file(const std::filesystem::path& path);

/// Normalized key = value rendering that parse_config accepts.
std::string render_config(const RunConfig& config);

/// A configured problem ready to simulate.
struct PreparedRun {
  FedProblem problem;
  FedParams params;
  Curvature curvature;
  std::optional<double> f_star;
  double sigma2 = 0.0;  // per-node minibatch gradient variance estimate
  theory::TheoremConstants constants;
  std::vector<std::string> warnings;
};

/// Builds data, shards, initial model, schedule, cost model and theorem
/// constants for the configuration.
PreparedRun prepare(const RunConfig& config);

/// Same problem, simulation parameters re-derived for a modified config
/// (used by sweeps to avoid regenerating the data).
FedParams make_params(const RunConfig& config, const PreparedRun& base);

inline constexpr const char* kMetricsHeader =
    "round,iter,sim_time_s,comm_time_s,comp_time_s,train_loss,grad_norm,dist_sq_opt,bits_uplink_cum";

std::string metrics_csv(const std::vector<RoundRecord>& records);

/// Parses a metrics CSV produced by metrics_csv (participants_hash is not stored).
std::vector<RoundRecord> parse_metrics_csv(const std::string& text);

/// First cumulative simulated time at which train_loss <= target.
std::optional<double> time_to_target(const std::vector<RoundRecord>& records, double target_loss);

/// Writes to a sibling temporary file, then renames over path.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

struct ExecuteResult {
  std::vector<RunResult> runs;  // one per repeat
  std::filesystem::path metrics_path;
  std::filesystem::path summary_path;
};

/// Runs the configuration and writes metrics.csv and summary.json into
/// out_dir. With repeats > 1 each repeat gets metrics_rep<j>.csv, and
/// metrics.csv / band.csv hold the per-round mean and min/max.
ExecuteResult execute(const RunConfig& config, const std::filesystem::path& out_dir);

/// Seed of a sweep point, a function of the base seed and the point's (s, r, tau).
std::uint64_t sweep_point_seed(std::uint64_t base_seed, const QuantizerMode& quantizer, std::size_t participants,
                               std::size_t period);

/// The configurations a sweep executes, in order.
std::vector<RunConfig> expand_sweep(const RunConfig& config);

/// Executes every sweep point into out_dir/point_<i>/ and writes out_dir/index.csv.
std::vector<ExecuteResult> sweep(const RunConfig& config, const std::filesystem::path& out_dir);

/// Theorem constants for the configuration, as JSON text.
std::string theory_report(const RunConfig& config);

/// Quick versions of the statistical property suites; prints one line per
/// check and returns true if all pass.
bool run_self_checks(std::ostream& out, std::uint64_t seed = 0);

/// "identity" or the level count.
std::string quantizer_label(const QuantizerMode& mode);

}  // namespace fedpaq
