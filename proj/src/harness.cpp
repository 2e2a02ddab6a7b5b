#include "fedpaq/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "fedpaq/error.hpp"

namespace fedpaq {
namespace {

using json = nlohmann::json;

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Dataset load_problem_data(const RunConfig& config) {
  const auto& p = config.problem;
  switch (p.source) {
    case DataSource::kIdx:
      return load_idx(p.idx_images, p.idx_labels, p.keep_labels);
    case DataSource::kFile:
      return load_dataset(p.dataset_file);
    case DataSource::kSynthetic:
      break;
  }
  if (p.kind == ProblemKind::kMlp) {
    return gen_synthetic_teacher(p.samples, p.features, p.classes, p.teacher_hidden, p.data_seed);
  }
  return {};  // logistic synthetic data is generated together with its optimum
}

json constants_json(const theory::TheoremConstants& c) {
  json j = {
      {"q", c.q},
      {"n", c.n},
      {"r", c.r},
      {"L", c.L},
      {"mu", c.mu},
      {"sigma2", c.sigma2},
      {"tau", c.tau},
      {"T", c.T},
      {"B2", c.nc.b2},
      {"N1", c.nc.n1},
      {"N2", c.nc.n2},
      {"tau_max", c.tau_max},
  };
  if (c.has_strongly_convex) {
    j["B1"] = c.sc.b1;
    j["C1"] = c.sc.c1;
    j["C2"] = c.sc.c2;
    j["C3"] = c.sc.c3;
    j["k0"] = c.k0;
  }
  return j;
}

json record_json(const RoundRecord& r) {
  return {
      {"round", r.round},
      {"iter", r.iter},
      {"sim_time_s", r.sim_time_s},
      {"comm_time_s", r.comm_time_s},
      {"comp_time_s", r.comp_time_s},
      {"train_loss", r.train_loss},
      {"grad_norm", r.grad_norm},
      {"dist_sq_opt", std::isnan(r.dist_sq_opt) ? json(nullptr) : json(r.dist_sq_opt)},
      {"bits_uplink_cum", r.bits_uplink_cum},
  };
}

std::string band_csv(const std::vector<RunResult>& runs) {
  std::string out = "round,iter,sim_time_s_mean,train_loss_mean,train_loss_min,train_loss_max\n";
  const std::size_t rows = runs.front().records.size();
  for (std::size_t i = 0; i < rows; ++i) {
    double time = 0.0;
    double mean = 0.0;
    double lo = INFINITY;
    double hi = -INFINITY;
    for (const auto& run : runs) {
      const auto& rec = run.records[i];
      time += rec.sim_time_s;
      mean += rec.train_loss;
      lo = std::min(lo, rec.train_loss);
      hi = std::max(hi, rec.train_loss);
    }
    const auto m = static_cast<double>(runs.size());
    const auto& first = runs.front().records[i];
    out += std::to_string(first.round) + "," + std::to_string(first.iter) + "," + format_double(time / m) + "," +
           format_double(mean / m) + "," + format_double(lo) + "," + format_double(hi) + "\n";
  }
  return out;
}

std::vector<RoundRecord> mean_records(const std::vector<RunResult>& runs) {
  std::vector<RoundRecord> out = runs.front().records;
  const auto m = static_cast<double>(runs.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    RoundRecord acc = out[i];
    acc.sim_time_s = acc.comm_time_s = acc.comp_time_s = 0.0;
    acc.train_loss = acc.grad_norm = acc.dist_sq_opt = 0.0;
    for (const auto& run : runs) {
      const auto& rec = run.records[i];
      acc.sim_time_s += rec.sim_time_s / m;
      acc.comm_time_s += rec.comm_time_s / m;
      acc.comp_time_s += rec.comp_time_s / m;
      acc.train_loss += rec.train_loss / m;
      acc.grad_norm += rec.grad_norm / m;
      acc.dist_sq_opt += rec.dist_sq_opt / m;
    }
    out[i] = acc;
  }
  return out;
}

std::uint64_t repeat_seed(std::uint64_t seed, std::size_t repeat) {
  return repeat == 0 ? seed : derive_key(seed, {static_cast<std::uint64_t>(StreamPurpose::kSweep), 0, repeat});
}

}  // namespace

FedParams make_params(const RunConfig& config, const PreparedRun& base) {
  FedParams params;
  params.participants = config.participants;
  params.period = config.period;
  params.rounds = config.round_count();
  params.batch = config.batch;
  params.quantizer = config.quantizer;
  params.float_bits = config.float_bits;
  params.seed = config.seed;
  params.threads = config.threads;
  params.global_view = config.global_view;

  const auto& s = config.schedule;
  switch (s.kind) {
    case ScheduleKind::kConstant:
      params.schedule = ConstantStep{s.eta * s.coeff};
      break;
    case ScheduleKind::kStronglyConvex: {
      const double mu = s.mu.value_or(base.curvature.strong_convexity.value_or(0.0));
      if (!(mu > 0.0)) {
        throw ConfigError("schedule: strongly_convex needs a positive mu");
      }
      params.schedule = StronglyConvexDecay{mu, static_cast<std::int64_t>(config.period), s.coeff};
      break;
    }
    case ScheduleKind::kNonConvex: {
      const double L = s.L.value_or(base.curvature.smoothness);
      const auto T = static_cast<std::int64_t>(params.rounds * config.period);
      if (!(L > 0.0) || T < 1) {
        throw ConfigError("schedule: nonconvex needs L > 0 and at least one iteration");
      }
      params.schedule = NonConvexFlat{L, T, s.coeff};
      break;
    }
  }

  if (config.cost) {
    CostModelParams cost;
    cost.shift_s_per_grad = config.cost->shift;
    cost.scale = config.cost->scale;
    cost.float_bits = config.float_bits;
    const std::size_t dim = base.problem.x0.size();
    cost.bandwidth_bits_per_s = config.cost->bandwidth
                                    ? *config.cost->bandwidth
                                    : solve_bandwidth(dim, *config.cost->ratio, cost.shift_s_per_grad, cost.scale,
                                                      cost.float_bits);
    params.cost = cost;
  }
  return params;
}

PreparedRun prepare(const RunConfig& config) {
  validate(config);
  const auto& spec = config.problem;
  PreparedRun prep;
  FedProblem& problem = prep.problem;

  if (spec.kind == ProblemKind::kLogistic) {
    problem.objective = LogisticL2{spec.lambda};
  } else {
    problem.objective = Mlp{spec.features, spec.hidden, spec.classes};
  }

  if (spec.kind == ProblemKind::kLogistic && spec.source == DataSource::kSynthetic) {
    auto synth = gen_synthetic_logreg(spec.samples, spec.features, spec.lambda, spec.data_seed);
    problem.train = std::move(synth.data);
    problem.x_star = std::move(synth.x_star);
    prep.f_star = synth.f_star;
  } else {
    problem.train = load_problem_data(config);
    if (spec.kind == ProblemKind::kMlp && spec.source != DataSource::kSynthetic) {
      std::get<Mlp>(problem.objective).inputs = problem.train.cols;
    }
    if (spec.kind == ProblemKind::kLogistic && spec.lambda > 0.0) {
      problem.x_star = solve_logreg(problem.train, spec.lambda);
      prep.f_star = loss(problem.objective, *problem.x_star, problem.train);
    }
  }
  if (problem.train.rows < config.nodes * config.batch) {
    throw ConfigError("problem: " + std::to_string(problem.train.rows) + " samples cannot give " +
                      std::to_string(config.nodes) + " nodes a batch of " + std::to_string(config.batch));
  }

  problem.shards = partition_iid(problem.train, config.nodes, spec.data_seed);
  problem.x0 = initial_point(problem.objective, problem.train.cols, config.seed);
  prep.curvature = constants(problem.objective, problem.train);

  std::vector<std::vector<double>> points{problem.x0};
  if (problem.x_star) {
    points.push_back(*problem.x_star);
  }
  prep.sigma2 =
      gradient_variance(problem.objective, problem.train, points) / static_cast<double>(config.batch);

  prep.params = make_params(config, prep);

  const std::size_t dim = problem.x0.size();
  const double q = variance_parameter(config.quantizer, dim);
  const auto T = static_cast<std::int64_t>(config.round_count() * config.period);
  if (config.nodes >= 2) {
    prep.constants = theory::evaluate(q, static_cast<std::int64_t>(config.nodes),
                                      static_cast<std::int64_t>(config.participants), prep.curvature.smoothness,
                                      prep.curvature.strong_convexity.value_or(0.0), prep.sigma2,
                                      static_cast<std::int64_t>(config.period), T);
    if (prep.constants.has_strongly_convex && prep.constants.k0 * static_cast<std::int64_t>(config.period) > T) {
      prep.warnings.push_back("k0 * tau = " + std::to_string(prep.constants.k0 * config.period) +
                              " exceeds T = " + std::to_string(T) +
                              "; the strongly convex bound does not cover this run");
    }
    if (T >= 2 && static_cast<double>(config.period) > prep.constants.tau_max) {
      prep.warnings.push_back("tau = " + std::to_string(config.period) + " exceeds the non-convex limit " +
                              format_double(prep.constants.tau_max));
    }
  } else {
    prep.warnings.push_back("theorem constants need at least two nodes");
  }
  return prep;
}

std::string metrics_csv(const std::vector<RoundRecord>& records) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : records) {
    out += std::to_string(r.round) + "," + std::to_string(r.iter) + "," + format_double(r.sim_time_s) + "," +
           format_double(r.comm_time_s) + "," + format_double(r.comp_time_s) + "," + format_double(r.train_loss) +
           "," + format_double(r.grad_norm) + "," + format_double(r.dist_sq_opt) + "," +
           std::to_string(r.bits_uplink_cum) + "\n";
  }
  return out;
}

std::vector<RoundRecord> parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw FormatError("metrics csv: unexpected header");
  }
  std::vector<RoundRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) {
      cells.push_back(cell);
    }
    if (cells.size() != 9) {
      throw FormatError("metrics csv: expected 9 columns, got " + std::to_string(cells.size()));
    }
    try {
      RoundRecord r;
      r.round = std::stoll(cells[0]);
      r.iter = std::stoll(cells[1]);
      r.sim_time_s = std::stod(cells[2]);
      r.comm_time_s = std::stod(cells[3]);
      r.comp_time_s = std::stod(cells[4]);
      r.train_loss = std::stod(cells[5]);
      r.grad_norm = std::stod(cells[6]);
      r.dist_sq_opt = std::stod(cells[7]);
      r.bits_uplink_cum = std::stoull(cells[8]);
      out.push_back(r);
    } catch (const std::logic_error&) {
      throw FormatError("metrics csv: cannot parse row '" + line + "'");
    }
  }
  return out;
}

std::optional<double> time_to_target(const std::vector<RoundRecord>& records, double target_loss) {
  for (const auto& r : records) {
    if (r.train_loss <= target_loss) {
      return r.sim_time_s;
    }
  }
  return std::nullopt;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) {
      throw Error("cannot write " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

ExecuteResult execute(const RunConfig& config, const std::filesystem::path& out_dir) {
  const auto started = std::chrono::steady_clock::now();
  PreparedRun prep = prepare(config);

  ExecuteResult result;
  for (std::size_t rep = 0; rep < config.repeats; ++rep) {
    FedParams params = prep.params;
    params.seed = repeat_seed(config.seed, rep);
    result.runs.push_back(run(prep.problem, params));
  }
  const auto wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  std::filesystem::create_directories(out_dir);
  result.metrics_path = out_dir / "metrics.csv";
  result.summary_path = out_dir / "summary.json";
  std::vector<RoundRecord> reported = result.runs.front().records;
  if (config.repeats > 1) {
    for (std::size_t rep = 0; rep < config.repeats; ++rep) {
      write_file_atomic(out_dir / ("metrics_rep" + std::to_string(rep) + ".csv"),
                        metrics_csv(result.runs[rep].records));
    }
    reported = mean_records(result.runs);
    write_file_atomic(out_dir / "band.csv", band_csv(result.runs));
  }
  write_file_atomic(result.metrics_path, metrics_csv(reported));

  json summary;
  summary["config"] = render_config(config);
  summary["theory"] = config.nodes >= 2 ? constants_json(prep.constants) : json(nullptr);
  summary["curvature"] = {{"L", prep.curvature.smoothness},
                          {"mu", prep.curvature.strong_convexity ? json(*prep.curvature.strong_convexity)
                                                                 : json(nullptr)}};
  summary["sigma2_estimate"] = prep.sigma2;
  summary["f_star"] = prep.f_star ? json(*prep.f_star) : json(nullptr);
  summary["dim"] = prep.problem.x0.size();
  summary["bits_per_upload"] = message_bits(config.quantizer, prep.problem.x0.size(), config.float_bits);
  if (prep.params.cost) {
    summary["bandwidth_bits_per_s"] = prep.params.cost->bandwidth_bits_per_s;
    summary["comm_comp_ratio"] = comm_comp_ratio(prep.problem.x0.size(), *prep.params.cost);
  }
  summary["final"] = reported.empty() ? json(nullptr) : record_json(reported.back());
  if (config.target_loss) {
    const auto t = time_to_target(reported, *config.target_loss);
    summary["time_to_target_s"] = t ? json(*t) : json(nullptr);
  }
  if (result.runs.front().global_grad_sq_mean) {
    json values = json::array();
    for (const auto& r : result.runs) {
      values.push_back(*r.global_grad_sq_mean);
    }
    summary["global_grad_sq_mean"] = values;
  }
  summary["warnings"] = prep.warnings;
  summary["wall_clock_s"] = wall;
  write_file_atomic(result.summary_path, summary.dump(2) + "\n");
  return result;
}

std::uint64_t sweep_point_seed(std::uint64_t base_seed, const QuantizerMode& quantizer, std::size_t participants,
                               std::size_t period) {
  const auto* lp = std::get_if<LowPrecision>(&quantizer);
  const std::uint64_t levels = lp != nullptr ? lp->levels : 0;
  return derive_key(base_seed, {static_cast<std::uint64_t>(StreamPurpose::kSweep), 1, levels, participants, period});
}

std::vector<RunConfig> expand_sweep(const RunConfig& config) {
  if (config.sweep.empty()) {
    throw ConfigError("sweep: no sweep lists given");
  }
  RunConfig base = config;
  base.sweep = {};

  std::vector<SweepPoint> points = config.sweep.points;
  if (points.empty()) {
    const auto levels = config.sweep.levels.empty() ? std::vector<QuantizerMode>{config.quantizer}
                                                    : config.sweep.levels;
    const auto parts = config.sweep.participants.empty() ? std::vector<std::size_t>{config.participants}
                                                         : config.sweep.participants;
    const auto periods =
        config.sweep.periods.empty() ? std::vector<std::size_t>{config.period} : config.sweep.periods;
    for (const auto& q : levels) {
      for (std::size_t r : parts) {
        for (std::size_t tau : periods) {
          points.push_back({q, r, tau});
        }
      }
    }
  }

  std::vector<RunConfig> out;
  for (const auto& point : points) {
    RunConfig c = base;
    if (point.quantizer) c.quantizer = *point.quantizer;
    if (point.participants) c.participants = *point.participants;
    if (point.period) c.period = *point.period;
    c.seed = sweep_point_seed(config.seed, c.quantizer, c.participants, c.period);
    validate(c);
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<ExecuteResult> sweep(const RunConfig& config, const std::filesystem::path& out_dir) {
  const auto configs = expand_sweep(config);
  std::vector<ExecuteResult> results;
  std::string index =
      "point,levels,participants,period,rounds,seed,dir,final_train_loss,final_sim_time_s,time_to_target_s\n";
  for (std::size_t i = 0; i < configs.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "point_%03zu", i);
    const auto& c = configs[i];
    auto res = execute(c, out_dir / name);
    const auto& recs = res.runs.front().records;
    std::string ttt;
    if (c.target_loss) {
      const auto t = time_to_target(recs, *c.target_loss);
      ttt = t ? format_double(*t) : "none";
    }
    index += std::to_string(i) + "," + quantizer_label(c.quantizer) + "," + std::to_string(c.participants) + "," +
             std::to_string(c.period) + "," + std::to_string(c.round_count()) + "," + std::to_string(c.seed) + "," +
             name + "," + (recs.empty() ? "nan" : format_double(recs.back().train_loss)) + "," +
             (recs.empty() ? "0" : format_double(recs.back().sim_time_s)) + "," + ttt + "\n";
    results.push_back(std::move(res));
  }
  write_file_atomic(out_dir / "index.csv", index);
  return results;
}

std::string theory_report(const RunConfig& config) {
  const PreparedRun prep = prepare(config);
  json out;
  out["theory"] = config.nodes >= 2 ? constants_json(prep.constants) : json(nullptr);
  out["curvature"] = {{"L", prep.curvature.smoothness},
                      {"mu", prep.curvature.strong_convexity ? json(*prep.curvature.strong_convexity)
                                                             : json(nullptr)}};
  out["sigma2_estimate"] = prep.sigma2;
  out["dim"] = prep.problem.x0.size();
  out["warnings"] = prep.warnings;
  if (prep.params.cost) {
    out["bandwidth_bits_per_s"] = prep.params.cost->bandwidth_bits_per_s;
    out["comm_comp_ratio"] = comm_comp_ratio(prep.problem.x0.size(), *prep.params.cost);
  }
  return out.dump(2);
}

}  // namespace fedpaq
