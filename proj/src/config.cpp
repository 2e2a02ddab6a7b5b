#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "fedpaq/error.hpp"
#include "fedpaq/harness.hpp"

namespace fedpaq {
namespace {

namespace pt = boost::property_tree;

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys = {
      {"problem",
       {"kind", "source", "samples", "features", "lambda", "classes", "hidden", "teacher_hidden", "idx_images",
        "idx_labels", "keep_labels", "dataset_file", "data_seed"}},
      {"federation", {"nodes", "participants", "period", "rounds", "iterations", "batch", "threads", "global_view"}},
      {"quantizer", {"mode", "levels", "float_bits"}},
      {"schedule", {"kind", "eta", "coeff", "mu", "L"}},
      {"cost", {"bandwidth", "ratio", "shift", "scale"}},
      {"run", {"seed", "repeats", "target_loss"}},
      {"sweep", {"levels", "participants", "period", "points"}},
  };
  return keys;
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) {
    return {};
  }
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    parts.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) {
      break;
    }
    start = pos + 1;
  }
  return parts;
}

template <class T>
T parse_number(const std::string& where, const std::string& text) {
  T value{};
  const auto t = trim(text);
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
    throw ConfigError(where + ": cannot parse '" + text + "' as a number");
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(value)) {
      throw ConfigError(where + ": value must be finite");
    }
  }
  return value;
}

std::size_t parse_count(const std::string& where, const std::string& text) {
  const auto t = trim(text);
  if (!t.empty() && t.front() == '-') {
    throw ConfigError(where + ": must be nonnegative, got " + t);
  }
  return parse_number<std::size_t>(where, t);
}

bool parse_bool(const std::string& where, const std::string& text) {
  const auto t = trim(text);
  if (t == "true" || t == "1" || t == "yes" || t == "on") {
    return true;
  }
  if (t == "false" || t == "0" || t == "no" || t == "off") {
    return false;
  }
  throw ConfigError(where + ": expected true or false, got '" + t + "'");
}

QuantizerMode parse_levels_item(const std::string& where, const std::string& text) {
  const auto t = trim(text);
  if (t == "identity" || t == "none") {
    return Identity{};
  }
  const auto s = parse_count(where, t);
  if (s < 1 || s > UINT32_MAX) {
    throw ConfigError(where + ": quantization level count must be in [1, 2^32), got " + t);
  }
  return LowPrecision{static_cast<std::uint32_t>(s)};
}

template <class T, class Fn>
std::vector<T> parse_list(const std::string& where, const std::string& text, Fn&& item) {
  std::vector<T> out;
  if (trim(text).empty()) {
    throw ConfigError(where + ": empty sweep list");
  }
  for (const auto& part : split(text, ',')) {
    if (part.empty()) {
      throw ConfigError(where + ": empty list entry");
    }
    out.push_back(item(where, part));
  }
  return out;
}

SweepPoint parse_point(const std::string& where, const std::string& text) {
  SweepPoint point;
  std::istringstream in(text);
  std::string token;
  bool any = false;
  while (in >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(where + ": expected key=value in point '" + text + "'");
    }
    const auto key = token.substr(0, eq);
    const auto value = token.substr(eq + 1);
    if (key == "levels") {
      point.quantizer = parse_levels_item(where, value);
    } else if (key == "participants") {
      point.participants = parse_count(where, value);
    } else if (key == "period") {
      point.period = parse_count(where, value);
    } else {
      throw ConfigError(where + ": unknown point key '" + key + "' (expected levels, participants, period)");
    }
    any = true;
  }
  if (!any) {
    throw ConfigError(where + ": empty sweep point");
  }
  return point;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string quantizer_label(const QuantizerMode& mode) {
  if (const auto* lp = std::get_if<LowPrecision>(&mode)) {
    return std::to_string(lp->levels);
  }
  return "identity";
}

std::size_t RunConfig::round_count() const {
  if (rounds) {
    return *rounds;
  }
  if (iterations) {
    return *iterations / period;
  }
  return 0;
}

void validate(const RunConfig& c) {
  const auto& p = c.problem;
  if (c.nodes < 1) {
    throw ConfigError("federation.nodes must be at least 1");
  }
  if (c.participants < 1 || c.participants > c.nodes) {
    throw ConfigError("federation.participants r = " + std::to_string(c.participants) +
                      " must be in [1, nodes n = " + std::to_string(c.nodes) + "]");
  }
  if (c.period < 1) {
    throw ConfigError("federation.period tau must be at least 1");
  }
  if (c.rounds.has_value() == c.iterations.has_value()) {
    throw ConfigError("federation: set exactly one of rounds (K) and iterations (T = K * tau)");
  }
  if (c.iterations && *c.iterations % c.period != 0) {
    throw ConfigError("federation.iterations T = " + std::to_string(*c.iterations) +
                      " is not a multiple of period tau = " + std::to_string(c.period));
  }
  if (c.batch < 1) {
    throw ConfigError("federation.batch must be at least 1");
  }
  if (c.threads < 1) {
    throw ConfigError("federation.threads must be at least 1");
  }
  if (c.repeats < 1) {
    throw ConfigError("run.repeats must be at least 1");
  }
  if (c.float_bits != 32 && c.float_bits != 64) {
    throw ConfigError("quantizer.float_bits must be 32 or 64, got " + std::to_string(c.float_bits));
  }
  if (const auto* lp = std::get_if<LowPrecision>(&c.quantizer); lp != nullptr && lp->levels < 1) {
    throw ConfigError("quantizer.levels must be at least 1");
  }

  if (p.kind == ProblemKind::kLogistic && !(p.lambda >= 0.0)) {
    throw ConfigError("problem.lambda must be nonnegative");
  }
  if (p.kind == ProblemKind::kMlp && (p.classes < 2 || p.hidden < 1 || p.teacher_hidden < 1)) {
    throw ConfigError("problem: mlp needs classes >= 2 and hidden, teacher_hidden >= 1");
  }
  if (p.source == DataSource::kSynthetic) {
    if (p.features < 1) {
      throw ConfigError("problem.features must be at least 1");
    }
    if (p.samples < c.nodes) {
      throw ConfigError("problem.samples N = " + std::to_string(p.samples) + " is smaller than nodes n = " +
                        std::to_string(c.nodes));
    }
    if (p.samples / c.nodes < c.batch) {
      throw ConfigError("problem: " + std::to_string(p.samples / c.nodes) +
                        " samples per node is smaller than batch " + std::to_string(c.batch));
    }
    if (p.kind == ProblemKind::kLogistic && !(p.lambda > 0.0)) {
      throw ConfigError("problem: synthetic logistic data needs lambda > 0 for a unique optimum");
    }
    if (p.kind == ProblemKind::kLogistic && p.samples < p.features) {
      throw ConfigError("problem: synthetic logistic data needs samples >= features");
    }
  }
  if (p.source == DataSource::kIdx && (p.idx_images.empty() || p.idx_labels.empty())) {
    throw ConfigError("problem: source = idx needs idx_images and idx_labels");
  }
  if (p.source == DataSource::kFile && p.dataset_file.empty()) {
    throw ConfigError("problem: source = file needs dataset_file");
  }
  if (p.keep_labels && p.keep_labels->empty()) {
    throw ConfigError("problem.keep_labels is empty");
  }

  const auto& s = c.schedule;
  if (!(s.coeff > 0.0)) {
    throw ConfigError("schedule.coeff must be positive");
  }
  if (s.kind == ScheduleKind::kConstant && !(s.eta > 0.0)) {
    throw ConfigError("schedule.eta must be positive");
  }
  if (s.mu && !(*s.mu > 0.0)) {
    throw ConfigError("schedule.mu must be positive");
  }
  if (s.L && !(*s.L > 0.0)) {
    throw ConfigError("schedule.L must be positive");
  }
  if (s.kind == ScheduleKind::kStronglyConvex && !s.mu &&
      !(p.kind == ProblemKind::kLogistic && p.lambda > 0.0)) {
    throw ConfigError("schedule: strongly_convex needs mu, or a logistic problem with lambda > 0");
  }

  if (c.cost) {
    if (c.cost->bandwidth.has_value() == c.cost->ratio.has_value()) {
      throw ConfigError("cost: set exactly one of bandwidth and ratio");
    }
    if (c.cost->bandwidth && !(*c.cost->bandwidth > 0.0)) {
      throw ConfigError("cost.bandwidth must be positive");
    }
    if (c.cost->ratio && !(*c.cost->ratio > 0.0)) {
      throw ConfigError("cost.ratio must be positive");
    }
    if (!(c.cost->shift >= 0.0) || !(c.cost->scale > 0.0)) {
      throw ConfigError("cost: need shift >= 0 and scale > 0");
    }
  }

  for (std::size_t r : c.sweep.participants) {
    if (r < 1 || r > c.nodes) {
      throw ConfigError("sweep.participants: r = " + std::to_string(r) + " must be in [1, nodes n = " +
                        std::to_string(c.nodes) + "]");
    }
  }
  for (std::size_t tau : c.sweep.periods) {
    if (tau < 1 || (c.iterations && *c.iterations % tau != 0)) {
      throw ConfigError("sweep.period: tau = " + std::to_string(tau) + " must be >= 1 and divide iterations");
    }
  }
  for (const auto& point : c.sweep.points) {
    if (point.participants && (*point.participants < 1 || *point.participants > c.nodes)) {
      throw ConfigError("sweep.points: r = " + std::to_string(*point.participants) +
                        " must be in [1, nodes n = " + std::to_string(c.nodes) + "]");
    }
    if (point.period && (*point.period < 1 || (c.iterations && *c.iterations % *point.period != 0))) {
      throw ConfigError("sweep.points: tau = " + std::to_string(*point.period) +
                        " must be >= 1 and divide iterations");
    }
  }
}

RunConfig parse_config(const std::string& text) {
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }

  for (const auto& [section, body] : tree) {
    const auto it = known_keys().find(section);
    if (it == known_keys().end()) {
      throw ConfigError("unknown section or top-level key '" + section + "'");
    }
    if (!body.data().empty()) {
      throw ConfigError("'" + section + "' must be a [section]");
    }
    for (const auto& [key, value] : body) {
      if (!it->second.contains(key)) {
        throw ConfigError("unknown key '" + section + "." + key + "'");
      }
    }
  }

  auto get = [&](const std::string& section, const std::string& key) -> std::optional<std::string> {
    if (auto v = tree.get_optional<std::string>(pt::ptree::path_type(section + "/" + key, '/'))) {
      return trim(*v);
    }
    return std::nullopt;
  };

  RunConfig c;
  auto& p = c.problem;
  if (auto v = get("problem", "kind")) {
    if (*v == "logistic") {
      p.kind = ProblemKind::kLogistic;
    } else if (*v == "mlp") {
      p.kind = ProblemKind::kMlp;
    } else {
      throw ConfigError("problem.kind must be logistic or mlp, got '" + *v + "'");
    }
  }
  if (auto v = get("problem", "source")) {
    if (*v == "synthetic") {
      p.source = DataSource::kSynthetic;
    } else if (*v == "idx") {
      p.source = DataSource::kIdx;
    } else if (*v == "file") {
      p.source = DataSource::kFile;
    } else {
      throw ConfigError("problem.source must be synthetic, idx or file, got '" + *v + "'");
    }
  }
  if (auto v = get("problem", "samples")) p.samples = parse_count("problem.samples", *v);
  if (auto v = get("problem", "features")) p.features = parse_count("problem.features", *v);
  if (auto v = get("problem", "lambda")) p.lambda = parse_number<double>("problem.lambda", *v);
  if (auto v = get("problem", "classes")) p.classes = parse_count("problem.classes", *v);
  if (auto v = get("problem", "hidden")) p.hidden = parse_count("problem.hidden", *v);
  if (auto v = get("problem", "teacher_hidden")) p.teacher_hidden = parse_count("problem.teacher_hidden", *v);
  if (auto v = get("problem", "idx_images")) p.idx_images = *v;
  if (auto v = get("problem", "idx_labels")) p.idx_labels = *v;
  if (auto v = get("problem", "dataset_file")) p.dataset_file = *v;
  if (auto v = get("problem", "data_seed")) p.data_seed = parse_number<std::uint64_t>("problem.data_seed", *v);
  if (auto v = get("problem", "keep_labels")) {
    if (*v != "all") {
      std::set<int> keep;
      if (!v->empty()) {
        for (const auto& part : split(*v, ',')) {
          keep.insert(parse_number<int>("problem.keep_labels", part));
        }
      }
      p.keep_labels = keep;
    }
  }

  const auto nodes = get("federation", "nodes");
  if (!nodes) {
    throw ConfigError("missing required key federation.nodes");
  }
  c.nodes = parse_count("federation.nodes", *nodes);
  c.participants = c.nodes;
  if (auto v = get("federation", "participants")) c.participants = parse_count("federation.participants", *v);
  if (auto v = get("federation", "period")) c.period = parse_count("federation.period", *v);
  if (auto v = get("federation", "rounds")) c.rounds = parse_count("federation.rounds", *v);
  if (auto v = get("federation", "iterations")) c.iterations = parse_count("federation.iterations", *v);
  if (auto v = get("federation", "batch")) c.batch = parse_count("federation.batch", *v);
  if (auto v = get("federation", "threads")) c.threads = parse_count("federation.threads", *v);
  if (auto v = get("federation", "global_view")) c.global_view = parse_bool("federation.global_view", *v);

  const auto mode = get("quantizer", "mode").value_or("identity");
  const auto levels = get("quantizer", "levels");
  if (mode == "identity") {
    if (levels) {
      throw ConfigError("quantizer.levels is set but quantizer.mode is identity");
    }
    c.quantizer = Identity{};
  } else if (mode == "lowprecision") {
    if (!levels) {
      throw ConfigError("missing required key quantizer.levels for mode lowprecision");
    }
    c.quantizer = parse_levels_item("quantizer.levels", *levels);
    if (std::holds_alternative<Identity>(c.quantizer)) {
      throw ConfigError("quantizer.levels must be a positive integer");
    }
  } else {
    throw ConfigError("quantizer.mode must be identity or lowprecision, got '" + mode + "'");
  }
  if (auto v = get("quantizer", "float_bits")) {
    c.float_bits = static_cast<unsigned>(parse_count("quantizer.float_bits", *v));
  }

  auto& s = c.schedule;
  if (auto v = get("schedule", "kind")) {
    if (*v == "constant") {
      s.kind = ScheduleKind::kConstant;
    } else if (*v == "strongly_convex") {
      s.kind = ScheduleKind::kStronglyConvex;
    } else if (*v == "nonconvex") {
      s.kind = ScheduleKind::kNonConvex;
    } else {
      throw ConfigError("schedule.kind must be constant, strongly_convex or nonconvex, got '" + *v + "'");
    }
  }
  if (auto v = get("schedule", "eta")) s.eta = parse_number<double>("schedule.eta", *v);
  if (auto v = get("schedule", "coeff")) s.coeff = parse_number<double>("schedule.coeff", *v);
  if (auto v = get("schedule", "mu")) s.mu = parse_number<double>("schedule.mu", *v);
  if (auto v = get("schedule", "L")) s.L = parse_number<double>("schedule.L", *v);

  if (tree.get_child_optional("cost")) {
    CostSpec cost;
    if (auto v = get("cost", "bandwidth")) cost.bandwidth = parse_number<double>("cost.bandwidth", *v);
    if (auto v = get("cost", "ratio")) cost.ratio = parse_number<double>("cost.ratio", *v);
    if (auto v = get("cost", "shift")) cost.shift = parse_number<double>("cost.shift", *v);
    if (auto v = get("cost", "scale")) cost.scale = parse_number<double>("cost.scale", *v);
    c.cost = cost;
  }

  if (auto v = get("run", "seed")) c.seed = parse_number<std::uint64_t>("run.seed", *v);
  if (auto v = get("run", "repeats")) c.repeats = parse_count("run.repeats", *v);
  if (auto v = get("run", "target_loss")) c.target_loss = parse_number<double>("run.target_loss", *v);

  if (auto v = get("sweep", "levels")) {
    c.sweep.levels = parse_list<QuantizerMode>("sweep.levels", *v, parse_levels_item);
  }
  if (auto v = get("sweep", "participants")) {
    c.sweep.participants = parse_list<std::size_t>("sweep.participants", *v, parse_count);
  }
  if (auto v = get("sweep", "period")) {
    c.sweep.periods = parse_list<std::size_t>("sweep.period", *v, parse_count);
  }
  if (auto v = get("sweep", "points")) {
    c.sweep.points = parse_list<SweepPoint>("sweep.points", *v, parse_point);
  }

  validate(c);
  return c;
}

RunConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot read config file " + path.string());
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

std::string render_config(const RunConfig& c) {
  std::ostringstream out;
  const auto& p = c.problem;
  out << "[problem]\n";
  out << "kind = " << (p.kind == ProblemKind::kLogistic ? "logistic" : "mlp") << "\n";
  out << "source = "
      << (p.source == DataSource::kSynthetic ? "synthetic" : p.source == DataSource::kIdx ? "idx" : "file") << "\n";
  out << "samples = " << p.samples << "\n";
  out << "features = " << p.features << "\n";
  out << "lambda = " << format_double(p.lambda) << "\n";
  out << "classes = " << p.classes << "\n";
  out << "hidden = " << p.hidden << "\n";
  out << "teacher_hidden = " << p.teacher_hidden << "\n";
  if (!p.idx_images.empty()) out << "idx_images = " << p.idx_images.string() << "\n";
  if (!p.idx_labels.empty()) out << "idx_labels = " << p.idx_labels.string() << "\n";
  if (!p.dataset_file.empty()) out << "dataset_file = " << p.dataset_file.string() << "\n";
  if (p.keep_labels) {
    out << "keep_labels = ";
    bool first = true;
    for (int label : *p.keep_labels) {
      out << (first ? "" : ",") << label;
      first = false;
    }
    out << "\n";
  }
  out << "data_seed = " << p.data_seed << "\n";

  out << "\n[federation]\n";
  out << "nodes = " << c.nodes << "\n";
  out << "participants = " << c.participants << "\n";
  out << "period = " << c.period << "\n";
  if (c.rounds) out << "rounds = " << *c.rounds << "\n";
  if (c.iterations) out << "iterations = " << *c.iterations << "\n";
  out << "batch = " << c.batch << "\n";
  out << "threads = " << c.threads << "\n";
  out << "global_view = " << (c.global_view ? "true" : "false") << "\n";

  out << "\n[quantizer]\n";
  if (const auto* lp = std::get_if<LowPrecision>(&c.quantizer)) {
    out << "mode = lowprecision\nlevels = " << lp->levels << "\n";
  } else {
    out << "mode = identity\n";
  }
  out << "float_bits = " << c.float_bits << "\n";

  const auto& s = c.schedule;
  out << "\n[schedule]\n";
  out << "kind = "
      << (s.kind == ScheduleKind::kConstant         ? "constant"
          : s.kind == ScheduleKind::kStronglyConvex ? "strongly_convex"
                                                    : "nonconvex")
      << "\n";
  out << "eta = " << format_double(s.eta) << "\n";
  out << "coeff = " << format_double(s.coeff) << "\n";
  if (s.mu) out << "mu = " << format_double(*s.mu) << "\n";
  if (s.L) out << "L = " << format_double(*s.L) << "\n";

  if (c.cost) {
    out << "\n[cost]\n";
    if (c.cost->bandwidth) out << "bandwidth = " << format_double(*c.cost->bandwidth) << "\n";
    if (c.cost->ratio) out << "ratio = " << format_double(*c.cost->ratio) << "\n";
    out << "shift = " << format_double(c.cost->shift) << "\n";
    out << "scale = " << format_double(c.cost->scale) << "\n";
  }

  out << "\n[run]\n";
  out << "seed = " << c.seed << "\n";
  out << "repeats = " << c.repeats << "\n";
  if (c.target_loss) out << "target_loss = " << format_double(*c.target_loss) << "\n";

  if (!c.sweep.empty()) {
    out << "\n[sweep]\n";
    auto join = [&](const auto& list, auto&& fmt) {
      std::string text;
      for (const auto& item : list) {
        text += (text.empty() ? "" : ",") + fmt(item);
      }
      return text;
    };
    if (!c.sweep.levels.empty()) out << "levels = " << join(c.sweep.levels, quantizer_label) << "\n";
    auto num = [](std::size_t v) { return std::to_string(v); };
    if (!c.sweep.participants.empty()) out << "participants = " << join(c.sweep.participants, num) << "\n";
    if (!c.sweep.periods.empty()) out << "period = " << join(c.sweep.periods, num) << "\n";
    if (!c.sweep.points.empty()) {
      out << "points = "
          << join(c.sweep.points,
                  [](const SweepPoint& pt) {
                    std::string t;
                    if (pt.quantizer) t += "levels=" + quantizer_label(*pt.quantizer);
                    if (pt.participants) t += (t.empty() ? "" : " ") + std::string("participants=") + std::to_string(*pt.participants);
                    if (pt.period) t += (t.empty() ? "" : " ") + std::string("period=") + std::to_string(*pt.period);
                    return t;
                  })
          << "\n";
    }
  }
  return out.str();
}

}  // namespace fedpaq
