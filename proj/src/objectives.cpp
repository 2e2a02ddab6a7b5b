#include "fedpaq/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedpaq/error.hpp"

namespace fedpaq {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

double dot(std::span<const double> a, std::span<const double> b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sum += a[i] * b[i];
  }
  return sum;
}

// log(1 + exp(-z)) without overflow.
double log1p_exp_neg(double z) { return z >= 0.0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z)); }

// 1 / (1 + exp(z)).
double sigmoid_neg(double z) {
  if (z >= 0.0) {
    const double e = std::exp(-z);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(z));
}

void check_dim(const Objective& obj, std::span<const double> x, const Dataset& data) {
  const std::size_t expected = parameter_dim(obj, data.cols);
  if (x.size() != expected) {
    throw InvalidInput("parameter vector has dimension " + std::to_string(x.size()) + ", objective expects " +
                       std::to_string(expected));
  }
}

int logistic_label(const Dataset& data, std::size_t row) {
  const int y = data.labels[row];
  if (y != 1 && y != -1) {
    throw InvalidInput("logistic objective: label " + std::to_string(y) + " at row " + std::to_string(row) +
                       " is not in {-1, +1}");
  }
  return y;
}

// Offsets into the flat MLP parameter vector.
struct MlpLayout {
  std::size_t in, hid, out;
  std::size_t w1() const { return 0; }
  std::size_t b1() const { return hid * in; }
  std::size_t w2() const { return hid * in + hid; }
  std::size_t b2() const { return hid * in + hid + out * hid; }
  std::size_t size() const { return b2() + out; }
};

MlpLayout layout(const Mlp& m, std::size_t cols) {
  if (cols != m.inputs) {
    throw InvalidInput("mlp: dataset has " + std::to_string(cols) + " features, network expects " +
                       std::to_string(m.inputs));
  }
  return {m.inputs, m.hidden, m.classes};
}

// Forward pass for one row. Fills hidden activations and softmax
// probabilities; returns the cross-entropy of the row.
double mlp_forward(const MlpLayout& lay, std::span<const double> x, std::span<const double> a, int label,
                   std::vector<double>& act, std::vector<double>& prob) {
  act.resize(lay.hid);
  prob.resize(lay.out);
  for (std::size_t h = 0; h < lay.hid; ++h) {
    act[h] = std::tanh(dot(x.subspan(lay.w1() + h * lay.in, lay.in), a) + x[lay.b1() + h]);
  }
  double top = -INFINITY;
  for (std::size_t c = 0; c < lay.out; ++c) {
    prob[c] = dot(x.subspan(lay.w2() + c * lay.hid, lay.hid), act) + x[lay.b2() + c];
    top = std::max(top, prob[c]);
  }
  const double logit_label = prob[static_cast<std::size_t>(label)];
  double z = 0.0;
  for (auto& v : prob) {
    v = std::exp(v - top);
    z += v;
  }
  for (auto& v : prob) {
    v /= z;
  }
  return std::log(z) + top - logit_label;
}

int mlp_label(const Mlp& m, const Dataset& data, std::size_t row) {
  const int y = data.labels[row];
  if (y < 0 || static_cast<std::size_t>(y) >= m.classes) {
    throw InvalidInput("mlp: label " + std::to_string(y) + " at row " + std::to_string(row) + " outside [0, " +
                       std::to_string(m.classes) + ")");
  }
  return y;
}

// Adds weight * (gradient of the data term of one row) to out.
void accumulate_sample(const Objective& obj, std::span<const double> x, const Dataset& data, std::size_t row,
                       double weight, std::span<double> out) {
  const auto a = data.row(row);
  std::visit(Overloaded{
                 [&](const LogisticL2&) {
                   const int y = logistic_label(data, row);
                   const double coef = -weight * y * sigmoid_neg(y * dot(a, x));
                   for (std::size_t j = 0; j < a.size(); ++j) {
                     out[j] += coef * a[j];
                   }
                 },
                 [&](const Mlp& m) {
                   const auto lay = layout(m, data.cols);
                   const int y = mlp_label(m, data, row);
                   thread_local std::vector<double> act, prob, dh;
                   mlp_forward(lay, x, a, y, act, prob);
                   prob[static_cast<std::size_t>(y)] -= 1.0;
                   dh.assign(lay.hid, 0.0);
                   for (std::size_t c = 0; c < lay.out; ++c) {
                     const double d = weight * prob[c];
                     const std::size_t w2 = lay.w2() + c * lay.hid;
                     for (std::size_t h = 0; h < lay.hid; ++h) {
                       out[w2 + h] += d * act[h];
                       dh[h] += d * x[w2 + h];
                     }
                     out[lay.b2() + c] += d;
                   }
                   for (std::size_t h = 0; h < lay.hid; ++h) {
                     const double d = dh[h] * (1.0 - act[h] * act[h]);
                     const std::size_t w1 = lay.w1() + h * lay.in;
                     for (std::size_t j = 0; j < lay.in; ++j) {
                       out[w1 + j] += d * a[j];
                     }
                     out[lay.b1() + h] += d;
                   }
                 },
             },
             obj);
}

void add_regularizer(const Objective& obj, std::span<const double> x, std::span<double> out) {
  if (const auto* lr = std::get_if<LogisticL2>(&obj); lr != nullptr && lr->lambda != 0.0) {
    for (std::size_t j = 0; j < x.size(); ++j) {
      out[j] += lr->lambda * x[j];
    }
  }
}

}  // namespace

void validate(const Dataset& data) {
  if (data.rows == 0 || data.cols == 0) {
    throw InvalidInput("dataset must have at least one row and one column");
  }
  if (data.features.size() != data.rows * data.cols || data.labels.size() != data.rows) {
    throw InvalidInput("dataset shape mismatch: " + std::to_string(data.features.size()) + " features and " +
                       std::to_string(data.labels.size()) + " labels for " + std::to_string(data.rows) + "x" +
                       std::to_string(data.cols));
  }
  for (double v : data.features) {
    if (!std::isfinite(v)) {
      throw InvalidInput("dataset contains a non-finite feature");
    }
  }
}

void validate(const Objective& obj) {
  std::visit(Overloaded{
                 [](const LogisticL2& lr) {
                   if (!(lr.lambda >= 0.0) || !std::isfinite(lr.lambda)) {
                     throw InvalidInput("logistic objective: lambda must be finite and nonnegative");
                   }
                 },
                 [](const Mlp& m) {
                   if (m.inputs == 0 || m.hidden == 0 || m.classes == 0) {
                     throw InvalidInput("mlp: layer sizes must be at least 1");
                   }
                 },
             },
             obj);
}

std::size_t parameter_dim(const Objective& obj, std::size_t cols) {
  return std::visit(Overloaded{
                        [&](const LogisticL2&) { return cols; },
                        [&](const Mlp& m) { return MlpLayout{m.inputs, m.hidden, m.classes}.size(); },
                    },
                    obj);
}

double loss(const Objective& obj, std::span<const double> x, const Dataset& data) {
  check_dim(obj, x, data);
  if (data.rows == 0) {
    throw InvalidInput("loss: empty dataset");
  }
  double total = 0.0;
  std::visit(Overloaded{
                 [&](const LogisticL2& lr) {
                   for (std::size_t i = 0; i < data.rows; ++i) {
                     const int y = logistic_label(data, i);
                     total += log1p_exp_neg(y * dot(data.row(i), x));
                   }
                   total /= static_cast<double>(data.rows);
                   total += 0.5 * lr.lambda * dot(x, x);
                 },
                 [&](const Mlp& m) {
                   const auto lay = layout(m, data.cols);
                   std::vector<double> act, prob;
                   for (std::size_t i = 0; i < data.rows; ++i) {
                     total += mlp_forward(lay, x, data.row(i), mlp_label(m, data, i), act, prob);
                   }
                   total /= static_cast<double>(data.rows);
                 },
             },
             obj);
  return total;
}

std::vector<double> grad(const Objective& obj, std::span<const double> x, const Dataset& data) {
  check_dim(obj, x, data);
  if (data.rows == 0) {
    throw InvalidInput("grad: empty dataset");
  }
  std::vector<double> out(x.size(), 0.0);
  const double weight = 1.0 / static_cast<double>(data.rows);
  for (std::size_t i = 0; i < data.rows; ++i) {
    accumulate_sample(obj, x, data, i, weight, out);
  }
  add_regularizer(obj, x, out);
  return out;
}

std::vector<double> batch_grad(const Objective& obj, std::span<const double> x, const Dataset& data,
                               std::span<const std::size_t> rows) {
  check_dim(obj, x, data);
  if (rows.empty()) {
    throw InvalidInput("batch_grad: empty batch");
  }
  std::vector<double> out(x.size(), 0.0);
  const double weight = 1.0 / static_cast<double>(rows.size());
  for (std::size_t row : rows) {
    if (row >= data.rows) {
      throw InvalidInput("batch_grad: row index out of range");
    }
    accumulate_sample(obj, x, data, row, weight, out);
  }
  add_regularizer(obj, x, out);
  return out;
}

std::vector<double> stoch_grad(const Objective& obj, std::span<const double> x, const Dataset& shard,
                               std::size_t batch, Stream& rng) {
  if (shard.rows == 0) {
    throw InvalidInput("stoch_grad: empty shard");
  }
  if (batch == 0 || batch > shard.rows) {
    throw InvalidInput("stoch_grad: batch " + std::to_string(batch) + " must be in [1, " +
                       std::to_string(shard.rows) + "]");
  }
  thread_local std::vector<std::size_t> rows;
  rows.resize(batch);
  for (auto& r : rows) {
    r = rng.uniform_index(shard.rows);
  }
  return batch_grad(obj, x, shard, rows);
}

std::vector<double> sample_grad(const Objective& obj, std::span<const double> x, const Dataset& data,
                                std::size_t row) {
  const std::size_t rows[] = {row};
  return batch_grad(obj, x, data, rows);
}

double gram_top_eigenvalue(const Dataset& data, std::size_t max_iters, double tol) {
  validate(data);
  Stream rng(derive_key(0, {static_cast<std::uint64_t>(StreamPurpose::kEstimate), data.cols}));
  std::vector<double> v(data.cols), w(data.cols);
  double norm = 0.0;
  for (auto& e : v) {
    e = rng.normal();
    norm += e * e;
  }
  norm = std::sqrt(norm);
  for (auto& e : v) {
    e /= norm;
  }
  double lambda = 0.0;
  for (std::size_t it = 0; it < max_iters; ++it) {
    std::fill(w.begin(), w.end(), 0.0);
    for (std::size_t i = 0; i < data.rows; ++i) {
      const auto a = data.row(i);
      const double av = dot(a, v);
      for (std::size_t j = 0; j < data.cols; ++j) {
        w[j] += av * a[j];
      }
    }
    double wn = 0.0;
    for (auto& e : w) {
      e /= static_cast<double>(data.rows);
      wn += e * e;
    }
    wn = std::sqrt(wn);
    if (wn == 0.0) {
      return 0.0;
    }
    const double next = wn;
    for (std::size_t j = 0; j < v.size(); ++j) {
      v[j] = w[j] / wn;
    }
    const bool converged = std::abs(next - lambda) <= tol * next;
    lambda = next;
    if (converged) {
      break;
    }
  }
  return lambda;
}

double hessian_top_eigenvalue(const Objective& obj, std::span<const double> x, const Dataset& data,
                              std::size_t iters) {
  check_dim(obj, x, data);
  Stream rng(derive_key(1, {static_cast<std::uint64_t>(StreamPurpose::kEstimate), x.size()}));
  std::vector<double> v(x.size()), xp(x.size()), xm(x.size());
  auto normalize = [](std::vector<double>& u) {
    double n = std::sqrt(dot(u, u));
    for (auto& e : u) {
      e /= n;
    }
    return n;
  };
  for (auto& e : v) {
    e = rng.normal();
  }
  normalize(v);
  const double h = 1e-5;
  double lambda = 0.0;
  for (std::size_t it = 0; it < iters; ++it) {
    for (std::size_t j = 0; j < x.size(); ++j) {
      xp[j] = x[j] + h * v[j];
      xm[j] = x[j] - h * v[j];
    }
    const auto gp = grad(obj, xp, data);
    const auto gm = grad(obj, xm, data);
    for (std::size_t j = 0; j < v.size(); ++j) {
      v[j] = (gp[j] - gm[j]) / (2.0 * h);
    }
    lambda = normalize(v);
    if (lambda == 0.0) {
      return 0.0;
    }
  }
  return lambda;
}

double strong_convexity(const Objective& obj) {
  if (const auto* lr = std::get_if<LogisticL2>(&obj)) {
    return lr->lambda;
  }
  throw Unsupported("strong convexity is undefined for the mlp objective");
}

Curvature constants(const Objective& obj, const Dataset& data) {
  validate(obj);
  validate(data);
  return std::visit(Overloaded{
                        [&](const LogisticL2& lr) {
                          return Curvature{gram_top_eigenvalue(data) / 4.0 + lr.lambda, lr.lambda};
                        },
                        [&](const Mlp&) {
                          const auto x0 = initial_point(obj, data.cols, 0);
                          return Curvature{hessian_top_eigenvalue(obj, x0, data), std::nullopt};
                        },
                    },
                    obj);
}

double gradient_variance(const Objective& obj, const Dataset& data, std::span<const std::vector<double>> points) {
  double worst = 0.0;
  for (const auto& x : points) {
    const auto full = grad(obj, x, data);
    std::vector<double> g(x.size());
    double total = 0.0;
    for (std::size_t i = 0; i < data.rows; ++i) {
      std::fill(g.begin(), g.end(), 0.0);
      accumulate_sample(obj, x, data, i, 1.0, g);
      add_regularizer(obj, x, g);
      for (std::size_t j = 0; j < g.size(); ++j) {
        total += (g[j] - full[j]) * (g[j] - full[j]);
      }
    }
    worst = std::max(worst, total / static_cast<double>(data.rows));
  }
  return worst;
}

std::vector<double> initial_point(const Objective& obj, std::size_t cols, std::uint64_t seed) {
  validate(obj);
  const std::size_t dim = parameter_dim(obj, cols);
  std::vector<double> x(dim, 0.0);
  if (const auto* m = std::get_if<Mlp>(&obj)) {
    const MlpLayout lay{m->inputs, m->hidden, m->classes};
    Stream rng(derive_key(seed, {static_cast<std::uint64_t>(StreamPurpose::kInit)}));
    const double s1 = 1.0 / std::sqrt(static_cast<double>(lay.in));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(lay.hid));
    for (std::size_t i = lay.w1(); i < lay.b1(); ++i) {
      x[i] = s1 * rng.normal();
    }
    for (std::size_t i = lay.w2(); i < lay.b2(); ++i) {
      x[i] = s2 * rng.normal();
    }
  }
  return x;
}

}  // namespace fedpaq
