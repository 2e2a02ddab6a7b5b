#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "fedpaq/rng.hpp"

namespace fedpaq {

/// Row-major sample matrix with one integer label per row. Logistic tasks
/// use labels in {-1, +1}; multiclass tasks use class indices.
struct Dataset {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> features;
  std::vector<int> labels;

  std::span<const double> row(std::size_t i) const noexcept { return {features.data() + i * cols, cols}; }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Throws InvalidInput unless the shapes agree, N >= 1 and all features are finite.
void validate(const Dataset& data);

/// Mean logistic loss plus (lambda / 2) ||x||^2.
struct LogisticL2 {
  double lambda = 0.0;
};

/// One hidden tanh layer followed by softmax cross-entropy. Parameters are
/// laid out as [W1 (hidden x inputs), b1, W2 (classes x hidden), b2].
struct Mlp {
  std::size_t inputs = 1;
  std::size_t hidden = 32;
  std::size_t classes = 2;
};

using Objective = std::variant<LogisticL2, Mlp>;

/// Number of model parameters for the objective on data with `cols` features.
std::size_t parameter_dim(const Objective& obj, std::size_t cols);

/// Throws InvalidInput if the objective's own parameters are invalid.
void validate(const Objective& obj);

double loss(const Objective& obj, std::span<const double> x, const Dataset& data);

/// Exact full-batch gradient.
std::vector<double> grad(const Objective& obj, std::span<const double> x, const Dataset& data);

/// Mean gradient over `batch` rows drawn uniformly with replacement.
std::vector<double> stoch_grad(const Objective& obj, std::span<const double> x, const Dataset& shard,
                               std::size_t batch, Stream& rng);

/// Mean gradient over the given rows (duplicates allowed).
std::vector<double> batch_grad(const Objective& obj, std::span<const double> x, const Dataset& data,
                               std::span<const std::size_t> rows);

/// Gradient of the loss of a single row, regularizer included.
std::vector<double> sample_grad(const Objective& obj, std::span<const double> x, const Dataset& data,
                                std::size_t row);

struct Curvature {
  double smoothness = 0.0;                  // L
  std::optional<double> strong_convexity;  // mu; absent for the MLP
  bool strongly_convex() const noexcept { return strong_convexity.has_value() && *strong_convexity > 0.0; }
};

/// Logistic: L = lambda_max(A^T A / N) / 4 + lambda and mu = lambda.
/// MLP: L is a local estimate (largest Hessian eigenvalue magnitude at the
/// default initial point); mu is absent.
Curvature constants(const Objective& obj, const Dataset& data);

/// Strong convexity constant. Throws Unsupported for the MLP.
double strong_convexity(const Objective& obj);

/// Largest eigenvalue of A^T A / N by power iteration.
double gram_top_eigenvalue(const Dataset& data, std::size_t max_iters = 10000, double tol = 1e-13);

/// Largest |eigenvalue| of the Hessian at x, by power iteration on
/// finite-difference Hessian-vector products.
double hessian_top_eigenvalue(const Objective& obj, std::span<const double> x, const Dataset& data,
                              std::size_t iters = 100);

/// Per-sample gradient variance (1/N) sum ||g_j(x) - grad(x)||^2, maximized
/// over the given points. Divide by the batch size for minibatch noise.
double gradient_variance(const Objective& obj, const Dataset& data, std::span<const std::vector<double>> points);

/// Zero vector for logistic regression; scaled Gaussian weights for the MLP.
std::vector<double> initial_point(const Objective& obj, std::size_t cols, std::uint64_t seed);

}  // namespace fedpaq
