#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <vector>

#include "fedpaq/objectives.hpp"

namespace fedpaq {

/// One node's local dataset.
struct NodeShard {
  std::size_t node_id = 0;
  Dataset data;
  std::uint64_t stream_key = 0;
};

/// Logistic regression testbed with a known optimum.
struct SyntheticLogReg {
  Dataset data;
  std::vector<double> x_star;
  double f_star = 0.0;
};

/// Gaussian features, labels drawn from a planted logistic model, and the
/// regularized optimum computed by damped Newton to ||grad|| <= 1e-10.
SyntheticLogReg gen_synthetic_logreg(std::size_t rows, std::size_t cols, double lambda, std::uint64_t seed);

/// Gaussian features labelled by the argmax of a random tanh teacher network.
Dataset gen_synthetic_teacher(std::size_t rows, std::size_t cols, std::size_t classes, std::size_t hidden,
                              std::uint64_t seed);

/// Minimizer of the L2-regularized logistic loss (lambda > 0).
std::vector<double> solve_logreg(const Dataset& data, double lambda, double grad_tol = 1e-10,
                                 std::size_t max_iters = 100);

/// Random permutation split into n contiguous blocks whose sizes differ by
/// at most one. Throws InvalidInput if n == 0 or rows < n.
std::vector<NodeShard> partition_iid(const Dataset& data, std::size_t n, std::uint64_t seed);

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
/// Pixels are scaled to [0, 1]. With keep_labels, only those labels are
/// retained; exactly two kept labels are remapped to -1 (smaller) and +1.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 const std::optional<std::set<int>>& keep_labels = std::nullopt);

/// Columnar binary dump: 16-byte big-endian header (magic "FPQD", version,
/// rows, cols), then each feature column as big-endian float64, then the
/// labels as big-endian int32.
void save_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

inline constexpr std::uint32_t kDatasetMagic = 0x46505144;  // "FPQD"
inline constexpr std::uint32_t kDatasetVersion = 1;

}  // namespace fedpaq
