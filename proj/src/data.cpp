#include "fedpaq/data.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <string>

#include "fedpaq/error.hpp"

namespace fedpaq {
namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw InvalidInput("cannot open " + path.string());
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<std::uint8_t>& bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void put_be(std::vector<std::uint8_t>& out, std::uint64_t value, int bytes) {
  for (int i = bytes - 1; i >= 0; --i) {
    out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
  }
}

std::uint64_t get_be(const std::vector<std::uint8_t>& in, std::size_t offset, int bytes) {
  std::uint64_t value = 0;
  for (int i = 0; i < bytes; ++i) {
    value = (value << 8) | in[offset + static_cast<std::size_t>(i)];
  }
  return value;
}

double stable_sigmoid(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

std::vector<double> solve_logreg(const Dataset& data, double lambda, double grad_tol, std::size_t max_iters) {
  validate(data);
  if (!(lambda > 0.0)) {
    throw InvalidInput("solve_logreg: lambda must be positive");
  }
  const Objective obj = LogisticL2{lambda};
  const std::size_t p = data.cols;
  const auto n = static_cast<double>(data.rows);
  std::vector<double> x(p, 0.0);
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> a(
      data.features.data(), static_cast<Eigen::Index>(data.rows), static_cast<Eigen::Index>(p));

  for (std::size_t it = 0; it < max_iters; ++it) {
    const auto g = grad(obj, x, data);
    double gnorm = 0.0;
    for (double v : g) {
      gnorm += v * v;
    }
    if (std::sqrt(gnorm) <= grad_tol) {
      return x;
    }
    const Eigen::Map<const Eigen::VectorXd> xv(x.data(), static_cast<Eigen::Index>(p));
    const Eigen::VectorXd margins = a * xv;
    Eigen::VectorXd weights(margins.size());
    for (Eigen::Index i = 0; i < margins.size(); ++i) {
      const double s = stable_sigmoid(margins[i]);
      weights[i] = s * (1.0 - s) / n;
    }
    Eigen::MatrixXd hessian = a.transpose() * weights.asDiagonal() * a;
    hessian.diagonal().array() += lambda;
    const Eigen::VectorXd step =
        hessian.ldlt().solve(-Eigen::Map<const Eigen::VectorXd>(g.data(), static_cast<Eigen::Index>(p)));

    // Backtracking on the loss; Newton steps are accepted in full near the optimum.
    const double f0 = loss(obj, x, data);
    double t = 1.0;
    std::vector<double> trial(p);
    for (int ls = 0; ls < 60; ++ls) {
      for (std::size_t j = 0; j < p; ++j) {
        trial[j] = x[j] + t * step[static_cast<Eigen::Index>(j)];
      }
      if (loss(obj, trial, data) <= f0 + 1e-4 * t * step.dot(Eigen::Map<const Eigen::VectorXd>(
                                                          g.data(), static_cast<Eigen::Index>(p))) ||
          t < 1e-12) {
        break;
      }
      t *= 0.5;
    }
    x = trial;
  }
  const auto g = grad(obj, x, data);
  double gnorm = 0.0;
  for (double v : g) {
    gnorm += v * v;
  }
  if (std::sqrt(gnorm) > grad_tol) {
    throw Error("solve_logreg: did not reach gradient norm " + std::to_string(grad_tol));
  }
  return x;
}

SyntheticLogReg gen_synthetic_logreg(std::size_t rows, std::size_t cols, double lambda, std::uint64_t seed) {
  if (cols == 0 || rows < cols) {
    throw InvalidInput("gen_synthetic_logreg: need rows >= cols >= 1");
  }
  if (!(lambda > 0.0)) {
    throw InvalidInput("gen_synthetic_logreg: lambda must be positive");
  }
  Stream rng(derive_key(seed, {static_cast<std::uint64_t>(StreamPurpose::kData), 0}));
  std::vector<double> planted(cols);
  const double w_scale = 2.0 / std::sqrt(static_cast<double>(cols));
  for (auto& w : planted) {
    w = w_scale * rng.normal();
  }
  SyntheticLogReg out;
  out.data.rows = rows;
  out.data.cols = cols;
  out.data.features.resize(rows * cols);
  out.data.labels.resize(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    double margin = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double v = rng.normal();
      out.data.features[i * cols + j] = v;
      margin += v * planted[j];
    }
    out.data.labels[i] = rng.uniform() < stable_sigmoid(margin) ? 1 : -1;
  }
  out.x_star = solve_logreg(out.data, lambda);
  out.f_star = loss(LogisticL2{lambda}, out.x_star, out.data);
  return out;
}

Dataset gen_synthetic_teacher(std::size_t rows, std::size_t cols, std::size_t classes, std::size_t hidden,
                              std::uint64_t seed) {
  if (rows == 0 || cols == 0 || classes < 2 || hidden == 0) {
    throw InvalidInput("gen_synthetic_teacher: need rows, cols, hidden >= 1 and classes >= 2");
  }
  Stream rng(derive_key(seed, {static_cast<std::uint64_t>(StreamPurpose::kData), 1}));
  std::vector<double> w1(hidden * cols), w2(classes * hidden);
  for (auto& w : w1) {
    w = rng.normal() / std::sqrt(static_cast<double>(cols));
  }
  for (auto& w : w2) {
    w = 3.0 * rng.normal() / std::sqrt(static_cast<double>(hidden));
  }
  Dataset data;
  data.rows = rows;
  data.cols = cols;
  data.features.resize(rows * cols);
  data.labels.resize(rows);
  std::vector<double> act(hidden);
  for (std::size_t i = 0; i < rows; ++i) {
    double* a = &data.features[i * cols];
    for (std::size_t j = 0; j < cols; ++j) {
      a[j] = rng.normal();
    }
    for (std::size_t h = 0; h < hidden; ++h) {
      double z = 0.0;
      for (std::size_t j = 0; j < cols; ++j) {
        z += w1[h * cols + j] * a[j];
      }
      act[h] = std::tanh(z);
    }
    std::size_t best = 0;
    double best_logit = -INFINITY;
    for (std::size_t c = 0; c < classes; ++c) {
      double z = 0.0;
      for (std::size_t h = 0; h < hidden; ++h) {
        z += w2[c * hidden + h] * act[h];
      }
      if (z > best_logit) {
        best_logit = z;
        best = c;
      }
    }
    data.labels[i] = static_cast<int>(best);
  }
  return data;
}

std::vector<NodeShard> partition_iid(const Dataset& data, std::size_t n, std::uint64_t seed) {
  validate(data);
  if (n == 0) {
    throw InvalidInput("partition_iid: n must be positive");
  }
  if (data.rows < n) {
    throw InvalidInput("partition_iid: " + std::to_string(data.rows) + " samples cannot cover " +
                       std::to_string(n) + " nodes");
  }
  std::vector<std::size_t> order(data.rows);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // A single node keeps the original order.
  if (n > 1) {
    Stream rng(derive_key(seed, {static_cast<std::uint64_t>(StreamPurpose::kPartition)}));
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      std::swap(order[i], order[rng.uniform_index(i + 1)]);
    }
  }

  std::vector<NodeShard> shards(n);
  const std::size_t base = data.rows / n;
  const std::size_t extra = data.rows % n;
  std::size_t next = 0;
  for (std::size_t node = 0; node < n; ++node) {
    const std::size_t size = base + (node < extra ? 1 : 0);
    NodeShard& shard = shards[node];
    shard.node_id = node;
    shard.stream_key = derive_key(seed, {static_cast<std::uint64_t>(StreamPurpose::kPartition), node});
    shard.data.rows = size;
    shard.data.cols = data.cols;
    shard.data.features.reserve(size * data.cols);
    shard.data.labels.reserve(size);
    for (std::size_t k = 0; k < size; ++k, ++next) {
      const auto row = data.row(order[next]);
      shard.data.features.insert(shard.data.features.end(), row.begin(), row.end());
      shard.data.labels.push_back(data.labels[order[next]]);
    }
  }
  return shards;
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 const std::optional<std::set<int>>& keep_labels) {
  const auto img = read_file(images);
  const auto lab = read_file(labels);
  if (img.size() < 16 || be32(img, 0) != 0x00000803) {
    throw FormatError(images.string() + ": not an IDX image file (bad magic or short header)");
  }
  if (lab.size() < 8 || be32(lab, 0) != 0x00000801) {
    throw FormatError(labels.string() + ": not an IDX label file (bad magic or short header)");
  }
  const std::size_t count = be32(img, 4);
  const std::size_t height = be32(img, 8);
  const std::size_t width = be32(img, 12);
  const std::size_t pixels = height * width;
  if (img.size() != 16 + count * pixels) {
    throw FormatError(images.string() + ": expected " + std::to_string(16 + count * pixels) + " bytes, got " +
                      std::to_string(img.size()));
  }
  if (be32(lab, 4) != count) {
    throw FormatError("IDX dimension mismatch: " + std::to_string(count) + " images but " +
                      std::to_string(be32(lab, 4)) + " labels");
  }
  if (lab.size() != 8 + count) {
    throw FormatError(labels.string() + ": expected " + std::to_string(8 + count) + " bytes, got " +
                      std::to_string(lab.size()));
  }

  const bool binary = keep_labels && keep_labels->size() == 2;
  Dataset data;
  data.cols = pixels;
  for (std::size_t i = 0; i < count; ++i) {
    const int label = lab[8 + i];
    if (keep_labels && !keep_labels->contains(label)) {
      continue;
    }
    for (std::size_t j = 0; j < pixels; ++j) {
      data.features.push_back(static_cast<double>(img[16 + i * pixels + j]) / 255.0);
    }
    data.labels.push_back(binary ? (label == *keep_labels->begin() ? -1 : 1) : label);
    ++data.rows;
  }
  if (data.rows == 0) {
    throw InvalidInput("load_idx: no samples left after label filtering");
  }
  return data;
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  validate(data);
  std::vector<std::uint8_t> out;
  out.reserve(16 + data.rows * data.cols * 8 + data.rows * 4);
  put_be(out, kDatasetMagic, 4);
  put_be(out, kDatasetVersion, 4);
  put_be(out, data.rows, 4);
  put_be(out, data.cols, 4);
  for (std::size_t j = 0; j < data.cols; ++j) {
    for (std::size_t i = 0; i < data.rows; ++i) {
      put_be(out, std::bit_cast<std::uint64_t>(data.features[i * data.cols + j]), 8);
    }
  }
  for (int label : data.labels) {
    put_be(out, static_cast<std::uint32_t>(label), 4);
  }
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream file(tmp, std::ios::binary | std::ios::trunc);
    file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!file) {
      throw Error("cannot write " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

Dataset load_dataset(const std::filesystem::path& path) {
  const auto in = read_file(path);
  if (in.size() < 16 || get_be(in, 0, 4) != kDatasetMagic) {
    throw FormatError(path.string() + ": not a dataset dump (bad magic)");
  }
  if (get_be(in, 4, 4) != kDatasetVersion) {
    throw FormatError(path.string() + ": unsupported dataset version " + std::to_string(get_be(in, 4, 4)));
  }
  Dataset data;
  data.rows = get_be(in, 8, 4);
  data.cols = get_be(in, 12, 4);
  if (in.size() != 16 + data.rows * data.cols * 8 + data.rows * 4) {
    throw FormatError(path.string() + ": size does not match header");
  }
  data.features.resize(data.rows * data.cols);
  std::size_t offset = 16;
  for (std::size_t j = 0; j < data.cols; ++j) {
    for (std::size_t i = 0; i < data.rows; ++i, offset += 8) {
      data.features[i * data.cols + j] = std::bit_cast<double>(get_be(in, offset, 8));
    }
  }
  data.labels.resize(data.rows);
  for (auto& label : data.labels) {
    label = static_cast<int>(static_cast<std::uint32_t>(get_be(in, offset, 4)));
    offset += 4;
  }
  validate(data);
  return data;
}

}  // namespace fedpaq
