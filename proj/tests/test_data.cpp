#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <vector>

#include "fedpaq/data.hpp"
#include "fedpaq/error.hpp"

using namespace fedpaq;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("fedpaq_test_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// Two 2x2 images: (0, 255, 51, 102) labelled 0 and (255, 0, 0, 255) labelled 8.
std::vector<std::uint8_t> idx_images() {
  return {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 0, 255, 51, 102, 255, 0, 0, 255};
}

std::vector<std::uint8_t> idx_labels() { return {0, 0, 8, 1, 0, 0, 0, 2, 0, 8}; }

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) {
    s += x * x;
  }
  return std::sqrt(s);
}

std::vector<std::pair<std::vector<double>, int>> rows_of(const Dataset& d) {
  std::vector<std::pair<std::vector<double>, int>> rows;
  for (std::size_t i = 0; i < d.rows; ++i) {
    const auto r = d.row(i);
    rows.emplace_back(std::vector<double>(r.begin(), r.end()), d.labels[i]);
  }
  std::sort(rows.begin(), rows.end());
  return rows;
}

}  // namespace

TEST_CASE("synthetic logistic problem has a verified optimum") {
  const auto problem = gen_synthetic_logreg(500, 8, 0.1, 42);
  CHECK(problem.data.rows == 500);
  CHECK(problem.data.cols == 8);
  for (int y : problem.data.labels) {
    CHECK((y == -1 || y == 1));
  }
  CHECK(norm(grad(LogisticL2{0.1}, problem.x_star, problem.data)) <= 1e-10);
  CHECK(problem.f_star == loss(LogisticL2{0.1}, problem.x_star, problem.data));

  const auto again = gen_synthetic_logreg(500, 8, 0.1, 42);
  CHECK(again.data == problem.data);
  CHECK(again.x_star == problem.x_star);
  const auto other = gen_synthetic_logreg(500, 8, 0.1, 43);
  CHECK_FALSE(other.data == problem.data);
}

TEST_CASE("synthetic generator preconditions") {
  CHECK_THROWS_AS(gen_synthetic_logreg(3, 5, 0.1, 1), InvalidInput);
  CHECK_THROWS_AS(gen_synthetic_logreg(10, 0, 0.1, 1), InvalidInput);
  CHECK_THROWS_AS(gen_synthetic_logreg(10, 2, 0.0, 1), InvalidInput);
}

TEST_CASE("optimum agrees with long single-machine SGD") {
  const double lambda = 0.5;
  const auto problem = gen_synthetic_logreg(400, 5, lambda, 7);
  const Objective obj = LogisticL2{lambda};
  std::vector<double> x(5, 0.0);
  std::vector<double> avg(5, 0.0);
  Stream rng(99);
  constexpr std::size_t kSteps = 20000000;
  constexpr double kOffset = 10.0;
  std::size_t averaged = 0;
  for (std::size_t t = 0; t < kSteps; ++t) {
    const double eta = 1.0 / (lambda * (static_cast<double>(t) + kOffset));
    const auto g = sample_grad(obj, x, problem.data, rng.uniform_index(problem.data.rows));
    for (std::size_t j = 0; j < 5; ++j) {
      x[j] -= eta * g[j];
    }
    if (t >= kSteps / 2) {
      ++averaged;
      for (std::size_t j = 0; j < 5; ++j) {
        avg[j] += (x[j] - avg[j]) / static_cast<double>(averaged);
      }
    }
  }
  std::vector<double> diff(5);
  for (std::size_t j = 0; j < 5; ++j) {
    diff[j] = avg[j] - problem.x_star[j];
  }
  CHECK(norm(diff) <= 1e-3);
}

TEST_CASE("teacher data is deterministic with labels in range") {
  const auto a = gen_synthetic_teacher(300, 6, 3, 8, 5);
  const auto b = gen_synthetic_teacher(300, 6, 3, 8, 5);
  CHECK(a == b);
  std::map<int, int> counts;
  for (int y : a.labels) {
    REQUIRE(y >= 0);
    REQUIRE(y < 3);
    ++counts[y];
  }
  CHECK(counts.size() >= 2);
}

TEST_CASE("partition with one node is the input") {
  const auto problem = gen_synthetic_logreg(60, 3, 0.1, 1);
  const auto shards = partition_iid(problem.data, 1, 9);
  REQUIRE(shards.size() == 1);
  CHECK(shards[0].node_id == 0);
  CHECK(shards[0].data == problem.data);
}

TEST_CASE("partition sizes and bijection") {
  const auto problem = gen_synthetic_logreg(10000, 4, 0.1, 2);
  const auto shards = partition_iid(problem.data, 50, 3);
  REQUIRE(shards.size() == 50);
  Dataset merged{0, 4, {}, {}};
  for (std::size_t i = 0; i < shards.size(); ++i) {
    CHECK(shards[i].node_id == i);
    CHECK(shards[i].data.rows == 200);
    merged.rows += shards[i].data.rows;
    merged.features.insert(merged.features.end(), shards[i].data.features.begin(), shards[i].data.features.end());
    merged.labels.insert(merged.labels.end(), shards[i].data.labels.begin(), shards[i].data.labels.end());
  }
  CHECK(rows_of(merged) == rows_of(problem.data));
  CHECK_FALSE(merged == problem.data);

  const auto uneven = partition_iid(problem.data, 7, 3);
  std::size_t lo = 10000;
  std::size_t hi = 0;
  std::size_t total = 0;
  for (const auto& s : uneven) {
    lo = std::min(lo, s.data.rows);
    hi = std::max(hi, s.data.rows);
    total += s.data.rows;
  }
  CHECK(total == 10000);
  CHECK(hi - lo <= 1);

  const auto again = partition_iid(problem.data, 50, 3);
  for (std::size_t i = 0; i < shards.size(); ++i) {
    CHECK(again[i].data == shards[i].data);
    CHECK(again[i].stream_key == shards[i].stream_key);
  }
  CHECK(shards[0].stream_key != shards[1].stream_key);
}

TEST_CASE("partition preconditions") {
  const auto problem = gen_synthetic_logreg(5, 2, 0.1, 1);
  CHECK_THROWS_AS(partition_iid(problem.data, 6, 1), InvalidInput);
  CHECK_THROWS_AS(partition_iid(problem.data, 0, 1), InvalidInput);
  CHECK(partition_iid(problem.data, 5, 1).size() == 5);
}

TEST_CASE("hand-built IDX fixture") {
  const auto dir = scratch_dir("idx");
  write_bytes(dir / "images", idx_images());
  write_bytes(dir / "labels", idx_labels());

  const auto all = load_idx(dir / "images", dir / "labels");
  CHECK(all.rows == 2);
  CHECK(all.cols == 4);
  CHECK(all.features == std::vector<double>{0.0, 1.0, 0.2, 0.4, 1.0, 0.0, 0.0, 1.0});
  CHECK(all.labels == std::vector<int>{0, 8});

  const auto binary = load_idx(dir / "images", dir / "labels", std::set<int>{0, 8});
  CHECK(binary.rows == 2);
  CHECK(binary.labels == std::vector<int>{-1, 1});

  const auto only8 = load_idx(dir / "images", dir / "labels", std::set<int>{8, 3, 5});
  CHECK(only8.rows == 1);
  CHECK(only8.labels == std::vector<int>{8});
  CHECK(only8.features == std::vector<double>{1.0, 0.0, 0.0, 1.0});

  CHECK_THROWS_AS(load_idx(dir / "images", dir / "labels", std::set<int>{}), InvalidInput);
  CHECK_THROWS_AS(load_idx(dir / "images", dir / "labels", std::set<int>{4}), InvalidInput);
}

TEST_CASE("IDX errors") {
  const auto dir = scratch_dir("idx_errors");
  write_bytes(dir / "labels", idx_labels());

  auto bad_magic = idx_images();
  bad_magic[3] = 1;
  write_bytes(dir / "bad_magic", bad_magic);
  CHECK_THROWS_AS(load_idx(dir / "bad_magic", dir / "labels"), FormatError);
  CHECK_THROWS_AS(load_idx(dir / "labels", dir / "labels"), FormatError);

  auto truncated = idx_images();
  truncated.pop_back();
  write_bytes(dir / "truncated", truncated);
  CHECK_THROWS_AS(load_idx(dir / "truncated", dir / "labels"), FormatError);

  write_bytes(dir / "images", idx_images());
  write_bytes(dir / "three_labels", {0, 0, 8, 1, 0, 0, 0, 3, 0, 8, 1});
  CHECK_THROWS_AS(load_idx(dir / "images", dir / "three_labels"), FormatError);

  write_bytes(dir / "short_labels", {0, 0, 8, 1, 0, 0, 0, 2, 0});
  CHECK_THROWS_AS(load_idx(dir / "images", dir / "short_labels"), FormatError);

  CHECK_THROWS_AS(load_idx(dir / "missing", dir / "labels"), InvalidInput);
}

TEST_CASE("dataset dump round trip") {
  const auto dir = scratch_dir("dump");
  const auto problem = gen_synthetic_logreg(37, 3, 0.1, 4);
  save_dataset(problem.data, dir / "d.bin");
  CHECK(load_dataset(dir / "d.bin") == problem.data);

  std::ifstream in(dir / "d.bin", std::ios::binary);
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  REQUIRE(bytes.size() == 16 + 37 * 3 * 8 + 37 * 4);
  CHECK(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 4) == std::vector<std::uint8_t>{'F', 'P', 'Q', 'D'});
  CHECK(std::vector<std::uint8_t>(bytes.begin() + 4, bytes.begin() + 16) ==
        std::vector<std::uint8_t>{0, 0, 0, 1, 0, 0, 0, 37, 0, 0, 0, 3});

  bytes[0] = 'X';
  write_bytes(dir / "bad.bin", bytes);
  CHECK_THROWS_AS(load_dataset(dir / "bad.bin"), FormatError);
  bytes[0] = 'F';
  bytes[7] = 2;
  write_bytes(dir / "version.bin", bytes);
  CHECK_THROWS_AS(load_dataset(dir / "version.bin"), FormatError);
  bytes[7] = 1;
  bytes.pop_back();
  write_bytes(dir / "short.bin", bytes);
  CHECK_THROWS_AS(load_dataset(dir / "short.bin"), FormatError);
}
