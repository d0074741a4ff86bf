#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>

#include "msinfluence/dataset.hpp"
#include "msinfluence/idx_io.hpp"
#include "msinfluence/common.hpp"

using namespace msi;

namespace {

// Writes a small IDX image/label pair; returns the label sequence.
struct IdxFixture {
  std::string images_path;
  std::string labels_path;
  std::vector<int> labels;

  IdxFixture(const std::string& stem, const std::vector<int>& labels_in, int rows = 2,
             int cols = 2)
      : images_path(stem + "-images.idx"), labels_path(stem + "-labels.idx"), labels(labels_in) {
    const int n = static_cast<int>(labels.size());
    std::ofstream img(images_path, std::ios::binary | std::ios::trunc);
    write_be(img, 0x00000803u);
    write_be(img, static_cast<unsigned>(n));
    write_be(img, static_cast<unsigned>(rows));
    write_be(img, static_cast<unsigned>(cols));
    for (int i = 0; i < n; ++i) {
      for (int p = 0; p < rows * cols; ++p) {
        const unsigned char byte = static_cast<unsigned char>((i * 7 + p * 31) % 256);
        img.put(static_cast<char>(byte));
      }
    }
    std::ofstream lab(labels_path, std::ios::binary | std::ios::trunc);
    write_be(lab, 0x00000801u);
    write_be(lab, static_cast<unsigned>(n));
    for (int v : labels) lab.put(static_cast<char>(v));
  }

  static void write_be(std::ofstream& f, unsigned v) {
    f.put(static_cast<char>(v >> 24));
    f.put(static_cast<char>(v >> 16));
    f.put(static_cast<char>(v >> 8));
    f.put(static_cast<char>(v));
  }
};

}  // namespace

TEST_SUITE_BEGIN("dataset");

TEST_CASE("synthetic generation is reproducible and class-complete") {
  SyntheticSpec spec;
  spec.num_classes = 4;
  spec.dim = 6;
  spec.per_class = 5;
  spec.class_means_seed = 123;
  spec.noise_sigma = 0.8;

  Dataset a = make_synthetic(spec);
  Dataset b = make_synthetic(spec);
  REQUIRE(a.size() == 20);
  CHECK(a.features.data == b.features.data);
  CHECK(a.labels == b.labels);

  std::set<int> seen(a.labels.begin(), a.labels.end());
  CHECK(seen.size() == 4);
}

TEST_CASE("near-zero noise makes classes linearly separable") {
  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.dim = 4;
  spec.per_class = 10;
  spec.class_means_seed = 5;
  spec.noise_sigma = 1e-6;
  Dataset ds = make_synthetic(spec);

  // Nearest-class-mean classification must be perfect.
  std::vector<double> mean0(4, 0.0), mean1(4, 0.0);
  for (int i = 0; i < ds.size(); ++i) {
    for (int j = 0; j < 4; ++j) {
      (ds.labels[i] == 0 ? mean0 : mean1)[j] += ds.features.at(i, j) / 10.0;
    }
  }
  for (int i = 0; i < ds.size(); ++i) {
    double d0 = 0, d1 = 0;
    for (int j = 0; j < 4; ++j) {
      d0 += (ds.features.at(i, j) - mean0[j]) * (ds.features.at(i, j) - mean0[j]);
      d1 += (ds.features.at(i, j) - mean1[j]) * (ds.features.at(i, j) - mean1[j]);
    }
    CHECK((d0 < d1) == (ds.labels[i] == 0));
  }
}

TEST_CASE("degenerate synthetic specs are rejected") {
  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.dim = 0;
  spec.per_class = 3;
  CHECK_THROWS_AS(make_synthetic(spec), ConfigError);
}

TEST_CASE("filter_classes relabels into the class set") {
  SyntheticSpec spec;
  spec.num_classes = 5;
  spec.dim = 3;
  spec.per_class = 4;
  spec.class_means_seed = 9;
  spec.noise_sigma = 1.0;
  Dataset pool = make_synthetic(spec);

  Dataset sub = filter_classes(pool, {3, 1}, Role::FinetuneTrain);
  REQUIRE(sub.size() == 8);
  for (int i = 0; i < sub.size(); ++i) {
    CHECK((sub.labels[i] == 3 || sub.labels[i] == 1));
    CHECK(sub.targets[i] == (sub.labels[i] == 3 ? 0 : 1));
  }

  Dataset empty = filter_classes(pool, {}, Role::FinetuneTrain);
  CHECK(empty.size() == 0);

  Dataset one = filter_classes(pool, {0, 1, 2, 3, 4}, Role::Pretrain, 1);
  CHECK(one.size() == 1);
  CHECK(one.labels[0] == pool.labels[0]);
}

TEST_CASE("idx loader round-trips a synthetic file pair") {
  IdxFixture fx("build_idx_test", {0, 1, 2, 3, 0, 1, 2, 3, 1, 1});
  std::set<int> filter = {0, 1};
  Dataset ds = load_idx(fx.images_path, fx.labels_path, filter, 0);

  // Independent byte-level count of matching labels.
  std::ifstream lab(fx.labels_path, std::ios::binary);
  lab.ignore(8);
  int expected = 0;
  char c;
  while (lab.get(c)) {
    if (filter.count(static_cast<unsigned char>(c))) ++expected;
  }
  CHECK(ds.size() == expected);
  CHECK(ds.size() == 6);

  // Pixels scaled into [0, 1].
  for (double v : ds.features.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }

  SUBCASE("limit = 1 returns exactly the first matching record") {
    Dataset first = load_idx(fx.images_path, fx.labels_path, filter, 1);
    REQUIRE(first.size() == 1);
    CHECK(first.labels[0] == 0);
    for (std::size_t j = 0; j < first.features.cols(); ++j) {
      CHECK(first.features.at(0, j) == ds.features.at(0, j));
    }
  }

  SUBCASE("empty class filter gives an empty dataset") {
    Dataset none = load_idx(fx.images_path, fx.labels_path, {}, 0);
    CHECK(none.size() == 0);
  }
}

TEST_CASE("idx loader rejects corrupt containers") {
  IdxFixture fx("build_idx_bad", {0, 1, 2});

  SUBCASE("magic mismatch") {
    CHECK_THROWS_AS(load_idx(fx.labels_path, fx.labels_path, {0}, 0), ConfigError);
  }
  SUBCASE("truncated payload") {
    std::ifstream in(fx.images_path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    std::ofstream out(fx.images_path + ".trunc", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 3));
    out.close();
    CHECK_THROWS_AS(load_idx(fx.images_path + ".trunc", fx.labels_path, {0, 1, 2}, 0),
                    ConfigError);
  }
  SUBCASE("count mismatch between images and labels") {
    IdxFixture other("build_idx_other", {0, 1});
    CHECK_THROWS_AS(load_idx(fx.images_path, other.labels_path, {0}, 0), ConfigError);
  }
}

TEST_SUITE_END();
