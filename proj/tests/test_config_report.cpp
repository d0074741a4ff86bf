#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "msinfluence/config.hpp"
#include "msinfluence/report_io.hpp"
#include "msinfluence/scenarios.hpp"

using namespace msi;

TEST_SUITE_BEGIN("config_report");

TEST_CASE("config parses, serializes canonically, and hashes stably") {
  RunConfig cfg;
  const std::string text = serialize_config(cfg);
  RunConfig reparsed = parse_config(text);
  CHECK(serialize_config(reparsed) == text);
  CHECK(config_hash(reparsed) == config_hash(cfg));

  // Any field change moves the hash.
  RunConfig other = cfg;
  other.solver.cg_tol = 1e-7;
  CHECK(config_hash(other) != config_hash(cfg));
}

TEST_CASE("unknown keys, sections and malformed values are errors") {
  CHECK_THROWS_AS(parse_config("[dataset]\nnum_classezz=4\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[nonsense]\nx=1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[dataset]\nnum_classes=four\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("key_outside_section=1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[model]\nactivation=relu\n"), ConfigError);  // smooth only
  // Comments and blank lines are fine.
  RunConfig ok = parse_config("# comment\n\n[model]\nl2_pretrain=0.5 # trailing\n");
  CHECK(ok.model.l2_pretrain == 0.5);
}

TEST_CASE("pipeline assembly honors the class splits") {
  RunConfig cfg = preset_convex_correlation(6);
  Pipeline p = build_pipeline(cfg);
  CHECK(p.Z.size() == 24);
  CHECK(p.Z.class_set == std::vector<int>{0, 1, 2, 3});
  CHECK(p.X.class_set == std::vector<int>{4, 5});
  CHECK(p.X.size() == 2 * cfg.dataset.finetune_train_per_class);
  CHECK(p.test.size() == 2 * cfg.dataset.finetune_test_per_class);
  CHECK(p.model->arch().num_pretrain_classes == 4);
  CHECK(p.model->arch().num_finetune_classes == 2);

  SUBCASE("overlapping class sets draw disjoint examples") {
    RunConfig same = cfg;
    same.dataset.finetune_classes = same.dataset.pretrain_classes;
    Pipeline q = build_pipeline(same);
    // No feature row of X may equal a row of Z.
    for (int i = 0; i < q.X.size(); ++i) {
      for (int j = 0; j < q.Z.size(); ++j) {
        bool equal = true;
        for (int d = 0; d < q.X.dim() && equal; ++d) {
          equal = q.X.features.at(i, d) == q.Z.features.at(j, d);
        }
        CHECK_FALSE(equal);
      }
    }
  }

  SUBCASE("pool pinning keeps Z and the test set fixed as the train split grows") {
    RunConfig small = cfg;
    RunConfig large = cfg;
    large.dataset.finetune_train_per_class *= 3;
    const int pool = large.dataset.pretrain_per_class +
                     large.dataset.finetune_train_per_class +
                     large.dataset.finetune_test_per_class;
    small.dataset.pool_per_class = pool;
    large.dataset.pool_per_class = pool;
    Pipeline a = build_pipeline(small);
    Pipeline b = build_pipeline(large);
    CHECK(a.Z.features.data == b.Z.features.data);
    CHECK(a.test.features.data == b.test.features.data);
    CHECK(b.X.size() == 3 * a.X.size());
  }
}

TEST_CASE("csv encoding quotes per RFC 4180 and round-trips") {
  std::vector<std::string> header = {"name", "value"};
  std::vector<std::vector<std::string>> rows = {
      {"plain", "1.5"},
      {"with,comma", "2"},
      {"with\"quote", "3"},
      {"multi\nline", "4"},
  };
  const std::string text = csv_encode(header, rows);
  CHECK(text.find("\"with,comma\"") != std::string::npos);
  CHECK(text.find("\"with\"\"quote\"") != std::string::npos);

  write_csv("build_test_table.csv", header, rows);
  CsvTable table = read_csv("build_test_table.csv");
  CHECK(table.header == header);
  REQUIRE(table.rows.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(table.rows[i] == rows[i]);
}

TEST_CASE("svg scatter embeds the version, hash, r annotation and is deterministic") {
  ScatterSeries s;
  s.xs = {0.0, 1.0, 2.0, 3.0};
  s.ys = {0.1, 0.9, 2.1, 2.9};
  const std::string svg = svg_scatter({s}, "x", "y", "cafe0123cafe0123");
  CHECK(svg.find("cafe0123cafe0123") != std::string::npos);
  CHECK(svg.find("r = 0.997") != std::string::npos);
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg_scatter({s}, "x", "y", "cafe0123cafe0123") == svg);

  SUBCASE("identical pairs annotate r = 1.000") {
    ScatterSeries diag;
    diag.xs = {1.0, 2.0, 3.0};
    diag.ys = diag.xs;
    const std::string one = svg_scatter({diag}, "x", "y", "h");
    CHECK(one.find("r = 1.000") != std::string::npos);
  }
}

TEST_SUITE_END();
