#include "msinfluence/cli_commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>

#include "msinfluence/checkpoint_io.hpp"
#include "msinfluence/common.hpp"
#include "msinfluence/config.hpp"
#include "msinfluence/influence.hpp"
#include "msinfluence/report_io.hpp"
#include "msinfluence/scenarios.hpp"

namespace msi {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

int guard(const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error kind=config msg=\"%s\"\n", e.what());
    return 2;
  } catch (const CheckpointError& e) {
    std::fprintf(stderr, "error kind=checkpoint msg=\"%s\"\n", e.what());
    return 3;
  } catch (const ScenarioError& e) {
    std::fprintf(stderr, "error kind=scenario msg=\"%s\"\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error kind=internal msg=\"%s\"\n", e.what());
    return 1;
  }
}

RunConfig load_with_overrides(const std::string& config_path, const CliOptions& opts) {
  RunConfig cfg = load_config(config_path);
  if (opts.seed_override) {
    cfg.dataset.seed = *opts.seed_override;
    cfg.model.init_seed = *opts.seed_override;
    cfg.pretrain.seed = *opts.seed_override;
    cfg.finetune.seed = *opts.seed_override;
  }
  if (opts.ablation_identity_hessian) cfg.influence.identity_hessian = true;
  if (opts.top_fraction) cfg.scenario.top_fraction = *opts.top_fraction;
  return cfg;
}

// Selector grammar: "all", "none", "a..b" (inclusive), or "i,j,k".
std::vector<long> parse_selector(const std::string& sel, long count, const char* what) {
  std::vector<long> ids;
  if (sel == "all") {
    for (long i = 0; i < count; ++i) ids.push_back(i);
    return ids;
  }
  if (sel.empty() || sel == "none") return ids;
  auto check = [&](long v) {
    if (v < 0 || v >= count) {
      throw ConfigError(std::string(what) + " selector index " + std::to_string(v) +
                        " out of range [0, " + std::to_string(count) + ")");
    }
  };
  const std::size_t dots = sel.find("..");
  try {
    if (dots != std::string::npos) {
      const long a = std::stol(sel.substr(0, dots));
      const long b = std::stol(sel.substr(dots + 2));
      check(a);
      check(b);
      for (long i = a; i <= b; ++i) ids.push_back(i);
      return ids;
    }
    std::size_t pos = 0;
    while (pos < sel.size()) {
      std::size_t comma = sel.find(',', pos);
      if (comma == std::string::npos) comma = sel.size();
      const long v = std::stol(sel.substr(pos, comma - pos));
      check(v);
      ids.push_back(v);
      pos = comma + 1;
    }
  } catch (const ConfigError&) {
    throw;
  } catch (...) {
    throw ConfigError(std::string("malformed ") + what + " selector: '" + sel + "'");
  }
  return ids;
}

Checkpoint load_ckpt_checked(const std::string& path, const std::string& expect_hash) {
  Checkpoint ckpt = load_checkpoint(path);
  if (!expect_hash.empty() && !ckpt.config_hash.empty() && ckpt.config_hash != expect_hash) {
    std::fprintf(stderr, "warning: checkpoint %s was produced under config %s (current %s)\n",
                 path.c_str(), ckpt.config_hash.c_str(), expect_hash.c_str());
  }
  return ckpt;
}

const char* mode_name(FinetuneMode mode) {
  switch (mode) {
    case FinetuneMode::FixedW: return "fixed_W";
    case FinetuneMode::UpdateW: return "update_W";
    default: return "none";
  }
}

}  // namespace

int cmd_pretrain(const std::string& config_path, const std::string& out_path,
                 const CliOptions& opts) {
  return guard([&]() {
    RunConfig cfg = load_with_overrides(config_path, opts);
    Pipeline pipe = build_pipeline(cfg);
    Checkpoint ckpt = train_pretrain(*pipe.model, pipe.Z, train_config_of(cfg.pretrain));
    ckpt.config_hash = config_hash(cfg);
    save_checkpoint(ckpt, out_path);
    std::printf("pretrain: objective=%.8g grad_norm=%.3e converged=%d steps=%ld -> %s\n",
                ckpt.objective_value, ckpt.grad_norm, ckpt.converged ? 1 : 0, ckpt.steps,
                out_path.c_str());
    return 0;
  });
}

int cmd_finetune(const std::string& config_path, const std::string& pretrain_ckpt_path,
                 const std::string& out_path, const CliOptions& opts) {
  return guard([&]() {
    RunConfig cfg = load_with_overrides(config_path, opts);
    Pipeline pipe = build_pipeline(cfg);
    Checkpoint pre = load_ckpt_checked(pretrain_ckpt_path, config_hash(cfg));
    Checkpoint ckpt = train_finetune(*pipe.model, pipe.X, pre, finetune_mode_of(cfg.finetune),
                                     train_config_of(cfg.finetune));
    ckpt.config_hash = config_hash(cfg);
    save_checkpoint(ckpt, out_path);
    std::printf("finetune[%s]: objective=%.8g grad_norm=%.3e converged=%d steps=%ld -> %s\n",
                mode_name(ckpt.mode), ckpt.objective_value, ckpt.grad_norm,
                ckpt.converged ? 1 : 0, ckpt.steps, out_path.c_str());
    return 0;
  });
}

int cmd_influence(const std::string& config_path, const std::string& pretrain_ckpt_path,
                  const std::string& finetune_ckpt_path, const std::string& z_selector,
                  const std::string& x_selector, const std::string& out_csv,
                  const CliOptions& opts) {
  return guard([&]() {
    RunConfig cfg = load_with_overrides(config_path, opts);
    const std::string hash = config_hash(cfg);
    Pipeline pipe = build_pipeline(cfg);
    Checkpoint pre = load_ckpt_checked(pretrain_ckpt_path, hash);
    Checkpoint ft = load_ckpt_checked(finetune_ckpt_path, hash);

    const std::vector<std::string> header = {"z_id",       "x_id",      "mode",
                                             "score",      "cg_iters_1", "cg_iters_2",
                                             "converged",  "config_hash"};
    std::vector<std::vector<std::string>> rows;

    std::vector<long> z_ids = parse_selector(z_selector, pipe.Z.size(), "z");
    if (!z_ids.empty()) {
      const bool group_x = x_selector == "all" && cfg.influence.aggregation != "none";
      std::vector<long> x_ids = parse_selector(x_selector, pipe.test.size(), "x");
      if (x_ids.empty() && !z_ids.empty() && x_selector != "none" && !x_selector.empty()) {
        throw ConfigError("x selector matches no test examples");
      }

      InfluenceEngine engine(*pipe.model, pipe.Z, pipe.X, pre, ft, influence_config_of(cfg));
      const FinetuneMode mode = ft.mode;
      std::vector<InfluenceRecord> records =
          mode == FinetuneMode::FixedW
              ? engine.influence_fixed(z_ids, pipe.test, x_ids, opts.jobs)
              : engine.influence_updated(z_ids, pipe.test, x_ids, opts.jobs);
      for (const std::string& w : engine.warnings()) {
        std::fprintf(stderr, "warning: %s\n", w.c_str());
      }

      const std::size_t nx = x_ids.size();
      if (group_x) {
        // One aggregated row per pretraining example.
        for (std::size_t zi = 0; zi < z_ids.size(); ++zi) {
          double score = 0.0;
          int it1 = 0, it2 = 0;
          bool conv = true;
          for (std::size_t xi = 0; xi < nx; ++xi) {
            const InfluenceRecord& r = records[zi * nx + xi];
            score += cfg.influence.aggregation == "mean_abs" ? std::fabs(r.score) : r.score;
            it1 = std::max(it1, r.finetune_report.iterations);
            it2 = std::max(it2, r.pretrain_report.iterations);
            conv = conv && r.finetune_report.converged && r.pretrain_report.converged;
          }
          if (cfg.influence.aggregation == "mean_abs" && nx > 0) {
            score /= static_cast<double>(nx);
          }
          rows.push_back({std::to_string(z_ids[zi]), "ALL", mode_name(mode), fmt(score),
                          std::to_string(it1), std::to_string(it2), conv ? "true" : "false",
                          hash});
        }
      } else {
        for (std::size_t zi = 0; zi < z_ids.size(); ++zi) {
          for (std::size_t xi = 0; xi < nx; ++xi) {
            const InfluenceRecord& r = records[zi * nx + xi];
            rows.push_back({std::to_string(r.z_id), std::to_string(r.x_id), mode_name(mode),
                            fmt(r.score), std::to_string(r.finetune_report.iterations),
                            std::to_string(r.pretrain_report.iterations),
                            (r.finetune_report.converged && r.pretrain_report.converged)
                                ? "true"
                                : "false",
                            hash});
          }
        }
      }
    }
    write_csv(out_csv, header, rows);
    std::printf("influence: %zu rows -> %s\n", rows.size(), out_csv.c_str());
    return 0;
  });
}

int cmd_validate(const std::string& config_path, const std::string& scenario_name,
                 const std::string& out_dir, const CliOptions& opts) {
  return guard([&]() {
    RunConfig cfg = load_with_overrides(config_path, opts);
    if (!scenario_name.empty()) cfg.scenario.name = scenario_name;
    ScenarioOutcome outcome = run_scenario(cfg);

    std::filesystem::create_directories(out_dir);
    std::vector<std::string> header = outcome.csv_header;
    header.push_back("config_hash");
    std::vector<std::vector<std::string>> rows = outcome.csv_rows;
    for (auto& row : rows) row.push_back(outcome.config_hash);
    const std::string table_path = out_dir + "/" + outcome.name + ".csv";
    write_csv(table_path, header, rows);

    std::vector<std::vector<std::string>> metric_rows;
    for (const auto& [key, value] : outcome.metrics) {
      metric_rows.push_back({key, fmt(value), outcome.config_hash});
    }
    write_csv(out_dir + "/" + outcome.name + "_metrics.csv", {"metric", "value", "config_hash"},
              metric_rows);

    std::printf("scenario %s:", outcome.name.c_str());
    for (const auto& [key, value] : outcome.metrics) std::printf(" %s=%.6g", key.c_str(), value);
    std::printf(" -> %s\n", table_path.c_str());
    return 0;
  });
}

int cmd_report(const std::vector<std::string>& in_csvs, const std::string& out_svg) {
  return guard([&]() {
    std::vector<ScatterSeries> series;
    std::string hash;
    for (const std::string& path : in_csvs) {
      CsvTable table = read_csv(path);
      // Use the predicted/true columns when present, else the first two
      // numeric columns.
      int xcol = -1, ycol = -1, hashcol = -1;
      for (std::size_t i = 0; i < table.header.size(); ++i) {
        if (table.header[i] == "predicted_loss_change" || table.header[i] == "score") {
          xcol = static_cast<int>(i);
        }
        if (table.header[i] == "true_loss_change") ycol = static_cast<int>(i);
        if (table.header[i] == "config_hash") hashcol = static_cast<int>(i);
      }
      if (xcol < 0 || ycol < 0) {
        if (table.header.size() < 2) throw ConfigError("report: " + path + " has too few columns");
        xcol = xcol < 0 ? 1 : xcol;
        ycol = ycol < 0 ? 2 % static_cast<int>(table.header.size()) : ycol;
      }
      ScatterSeries s;
      s.label = std::filesystem::path(path).stem().string();
      for (const auto& row : table.rows) {
        if (static_cast<int>(row.size()) <= std::max(xcol, ycol)) continue;
        try {
          const double x = std::stod(row[xcol]);
          const double y = std::stod(row[ycol]);
          s.xs.push_back(x);
          s.ys.push_back(y);
        } catch (...) {
          throw ConfigError("report: non-numeric cell in " + path);
        }
        if (hash.empty() && hashcol >= 0 && static_cast<int>(row.size()) > hashcol) {
          hash = row[hashcol];
        }
      }
      series.push_back(std::move(s));
    }
    write_svg_scatter(out_svg, series, "predicted loss change", "true loss change", hash);
    std::printf("report: %zu series -> %s\n", series.size(), out_svg.c_str());
    return 0;
  });
}

}  // namespace msi
