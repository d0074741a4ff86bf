#include <CLI11.hpp>

#include "msinfluence/cli_commands.hpp"
#include "msinfluence/common.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Multi-stage influence functions: pretrain/finetune pipelines, influence "
               "scores, and retraining-based validation"};
  app.set_version_flag("--version", std::string(msi::kToolVersion));
  app.require_subcommand(1);

  msi::CliOptions opts;
  std::uint64_t seed_override = 0;
  double top_fraction = -1.0;
  app.add_option("--jobs", opts.jobs, "Worker threads for per-example scoring")
      ->capture_default_str();
  auto* seed_flag =
      app.add_option("--seed-override", seed_override, "Override every seed in the config");
  auto* top_flag = app.add_option("--top-fraction", top_fraction,
                                  "Override the cleansing removal fraction");
  app.add_flag("--ablation-identity-hessian", opts.ablation_identity_hessian,
               "Replace both inverse Hessians with the identity");

  std::string config_path, out_path, pre_ckpt, ft_ckpt, z_sel = "all", x_sel = "all";
  std::string scenario, out_dir;
  std::vector<std::string> in_csvs;

  CLI::App* pretrain = app.add_subcommand("pretrain", "Train the pretraining stage");
  pretrain->add_option("--config", config_path, "Run configuration file")->required();
  pretrain->add_option("--out", out_path, "Output checkpoint path")->required();

  CLI::App* finetune = app.add_subcommand("finetune", "Train the finetuning stage");
  finetune->add_option("--config", config_path, "Run configuration file")->required();
  finetune->add_option("--pretrain-checkpoint", pre_ckpt, "Pretrain checkpoint")->required();
  finetune->add_option("--out", out_path, "Output checkpoint path")->required();

  CLI::App* influence = app.add_subcommand("influence", "Score pretraining examples");
  influence->add_option("--config", config_path, "Run configuration file")->required();
  influence->add_option("--pretrain-checkpoint", pre_ckpt, "Pretrain checkpoint")->required();
  influence->add_option("--finetune-checkpoint", ft_ckpt, "Finetune checkpoint")->required();
  influence->add_option("--z", z_sel, "Pretraining example selector (all, none, a..b, i,j)")
      ->capture_default_str();
  influence->add_option("--x", x_sel, "Test example selector (all aggregates per z)")
      ->capture_default_str();
  influence->add_option("--out", out_path, "Output CSV path")->required();

  CLI::App* validate = app.add_subcommand("validate", "Run a validation scenario");
  validate->add_option("--config", config_path, "Run configuration file")->required();
  validate->add_option("--scenario", scenario,
                       "correlation | ablation | cleansing | similarity | datasize "
                       "(default: from config)");
  validate->add_option("--out", out_dir, "Output directory")->required();

  CLI::App* report = app.add_subcommand("report", "Render a scatter SVG from result CSVs");
  report->add_option("--in", in_csvs, "Input CSV file(s)")->required()->expected(-1);
  report->add_option("--out", out_path, "Output SVG path")->required();

  // Let the shared flags (--jobs, --seed-override, ...) appear after the
  // subcommand name as well.
  for (CLI::App* sub : {pretrain, finetune, influence, validate, report}) {
    sub->fallthrough();
  }

  CLI11_PARSE(app, argc, argv);
  if (seed_flag->count() > 0) opts.seed_override = seed_override;
  if (top_flag->count() > 0) opts.top_fraction = top_fraction;

  if (pretrain->parsed()) return msi::cmd_pretrain(config_path, out_path, opts);
  if (finetune->parsed()) return msi::cmd_finetune(config_path, pre_ckpt, out_path, opts);
  if (influence->parsed()) {
    return msi::cmd_influence(config_path, pre_ckpt, ft_ckpt, z_sel, x_sel, out_path, opts);
  }
  if (validate->parsed()) return msi::cmd_validate(config_path, scenario, out_dir, opts);
  if (report->parsed()) return msi::cmd_report(in_csvs, out_path);
  return 1;
}
