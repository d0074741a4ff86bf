#pragma once

#include <optional>
#include <string>
#include <vector>

namespace msi {

struct CliOptions {
  int jobs = 1;
  std::optional<std::uint64_t> seed_override;
  bool ablation_identity_hessian = false;
  std::optional<double> top_fraction;
};

// Exit codes: 0 success, 2 config error, 3 checkpoint error, 4 scenario
// error, 1 anything else. Each failure prints one machine-readable line on
// stderr: error kind=<kind> msg="...".
int cmd_pretrain(const std::string& config_path, const std::string& out_path,
                 const CliOptions& opts);
int cmd_finetune(const std::string& config_path, const std::string& pretrain_ckpt_path,
                 const std::string& out_path, const CliOptions& opts);
int cmd_influence(const std::string& config_path, const std::string& pretrain_ckpt_path,
                  const std::string& finetune_ckpt_path, const std::string& z_selector,
                  const std::string& x_selector, const std::string& out_csv,
                  const CliOptions& opts);
int cmd_validate(const std::string& config_path, const std::string& scenario_name,
                 const std::string& out_dir, const CliOptions& opts);
int cmd_report(const std::vector<std::string>& in_csvs, const std::string& out_svg);

}  // namespace msi
