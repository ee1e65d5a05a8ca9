// SPDX-License-Identifier: Apache-2.0
// focalfuse: synthetic data, training, inference, evaluation and model summaries.

#include <CLI11.hpp>

#include <iostream>

#include "focalfuse/cli/commands.hpp"

namespace {

using namespace focalfuse;
namespace cmd = focalfuse::cli;

void add_model_flags(CLI::App* app, cmd::ModelOverrides& m) {
  app->add_option_function<std::string>(
         "--config", [&m](const std::string& p) { m.config = p; }, "model config file (key = value lines)")
      ->check(CLI::ExistingFile);
  app->add_option_function<std::string>(
         "--variant", [&m](const std::string& v) { m.variant = v; }, "focal_fuse or msf3d")
      ->check(CLI::IsMember({"focal_fuse", "msf3d"}));
  app->add_option_function<Index>(
         "--base-channels", [&m](Index c) { m.base_channels = c; }, "channels of the first encoder block")
      ->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Volumetric multi-organ segmentation with focal fuse and multi-scale fusion networks"};
  app.require_subcommand(1);
  app.fallthrough();
  int threads = 1;
  app.add_option("--threads", threads, "worker threads for the kernels")->check(CLI::PositiveNumber);

  cmd::GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "write synthetic phantom volumes and a manifest");
  gen_cmd->add_option_function<std::string>(
             "--spec", [&gen](const std::string& p) { gen.spec = p; }, "phantom spec file (key = value lines)")
      ->check(CLI::ExistingFile);
  gen_cmd->add_option("--count", gen.count, "number of volumes")->capture_default_str();
  gen_cmd->add_option_function<std::uint64_t>(
      "--seed", [&gen](std::uint64_t s) { gen.seed = s; }, "overrides the seed in the phantom spec file");
  gen_cmd->add_option("--out", gen.out, "output directory")->required();

  cmd::TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "train a model on a directory of volumes");
  add_model_flags(train_cmd, tr.model);
  train_cmd->add_option("--data", tr.data, "training volumes")->required();
  train_cmd->add_option_function<std::string>(
      "--val-data", [&tr](const std::string& p) { tr.val_data = p; }, "validation volumes (default: training set)");
  train_cmd->add_option("--out", tr.out, "run directory")->required();
  train_cmd->add_option("--epochs", tr.epochs)->capture_default_str()->check(CLI::PositiveNumber);
  train_cmd->add_option("--seed", tr.seed)->capture_default_str();
  train_cmd->add_option("--half-cycle", tr.half_cycle, "iterations per lr ramp")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--val-every", tr.val_every, "validate every N epochs (0: last epoch only)")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--max-grad-norm", tr.max_grad_norm, "global gradient clip (0: off)")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);

  cmd::InferArgs inf;
  auto* infer_cmd = app.add_subcommand("infer", "predict label volumes");
  infer_cmd->add_option("--checkpoint", inf.checkpoint)->required();
  infer_cmd->add_option("--input", inf.input, "volume file or directory")->required();
  infer_cmd->add_option("--out", inf.out, "output file, or directory for a directory input")->required();

  cmd::EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "score predictions against ground truth");
  eval_cmd->add_option("--pred", ev.pred, "directory of predicted volumes")->required();
  eval_cmd->add_option("--truth", ev.truth, "directory of reference volumes")->required();
  eval_cmd->add_option_function<std::string>(
      "--out", [&ev](const std::string& p) { ev.out = p; }, "directory for metrics.csv and metrics.txt");
  eval_cmd->add_flag("--hd95", ev.hd95, "report the 95th-percentile Hausdorff distance");

  cmd::DescribeArgs desc;
  auto* describe_cmd = app.add_subcommand("describe", "print parameter counts, shapes and receptive fields");
  add_model_flags(describe_cmd, desc.model);
  describe_cmd->add_option("--extents", desc.extents, "input extents W H Z")->expected(3)->capture_default_str();
  describe_cmd->add_flag("--per-tensor", desc.per_tensor, "list every parameter tensor");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? cmd::kOk : cmd::kUsageError;
  }
  set_num_threads(threads);

  return cmd::guarded(
      [&]() -> int {
        if (*gen_cmd) return cmd::gen_data(gen, std::cout);
        if (*train_cmd) return cmd::train(tr, std::cout);
        if (*infer_cmd) return cmd::infer(inf, std::cout);
        if (*eval_cmd) return cmd::eval(ev, std::cout);
        return cmd::describe(desc, std::cout);
      },
      std::cerr);
}
