#include <CLI11.hpp>

#include "agrol/commands.hpp"

namespace cli = agrol::cli;

int main(int argc, char** argv) {
  CLI::App app{"Full-body motion from sparse head and hand tracking"};
  app.set_version_flag("--version", std::string(cli::kVersion) + " (" + cli::kGitHash + ")");
  app.require_subcommand(1);

  cli::GenDataOptions gen;
  std::uint64_t gen_seed = 0;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic walking dataset");
  gen_cmd->add_option("--config", gen.config, "key = value dataset config");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  auto* gen_seed_opt = gen_cmd->add_option("--seed", gen_seed, "Override the config seed");

  cli::TrainOptions train;
  std::uint64_t train_seed = 0;
  std::size_t train_iters = 0;
  auto* train_cmd = app.add_subcommand("train", "Train the MLP or the diffusion model");
  train_cmd->add_option("--model", train.model, "mlp | diffusion")
      ->check(CLI::IsMember({"mlp", "diffusion"}));
  train_cmd->add_option("--config", train.config, "key = value training config (default: toy)");
  train_cmd->add_option("--data", train.data, "Dataset directory")->required();
  train_cmd->add_option("--out", train.out, "Run directory")->required();
  train_cmd->add_option("--timestep-mode", train.timestep_mode, "none | add | concat | repin")
      ->check(CLI::IsMember({"none", "add", "concat", "repin"}));
  auto* train_seed_opt = train_cmd->add_option("--seed", train_seed, "Override the config seed");
  auto* train_iters_opt =
      train_cmd->add_option("--iters", train_iters, "Override total_iters");
  train_cmd->add_option("--resume", train.resume, "Checkpoint to continue from");

  cli::SampleOptions sample;
  auto* sample_cmd = app.add_subcommand("sample", "Predict full-body motion for one input file");
  sample_cmd->add_option("--checkpoint", sample.checkpoint, "Model checkpoint")->required();
  sample_cmd->add_option("--input", sample.input,
                         "MSEQ file: 54-channel sparse input or 132-channel motion")
      ->required();
  sample_cmd->add_option("--out", sample.out, "Run directory")->required();
  sample_cmd->add_option("--ddim-steps", sample.ddim_steps, "DDIM sampling steps")
      ->capture_default_str();
  sample_cmd->add_option("--seed", sample.seed, "Sampling seed")->capture_default_str();
  sample_cmd->add_option("--sweep", sample.sweep, "Run each K in this list")->delimiter(',');
  sample_cmd->add_option("--skeleton", sample.skeleton, "Skeleton file for motion inputs");

  cli::EvaluateOptions eval;
  auto* eval_cmd = app.add_subcommand("evaluate", "Compute metrics against ground truth");
  eval_cmd->add_option("--gt", eval.gt, "Dataset directory")->required();
  auto* pred_opt = eval_cmd->add_option("--pred", eval.pred, "Directory of predictions");
  auto* ck_opt = eval_cmd->add_option("--checkpoint", eval.checkpoint, "Predict with this model");
  pred_opt->excludes(ck_opt);
  eval_cmd->add_option("--split", eval.split, "test | train | all")->capture_default_str();
  eval_cmd->add_option("--mask-fraction", eval.mask_fraction,
                       "Fraction of input frames to drop")
      ->capture_default_str();
  eval_cmd->add_option("--trials", eval.trials, "Masking trials to average")
      ->capture_default_str();
  eval_cmd->add_option("--ddim-steps", eval.ddim_steps, "DDIM sampling steps")
      ->capture_default_str();
  eval_cmd->add_option("--seed", eval.seed, "Sampling and masking seed")->capture_default_str();
  eval_cmd->add_option("--out", eval.out, "Run directory")->required();

  cli::BenchOptions bench;
  auto* bench_cmd = app.add_subcommand("bench", "Measure generation latency");
  bench_cmd->add_option("--checkpoint", bench.checkpoint,
                        "Model checkpoint (default: full-size random model)");
  bench_cmd->add_option("--ddim-steps", bench.ddim_steps, "DDIM sampling steps")
      ->capture_default_str();
  bench_cmd->add_option("--repeats", bench.repeats, "Timed repeats")->capture_default_str();
  bench_cmd->add_option("--warmup", bench.warmup, "Untimed warmup runs")->capture_default_str();
  bench_cmd->add_option("--seed", bench.seed, "Input and weight seed")->capture_default_str();
  bench_cmd->add_option("--out", bench.out, "Run directory");

  cli::AblateOptions ablate;
  std::uint64_t ablate_seed = 0;
  std::size_t ablate_iters = 0;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train and evaluate an ablation grid");
  ablate_cmd->add_option("--suite", ablate.suite,
                         "timestep | steps-train | length | blocks | losses | predict-noise")
      ->required();
  ablate_cmd->add_option("--config", ablate.config, "Base training config (default: toy)");
  ablate_cmd->add_option("--data", ablate.data, "Dataset directory")->required();
  ablate_cmd->add_option("--out", ablate.out, "Run directory")->required();
  auto* ablate_iters_opt = ablate_cmd->add_option("--iters", ablate_iters, "Override total_iters");
  auto* ablate_seed_opt = ablate_cmd->add_option("--seed", ablate_seed, "Override the seed");
  ablate_cmd->add_option("--ddim-steps", ablate.ddim_steps, "DDIM sampling steps")
      ->capture_default_str();
  ablate_cmd->add_option("--split", ablate.split, "Evaluation split")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return cli::kExitUsage;
  }

  if (*gen_cmd) {
    if (*gen_seed_opt) gen.seed = gen_seed;
    return cli::cmd_gen_data(gen);
  }
  if (*train_cmd) {
    if (*train_seed_opt) train.seed = train_seed;
    if (*train_iters_opt) train.iters = train_iters;
    return cli::cmd_train(train);
  }
  if (*sample_cmd) return cli::cmd_sample(sample);
  if (*eval_cmd) return cli::cmd_evaluate(eval);
  if (*bench_cmd) return cli::cmd_bench(bench);
  if (*ablate_cmd) {
    if (*ablate_seed_opt) ablate.seed = ablate_seed;
    if (*ablate_iters_opt) ablate.iters = ablate_iters;
    return cli::cmd_ablate(ablate);
  }
  return cli::kExitUsage;
}
