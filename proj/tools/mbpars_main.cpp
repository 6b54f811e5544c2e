#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mbpars/harness.hpp"
#include "mbpars/net.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::string backend;
  long long seed = -1;
  int workers = 0;
  bool no_imitation = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "Experiment config (JSON)")
      ->required();
  cmd->add_option("--seed", args.seed, "Override the config seed");
  cmd->add_option("--out", args.out_dir, "Override the output directory");
  cmd->add_option("--backend", args.backend, "Rollout backend")
      ->check(CLI::IsMember({"mb", "mf"}));
  cmd->add_flag("--no-imitation", args.no_imitation,
                "Disable imitation-learning initialization");
  cmd->add_option("--workers", args.workers, "Rollout worker threads");
}

mbpars::ExperimentConfig load_with_overrides(const CommonArgs& args) {
  mbpars::ExperimentConfig config = mbpars::load_config(args.config_path);
  if (args.seed >= 0) config.seed = static_cast<std::uint64_t>(args.seed);
  if (!args.out_dir.empty()) config.out_dir = args.out_dir;
  if (args.backend == "mb") config.backend = "model_based";
  if (args.backend == "mf") config.backend = "model_free";
  if (args.no_imitation) config.use_imitation = false;
  if (args.workers > 0) config.workers = args.workers;
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Model-based derivative-free policy search for emergency "
               "load-shedding voltage control"};
  app.require_subcommand(1);

  CommonArgs gen_args, surr_args, imit_args, train_args, eval_args,
      compare_args;
  std::string dataset_path, surrogate_path, bc_path, policy_path;
  std::vector<std::string> run_specs;

  CLI::App* gen = app.add_subcommand("gen-data", "Generate the offline "
                                                 "noisy-UVLS dataset");
  add_common(gen, gen_args);

  CLI::App* surr =
      app.add_subcommand("train-surrogate", "Train the dynamics surrogate");
  add_common(surr, surr_args);
  surr->add_option("--dataset", dataset_path, "Offline dataset (jsonl)")
      ->required();

  CLI::App* imit = app.add_subcommand(
      "imitate", "Behavior-clone the UVLS demonstrations into the policy");
  add_common(imit, imit_args);
  imit->add_option("--dataset", dataset_path, "Offline dataset (jsonl)")
      ->required();

  CLI::App* train =
      app.add_subcommand("train-policy", "Run the policy-search loop");
  add_common(train, train_args);
  train->add_option("--surrogate", surrogate_path,
                    "Surrogate checkpoint (required for mb backend)");
  train->add_option("--bc-init", bc_path, "Imitation checkpoint");
  train->add_option("--dataset", dataset_path,
                    "Offline dataset (retraining / inline imitation)");

  CLI::App* eval =
      app.add_subcommand("evaluate", "Evaluate a policy on the test tasks");
  add_common(eval, eval_args);
  eval->add_option("--policy", policy_path, "Policy checkpoint")->required();

  CLI::App* compare = app.add_subcommand(
      "compare", "Efficiency comparison across report CSVs");
  add_common(compare, compare_args);
  compare
      ->add_option("--run", run_specs,
                   "LABEL:report.csv[,report.csv...] (first run is the "
                   "reference; repeatable)")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      mbpars::cmd_gen_data(load_with_overrides(gen_args));
    } else if (surr->parsed()) {
      mbpars::cmd_train_surrogate(load_with_overrides(surr_args),
                                  dataset_path);
    } else if (imit->parsed()) {
      mbpars::cmd_imitate(load_with_overrides(imit_args), dataset_path);
    } else if (train->parsed()) {
      mbpars::cmd_train_policy(load_with_overrides(train_args), surrogate_path,
                               bc_path, dataset_path);
    } else if (eval->parsed()) {
      mbpars::cmd_evaluate(load_with_overrides(eval_args), policy_path);
    } else if (compare->parsed()) {
      std::vector<mbpars::CompareRun> runs;
      for (const std::string& spec : run_specs) {
        const auto colon = spec.find(':');
        if (colon == std::string::npos) {
          throw mbpars::ConfigError("compare: --run expects LABEL:paths");
        }
        mbpars::CompareRun run;
        run.label = spec.substr(0, colon);
        std::string rest = spec.substr(colon + 1);
        std::size_t at = 0;
        while (at != std::string::npos) {
          const auto comma = rest.find(',', at);
          run.report_paths.push_back(
              rest.substr(at, comma == std::string::npos ? comma : comma - at));
          at = comma == std::string::npos ? comma : comma + 1;
        }
        runs.push_back(std::move(run));
      }
      mbpars::cmd_compare(load_with_overrides(compare_args), runs);
    }
  } catch (const mbpars::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const mbpars::TrainingDivergence& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
