// Experiment driver: train a federated run while recording its gradient
// history (raw and compressed), unlearn a user from either store or by
// retraining, sweep codec settings, run post-unlearning adaptation rounds,
// and verify the analytic bounds on a small instance.

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "medu/errors.hpp"
#include "medu/harness.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::int64_t seed = -1;
  std::string out_dir;
};

void add_common(CLI::App* sub, CommonArgs* args) {
  sub->add_option("--config", args->config_path, "experiment config file")
      ->required();
  sub->add_option("--seed", args->seed, "override fl.seed");
  sub->add_option("--out", args->out_dir, "override out.dir");
}

medu::ExperimentConfig load_with_overrides(const CommonArgs& args) {
  medu::ExperimentConfig cfg = medu::load_experiment_config(args.config_path);
  if (args.seed >= 0) {
    cfg.fl.seed = static_cast<std::uint64_t>(args.seed);
    cfg.codec.seed = cfg.fl.seed + 1000003;
  }
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated unlearning from compressed gradient histories"};
  app.require_subcommand(1);

  CommonArgs train_args;
  CLI::App* train = app.add_subcommand("train", "train and record history stores");
  add_common(train, &train_args);

  CommonArgs unlearn_args;
  std::string mode = "medu";
  std::uint32_t unlearn_user = 0;
  std::string store_path;
  CLI::App* unlearn =
      app.add_subcommand("unlearn", "compute an unlearned model from a store");
  add_common(unlearn, &unlearn_args);
  unlearn->add_option("--mode", mode, "fu | medu | retrain")
      ->check(CLI::IsMember({"fu", "medu", "retrain"}));
  unlearn->add_option("--unlearn-user", unlearn_user, "1-based user to remove");
  unlearn->add_option("--store", store_path, "history store path override");

  CommonArgs sweep_args;
  CLI::App* sweep =
      app.add_subcommand("sweep", "grid over codec settings, CSV output");
  add_common(sweep, &sweep_args);

  CommonArgs adapt_args;
  std::string checkpoint;
  int adapt_rounds = -1;
  std::string adapt_users_csv;
  CLI::App* adapt =
      app.add_subcommand("adapt", "further training from an unlearned model");
  add_common(adapt, &adapt_args);
  adapt->add_option("--checkpoint", checkpoint, "unlearned checkpoint")
      ->required();
  adapt->add_option("--rounds", adapt_rounds, "adaptation rounds");
  adapt->add_option("--users", adapt_users_csv,
                    "comma list of participating 1-based user ids");

  CommonArgs verify_args;
  double probe_exponent = 0.0;
  bool probe_set = false;
  CLI::App* verify = app.add_subcommand(
      "verify-bounds", "Monte Carlo verification of the analytic bounds");
  add_common(verify, &verify_args);
  verify
      ->add_option("--probe-exponent", probe_exponent,
                   "exponent for the divergence probe (default 1.0)")
      ->each([&](const std::string&) { probe_set = true; });

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      return medu::cmd_train(load_with_overrides(train_args));
    }
    if (unlearn->parsed()) {
      std::optional<std::uint32_t> user;
      if (unlearn->count("--unlearn-user") > 0) user = unlearn_user;
      std::optional<std::filesystem::path> store;
      if (!store_path.empty()) store = store_path;
      return medu::cmd_unlearn(load_with_overrides(unlearn_args), mode, user,
                               store);
    }
    if (sweep->parsed()) {
      return medu::cmd_sweep(load_with_overrides(sweep_args));
    }
    if (adapt->parsed()) {
      std::vector<std::uint32_t> users;
      if (!adapt_users_csv.empty()) {
        std::string token;
        for (char c : adapt_users_csv + ",") {
          if (c == ',') {
            if (!token.empty()) users.push_back(std::stoul(token));
            token.clear();
          } else {
            token.push_back(c);
          }
        }
      }
      return medu::cmd_adapt(load_with_overrides(adapt_args), checkpoint,
                             adapt_rounds, users);
    }
    if (verify->parsed()) {
      std::optional<double> probe;
      if (probe_set) probe = probe_exponent;
      return medu::cmd_verify_bounds(load_with_overrides(verify_args), probe);
    }
  } catch (const medu::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
