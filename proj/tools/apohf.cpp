// apohf: run single trials, sweeps, or the live preference service.
//
//   apohf run   --policy apohf --horizon 150 --out results/
//   apohf suite --policy apohf,random --nu 0,1 --noise-scale 1,4 --trials 10
//   apohf serve --bind 0.0.0.0 --port 8080 --data-dir /var/lib/apohf

#include <csignal>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "apohf/harness.hpp"
#include "apohf/random.hpp"
#include "apohf/service.hpp"

using namespace apohf;

namespace {

struct Options {
  std::vector<std::string> policies{"apohf"};
  std::string domain_file;
  std::string contextual_file;
  std::string scores_file;
  std::vector<double> nus{1.0};
  double lambda = 0.1;
  std::vector<double> noise_scales{1.0};
  std::uint64_t horizon = 150;
  std::size_t trials = 2;
  std::uint64_t seed = 0;
  std::string uncertainty = "auto";
  std::string exclude_first = "on";
  std::string out_dir = "results";
  int epochs = 1000;
  bool unit_norm = false;
  bool raw_scores = false;

  // Synthetic environments, used when no --domain / --contextual is given.
  std::string environment = "linear";
  std::size_t arms = 200;
  int dim = 10;
  std::size_t contexts = 5;
  std::size_t candidates = 20;
  int context_dim = 5;
  int response_dim = 5;
};

void add_experiment_options(CLI::App& app, Options& o, bool sweep) {
  if (sweep) {
    app.add_option("--policy", o.policies, "Policies: apohf, random, linear, doublets, apohf-random-pairs")
        ->delimiter(',');
    app.add_option("--nu", o.nus, "Exploration weights")->delimiter(',');
    app.add_option("--noise-scale", o.noise_scales, "Noise scales s")->delimiter(',');
  } else {
    o.policies.resize(1);
    o.nus.resize(1);
    o.noise_scales.resize(1);
    o.trials = 1;
    app.add_option("--policy", o.policies[0], "apohf, random, linear, doublets, apohf-random-pairs");
    app.add_option("--nu", o.nus[0], "Exploration weight");
    app.add_option("--noise-scale", o.noise_scales[0], "Noise scale s");
  }
  app.add_option("--domain", o.domain_file, "Arm domain (JSONL)")->check(CLI::ExistingFile);
  app.add_option("--contextual", o.contextual_file, "Contextual rounds (JSONL)")
      ->check(CLI::ExistingFile);
  app.add_option("--scores", o.scores_file, "Latent utilities (JSONL)")->check(CLI::ExistingFile);
  app.add_option("--lambda", o.lambda, "Regularization and precision prior");
  app.add_option("--horizon", o.horizon, "Iterations per trial");
  app.add_option("--trials", o.trials, "Independent trials");
  app.add_option("--seed", o.seed, "Base seed");
  app.add_option("--uncertainty", o.uncertainty, "full, diag or auto")
      ->check(CLI::IsMember({"full", "diag", "auto"}));
  app.add_option("--exclude-first", o.exclude_first, "Exclude the first arm from the second pick")
      ->check(CLI::IsMember({"on", "off"}));
  app.add_option("--out", o.out_dir, "Directory for results.json / results.csv");
  app.add_option("--epochs", o.epochs, "Training epochs per refit");
  app.add_flag("--unit-norm", o.unit_norm, "Rescale embeddings to unit norm");
  app.add_flag("--raw-scores", o.raw_scores, "Use utilities as given instead of sd-10 normalized");
  app.add_option("--env", o.environment, "Synthetic environment: linear, quadratic, contextual")
      ->check(CLI::IsMember({"linear", "quadratic", "contextual"}));
  app.add_option("--arms", o.arms, "Synthetic arms");
  app.add_option("--dim", o.dim, "Synthetic embedding dimension");
  app.add_option("--contexts", o.contexts, "Synthetic contexts");
  app.add_option("--candidates", o.candidates, "Synthetic candidates per context");
  app.add_option("--context-dim", o.context_dim, "Synthetic context embedding dimension");
  app.add_option("--response-dim", o.response_dim, "Synthetic response embedding dimension");
}

EnvironmentFactory make_environments(const Options& o) {
  if (!o.domain_file.empty() || !o.contextual_file.empty()) {
    if (!o.domain_file.empty() && !o.contextual_file.empty()) {
      throw std::invalid_argument("--domain and --contextual are exclusive");
    }
    if (o.scores_file.empty()) throw std::invalid_argument("--scores is required with a domain file");
    auto problem = o.domain_file.empty()
                       ? std::make_shared<const Problem>(load_contextual_file(o.contextual_file))
                       : std::make_shared<const Problem>(load_domain_file(o.domain_file));
    Environment env{problem, load_utility_table_file(o.scores_file, *problem)};
    return [env](std::size_t) { return env; };
  }
  return [o](std::size_t trial) {
    const std::uint64_t seed = derive_seed(o.seed, {tag(Stream::kEnvironment), trial});
    if (o.environment == "quadratic") return synthetic_quadratic_environment(o.arms, o.dim, seed);
    if (o.environment == "contextual") {
      return synthetic_contextual_environment(o.contexts, o.candidates, o.context_dim,
                                              o.response_dim, seed);
    }
    return synthetic_linear_environment(o.arms, o.dim, seed);
  };
}

SuiteSpec make_suite(const Options& o) {
  SuiteSpec spec;
  spec.policies.clear();
  for (const auto& p : o.policies) spec.policies.push_back(policy_kind_from_string(p));
  spec.nus = o.nus;
  spec.noise_scales = o.noise_scales;
  RunConfig& base = spec.base;
  base.horizon = o.horizon;
  base.seed = o.seed;
  base.trials = o.trials;
  base.unit_norm = o.unit_norm;
  base.oracle.normalize = !o.raw_scores;
  base.policy.config.lambda = o.lambda;
  base.policy.config.exclude_first_from_second = o.exclude_first == "on";
  if (o.uncertainty != "auto") {
    base.policy.config.uncertainty_mode = uncertainty_mode_from_string(o.uncertainty);
  }
  base.policy.train.epochs = o.epochs;
  base.validate();
  if (!o.domain_file.empty()) {
    spec.environment_label = o.domain_file;
  } else if (!o.contextual_file.empty()) {
    spec.environment_label = o.contextual_file;
  } else {
    spec.environment_label = "synthetic-" + o.environment;
  }
  return spec;
}

int run_experiment(const Options& o) {
  const SuiteSpec spec = make_suite(o);
  const SuiteResult result = run_suite(spec, make_environments(o));
  write_results(result, o.out_dir);
  int failures = 0;
  for (const CellResult& cell : result.cells) {
    if (cell.error) {
      std::cerr << cell.label() << ": " << *cell.error << "\n";
      ++failures;
      continue;
    }
    const MeanSe m = mean_se(cell.final_scores());
    std::cout << cell.label() << "  T=" << spec.base.horizon << "  mean " << m.mean << "  se "
              << m.se << "\n";
  }
  std::cout << "wrote " << (std::filesystem::path(o.out_dir) / "results.json").string() << "\n";
  return failures == 0 ? 0 : 1;
}

HttpService* g_service = nullptr;

void on_signal(int) {
  if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Preference optimization from pairwise human feedback"};
  app.require_subcommand(1);

  Options run_opts;
  CLI::App* run = app.add_subcommand("run", "Single trial");
  add_experiment_options(*run, run_opts, false);

  Options suite_opts;
  CLI::App* suite = app.add_subcommand("suite", "Sweep over policies, nu and noise scale");
  add_experiment_options(*suite, suite_opts, true);

  ServiceConfig service = ServiceConfig::from_env();
  std::string data_dir = service.data_dir.string();
  CLI::App* serve = app.add_subcommand("serve", "HTTP service for live sessions");
  serve->add_option("--bind", service.bind_address, "Bind address (APOHF_BIND)");
  serve->add_option("--port", service.port, "Port (APOHF_PORT)");
  serve->add_option("--data-dir", data_dir, "Session storage (APOHF_DATA_DIR)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return run_experiment(run_opts);
    if (*suite) return run_experiment(suite_opts);
    if (*serve) {
      SessionStore store(data_dir);
      HttpService http(store);
      g_service = &http;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "listening on " << service.bind_address << ":" << service.port << "\n"
                << std::flush;
      if (!http.listen(service.bind_address, service.port)) {
        std::cerr << "cannot bind " << service.bind_address << ":" << service.port << "\n";
        return 1;
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
