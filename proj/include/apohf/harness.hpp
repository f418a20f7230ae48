#pragma once

// Experiment driver: single trials over fixed or contextual problems, sweeps
// over policies / exploration / noise, and plot-ready result files.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "apohf/domain.hpp"
#include "apohf/loop.hpp"
#include "apohf/oracle.hpp"
#include "apohf/policy.hpp"

namespace apohf {

struct RunConfig {
  std::uint64_t horizon = 150;
  std::uint64_t seed = 0;
  std::size_t trials = 2;
  PolicySpec policy;
  OracleConfig oracle;
  // Rescale embeddings to unit norm before any policy sees them.
  bool unit_norm = false;

  void validate() const;
};

struct IterationResult {
  std::uint64_t t = 0;
  std::size_t round = 0;
  std::size_t first = 0;
  std::size_t second = 0;
  // -1 when the pair was a duplicate and no feedback was taken.
  int outcome = -1;
  // Reported best for the round of this iteration.
  std::size_t best_index = 0;
  std::string best_id;
  // Fixed domain: true score of the reported best. Contextual: mean over all
  // contexts of the true score of each context's reported best.
  double true_score = 0.0;
  // Contextual only: reported best per context.
  std::vector<std::size_t> best_per_round;
  double wall_seconds = 0.0;
};

struct TrialResult {
  std::vector<IterationResult> iterations;
  History history;

  const IterationResult& final() const { return iterations.back(); }
};

// Runs the loop for config.horizon iterations against `oracle`, scoring the
// report after each iteration with `truth`.
TrialResult run_trial(const PolicySpec& policy, std::shared_ptr<const Problem> problem,
                      const UtilityTable& truth, PreferenceOracle& oracle,
                      std::uint64_t horizon, std::uint64_t seed);

// Contextual protocol: round-robin contexts, metric averaged over contexts.
TrialResult run_contextual_trial(const PolicySpec& policy,
                                 std::shared_ptr<const Problem> problem,
                                 const UtilityTable& truth, PreferenceOracle& oracle,
                                 std::uint64_t horizon, std::uint64_t seed);

// Re-selects every recorded pair from the preceding records only and checks
// it matches the log. Returns the first mismatching iteration, if any.
std::optional<std::uint64_t> replay_mismatch(const PolicySpec& policy,
                                             std::shared_ptr<const Problem> problem,
                                             const TrialResult& trial, std::uint64_t seed);

struct Environment {
  std::shared_ptr<const Problem> problem;
  // Raw utilities; the oracle normalizes them when configured.
  UtilityTable utilities;
};

// n arms with N(0, I) embeddings of dimension d.
ArmDomain gaussian_domain(std::size_t arms, Eigen::Index dim, std::uint64_t seed);
Environment synthetic_linear_environment(std::size_t arms, Eigen::Index dim,
                                         std::uint64_t seed);
Environment synthetic_quadratic_environment(std::size_t arms, Eigen::Index dim,
                                            std::uint64_t seed);
// Contexts x candidates; each candidate embedding is [context, response] and
// the utility w^T r + r^T A p mixes both halves.
Environment synthetic_contextual_environment(std::size_t contexts, std::size_t candidates,
                                             Eigen::Index context_dim,
                                             Eigen::Index response_dim, std::uint64_t seed);

// Environment for trial k of a suite.
using EnvironmentFactory = std::function<Environment(std::size_t trial)>;

struct SuiteSpec {
  std::vector<PolicyKind> policies{PolicyKind::kApohf, PolicyKind::kRandom};
  // Applied to exploration-sensitive policies (apohf, linear) only.
  std::vector<double> nus{1.0};
  std::vector<double> noise_scales{1.0};
  RunConfig base;
  std::string environment_label;
};

struct CurvePoint {
  std::uint64_t t = 0;
  std::string best_id;
  double mean = 0.0;
  double se = 0.0;
};

struct CellResult {
  PolicyKind policy = PolicyKind::kApohf;
  std::optional<double> nu;
  double noise_scale = 1.0;
  std::vector<TrialResult> trials;
  std::vector<CurvePoint> curve;
  std::optional<std::string> error;

  std::string label() const;
  // Final-iteration true scores, one per trial.
  std::vector<double> final_scores() const;
};

struct SuiteResult {
  SuiteSpec spec;
  std::vector<CellResult> cells;

  const CellResult* find(PolicyKind policy, std::optional<double> nu,
                         double noise_scale) const;
};

SuiteResult run_suite(const SuiteSpec& spec, const EnvironmentFactory& environments);

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};
// Sample mean and standard error (sd with n-1 over sqrt n; 0 for n = 1).
MeanSe mean_se(const std::vector<double>& values);
// sqrt(se_a^2 + se_b^2).
double pooled_se(const MeanSe& a, const MeanSe& b);

nlohmann::json results_json(const SuiteResult& result);
std::string results_csv(const SuiteResult& result);
// Writes results.json and results.csv into `dir` (created if missing).
void write_results(const SuiteResult& result, const std::filesystem::path& dir);

nlohmann::json run_config_json(const RunConfig& config);

}  // namespace apohf
