#pragma once

// One run of the train -> select pair -> observe -> record cycle, independent
// of where feedback comes from. The harness drives it with a simulated oracle
// and the service drives it with human verdicts.
//
// Every random decision is keyed by (seed, purpose, iteration), so the loop
// state is a pure function of (problem, spec, seed, history, next iteration)
// and can be rebuilt from a persisted history. The one exception is network
// initialization: every refit restarts from the same theta_0 of the run, so
// gradient features absorbed at different iterations stay comparable.

#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <vector>

#include "apohf/domain.hpp"
#include "apohf/policy.hpp"

namespace apohf {

struct PendingPair {
  std::uint64_t iteration = 0;
  std::size_t round = 0;
  std::size_t first = 0;
  std::size_t second = 0;
  std::optional<Vector> phi;

  // Only possible with first-arm exclusion switched off.
  bool duplicate() const { return first == second; }
};

class PreferenceLoop {
 public:
  PreferenceLoop(std::shared_ptr<const Problem> problem, PolicySpec spec, std::uint64_t seed);

  // Rebuilds a loop whose completed iterations produced `history`. Stored
  // gradient features are absorbed as-is and the model is refit once.
  static PreferenceLoop restore(std::shared_ptr<const Problem> problem, PolicySpec spec,
                                std::uint64_t seed, const History& history,
                                std::optional<std::uint64_t> next_iteration = std::nullopt);

  // Pair for the next iteration, selected with the model fit on all records
  // so far. Stable until complete() is called.
  const PendingPair& pending();

  // Completes the pending iteration with outcome y (1 iff first preferred).
  // Duplicate pairs carry no information and append no record. Returns the
  // appended record, if any.
  std::optional<PreferenceRecord> complete(int outcome);

  std::uint64_t next_iteration() const { return next_iteration_; }
  const History& history() const { return history_; }
  const Problem& problem() const { return *problem_; }
  const PolicySpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }
  const Policy& policy() const { return *policy_; }

  // Arms of `round` that appear in the history, ascending.
  std::vector<std::size_t> queried(std::size_t round) const;

  // Best arm of `round` under the current model: over the round's queried
  // arms, or over all of its arms if none has been queried yet.
  std::size_t report(std::size_t round);

 private:
  std::shared_ptr<const Problem> problem_;
  PolicySpec spec_;
  std::uint64_t seed_;
  std::unique_ptr<Policy> policy_;
  History history_;
  std::vector<std::set<std::size_t>> queried_;
  std::uint64_t next_iteration_ = 1;
  std::optional<PendingPair> pending_;

  void refit();
};

}  // namespace apohf
