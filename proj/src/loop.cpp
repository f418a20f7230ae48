#include "apohf/loop.hpp"

#include <numeric>
#include <stdexcept>

namespace apohf {

PreferenceLoop::PreferenceLoop(std::shared_ptr<const Problem> problem, PolicySpec spec,
                               std::uint64_t seed)
    : problem_(std::move(problem)), spec_(std::move(spec)), seed_(seed) {
  if (!problem_) throw std::invalid_argument("loop needs a problem");
  policy_ = make_policy(spec_, problem_->dim());
  queried_.resize(problem_->num_rounds());
  refit();
}

PreferenceLoop PreferenceLoop::restore(std::shared_ptr<const Problem> problem, PolicySpec spec,
                                       std::uint64_t seed, const History& history,
                                       std::optional<std::uint64_t> next_iteration) {
  PreferenceLoop loop(std::move(problem), std::move(spec), seed);
  for (const PreferenceRecord& record : history.records()) {
    const std::size_t round = loop.problem_->round_of(record);
    if (loop.problem_->round_for_iteration(record.iteration) != round) {
      throw HistoryError("record " + std::to_string(record.iteration) +
                         " does not follow the round-robin order");
    }
    loop.policy_->absorb(record);
    loop.history_.append(record);
    loop.queried_[round].insert(record.first);
    loop.queried_[round].insert(record.second);
  }
  loop.next_iteration_ = next_iteration.value_or(history.last_iteration() + 1);
  if (loop.next_iteration_ <= history.last_iteration()) {
    throw HistoryError("next iteration must follow the last record");
  }
  if (loop.next_iteration_ != 1) loop.refit();
  return loop;
}

void PreferenceLoop::refit() {
  // Same init seed on every refit: training restarts from theta_0.
  policy_->fit(problem_->training_set(history_), derive_seed(seed_, {tag(Stream::kInit)}));
}

const PendingPair& PreferenceLoop::pending() {
  if (!pending_) {
    const std::uint64_t t = next_iteration_;
    const std::size_t round = problem_->round_for_iteration(t);
    Rng rng = make_rng(seed_, {tag(Stream::kSelect), t});
    PairSelection sel = policy_->select(problem_->round(round).arms, rng);
    pending_ = PendingPair{t, round, sel.first, sel.second, std::move(sel.phi)};
  }
  return *pending_;
}

std::optional<PreferenceRecord> PreferenceLoop::complete(int outcome) {
  if (outcome != 0 && outcome != 1) throw std::invalid_argument("outcome must be 0 or 1");
  const PendingPair p = pending();
  std::optional<PreferenceRecord> appended;
  if (!p.duplicate()) {
    PreferenceRecord record;
    record.iteration = p.iteration;
    record.first = p.first;
    record.second = p.second;
    record.outcome = outcome;
    record.phi = p.phi;
    if (problem_->contextual()) record.context_id = problem_->round(p.round).context_id;
    policy_->absorb(record);
    history_.append(record);
    queried_[p.round].insert(p.first);
    queried_[p.round].insert(p.second);
    appended = std::move(record);
  }
  pending_.reset();
  ++next_iteration_;
  refit();
  return appended;
}

std::vector<std::size_t> PreferenceLoop::queried(std::size_t round) const {
  const auto& q = queried_.at(round);
  return {q.begin(), q.end()};
}

std::size_t PreferenceLoop::report(std::size_t round) {
  std::vector<std::size_t> candidates = queried(round);
  const ArmDomain& arms = problem_->round(round).arms;
  if (candidates.empty()) {
    candidates.resize(arms.size());
    std::iota(candidates.begin(), candidates.end(), std::size_t{0});
  }
  Rng rng = make_rng(seed_, {tag(Stream::kReport), next_iteration_, round});
  return policy_->report(arms, candidates, rng);
}

}  // namespace apohf
