#pragma once

// Uniform interface over APOHF and the comparison policies, as driven by
// PreferenceLoop.

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "apohf/apohf.hpp"
#include "apohf/baselines.hpp"
#include "apohf/domain.hpp"
#include "apohf/random.hpp"
#include "apohf/score_net.hpp"

namespace apohf {

enum class PolicyKind {
  kApohf,
  kRandom,
  kLinear,
  kDoubleTs,
  // APOHF's training and reporting with uniformly random pairs.
  kApohfRandomPairs,
};

const char* to_string(PolicyKind kind);
PolicyKind policy_kind_from_string(const std::string& s);

struct PolicySpec {
  PolicyKind kind = PolicyKind::kApohf;
  PolicyConfig config;
  // l2_lambda is overridden by config.lambda; init_seed by the loop.
  TrainConfig train;
  std::vector<int> widths = default_widths();
  EnsembleConfig ensemble;

  void validate() const;
};

struct PairSelection {
  std::size_t first = 0;
  std::size_t second = 0;
  // Gradient difference at selection time, for policies that keep one.
  std::optional<Vector> phi;
};

class Policy {
 public:
  virtual ~Policy() = default;

  virtual PolicyKind kind() const = 0;
  // Refits from scratch on `data`; `seed` drives any re-initialization.
  virtual void fit(const TrainingSet& data, std::uint64_t seed) = 0;
  virtual PairSelection select(const ArmDomain& domain, Rng& rng) = 0;
  // Folds a completed record into running state.
  virtual void absorb(const PreferenceRecord& record) { (void)record; }
  virtual std::size_t report(const ArmDomain& domain, std::span<const std::size_t> candidates,
                             Rng& rng) = 0;

  // Present for APOHF-style policies.
  virtual const ScoreNet* net() const { return nullptr; }
  virtual const UncertaintyState* uncertainty_state() const { return nullptr; }
};

std::unique_ptr<Policy> make_policy(const PolicySpec& spec, Eigen::Index input_dim);

}  // namespace apohf
