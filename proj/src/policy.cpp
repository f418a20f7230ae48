#include "apohf/policy.hpp"

#include <stdexcept>

namespace apohf {

const char* to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::kApohf:
      return "apohf";
    case PolicyKind::kRandom:
      return "random";
    case PolicyKind::kLinear:
      return "linear";
    case PolicyKind::kDoubleTs:
      return "doublets";
    case PolicyKind::kApohfRandomPairs:
      return "apohf-random-pairs";
  }
  return "unknown";
}

PolicyKind policy_kind_from_string(const std::string& s) {
  for (PolicyKind k : {PolicyKind::kApohf, PolicyKind::kRandom, PolicyKind::kLinear,
                       PolicyKind::kDoubleTs, PolicyKind::kApohfRandomPairs}) {
    if (s == to_string(k)) return k;
  }
  throw std::invalid_argument("unknown policy '" + s + "'");
}

void PolicySpec::validate() const {
  config.validate();
  TrainConfig t = train;
  t.l2_lambda = config.lambda;
  t.validate();
  if (ensemble.members < 1) throw std::invalid_argument("ensemble needs at least one member");
}

namespace {

TrainConfig training_config(const PolicySpec& spec, std::uint64_t seed) {
  TrainConfig t = spec.train;
  t.l2_lambda = spec.config.lambda;
  t.init_seed = seed;
  return t;
}

class ApohfPolicy : public Policy {
 public:
  ApohfPolicy(const PolicySpec& spec, Eigen::Index input_dim)
      : spec_(spec),
        input_dim_(input_dim),
        net_(ScoreNet::init(input_dim, 0, spec.widths)),
        state_(spec.config.resolved_mode(input_dim), net_.num_params(), spec.config.lambda) {}

  PolicyKind kind() const override { return PolicyKind::kApohf; }

  void fit(const TrainingSet& data, std::uint64_t seed) override {
    net_ = train(ScoreNet::init(input_dim_, seed, spec_.widths), data,
                 training_config(spec_, seed));
  }

  PairSelection select(const ArmDomain& domain, Rng&) override {
    const bool exclude = spec_.config.exclude_first_from_second;
    if (exclude && domain.size() < 2) {
      throw std::invalid_argument("second-arm selection needs at least 2 arms");
    }
    const Vector scores = net_.forward_batch(domain.embeddings());
    const std::size_t first = argmax_excluding(scores, std::nullopt);
    Matrix g = net_.param_gradients(domain.embeddings());
    const Vector g_first = g.row(static_cast<Eigen::Index>(first)).transpose();
    g.rowwise() -= g_first.transpose();
    Vector acq = scores;
    if (spec_.config.exploration_nu != 0.0) {
      acq += spec_.config.exploration_nu * state_.uncertainties(g);
    }
    const std::size_t second =
        argmax_excluding(acq, exclude ? std::optional<std::size_t>(first) : std::nullopt);
    // Row `second` of g holds grad(second) - grad(first).
    Vector phi = -g.row(static_cast<Eigen::Index>(second)).transpose();
    return PairSelection{first, second, std::move(phi)};
  }

  void absorb(const PreferenceRecord& record) override {
    if (!record.phi) throw std::invalid_argument("APOHF records must carry phi");
    state_.absorb(*record.phi);
  }

  std::size_t report(const ArmDomain& domain, std::span<const std::size_t> candidates,
                     Rng&) override {
    return report_best(net_, candidates, domain);
  }

  const ScoreNet* net() const override { return &net_; }
  const UncertaintyState* uncertainty_state() const override { return &state_; }

 private:
  PolicySpec spec_;
  Eigen::Index input_dim_;
  ScoreNet net_;
  UncertaintyState state_;
};

class ApohfRandomPairsPolicy : public Policy {
 public:
  ApohfRandomPairsPolicy(const PolicySpec& spec, Eigen::Index input_dim)
      : spec_(spec), input_dim_(input_dim), net_(ScoreNet::init(input_dim, 0, spec.widths)) {}

  PolicyKind kind() const override { return PolicyKind::kApohfRandomPairs; }

  void fit(const TrainingSet& data, std::uint64_t seed) override {
    net_ = train(ScoreNet::init(input_dim_, seed, spec_.widths), data,
                 training_config(spec_, seed));
  }

  PairSelection select(const ArmDomain& domain, Rng& rng) override {
    const auto [first, second] = random_pair(domain.size(), rng);
    return PairSelection{first, second, std::nullopt};
  }

  std::size_t report(const ArmDomain& domain, std::span<const std::size_t> candidates,
                     Rng&) override {
    return report_best(net_, candidates, domain);
  }

  const ScoreNet* net() const override { return &net_; }

 private:
  PolicySpec spec_;
  Eigen::Index input_dim_;
  ScoreNet net_;
};

class RandomPolicy : public Policy {
 public:
  PolicyKind kind() const override { return PolicyKind::kRandom; }

  void fit(const TrainingSet&, std::uint64_t) override {}

  PairSelection select(const ArmDomain& domain, Rng& rng) override {
    const auto [first, second] = random_pair(domain.size(), rng);
    return PairSelection{first, second, std::nullopt};
  }

  // Feedback is ignored, so the report is a uniform draw from the candidates.
  std::size_t report(const ArmDomain&, std::span<const std::size_t> candidates,
                     Rng& rng) override {
    if (candidates.empty()) throw std::invalid_argument("no candidates to report from");
    std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
    return candidates[pick(rng)];
  }
};

class LinearPolicy : public Policy {
 public:
  LinearPolicy(const PolicySpec& spec, Eigen::Index input_dim)
      : spec_(spec), input_dim_(input_dim) {
    state_ = linear_fit(TrainingSet{}, input_dim_, spec_.config.lambda,
                        spec_.config.exploration_nu);
  }

  PolicyKind kind() const override { return PolicyKind::kLinear; }

  void fit(const TrainingSet& data, std::uint64_t) override {
    state_ = linear_fit(data, input_dim_, spec_.config.lambda, spec_.config.exploration_nu);
  }

  PairSelection select(const ArmDomain& domain, Rng&) override {
    LinearDuelingState scratch = state_;
    const auto [first, second] =
        linear_select(scratch, domain, spec_.config.exclude_first_from_second);
    return PairSelection{first, second, std::nullopt};
  }

  std::size_t report(const ArmDomain& domain, std::span<const std::size_t> candidates,
                     Rng&) override {
    return argmax_over(domain.embeddings() * state_.theta_hat, candidates);
  }

 private:
  PolicySpec spec_;
  Eigen::Index input_dim_;
  LinearDuelingState state_;
};

class DoubleTsPolicy : public Policy {
 public:
  DoubleTsPolicy(const PolicySpec& spec, Eigen::Index input_dim)
      : spec_(spec), input_dim_(input_dim) {}

  PolicyKind kind() const override { return PolicyKind::kDoubleTs; }

  void fit(const TrainingSet& data, std::uint64_t seed) override {
    ensemble_ = train_ensemble(input_dim_, data, training_config(spec_, seed), seed,
                               spec_.ensemble, spec_.widths);
  }

  PairSelection select(const ArmDomain& domain, Rng& rng) override {
    const ThompsonPair p =
        double_ts_pair(ensemble_, domain, rng, spec_.config.exclude_first_from_second);
    return PairSelection{p.first, p.second, std::nullopt};
  }

  std::size_t report(const ArmDomain& domain, std::span<const std::size_t> candidates,
                     Rng& rng) override {
    return double_ts_report(ensemble_, candidates, domain, rng);
  }

 private:
  PolicySpec spec_;
  Eigen::Index input_dim_;
  EnsembleState ensemble_;
};

}  // namespace

std::unique_ptr<Policy> make_policy(const PolicySpec& spec, Eigen::Index input_dim) {
  spec.validate();
  switch (spec.kind) {
    case PolicyKind::kApohf:
      return std::make_unique<ApohfPolicy>(spec, input_dim);
    case PolicyKind::kApohfRandomPairs:
      return std::make_unique<ApohfRandomPairsPolicy>(spec, input_dim);
    case PolicyKind::kRandom:
      return std::make_unique<RandomPolicy>();
    case PolicyKind::kLinear:
      return std::make_unique<LinearPolicy>(spec, input_dim);
    case PolicyKind::kDoubleTs:
      return std::make_unique<DoubleTsPolicy>(spec, input_dim);
  }
  throw std::invalid_argument("unknown policy kind");
}

}  // namespace apohf
