#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <Eigen/QR>

#include "apohf/harness.hpp"
#include "support.hpp"

using namespace apohf;

namespace {

PolicySpec quick(PolicyKind kind) {
  PolicySpec spec;
  spec.kind = kind;
  spec.train.epochs = 60;
  spec.widths = {8, 8};
  spec.ensemble.members = 3;
  return spec;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("apohf-test-" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("one iteration on two arms") {
  const Environment env = synthetic_linear_environment(2, 3, 1);
  BtlOracle oracle(env.utilities, OracleConfig{});
  const TrialResult r = run_trial(quick(PolicyKind::kApohf), env.problem, oracle.table(), oracle, 1, 5);
  REQUIRE(r.iterations.size() == 1);
  CHECK(r.history.size() == 1);
  CHECK(r.final().best_index <= 1);
  CHECK(std::set<std::size_t>{r.history[0].first, r.history[0].second} ==
        std::set<std::size_t>{0, 1});
}

TEST_CASE("random search: cumulative max of queried truth never drops") {
  const Environment env = synthetic_linear_environment(200, 10, 2);
  BtlOracle oracle(env.utilities, OracleConfig{});
  const TrialResult r = run_trial(quick(PolicyKind::kRandom), env.problem, oracle.table(), oracle, 150, 3);
  CHECK(r.iterations.size() == 150);
  double best = -1e300;
  std::set<std::size_t> queried;
  for (std::size_t i = 0; i < r.history.size(); ++i) {
    const double m = std::max(oracle.table().score(0, r.history[i].first),
                              oracle.table().score(0, r.history[i].second));
    CHECK(std::max(best, m) >= best);
    best = std::max(best, m);
    queried.insert(r.history[i].first);
    queried.insert(r.history[i].second);
    CHECK(queried.count(r.iterations[i].best_index));
  }
}

TEST_CASE("trials are deterministic and reports stay inside the queried set") {
  const Environment env = synthetic_linear_environment(25, 4, 3);
  for (PolicyKind kind : {PolicyKind::kApohf, PolicyKind::kLinear, PolicyKind::kDoubleTs,
                          PolicyKind::kRandom, PolicyKind::kApohfRandomPairs}) {
    CAPTURE(to_string(kind));
    OracleConfig oc;
    oc.seed = 4;
    BtlOracle o1(env.utilities, oc), o2(env.utilities, oc);
    const TrialResult a = run_trial(quick(kind), env.problem, o1.table(), o1, 12, 9);
    const TrialResult b = run_trial(quick(kind), env.problem, o2.table(), o2, 12, 9);
    REQUIRE(a.iterations.size() == 12);
    std::set<std::size_t> queried;
    for (std::size_t i = 0; i < a.iterations.size(); ++i) {
      CHECK(a.iterations[i].first == b.iterations[i].first);
      CHECK(a.iterations[i].second == b.iterations[i].second);
      CHECK(a.iterations[i].best_index == b.iterations[i].best_index);
      CHECK(a.iterations[i].true_score == b.iterations[i].true_score);
      CHECK(std::isfinite(a.iterations[i].true_score));
      queried.insert(a.iterations[i].first);
      queried.insert(a.iterations[i].second);
      CHECK(queried.count(a.iterations[i].best_index));
    }
  }
}

TEST_CASE("every recorded pair replays from its prefix") {
  const Environment env = synthetic_linear_environment(20, 3, 4);
  for (PolicyKind kind : {PolicyKind::kApohf, PolicyKind::kLinear, PolicyKind::kDoubleTs,
                          PolicyKind::kRandom}) {
    CAPTURE(to_string(kind));
    BtlOracle oracle(env.utilities, OracleConfig{});
    const TrialResult r = run_trial(quick(kind), env.problem, oracle.table(), oracle, 8, 11);
    CHECK_FALSE(replay_mismatch(quick(kind), env.problem, r, 11).has_value());
    // A different seed does not reproduce the log.
    if (kind != PolicyKind::kLinear) {
      CHECK(replay_mismatch(quick(kind), env.problem, r, 12).has_value());
    }
  }
}

TEST_CASE("duplicate pairs are skipped when exclusion is off") {
  const Environment env = synthetic_linear_environment(10, 3, 5);
  PolicySpec spec = quick(PolicyKind::kApohf);
  spec.config.exclude_first_from_second = false;
  spec.config.exploration_nu = 0.0;
  BtlOracle oracle(env.utilities, OracleConfig{});
  const TrialResult r = run_trial(spec, env.problem, oracle.table(), oracle, 5, 1);
  CHECK(r.iterations.size() == 5);
  for (const IterationResult& it : r.iterations) {
    CHECK(it.first == it.second);
    CHECK(it.outcome == -1);
  }
  CHECK(r.history.empty());
}

TEST_CASE("single-context run matches the fixed-domain run") {
  const Environment env = synthetic_linear_environment(30, 4, 6);
  const ArmDomain& arms = env.problem->round(0).arms;
  auto single = std::make_shared<const Problem>(std::vector<ContextRound>{{"only", "", arms}});
  BtlOracle o1(env.utilities, OracleConfig{}), o2(env.utilities, OracleConfig{});
  const TrialResult a = run_trial(quick(PolicyKind::kApohf), env.problem, o1.table(), o1, 10, 2);
  const TrialResult b = run_contextual_trial(quick(PolicyKind::kApohf), single, o2.table(), o2, 10, 2);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(a.iterations[i].first == b.iterations[i].first);
    CHECK(a.iterations[i].true_score == b.iterations[i].true_score);
  }
  CHECK_THROWS(run_trial(quick(PolicyKind::kApohf), single, o1.table(), o1, 1, 2));
}

TEST_CASE("contextual protocol") {
  const Environment env = synthetic_contextual_environment(4, 6, 3, 3, 7);
  const Problem& p = *env.problem;
  REQUIRE(p.num_rounds() == 4);
  BtlOracle oracle(env.utilities, OracleConfig{});
  const PolicySpec spec = quick(PolicyKind::kApohf);
  const std::uint64_t horizon = 11, seed = 8;
  const TrialResult r = run_contextual_trial(spec, env.problem, oracle.table(), oracle, horizon, seed);
  REQUIRE(r.iterations.size() == horizon);
  for (const IterationResult& it : r.iterations) {
    CHECK(it.round == (it.t - 1) % 4);
    CHECK(it.first < p.round(it.round).arms.size());
    CHECK(it.second < p.round(it.round).arms.size());
  }
  for (const PreferenceRecord& rec : r.history.records()) {
    REQUIRE(rec.context_id);
    CHECK(*rec.context_id == p.round((rec.iteration - 1) % 4).context_id);
  }

  // Brute-force the final metric: restore the net, argmax it over each
  // context's queried arms, average the true scores.
  PreferenceLoop loop = PreferenceLoop::restore(env.problem, spec, seed, r.history, horizon + 1);
  const ScoreNet* net = loop.policy().net();
  REQUIRE(net);
  double total = 0.0;
  for (std::size_t c = 0; c < 4; ++c) {
    std::set<std::size_t> queried;
    for (const PreferenceRecord& rec : r.history.records()) {
      if (p.round_of(rec) == c) {
        queried.insert(rec.first);
        queried.insert(rec.second);
      }
    }
    REQUIRE_FALSE(queried.empty());
    std::size_t best = *queried.begin();
    for (std::size_t a : queried) {
      if (net->forward(p.round(c).arms.arm(a).embedding) >
          net->forward(p.round(c).arms.arm(best).embedding)) {
        best = a;
      }
    }
    CHECK(r.final().best_per_round[c] == best);
    total += oracle.table().score(c, best);
  }
  CHECK(r.final().true_score == doctest::Approx(total / 4).epsilon(1e-14));
  CHECK_FALSE(replay_mismatch(spec, env.problem, r, seed).has_value());
}

TEST_CASE("mean and standard error") {
  const MeanSe m = mean_se({3.0, 7.0});
  CHECK(m.mean == 5.0);
  CHECK(m.se == doctest::Approx(2.0));
  CHECK(mean_se({4.0}).se == 0.0);
  CHECK(pooled_se({0, 3}, {0, 4}) == doctest::Approx(5.0));
}

TEST_CASE("suite aggregation, labels and partial failures") {
  SuiteSpec spec;
  spec.policies = {PolicyKind::kApohf, PolicyKind::kRandom};
  spec.nus = {0.0, 1.0, 10.0};
  spec.noise_scales = {1.0, 4.0};
  spec.base.horizon = 4;
  spec.base.trials = 2;
  spec.base.seed = 3;
  spec.base.policy = quick(PolicyKind::kApohf);
  const SuiteResult r = run_suite(spec, [](std::size_t k) {
    return synthetic_linear_environment(15, 3, 100 + k);
  });
  // apohf: 3 nus x 2 noise; random: 1 x 2.
  REQUIRE(r.cells.size() == 8);
  std::set<std::string> labels;
  for (const CellResult& c : r.cells) {
    CHECK_FALSE(c.error);
    labels.insert(c.label());
    REQUIRE(c.trials.size() == 2);
    const std::vector<double> f = c.final_scores();
    CHECK(c.curve.back().se == doctest::Approx(std::abs(f[0] - f[1]) / 2).epsilon(1e-12));
    CHECK(c.curve.back().mean == doctest::Approx((f[0] + f[1]) / 2).epsilon(1e-14));
    CHECK(c.curve.size() == 4);
  }
  CHECK(labels.size() == 8);
  CHECK(r.find(PolicyKind::kApohf, 10.0, 4.0));
  CHECK(r.find(PolicyKind::kRandom, std::nullopt, 1.0));

  SuiteSpec bad = spec;
  bad.policies = {PolicyKind::kRandom};
  bad.noise_scales = {1.0, 0.0};
  const SuiteResult partial = run_suite(bad, [](std::size_t k) {
    return synthetic_linear_environment(15, 3, 100 + k);
  });
  REQUIRE(partial.cells.size() == 2);
  CHECK_FALSE(partial.cells[0].error);
  CHECK(partial.cells[1].error);
  CHECK(results_json(partial)["cells"][1].contains("error"));
}

TEST_CASE("results files are byte-identical across runs") {
  SuiteSpec spec;
  spec.policies = {PolicyKind::kApohf, PolicyKind::kLinear, PolicyKind::kRandom};
  spec.base.horizon = 5;
  spec.base.trials = 2;
  spec.base.seed = 12;
  spec.base.policy = quick(PolicyKind::kApohf);
  auto factory = [](std::size_t k) { return synthetic_linear_environment(20, 3, 50 + k); };
  const auto d1 = scratch("det-1"), d2 = scratch("det-2");
  write_results(run_suite(spec, factory), d1);
  write_results(run_suite(spec, factory), d2);
  CHECK(slurp(d1 / "results.json") == slurp(d2 / "results.json"));
  CHECK(slurp(d1 / "results.csv") == slurp(d2 / "results.csv"));
  const std::string csv = slurp(d1 / "results.csv");
  CHECK(csv.rfind("cell,trial,t,best_id,true_score\n", 0) == 0);
  const auto j = nlohmann::json::parse(slurp(d1 / "results.json"));
  CHECK(j["cells"].size() == 3);
  CHECK(j["cells"][0]["iterations"].size() == 5);
  CHECK(j["cells"][0]["iterations"][0].contains("best_id"));
  CHECK(j.contains("config"));
}

TEST_CASE("unit-norm preprocessing applies before the policy") {
  SuiteSpec spec;
  spec.policies = {PolicyKind::kRandom};
  spec.base.horizon = 3;
  spec.base.trials = 1;
  spec.base.unit_norm = true;
  const SuiteResult r = run_suite(spec, [](std::size_t) {
    return synthetic_linear_environment(10, 3, 1);
  });
  CHECK_FALSE(r.cells[0].error);
  RunConfig c;
  c.horizon = 0;
  CHECK_THROWS(c.validate());
}

TEST_CASE("synthetic environments") {
  const Environment a = synthetic_linear_environment(50, 5, 9);
  const Environment b = synthetic_linear_environment(50, 5, 9);
  CHECK(a.problem->hash() == b.problem->hash());
  CHECK(a.utilities.per_round[0] == b.utilities.per_round[0]);
  // Linear ground truth: utilities are an exact linear function of the embeddings.
  const Matrix& x = a.problem->round(0).arms.embeddings();
  const Vector w = x.colPivHouseholderQr().solve(a.utilities.per_round[0]);
  CHECK((x * w - a.utilities.per_round[0]).norm() < 1e-9);

  const Environment c = synthetic_contextual_environment(5, 20, 4, 6, 1);
  CHECK(c.problem->num_rounds() == 5);
  CHECK(c.problem->dim() == 10);
  CHECK(c.utilities.per_round.size() == 5);
  CHECK(c.utilities.per_round[2].size() == 20);
}

TEST_CASE("every refit restarts from the run's theta_0") {
  const auto problem = std::make_shared<const Problem>(testing::random_domain(12, 3, 31));
  const PolicySpec spec = quick(PolicyKind::kApohf);
  const std::uint64_t seed = 8;
  PreferenceLoop loop(problem, spec, seed);
  const ScoreNet theta0 = ScoreNet::init(3, derive_seed(seed, {tag(Stream::kInit)}), spec.widths);
  TrainConfig config = spec.train;
  config.l2_lambda = spec.config.lambda;
  for (int t = 1; t <= 4; ++t) {
    loop.pending();
    loop.complete(t % 2);
    const ScoreNet expected = train(theta0, problem->training_set(loop.history()), config);
    REQUIRE(loop.policy().net() != nullptr);
    CHECK((loop.policy().net()->theta() - expected.theta()).cwiseAbs().maxCoeff() == 0.0);
  }
}
