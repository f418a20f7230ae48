#include "apohf/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "apohf/json_io.hpp"

namespace apohf {

void RunConfig::validate() const {
  if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
  if (trials < 1) throw std::invalid_argument("trials must be >= 1");
  policy.validate();
  oracle.validate();
}

namespace {

void check_truth(const Problem& problem, const UtilityTable& truth) {
  if (truth.per_round.size() != problem.num_rounds()) {
    throw std::invalid_argument("utility table does not match the problem's rounds");
  }
  for (std::size_t r = 0; r < problem.num_rounds(); ++r) {
    if (static_cast<std::size_t>(truth.per_round[r].size()) != problem.round(r).arms.size()) {
      throw std::invalid_argument("utility table does not cover every arm");
    }
    if (!truth.per_round[r].allFinite()) {
      throw std::invalid_argument("utility table has non-finite scores");
    }
  }
}

TrialResult run_loop(const PolicySpec& policy, std::shared_ptr<const Problem> problem,
                     const UtilityTable& truth, PreferenceOracle& oracle, std::uint64_t horizon,
                     std::uint64_t seed) {
  if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
  check_truth(*problem, truth);
  PreferenceLoop loop(problem, policy, seed);
  TrialResult result;
  result.iterations.reserve(horizon);
  for (std::uint64_t t = 1; t <= horizon; ++t) {
    const auto start = std::chrono::steady_clock::now();
    IterationResult it;
    try {
      const PendingPair p = loop.pending();
      it.t = t;
      it.round = p.round;
      it.first = p.first;
      it.second = p.second;
      if (!p.duplicate()) it.outcome = oracle.prefer(t, p.round, p.first, p.second);
      loop.complete(std::max(it.outcome, 0));
      double total = 0.0;
      if (problem->contextual()) it.best_per_round.resize(problem->num_rounds());
      for (std::size_t r = 0; r < problem->num_rounds(); ++r) {
        const std::size_t best = loop.report(r);
        if (problem->contextual()) it.best_per_round[r] = best;
        if (r == p.round) it.best_index = best;
        total += truth.score(r, best);
      }
      it.true_score = total / static_cast<double>(problem->num_rounds());
      it.best_id = problem->round(p.round).arms.arm(it.best_index).id;
    } catch (const std::exception& e) {
      throw std::runtime_error("iteration " + std::to_string(t) + ": " + e.what());
    }
    it.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.iterations.push_back(std::move(it));
  }
  result.history = loop.history();
  return result;
}

}  // namespace

TrialResult run_trial(const PolicySpec& policy, std::shared_ptr<const Problem> problem,
                      const UtilityTable& truth, PreferenceOracle& oracle, std::uint64_t horizon,
                      std::uint64_t seed) {
  if (problem->contextual()) {
    throw std::invalid_argument("contextual problems run through run_contextual_trial");
  }
  return run_loop(policy, std::move(problem), truth, oracle, horizon, seed);
}

TrialResult run_contextual_trial(const PolicySpec& policy, std::shared_ptr<const Problem> problem,
                                 const UtilityTable& truth, PreferenceOracle& oracle,
                                 std::uint64_t horizon, std::uint64_t seed) {
  return run_loop(policy, std::move(problem), truth, oracle, horizon, seed);
}

std::optional<std::uint64_t> replay_mismatch(const PolicySpec& policy,
                                             std::shared_ptr<const Problem> problem,
                                             const TrialResult& trial, std::uint64_t seed) {
  const History& history = trial.history;
  for (std::size_t i = 0; i < history.size(); ++i) {
    const PreferenceRecord& record = history[i];
    PreferenceLoop replay =
        PreferenceLoop::restore(problem, policy, seed, history.prefix(i), record.iteration);
    const PendingPair& p = replay.pending();
    if (p.first != record.first || p.second != record.second ||
        p.round != problem->round_of(record)) {
      return record.iteration;
    }
  }
  return std::nullopt;
}

ArmDomain gaussian_domain(std::size_t arms, Eigen::Index dim, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal;
  std::vector<Arm> out;
  out.reserve(arms);
  for (std::size_t i = 0; i < arms; ++i) {
    Vector x(dim);
    for (Eigen::Index k = 0; k < dim; ++k) x[k] = normal(rng);
    out.push_back(Arm{"arm-" + std::to_string(i), "synthetic arm " + std::to_string(i),
                      std::move(x)});
  }
  return ArmDomain(std::move(out));
}

Environment synthetic_linear_environment(std::size_t arms, Eigen::Index dim,
                                         std::uint64_t seed) {
  auto problem = std::make_shared<const Problem>(gaussian_domain(arms, dim, mix64(seed)));
  UtilityTable u = linear_utility(*problem, mix64(seed + 1));
  return Environment{std::move(problem), std::move(u)};
}

Environment synthetic_quadratic_environment(std::size_t arms, Eigen::Index dim,
                                            std::uint64_t seed) {
  auto problem = std::make_shared<const Problem>(gaussian_domain(arms, dim, mix64(seed)));
  UtilityTable u = quadratic_utility(*problem, mix64(seed + 1));
  return Environment{std::move(problem), std::move(u)};
}

Environment synthetic_contextual_environment(std::size_t contexts, std::size_t candidates,
                                             Eigen::Index context_dim,
                                             Eigen::Index response_dim, std::uint64_t seed) {
  Rng rng(mix64(seed));
  std::normal_distribution<double> normal;
  auto draw = [&](Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
    }
    return m;
  };
  const Vector w = draw(response_dim, 1).col(0);
  const Matrix a = draw(response_dim, context_dim) / std::sqrt(static_cast<double>(context_dim));
  std::vector<ContextRound> rounds;
  UtilityTable table;
  table.provenance = UtilityProvenance::kFile;
  for (std::size_t c = 0; c < contexts; ++c) {
    const Vector p = draw(context_dim, 1).col(0);
    std::vector<Arm> arms;
    Vector u(static_cast<Eigen::Index>(candidates));
    for (std::size_t i = 0; i < candidates; ++i) {
      const Vector r = draw(response_dim, 1).col(0);
      Vector x(context_dim + response_dim);
      x << p, r;
      u[static_cast<Eigen::Index>(i)] = w.dot(r) + r.dot(a * p);
      arms.push_back(Arm{"c" + std::to_string(c) + "-r" + std::to_string(i),
                         "response " + std::to_string(i) + " to context " + std::to_string(c),
                         std::move(x)});
    }
    rounds.push_back(ContextRound{"context-" + std::to_string(c),
                                  "synthetic context " + std::to_string(c),
                                  ArmDomain(std::move(arms))});
    table.per_round.push_back(std::move(u));
  }
  return Environment{std::make_shared<const Problem>(std::move(rounds)), std::move(table)};
}

MeanSe mean_se(const std::vector<double>& values) {
  if (values.empty()) return {};
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}

double pooled_se(const MeanSe& a, const MeanSe& b) {
  return std::sqrt(a.se * a.se + b.se * b.se);
}

std::string CellResult::label() const {
  std::ostringstream out;
  out << to_string(policy);
  if (nu) out << "/nu=" << *nu;
  out << "/s=" << noise_scale;
  return out.str();
}

std::vector<double> CellResult::final_scores() const {
  std::vector<double> out;
  for (const TrialResult& t : trials) {
    if (!t.iterations.empty()) out.push_back(t.final().true_score);
  }
  return out;
}

const CellResult* SuiteResult::find(PolicyKind policy, std::optional<double> nu,
                                    double noise_scale) const {
  for (const CellResult& c : cells) {
    if (c.policy == policy && c.noise_scale == noise_scale && (!nu || !c.nu || *c.nu == *nu)) {
      return &c;
    }
  }
  return nullptr;
}

namespace {

bool exploration_sensitive(PolicyKind k) {
  return k == PolicyKind::kApohf || k == PolicyKind::kLinear;
}

Problem unit_normalized(const Problem& problem) {
  if (!problem.contextual()) return Problem(apohf::unit_normalized(problem.round(0).arms));
  std::vector<ContextRound> rounds;
  for (const ContextRound& r : problem.rounds()) {
    rounds.push_back(ContextRound{r.context_id, r.context_text, apohf::unit_normalized(r.arms)});
  }
  return Problem(std::move(rounds));
}

void aggregate(CellResult& cell) {
  std::vector<const TrialResult*> done;
  for (const TrialResult& t : cell.trials) {
    if (!t.iterations.empty()) done.push_back(&t);
  }
  if (done.empty()) return;
  std::size_t horizon = done.front()->iterations.size();
  for (const TrialResult* t : done) horizon = std::min(horizon, t->iterations.size());
  for (std::size_t i = 0; i < horizon; ++i) {
    std::vector<double> scores;
    std::map<std::string, int> votes;
    for (const TrialResult* t : done) {
      scores.push_back(t->iterations[i].true_score);
      ++votes[t->iterations[i].best_id];
    }
    const MeanSe m = mean_se(scores);
    std::string modal;
    int most = 0;
    for (const auto& [id, n] : votes) {
      if (n > most) {
        modal = id;
        most = n;
      }
    }
    cell.curve.push_back(CurvePoint{done.front()->iterations[i].t, modal, m.mean, m.se});
  }
}

}  // namespace

SuiteResult run_suite(const SuiteSpec& spec, const EnvironmentFactory& environments) {
  spec.base.validate();
  if (spec.policies.empty() || spec.nus.empty() || spec.noise_scales.empty()) {
    throw std::invalid_argument("suite grid has an empty axis");
  }
  SuiteResult result;
  result.spec = spec;
  for (PolicyKind policy : spec.policies) {
    std::vector<std::optional<double>> nus;
    if (exploration_sensitive(policy)) {
      nus.assign(spec.nus.begin(), spec.nus.end());
    } else {
      nus.push_back(std::nullopt);
    }
    for (const auto& nu : nus) {
      for (double s : spec.noise_scales) {
        CellResult cell;
        cell.policy = policy;
        cell.nu = nu;
        cell.noise_scale = s;
        cell.trials.resize(spec.base.trials);
        result.cells.push_back(std::move(cell));
      }
    }
  }

  std::vector<Environment> envs;
  envs.reserve(spec.base.trials);
  for (std::size_t k = 0; k < spec.base.trials; ++k) {
    Environment env = environments(k);
    if (spec.base.unit_norm) {
      env.problem = std::make_shared<const Problem>(unit_normalized(*env.problem));
    }
    envs.push_back(std::move(env));
  }

  const std::size_t jobs = result.cells.size() * spec.base.trials;
  std::atomic<std::size_t> next{0};
  std::mutex error_mu;
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs; j = next++) {
      CellResult& cell = result.cells[j / spec.base.trials];
      const std::size_t trial = j % spec.base.trials;
      try {
        PolicySpec policy = spec.base.policy;
        policy.kind = cell.policy;
        if (cell.nu) policy.config.exploration_nu = *cell.nu;
        OracleConfig oc = spec.base.oracle;
        oc.noise_scale = cell.noise_scale;
        oc.seed = derive_seed(spec.base.seed, {tag(Stream::kOracle), trial});
        BtlOracle oracle(envs[trial].utilities, oc);
        cell.trials[trial] = run_contextual_trial(
            policy, envs[trial].problem, oracle.table(), oracle, spec.base.horizon,
            derive_seed(spec.base.seed, {tag(Stream::kTrial), trial}));
      } catch (const std::exception& e) {
        std::lock_guard lock(error_mu);
        const std::string msg = "trial " + std::to_string(trial) + ": " + e.what();
        cell.error = cell.error ? *cell.error + "; " + msg : msg;
      }
    }
  };
  const std::size_t threads =
      std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, std::max<std::size_t>(jobs, 1));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  for (CellResult& cell : result.cells) aggregate(cell);
  return result;
}

nlohmann::json run_config_json(const RunConfig& c) {
  const PolicySpec& p = c.policy;
  json j{{"horizon", c.horizon},
         {"seed", c.seed},
         {"trials", c.trials},
         {"policy", to_string(p.kind)},
         {"nu", p.config.exploration_nu},
         {"lambda", p.config.lambda},
         {"exclude_first", p.config.exclude_first_from_second},
         {"epochs", p.train.epochs},
         {"learning_rate", p.train.learning_rate},
         {"widths", p.widths},
         {"ensemble_members", p.ensemble.members},
         {"ensemble_bootstrap", p.ensemble.bootstrap},
         {"normalize", c.oracle.normalize},
         {"noise_scale", c.oracle.noise_scale},
         {"unit_norm", c.unit_norm}};
  j["uncertainty"] = p.config.uncertainty_mode ? json(to_string(*p.config.uncertainty_mode))
                                               : json("auto");
  return j;
}

nlohmann::json results_json(const SuiteResult& result) {
  json config = run_config_json(result.spec.base);
  json policies = json::array();
  for (PolicyKind k : result.spec.policies) policies.push_back(to_string(k));
  config["policies"] = policies;
  config["nus"] = result.spec.nus;
  config["noise_scales"] = result.spec.noise_scales;
  config["environment"] = result.spec.environment_label;

  json cells = json::array();
  for (const CellResult& cell : result.cells) {
    json params{{"noise_scale", cell.noise_scale}, {"lambda", result.spec.base.policy.config.lambda}};
    params["nu"] = cell.nu ? json(*cell.nu) : json(nullptr);
    json iterations = json::array();
    for (const CurvePoint& pt : cell.curve) {
      iterations.push_back(
          json{{"t", pt.t}, {"best_id", pt.best_id}, {"true_score", pt.mean}, {"se", pt.se}});
    }
    const std::vector<double> finals = cell.final_scores();
    const MeanSe fin = mean_se(finals);
    json c{{"label", cell.label()},
           {"policy", to_string(cell.policy)},
           {"params", params},
           {"iterations", iterations},
           {"final", json{{"mean", fin.mean}, {"se", fin.se}, {"scores", finals}}}};
    if (cell.error) c["error"] = *cell.error;
    cells.push_back(std::move(c));
  }
  return json{{"config", config}, {"cells", cells}};
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string results_csv(const SuiteResult& result) {
  std::ostringstream out;
  out << "cell,trial,t,best_id,true_score\n";
  for (const CellResult& cell : result.cells) {
    const std::string label = csv_field(cell.label());
    for (std::size_t k = 0; k < cell.trials.size(); ++k) {
      for (const IterationResult& it : cell.trials[k].iterations) {
        out << label << ',' << k << ',' << it.t << ',' << csv_field(it.best_id) << ','
            << format_double(it.true_score) << '\n';
      }
    }
  }
  return out.str();
}

void write_results(const SuiteResult& result, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "results.json");
    if (!out) throw std::runtime_error("cannot write " + (dir / "results.json").string());
    out << results_json(result).dump(2) << '\n';
  }
  std::ofstream out(dir / "results.csv");
  if (!out) throw std::runtime_error("cannot write " + (dir / "results.csv").string());
  out << results_csv(result);
}

}  // namespace apohf
