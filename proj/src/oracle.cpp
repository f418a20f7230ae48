#include "apohf/oracle.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>

#include "apohf/json_io.hpp"
#include "apohf/score_net.hpp"

namespace apohf {

const char* to_string(UtilityProvenance p) {
  switch (p) {
    case UtilityProvenance::kSyntheticLinear:
      return "synthetic-linear";
    case UtilityProvenance::kSyntheticQuadratic:
      return "synthetic-quadratic";
    case UtilityProvenance::kFile:
      return "file";
  }
  return "unknown";
}

void OracleConfig::validate() const {
  if (!(noise_scale > 0.0) || !std::isfinite(noise_scale)) {
    throw std::invalid_argument("noise scale must be a positive finite number");
  }
}

double btl_probability(double u1, double u2) { return sigmoid(u1 - u2); }

int sample_preference(const UtilityTable& table, const OracleConfig& config, std::size_t round,
                      std::size_t first, std::size_t second, Rng& rng) {
  if (round >= table.per_round.size()) throw std::out_of_range("unknown round");
  const Vector& u = table.per_round[round];
  if (first >= static_cast<std::size_t>(u.size()) ||
      second >= static_cast<std::size_t>(u.size())) {
    throw std::out_of_range("unknown arm");
  }
  const double p = btl_probability(u[static_cast<Eigen::Index>(first)] / config.noise_scale,
                                   u[static_cast<Eigen::Index>(second)] / config.noise_scale);
  std::bernoulli_distribution draw(p);
  return draw(rng) ? 1 : 0;
}

namespace {

std::pair<double, double> mean_and_sd(const Vector& v) {
  const double mean = v.mean();
  const double ss = (v.array() - mean).square().sum();
  return {mean, std::sqrt(ss / static_cast<double>(v.size()))};
}

Vector concatenate(const std::vector<Vector>& parts) {
  Eigen::Index n = 0;
  for (const Vector& p : parts) n += p.size();
  Vector all(n);
  Eigen::Index k = 0;
  for (const Vector& p : parts) {
    all.segment(k, p.size()) = p;
    k += p.size();
  }
  return all;
}

}  // namespace

Vector normalize_scores(const Vector& raw) {
  if (raw.size() < 2 || raw.maxCoeff() == raw.minCoeff()) {
    throw std::invalid_argument("cannot normalize a constant score vector");
  }
  if (!raw.allFinite()) throw std::invalid_argument("scores must be finite");
  const auto [mean, sd] = mean_and_sd(raw);
  return ((raw.array() - mean) * (kNormalizedScoreSd / sd)).matrix();
}

UtilityTable normalized(const UtilityTable& table) {
  const Vector all = normalize_scores(concatenate(table.per_round));
  UtilityTable out;
  out.provenance = table.provenance;
  Eigen::Index k = 0;
  for (const Vector& p : table.per_round) {
    out.per_round.push_back(all.segment(k, p.size()));
    k += p.size();
  }
  return out;
}

UtilityTable linear_utility(const Problem& problem, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal;
  Vector w(problem.dim());
  for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = normal(rng);
  UtilityTable table;
  table.provenance = UtilityProvenance::kSyntheticLinear;
  for (const ContextRound& round : problem.rounds()) {
    table.per_round.push_back(round.arms.embeddings() * w);
  }
  return table;
}

UtilityTable quadratic_utility(const Problem& problem, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal;
  Vector c(problem.dim());
  for (Eigen::Index i = 0; i < c.size(); ++i) c[i] = normal(rng);
  UtilityTable table;
  table.provenance = UtilityProvenance::kSyntheticQuadratic;
  for (const ContextRound& round : problem.rounds()) {
    table.per_round.push_back(
        -(round.arms.embeddings().rowwise() - c.transpose()).rowwise().squaredNorm());
  }
  return table;
}

UtilityTable load_utility_table(std::istream& in, const Problem& problem) {
  UtilityTable table;
  table.provenance = UtilityProvenance::kFile;
  std::vector<std::vector<bool>> seen;
  for (const ContextRound& round : problem.rounds()) {
    table.per_round.push_back(Vector::Zero(static_cast<Eigen::Index>(round.arms.size())));
    seen.emplace_back(round.arms.size(), false);
  }
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "scores line " + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error(where + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string() || !j.contains("score") ||
        !j["score"].is_number()) {
      throw std::runtime_error(where + ": expected {\"id\": string, \"score\": number}");
    }
    std::string context_id;
    if (j.contains("context_id")) context_id = j["context_id"].get<std::string>();
    auto round = problem.round_index(context_id);
    if (!round) throw std::runtime_error(where + ": unknown context '" + context_id + "'");
    const std::string id = j["id"].get<std::string>();
    auto arm = problem.round(*round).arms.index_of(id);
    if (!arm) throw std::runtime_error(where + ": unknown arm '" + id + "'");
    if (seen[*round][*arm]) throw std::runtime_error(where + ": duplicate score for '" + id + "'");
    const double score = j["score"].get<double>();
    if (!std::isfinite(score)) throw std::runtime_error(where + ": non-finite score");
    seen[*round][*arm] = true;
    table.per_round[*round][static_cast<Eigen::Index>(*arm)] = score;
  }
  for (std::size_t r = 0; r < seen.size(); ++r) {
    for (std::size_t a = 0; a < seen[r].size(); ++a) {
      if (!seen[r][a]) {
        throw std::runtime_error("no score for arm '" + problem.round(r).arms.arm(a).id + "'");
      }
    }
  }
  return table;
}

UtilityTable load_utility_table_file(const std::string& path, const Problem& problem) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return load_utility_table(in, problem);
}

void write_utility_table(std::ostream& out, const UtilityTable& table, const Problem& problem) {
  for (std::size_t r = 0; r < problem.num_rounds(); ++r) {
    const ArmDomain& arms = problem.round(r).arms;
    for (std::size_t a = 0; a < arms.size(); ++a) {
      json j{{"id", arms.arm(a).id}, {"score", table.score(r, a)}};
      if (problem.contextual()) j["context_id"] = problem.round(r).context_id;
      out << j.dump() << '\n';
    }
  }
}

BtlOracle::BtlOracle(UtilityTable table, OracleConfig config) : config_(config) {
  config_.validate();
  table_ = config_.normalize ? normalized(table) : std::move(table);
}

int BtlOracle::prefer(std::uint64_t iteration, std::size_t round, std::size_t first,
                      std::size_t second) {
  Rng rng = make_rng(config_.seed, {tag(Stream::kOracle), iteration});
  return sample_preference(table_, config_, round, first, second, rng);
}

void HumanChannel::post(const HumanQuery& query) {
  std::lock_guard lock(mu_);
  if (closed_) throw ProtocolError("channel closed");
  if (query_) throw ProtocolError("a query is already pending");
  query_ = query;
  verdict_.reset();
}

std::optional<HumanQuery> HumanChannel::pending() const {
  std::lock_guard lock(mu_);
  if (verdict_) return std::nullopt;
  return query_;
}

void HumanChannel::submit(int outcome) {
  if (outcome != 0 && outcome != 1) throw ProtocolError("verdict must be 0 or 1");
  {
    std::lock_guard lock(mu_);
    if (!query_) throw ProtocolError("no pending query");
    if (verdict_) throw ProtocolError("duplicate submit");
    verdict_ = outcome;
  }
  cv_.notify_all();
}

int HumanChannel::await_verdict() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return verdict_.has_value() || closed_; });
  if (!verdict_) throw ProtocolError("channel closed while awaiting a verdict");
  const int v = *verdict_;
  verdict_.reset();
  query_.reset();
  return v;
}

void HumanChannel::close() {
  {
    std::lock_guard lock(mu_);
    closed_ = true;
  }
  cv_.notify_all();
}

int HumanOracle::prefer(std::uint64_t iteration, std::size_t round, std::size_t first,
                        std::size_t second) {
  channel_.post(HumanQuery{iteration, round, first, second});
  return channel_.await_verdict();
}

}  // namespace apohf
