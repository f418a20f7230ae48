#pragma once

#include <random>
#include <string>
#include <vector>

#include "apohf/domain.hpp"
#include "apohf/random.hpp"

namespace apohf::testing {

inline ArmDomain random_domain(std::size_t n, Eigen::Index d, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> gauss;
  std::vector<Arm> arms;
  for (std::size_t i = 0; i < n; ++i) {
    Vector x(d);
    for (Eigen::Index k = 0; k < d; ++k) x(k) = gauss(rng);
    arms.push_back({"a" + std::to_string(i), "arm " + std::to_string(i), x});
  }
  return ArmDomain(std::move(arms));
}

inline Vector random_vector(Eigen::Index n, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> gauss(0.0, scale);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = gauss(rng);
  return v;
}

// Comparisons between random row pairs of `inputs`, labelled by sign(u_a - u_b).
inline TrainingSet labelled_pairs(const Matrix& inputs, const Vector& utility, std::size_t n,
                                  std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, inputs.rows() - 1);
  TrainingSet data{inputs, {}};
  while (data.comparisons.size() < n) {
    const Eigen::Index a = pick(rng), b = pick(rng);
    if (a == b) continue;
    data.comparisons.push_back({a, b, utility(a) > utility(b) ? 1 : 0});
  }
  return data;
}

}  // namespace apohf::testing
