#include <doctest.h>

#include <Eigen/LU>
#include <cmath>
#include <numeric>

#include "apohf/apohf.hpp"
#include "support.hpp"

using namespace apohf;

namespace {

// Net whose score is exactly the output bias for every input.
ScoreNet constant_net(int d, double bias) {
  Vector theta = Vector::Zero(ScoreNet::param_count(d, default_widths()));
  theta(theta.size() - 1) = bias;
  return ScoreNet(d, default_widths(), theta);
}

// 1-hidden-unit net with h(x) = x_0 for x_0 >= 0, so scores are hand-set by embeddings.
ScoreNet identity_net(int d) {
  Vector theta = Vector::Zero(ScoreNet::param_count(d, {1}));
  theta(0) = 1.0;
  theta(d + 1) = 1.0;
  return ScoreNet(d, {1}, theta);
}

ArmDomain scored_domain(const std::vector<double>& scores) {
  std::vector<Arm> arms;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    Vector x(2);
    x << scores[i], static_cast<double>(i);
    arms.push_back({"s" + std::to_string(i), "", x});
  }
  return ArmDomain(arms);
}

Matrix dense_inverse(double lambda, const std::vector<Vector>& phis, Eigen::Index p) {
  Matrix v = lambda * Matrix::Identity(p, p);
  for (const Vector& f : phis) v += f * f.transpose();
  return v.inverse();
}

double rel_frobenius(const Matrix& a, const Matrix& b) { return (a - b).norm() / b.norm(); }

}  // namespace

TEST_CASE("select_first") {
  CHECK(select_first(constant_net(2, 0.0), testing::random_domain(5, 2, 1)) == 0);
  CHECK(select_first(identity_net(2), scored_domain({1, 5, 2})) == 1);
  CHECK(select_first(constant_net(2, 3.0), testing::random_domain(1, 2, 1)) == 0);
}

TEST_CASE("uncertainty basics") {
  Rng rng(1);
  UncertaintyState fresh(UncertaintyMode::kFull, 6, 0.1);
  CHECK(fresh.uncertainty(Vector::Zero(6)) == 0.0);
  for (int i = 0; i < 5; ++i) {
    const Vector g = testing::random_vector(6, rng);
    CHECK(fresh.uncertainty(g) == doctest::Approx(g.norm() / std::sqrt(0.1)).epsilon(1e-14));
  }
  for (UncertaintyMode mode : {UncertaintyMode::kFull, UncertaintyMode::kDiagonal}) {
    UncertaintyState s(mode, 3, 1.0);
    s.absorb(Vector::Unit(3, 0));
    CHECK(s.uncertainty(Vector::Unit(3, 0)) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));
    CHECK(s.uncertainty(Vector::Unit(3, 1)) == doctest::Approx(1.0).epsilon(1e-15));
  }
}

TEST_CASE("absorbing zero leaves the state unchanged") {
  Rng rng(2);
  for (UncertaintyMode mode : {UncertaintyMode::kFull, UncertaintyMode::kDiagonal}) {
    UncertaintyState s(mode, 8, 0.5);
    s.absorb(testing::random_vector(8, rng));
    const double digest = s.digest();
    const Vector g = testing::random_vector(8, rng);
    const double before = s.uncertainty(g);
    s.absorb(Vector::Zero(8));
    CHECK(s.digest() == digest);
    CHECK(s.uncertainty(g) == before);
  }
}

TEST_CASE("Sherman-Morrison matches dense inversion") {
  Rng rng(3);
  SUBCASE("5 absorbs at p = 20") {
    UncertaintyState s(UncertaintyMode::kFull, 20, 0.1);
    std::vector<Vector> phis;
    for (int i = 0; i < 5; ++i) {
      phis.push_back(testing::random_vector(20, rng));
      s.absorb(phis.back());
    }
    CHECK(rel_frobenius(s.inverse(), dense_inverse(0.1, phis, 20)) < 1e-8);
  }
  SUBCASE("150 absorbs at p = 120") {
    UncertaintyState s(UncertaintyMode::kFull, 120, 0.1);
    std::vector<Vector> phis;
    for (int i = 0; i < 150; ++i) {
      phis.push_back(testing::random_vector(120, rng, 0.3));
      s.absorb(phis.back());
    }
    CHECK(rel_frobenius(s.inverse(), dense_inverse(0.1, phis, 120)) < 1e-6);
    const Matrix& v = s.inverse();
    CHECK((v - v.transpose()).cwiseAbs().maxCoeff() < 1e-10);
    for (int k = 0; k < 20; ++k) {
      const Vector g = testing::random_vector(120, rng);
      CHECK(g.dot(v * g) > 0.0);
    }
  }
}

TEST_CASE("diagonal state tracks lambda plus squared features") {
  Rng rng(4);
  UncertaintyState s(UncertaintyMode::kDiagonal, 10, 0.2);
  Vector expected = Vector::Constant(10, 0.2);
  for (int i = 0; i < 30; ++i) {
    const Vector phi = testing::random_vector(10, rng);
    s.absorb(phi);
    expected += phi.cwiseAbs2();
  }
  CHECK((s.diagonal() - expected).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(s.diagonal().minCoeff() >= 0.2);
  const Vector g = testing::random_vector(10, rng);
  CHECK(s.uncertainty(g) ==
        doctest::Approx(std::sqrt((g.cwiseAbs2().array() / expected.array()).sum())));
}

TEST_CASE("uncertainty is non-increasing across absorbs") {
  Rng rng(5);
  for (UncertaintyMode mode : {UncertaintyMode::kFull, UncertaintyMode::kDiagonal}) {
    UncertaintyState s(mode, 12, 0.1);
    std::vector<Vector> probes;
    for (int i = 0; i < 10; ++i) probes.push_back(testing::random_vector(12, rng));
    std::vector<double> last;
    for (const Vector& g : probes) last.push_back(s.uncertainty(g));
    for (int step = 0; step < 40; ++step) {
      s.absorb(testing::random_vector(12, rng));
      for (std::size_t i = 0; i < probes.size(); ++i) {
        const double u = s.uncertainty(probes[i]);
        CHECK(u <= last[i] * (1 + 1e-12));
        last[i] = u;
      }
    }
  }
}

TEST_CASE("dimension checks") {
  UncertaintyState s(UncertaintyMode::kFull, 4, 0.1);
  CHECK_THROWS(s.absorb(Vector::Zero(3)));
  CHECK_THROWS(s.uncertainty(Vector::Zero(5)));
  CHECK_THROWS(UncertaintyState(UncertaintyMode::kFull, 4, 0.0));
  PolicyConfig c;
  CHECK(c.resolved_mode(64) == UncertaintyMode::kFull);
  CHECK(c.resolved_mode(65) == UncertaintyMode::kDiagonal);
  c.exploration_nu = -1;
  CHECK_THROWS(c.validate());
  CHECK(uncertainty_mode_from_string("diag") == UncertaintyMode::kDiagonal);
  CHECK(uncertainty_mode_from_string("full") == UncertaintyMode::kFull);
  CHECK_THROWS(uncertainty_mode_from_string("sparse"));
}

TEST_CASE("select_second with nu = 0") {
  const ArmDomain d = scored_domain({1, 5, 2, 4});
  const ScoreNet net = identity_net(2);
  UncertaintyState s(UncertaintyMode::kFull, net.num_params(), 0.1);
  const std::size_t first = select_first(net, d);
  CHECK(select_second(net, d, first, s, 0.0, false) == first);
  CHECK(select_second(net, d, first, s, 0.0, true) == 3);
}

TEST_CASE("fresh state with equal scores picks the farthest gradient") {
  Rng rng(6);
  const int dim = 3;
  // Random weights but output weights zero and bias 0: all scores equal, gradients differ.
  ScoreNet net = ScoreNet::init(dim, 7);
  Vector theta = net.theta();
  theta.tail(33).setZero();
  net.set_theta(theta);
  const ArmDomain d = testing::random_domain(15, dim, 8);
  UncertaintyState s(UncertaintyMode::kFull, net.num_params(), 0.1);
  const std::size_t first = select_first(net, d);
  CHECK(first == 0);
  const Vector g0 = net.param_gradient(d.arm(first).embedding);
  std::size_t expected = 1;
  double best = -1.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (i == first) continue;
    const double dist = (net.param_gradient(d.arm(i).embedding) - g0).norm();
    if (dist > best) {
      best = dist;
      expected = i;
    }
  }
  CHECK(select_second(net, d, first, s, 1.0) == expected);
}

TEST_CASE("acquisition dominance and self-uncertainty") {
  Rng rng(9);
  const ArmDomain d = testing::random_domain(30, 4, 10);
  const ScoreNet net = ScoreNet::init(4, 11);
  UncertaintyState s(UncertaintyMode::kFull, net.num_params(), 0.1);
  for (int i = 0; i < 10; ++i) s.absorb(testing::random_vector(net.num_params(), rng, 0.1));
  const std::size_t first = select_first(net, d);
  const Vector acq = acquisition_values(net, d, first, s, 1.0);
  const std::size_t second = select_second(net, d, first, s, 1.0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (i != first) CHECK(acq(second) >= acq(i));
  }
  // Independent evaluation of the acquisition from its definition.
  const Vector g0 = net.param_gradient(d.arm(first).embedding);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const Vector diff = net.param_gradient(d.arm(i).embedding) - g0;
    const double direct = net.forward(d.arm(i).embedding) + std::sqrt(diff.dot(s.inverse() * diff));
    CHECK(acq(i) == doctest::Approx(direct).epsilon(1e-10));
  }
  CHECK(s.uncertainty(g0 - g0) == 0.0);
  CHECK(acq(first) == doctest::Approx(net.forward(d.arm(first).embedding)).epsilon(1e-14));
}

TEST_CASE("report_best") {
  const ArmDomain d = scored_domain({0, 2, 1, 3, 7});
  const ScoreNet net = identity_net(2);
  const std::vector<std::size_t> only3{3};
  CHECK(report_best(net, only3, d) == 3);
  const std::vector<std::size_t> q{1, 4};
  CHECK(report_best(net, q, d) == 4);
  const std::vector<std::size_t> tie{4, 2, 1};
  CHECK(report_best(constant_net(2, 1.5), tie, d) == 1);
  CHECK_THROWS(report_best(net, std::vector<std::size_t>{}, d));
}

TEST_CASE("report_best is invariant to positive output scaling") {
  Rng rng(12);
  const ArmDomain d = testing::random_domain(40, 5, 13);
  std::vector<std::size_t> queried(25);
  std::iota(queried.begin(), queried.end(), std::size_t{3});
  for (int k = 0; k < 10; ++k) {
    ScoreNet net = ScoreNet::init(5, 20 + k);
    const std::size_t before = report_best(net, queried, d);
    Vector theta = net.theta();
    theta.tail(33) *= 0.5 + k;
    net.set_theta(theta);
    CHECK(report_best(net, queried, d) == before);
  }
}

TEST_CASE("argmax helpers break ties low") {
  Vector v(5);
  v << 1, 3, 3, 0, 3;
  CHECK(argmax_excluding(v, std::nullopt) == 1);
  CHECK(argmax_excluding(v, 1) == 2);
  const std::vector<std::size_t> c{4, 2};
  CHECK(argmax_over(v, c) == 2);
}
