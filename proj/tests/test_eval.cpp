#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "diffrl/dataset.hpp"
#include "diffrl/eval.hpp"
#include "diffrl/rng.hpp"

using namespace diffrl;

namespace {

// Closed form for isotropic Gaussians with equal dimension:
// KL(N(m1, s1 I) || N(m2, s2 I)).
double gaussian_kl(const Vector& m1, double s1, const Vector& m2, double s2) {
  const double d = static_cast<double>(m1.size());
  const double r = s1 / s2;
  return 0.5 * (d * (r - 1.0 - std::log(r)) + (m1 - m2).squaredNorm() / s2);
}

Matrix gaussian_cloud(const Vector& mean, double var, int n, RngStream& rng) {
  Matrix m = std::sqrt(var) * rng.normal_matrix(static_cast<int>(mean.size()), n);
  m.colwise() += mean;
  return m;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("knn kl matches the gaussian closed form") {
  RngStream rng(11);

  // Mean shift in 1d: KL(N(0,1) || N(1,1)) = 0.5.
  Vector z1 = Vector::Zero(1), o1 = Vector::Ones(1);
  Matrix p = gaussian_cloud(z1, 1.0, 4000, rng);
  Matrix q = gaussian_cloud(o1, 1.0, 4000, rng);
  CHECK(knn_kl(p, q, 1).value == doctest::Approx(0.5).epsilon(0.2));

  // Mean shift in 2d: KL = 1.0.
  Vector z2 = Vector::Zero(2), o2 = Vector::Ones(2);
  Matrix p2 = gaussian_cloud(z2, 1.0, 4000, rng);
  Matrix q2 = gaussian_cloud(o2, 1.0, 4000, rng);
  CHECK(knn_kl(p2, q2, 1).value == doctest::Approx(1.0).epsilon(0.1));

  // Variance mismatch in 1d: KL(N(0,1) || N(0,4)) ~ 0.3181.
  Matrix q4 = gaussian_cloud(z1, 4.0, 4000, rng);
  Matrix p3 = gaussian_cloud(z1, 1.0, 4000, rng);
  const double want = gaussian_kl(z1, 1.0, z1, 4.0);
  CHECK(knn_kl(p3, q4, 1).value == doctest::Approx(want).epsilon(0.35));

  // Same distribution: the estimate sits near zero.
  Matrix pa = gaussian_cloud(z2, 1.0, 3000, rng);
  Matrix pb = gaussian_cloud(z2, 1.0, 3000, rng);
  CHECK(std::abs(knn_kl(pa, pb, 1).value) < 0.1);
}

TEST_CASE("larger k also tracks the closed form") {
  RngStream rng(12);
  Vector z = Vector::Zero(2), m = Vector::Ones(2);
  Matrix p = gaussian_cloud(z, 1.0, 3000, rng);
  Matrix q = gaussian_cloud(m, 1.0, 3000, rng);
  CHECK(knn_kl(p, q, 3).value == doctest::Approx(1.0).epsilon(0.12));
}

TEST_CASE("estimate grows with the mean gap") {
  RngStream rng(13);
  Vector z = Vector::Zero(1);
  Matrix p = gaussian_cloud(z, 1.0, 2500, rng);
  std::vector<double> kls;
  for (double shift : {0.0, 1.0, 2.0, 3.0}) {
    Vector m(1);
    m << shift;
    Matrix q = gaussian_cloud(m, 1.0, 2500, rng);
    kls.push_back(knn_kl(p, q, 1).value);
  }
  CHECK(kls[1] > kls[0] + 0.2);
  CHECK(kls[2] > kls[1] + 0.5);
  CHECK(kls[3] > kls[2] + 0.5);
}

TEST_CASE("rotating both sample sets leaves the estimate unchanged") {
  RngStream rng(14);
  Vector z = Vector::Zero(2), m(2);
  m << 1.0, -0.5;
  Matrix p = gaussian_cloud(z, 1.0, 800, rng);
  Matrix q = gaussian_cloud(m, 1.5, 800, rng);
  const double base = knn_kl(p, q, 1).value;

  const double c = std::cos(0.7), s = std::sin(0.7);
  Matrix rot(2, 2);
  rot << c, -s, s, c;
  const double turned = knn_kl(rot * p, rot * q, 1).value;
  CHECK(turned == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("exact duplicates are jittered and counted") {
  RngStream rng(15);
  Vector z = Vector::Zero(2);
  Matrix p = gaussian_cloud(z, 1.0, 50, rng);
  Matrix q = gaussian_cloud(z, 1.0, 80, rng);
  p.col(7) = p.col(3);  // duplicate inside the query set
  p.col(9) = p.col(3);
  KnnKlResult res = knn_kl(p, q, 1);
  CHECK(res.degenerate >= 2);
  CHECK(std::isfinite(res.value));

  // A reference point lying exactly on a query point floors the cross
  // distance instead of taking log(0).
  Matrix q2 = q;
  q2.col(0) = p.col(5);
  KnnKlResult res2 = knn_kl(p, q2, 1);
  CHECK(res2.degenerate >= 1);
  CHECK(std::isfinite(res2.value));

  // Fully degenerate input still returns a finite number.
  Matrix pc = Matrix::Zero(2, 20);
  Matrix qc = Matrix::Zero(2, 30);
  KnnKlResult res3 = knn_kl(pc, qc, 1);
  CHECK(std::isfinite(res3.value));
  CHECK(res3.degenerate > 0);
}

TEST_CASE("knn kl validates its arguments") {
  RngStream rng(16);
  Matrix p = rng.normal_matrix(2, 30), q = rng.normal_matrix(2, 30);
  CHECK_THROWS_AS(knn_kl(p, q, 0), std::invalid_argument);
  CHECK_THROWS_AS(knn_kl(p, q, 30), std::invalid_argument);   // k > n - 1
  Matrix q_small = rng.normal_matrix(2, 4);
  CHECK_THROWS_AS(knn_kl(p, q_small, 5), std::invalid_argument);  // k > n'
  Matrix q3 = rng.normal_matrix(3, 30);
  CHECK_THROWS_AS(knn_kl(p, q3, 1), std::invalid_argument);
  Matrix empty(0, 10);
  CHECK_THROWS_AS(knn_kl(empty, empty, 1), std::invalid_argument);
}

TEST_CASE("batch protocol derives one stream per batch") {
  RngStream data_rng(21);
  Matrix reference = gaussian_cloud(Vector::Zero(1), 1.0, 300, data_rng);

  std::vector<double> first_draws;
  SampleGenerator gen = [&](int count, RngStream& rng) {
    first_draws.push_back(rng.uniform());
    return gaussian_cloud(Vector::Zero(1), 1.0, count, rng);
  };
  RngStream root(22);
  BatchProtocolResult res =
      batch_protocol(gen, reference, RewardSpec::quadratic(Vector::Zero(1), 1.0),
                     6, 100, 1, root);
  CHECK(res.kl.batches == 6);
  REQUIRE(first_draws.size() == 6);
  for (int b = 0; b < 6; ++b) {
    RngStream expect = RngStream(22).derive("eval").derive(static_cast<std::uint64_t>(b));
    CHECK(first_draws[static_cast<size_t>(b)] == expect.uniform());
  }

  // Same root, same report.
  first_draws.clear();
  RngStream root2(22);
  BatchProtocolResult res2 =
      batch_protocol(gen, reference, RewardSpec::quadratic(Vector::Zero(1), 1.0),
                     6, 100, 1, root2);
  CHECK(res.kl.mean == res2.kl.mean);
  CHECK(res.kl.stderr_mean == res2.kl.stderr_mean);
  CHECK(res.reward.mean == res2.reward.mean);
}

TEST_CASE("batch protocol reports exact rewards for a deterministic generator") {
  RngStream data_rng(31);
  Matrix reference = gaussian_cloud(Vector::Zero(1), 1.0, 200, data_rng);

  // Every sample is the constant 3, so the quadratic reward about 1 is -4.
  SampleGenerator gen = [](int count, RngStream&) {
    return Matrix::Constant(1, count, 3.0);
  };
  Vector center(1);
  center << 1.0;
  RngStream root(32);
  BatchProtocolResult res = batch_protocol(
      gen, reference, RewardSpec::quadratic(center, 1.0), 5, 40, 1, root);
  CHECK(res.reward.mean == -4.0);
  CHECK(res.reward.stderr_mean == 0.0);
  CHECK(res.reward.ci95_halfwidth == 0.0);
  CHECK(res.reward.batches == 5);
  CHECK(std::isfinite(res.kl.mean));
}

TEST_CASE("wider batch counts shrink the confidence interval") {
  RngStream data_rng(41);
  Matrix reference = gaussian_cloud(Vector::Zero(1), 1.0, 400, data_rng);
  SampleGenerator gen = [](int count, RngStream& rng) {
    return rng.normal_matrix(1, count);
  };
  RewardSpec reward = RewardSpec::quadratic(Vector::Zero(1), 1.0);
  RngStream root(42);
  BatchProtocolResult narrow = batch_protocol(gen, reference, reward, 50, 100, 1, root);
  BatchProtocolResult wide = batch_protocol(gen, reference, reward, 200, 100, 1, root);
  CHECK(narrow.kl.stderr_mean > 0.0);
  CHECK(wide.kl.stderr_mean > 0.0);
  // Four times the batches should give roughly half the standard error.
  const double ratio = narrow.kl.stderr_mean / wide.kl.stderr_mean;
  CHECK(ratio > 1.4);
  CHECK(ratio < 2.8);
  CHECK(wide.kl.ci95_halfwidth == doctest::Approx(1.96 * wide.kl.stderr_mean));
}

TEST_CASE("batch protocol rejects bad inputs") {
  Matrix reference = Matrix::Zero(1, 50);
  RewardSpec reward = RewardSpec::quadratic(Vector::Zero(1), 1.0);
  RngStream root(51);
  SampleGenerator ok = [](int count, RngStream& rng) {
    return rng.normal_matrix(1, count);
  };
  CHECK_THROWS_AS(batch_protocol(ok, reference, reward, 0, 10, 1, root),
                  std::invalid_argument);
  CHECK_THROWS_AS(batch_protocol(ok, reference, reward, 3, 0, 1, root),
                  std::invalid_argument);

  SampleGenerator bad_shape = [](int count, RngStream& rng) {
    return rng.normal_matrix(2, count);  // reference has one row
  };
  CHECK_THROWS_AS(batch_protocol(bad_shape, reference, reward, 3, 10, 1, root),
                  std::runtime_error);

  SampleGenerator bad_count = [](int count, RngStream& rng) {
    return rng.normal_matrix(1, count + 1);
  };
  CHECK_THROWS_AS(batch_protocol(bad_count, reference, reward, 3, 10, 1, root),
                  std::runtime_error);
}

}  // TEST_SUITE
