#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <set>

#include "droplab/numerics.hpp"

using namespace droplab;
using doctest::Approx;

namespace {
double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }
}  // namespace

TEST_CASE("logistic loss reference values") {
  CHECK(logistic_loss(0.0) == Approx(std::numbers::ln2).epsilon(1e-15));
  // mpmath at 50 digits
  CHECK(rel(logistic_loss(-745.0), 745.0) <= 1e-12);
  CHECK(rel(logistic_loss(40.0), 4.2483542552915889863e-18) <= 1e-9);
  CHECK(std::isfinite(logistic_loss(-1e6)));
  CHECK(logistic_loss(800.0) >= 0.0);
}

TEST_CASE("logistic derivative reference values") {
  CHECK(logistic_neg_deriv(0.0) == 0.5);
  CHECK(logistic_neg_deriv(800.0) >= 0.0);
  CHECK(logistic_neg_deriv(800.0) < 1e-300);
  CHECK(rel(logistic_neg_deriv(-3.0), 0.95257412682243321912) <= 1e-14);
}

TEST_CASE("non-finite inputs are domain errors") {
  const double inf = std::numeric_limits<double>::infinity();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(logistic_loss(inf), DomainError);
  CHECK_THROWS_AS(logistic_loss(nan), DomainError);
  CHECK_THROWS_AS(logistic_neg_deriv(-inf), DomainError);
  CHECK_THROWS_AS(logistic_neg_deriv(nan), DomainError);
}

TEST_CASE("logistic loss inequalities on a grid") {
  for (double z = -60.0; z <= 60.0; z += 0.037) {
    const double l = logistic_loss(z), q = logistic_neg_deriv(z);
    REQUIRE(l > 0.0);
    REQUIRE(q > 0.0);
    // 1/(1 + e^z) rounds to 1 below z ~ -37; the open interval holds until then.
    if (z > -36.0) REQUIRE(q < 1.0);
    else REQUIRE(q <= 1.0);
    REQUIRE(q <= l);
    // 0-1 loss is dominated by 2 Q (Q >= 1/2 for z < 0) and by l / ln2
    REQUIRE((z < 0.0 ? 1.0 : 0.0) <= 2.0 * q);
    REQUIRE((z < 0.0 ? 1.0 : 0.0) <= l / std::numbers::ln2);
    if (z < 0.0) REQUIRE(l <= -z / std::numbers::ln2 + 1.0);
  }
}

TEST_CASE("the constant 2 ln2 in front of Q is too small for the natural-log loss") {
  // It would be right for the base-2 loss. Just below zero 2 ln2 Q ~ 0.69 < 1.
  CHECK(2.0 * std::numbers::ln2 * logistic_neg_deriv(-1e-3) < 1.0);
  CHECK(2.0 * logistic_neg_deriv(-1e-3) >= 1.0);
}

TEST_CASE("rng streams are reproducible and distinct") {
  RngStream a(42, streams::init), b(42, streams::init), c(42, streams::masks), d(43, streams::init);
  const Vector va = sample_gaussian_vector(a, 3);
  const Vector vb = sample_gaussian_vector(b, 3);
  CHECK(va == vb);
  CHECK(sample_gaussian_vector(c, 3) != va);
  CHECK(sample_gaussian_vector(d, 3) != va);

  RngStream base(5, streams::monte_carlo);
  RngStream s1 = base.substream(1), s1b = base.substream(1), s2 = base.substream(2);
  const double x = s1.normal();
  CHECK(x == s1b.normal());
  CHECK(x != s2.normal());
}

TEST_CASE("gaussian sampler moments") {
  RngStream rng(2024, streams::monte_carlo);
  const std::size_t n = 1000000;
  double s = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = sample_gaussian_vector(rng, 1)[0];
    s += v;
    s2 += v * v;
  }
  const double mean = s / n;
  const double var = s2 / n - mean * mean;
  CHECK(std::abs(mean) <= 0.005);
  CHECK(std::abs(var - 1.0) <= 0.01);
}

TEST_CASE("gaussian vector norm in high dimension") {
  RngStream rng(1, streams::monte_carlo);
  for (int k = 0; k < 20; ++k) CHECK(std::abs(sample_gaussian_vector(rng, 784).norm() - 28.0) <= 3.0);
  CHECK_THROWS_AS(sample_gaussian_vector(rng, 0), DomainError);
}

TEST_CASE("unit sphere samples have unit norm") {
  RngStream rng(3, streams::data);
  for (int k = 0; k < 100; ++k) CHECK(std::abs(sample_unit_sphere(rng, 7).norm() - 1.0) <= 1e-12);
}

TEST_CASE("bernoulli edge probabilities") {
  RngStream rng(9, streams::masks);
  for (int k = 0; k < 1000; ++k) {
    REQUIRE(rng.bernoulli(1.0));
    REQUIRE_FALSE(rng.bernoulli(0.0));
  }
}

TEST_CASE("standard error of a sample mean") {
  // values 0,1,2,3: mean 1.5, sample variance 5/3
  CHECK(standard_error(6.0, 14.0, 4) == Approx(std::sqrt(5.0 / 3.0 / 4.0)));
}
