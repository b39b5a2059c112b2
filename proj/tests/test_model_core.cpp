#include "doctest.h"
#include "fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

using namespace mixsem;
using mixsem::testing::paper_spec;
using mixsem::testing::random_dataset;
using mixsem::testing::random_theta;

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

OrdinalEqParams ordinal_params(double mu1, Vector tau, Index p = 0) {
  return {mu1, std::move(tau), Vector::Zero(p)};
}

GaussianEqParams gaussian_params(Vector nu, Matrix Sigma, Index p = 0, Index q = 0) {
  const Index d = nu.size();
  return {std::move(nu), Matrix::Zero(d, p), Matrix::Zero(d, q), std::move(Sigma)};
}

}  // namespace

TEST_SUITE("model-core") {

TEST_CASE("ordinal_category_probs examples") {
  SUBCASE("J=3 with tau = (0, -ln 3)") {
    const Vector p = ordinal_category_probs(Vector(0), 0.0,
                                            ordinal_params(0.0, Vector{{0.0, -std::log(3.0)}}));
    CHECK(p(0) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(p(1) == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(p(2) == doctest::Approx(0.25).epsilon(1e-14));
  }
  SUBCASE("J=2 at a zero predictor") {
    const Vector p = ordinal_category_probs(Vector(0), 0.0, ordinal_params(0.0, Vector{{0.0}}));
    CHECK(p(0) == doctest::Approx(0.5));
    CHECK(p(1) == doctest::Approx(0.5));
  }
  SUBCASE("large mu1 pushes mass to the top category") {
    const Vector p = ordinal_category_probs(Vector(0), 0.0,
                                            ordinal_params(60.0, Vector{{0.0, -1.0}}));
    CHECK(p(0) < 1e-20);
    CHECK(p(1) < 1e-20);
    CHECK(p(2) == doctest::Approx(1.0));
  }
  SUBCASE("covariate length mismatch") {
    CHECK_THROWS_AS(ordinal_category_probs(Vector::Ones(2), 0.0,
                                           ordinal_params(0.0, Vector{{0.0, -1.0}}, 3)),
                    DimensionMismatch);
  }
}

TEST_CASE("ordinal probabilities form a simplex with non-increasing cumulatives") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> Jd(2, 7);
  std::normal_distribution<double> nd(0.0, 3.0);
  std::uniform_real_distribution<double> gap(0.0, 4.0);
  for (int rep = 0; rep < 2000; ++rep) {
    const int J = Jd(rng);
    Vector tau(J - 1);
    tau(0) = 0.0;
    for (int j = 1; j < J - 1; ++j) tau(j) = tau(j - 1) - gap(rng);
    Vector beta(3);
    for (Index c = 0; c < 3; ++c) beta(c) = nd(rng);
    Vector x(3);
    for (Index c = 0; c < 3; ++c) x(c) = nd(rng);
    const Vector p = ordinal_category_probs(x, nd(rng), {nd(rng), tau, beta});
    REQUIRE(p.size() == J);
    CHECK(std::abs(p.sum() - 1.0) <= 1e-12);
    CHECK((p.array() >= 0.0).all());
    CHECK((p.array() <= 1.0).all());
    double cum_prev = 1.0;
    for (int j = 1; j < J; ++j) {
      const double cum = p.tail(J - j).sum();
      CHECK(cum <= cum_prev + 1e-12);
      cum_prev = cum;
    }
  }
}

TEST_CASE("binary_prob examples and symmetry") {
  const BinaryEqParams zero{0.0, Vector(0), Vector::Zero(2)};
  CHECK(binary_prob(Vector(0), 1, 0.0, zero) == doctest::Approx(0.5));
  CHECK(binary_prob(Vector(0), 1, std::log(3.0), zero) == doctest::Approx(0.75).epsilon(1e-14));
  CHECK(binary_prob(Vector(0), 1, -std::log(3.0), zero) == doctest::Approx(0.25).epsilon(1e-14));

  const BinaryEqParams with_gamma{0.2, Vector(0), Vector{{0.5, -1.0}}};
  CHECK(binary_prob(Vector(0), 3, 0.0, with_gamma) == doctest::Approx(1.0 / (1.0 + std::exp(0.8))));
  CHECK_THROWS_AS(binary_prob(Vector::Ones(1), 1, 0.0, zero), DimensionMismatch);

  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd(0.0, 10.0);
  for (int rep = 0; rep < 2000; ++rep) {
    const double eta = nd(rng);
    CHECK(std::abs(binary_prob(Vector(0), 1, eta, zero) + binary_prob(Vector(0), 1, -eta, zero) -
                   1.0) <= 1e-12);
    CHECK(std::abs(logistic(eta) + logistic(-eta) - 1.0) <= 1e-12);
  }
}

TEST_CASE("gaussian_log_density examples") {
  const Vector y{{39.0, 3.2}};
  SUBCASE("standard bivariate normal at its mode") {
    const double v = gaussian_log_density(y, Vector(0), Vector(0), Vector::Zero(2),
                                          gaussian_params(y, Matrix::Identity(2, 2)));
    CHECK(v == doctest::Approx(-1.837877).epsilon(1e-6));
  }
  SUBCASE("mode under the application-scale Sigma") {
    Matrix S{{1.776, 0.248}, {0.248, 0.171}};
    const double det = 1.776 * 0.171 - 0.248 * 0.248;
    const double expected = -(kLog2Pi + 0.5 * std::log(det));
    CHECK(std::abs(expected - (-1.12887)) < 1e-4);
    const double v = gaussian_log_density(y, Vector(0), Vector(0), Vector::Zero(2),
                                          gaussian_params(y, S));
    CHECK(v == doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("unit Mahalanobis distance") {
    const Vector mean = y - Vector{{1.0, 0.0}};
    const double v = gaussian_log_density(y, Vector(0), Vector(0), Vector::Zero(2),
                                          gaussian_params(mean, Matrix::Identity(2, 2)));
    CHECK(v == doctest::Approx(-kLog2Pi - 0.5).epsilon(1e-12));
  }
  SUBCASE("delta, Phi and Psi shift the mean") {
    GaussianEqParams g = gaussian_params(Vector{{1.0, 2.0}}, Matrix::Identity(2, 2), 1, 1);
    g.Phi << 2.0, -1.0;
    g.Psi << 0.5, 0.5;
    const Vector x{{3.0}}, dummies{{1.0}}, delta{{-1.0, 1.0}};
    const Vector mean{{1.0 - 1.0 + 6.0 + 0.5, 2.0 + 1.0 - 3.0 + 0.5}};
    CHECK(gaussian_log_density(mean, x, dummies, delta, g) == doctest::Approx(-kLog2Pi));
  }
  SUBCASE("non positive definite Sigma is rejected") {
    Matrix bad{{1.0, 2.0}, {2.0, 1.0}};
    CHECK_THROWS_AS(gaussian_log_density(y, Vector(0), Vector(0), Vector::Zero(2),
                                         gaussian_params(y, bad)),
                    InvalidParameters);
  }
}

TEST_CASE("univariate density integrates to one") {
  const double sigma = 1.7;
  const GaussianEqParams g = gaussian_params(Vector{{2.0}}, Matrix{{sigma * sigma}});
  // composite Simpson over mean +/- 10 sigma
  const int m = 20000;
  const double a = 2.0 - 10.0 * sigma, b = 2.0 + 10.0 * sigma, h = (b - a) / m;
  double s = 0.0;
  for (int i = 0; i <= m; ++i) {
    const double wgt = (i == 0 || i == m) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    s += wgt * std::exp(gaussian_log_density(Vector{{a + i * h}}, Vector(0), Vector(0),
                                             Vector::Zero(1), g));
  }
  CHECK(std::abs(s * h / 3.0 - 1.0) < 1e-6);
}

TEST_CASE("correlation_from_sigma") {
  CHECK(correlation_from_sigma(Matrix{{1.776, 0.248}, {0.248, 0.171}}) ==
        doctest::Approx(0.450).epsilon(0.001 / 0.45));
  CHECK(correlation_from_sigma(Matrix::Identity(2, 2)) == 0.0);
  const double near = correlation_from_sigma(Matrix{{4.0, 2.0}, {2.0, 1.0 + 1e-9}});
  CHECK(near < 1.0);
  CHECK(near > 1.0 - 1e-8);
  CHECK_THROWS_AS(correlation_from_sigma(Matrix{{0.0, 0.0}, {0.0, 1.0}}), InvalidParameters);
}

TEST_CASE("class_conditional_log_lik") {
  const ModelSpec spec = ModelSpec::all_covariates(0, 1);
  ParameterSet t = ParameterSet::zeros(spec);
  t.ordinal.tau = Vector{{0.0, -std::log(3.0)}};
  t.gaussian.nu = Vector{{39.0, 3.0}};
  const DataRecord rec{Vector(0), 1, 0, Vector{{39.0, 3.0}}};

  SUBCASE("composes the three equation values") {
    // p(z1=1) = 0.5, p(z2=0) = 0.5, f(y) = 1/(2 pi)
    CHECK(class_conditional_log_lik(rec, spec, t, 0) ==
          doctest::Approx(std::log(0.25) - kLog2Pi).epsilon(1e-13));
  }
  SUBCASE("K=1 with zero supports is the sum of the individual log densities") {
    const DataRecord r2{Vector(0), 3, 1, Vector{{38.0, 3.5}}};
    const double lo = std::log(ordinal_category_probs(Vector(0), 0.0, t.ordinal)(2));
    const double lb = std::log(binary_prob(Vector(0), 3, 0.0, t.binary));
    const double lg = gaussian_log_density(r2.y, Vector(0), outcome_cause_dummies(spec, 3, 1),
                                           Vector::Zero(2), t.gaussian);
    CHECK(class_conditional_log_lik(r2, spec, t, 0) == doctest::Approx(lo + lb + lg));
  }
  SUBCASE("identical classes give identical values") {
    ModelSpec s2 = spec;
    s2.K = 2;
    ParameterSet t2 = ParameterSet::zeros(s2);
    t2.ordinal = t.ordinal;
    t2.gaussian = t.gaussian;
    CHECK(class_conditional_log_lik(rec, s2, t2, 0) == class_conditional_log_lik(rec, s2, t2, 1));
  }
}

TEST_CASE("class_log_lik_matrix agrees with the per-record route") {
  std::mt19937_64 rng(21);
  for (int rep = 0; rep < 50; ++rep) {
    const ModelSpec spec = paper_spec(1 + rep % 4);
    const ParameterSet t = random_theta(spec, rng);
    const Dataset data = random_dataset(spec, 20, rng);
    const Matrix L = class_log_lik_matrix(build_designs(data, spec), t);
    for (Index i = 0; i < data.size(); ++i) {
      for (int k = 0; k < spec.K; ++k) {
        CHECK(L(i, k) == doctest::Approx(class_conditional_log_lik(data.record(i), spec, t, k))
                             .epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("mixture_log_lik") {
  SUBCASE("one record with class log-liks (-1, -2)") {
    const double expected = std::log(0.3 * std::exp(-1.0) + 0.7 * std::exp(-2.0));
    CHECK(expected == doctest::Approx(-1.58426).epsilon(1e-5));
    CHECK(mixture_log_lik(Matrix{{-1.0, -2.0}}, Vector{{0.3, 0.7}}) ==
          doctest::Approx(expected).epsilon(1e-14));
  }
  SUBCASE("log-sum-exp stays finite") {
    const double v = mixture_log_lik(Matrix{{-5000.0, -1.0}}, Vector{{0.5, 0.5}});
    CHECK(std::isfinite(v));
    CHECK(v == doctest::Approx(-1.0 + std::log(0.5)));
    CHECK(std::isfinite(mixture_log_lik(Matrix{{-800.0, -790.0}}, Vector{{0.5, 0.5}})));
    CHECK(std::isfinite(mixture_log_lik(Matrix{{700.0, 690.0}}, Vector{{0.5, 0.5}})));
  }
  SUBCASE("K=1 equals the sum of class-conditional values") {
    std::mt19937_64 rng(3);
    const ModelSpec spec = paper_spec(1);
    const ParameterSet t = random_theta(spec, rng);
    const Dataset data = random_dataset(spec, 30, rng);
    double sum = 0.0;
    for (Index i = 0; i < data.size(); ++i) sum += class_conditional_log_lik(data.record(i), spec, t, 0);
    CHECK(mixture_log_lik(data, spec, t) == doctest::Approx(sum).epsilon(1e-13));
  }
}

TEST_CASE("duplicated classes reproduce the single-class likelihood") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int rep = 0; rep < 1000; ++rep) {
    const ModelSpec s1 = paper_spec(1);
    const ParameterSet t1 = random_theta(s1, rng);
    const Dataset data = random_dataset(s1, 5, rng);
    ModelSpec s2 = s1;
    s2.K = 2;
    ParameterSet t2 = t1;
    const double a = u(rng);
    t2.latent.pi = Vector{{a, 1.0 - a}};
    t2.latent.xi1 = Vector::Zero(2);
    t2.latent.xi2 = Vector::Zero(2);
    t2.latent.zeta = Matrix::Zero(2, 2);
    const double l1 = mixture_log_lik(data, s1, t1);
    CHECK(std::abs(mixture_log_lik(data, s2, t2) - l1) <= 1e-10 * (1.0 + std::abs(l1)));
  }
}

TEST_CASE("class relabeling leaves the likelihood unchanged") {
  std::mt19937_64 rng(13);
  for (int rep = 0; rep < 1000; ++rep) {
    const int K = 2 + rep % 3;
    const ModelSpec spec = paper_spec(K);
    const ParameterSet t = random_theta(spec, rng);
    const Dataset data = random_dataset(spec, 4, rng);
    std::vector<int> perm(static_cast<std::size_t>(K));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const ParameterSet tp = permute_classes(t, perm);
    const double l = mixture_log_lik(data, spec, t);
    CHECK(std::abs(mixture_log_lik(data, spec, tp) - l) <= 1e-10 * (1.0 + std::abs(l)));
    const Matrix w = e_step(data, spec, t).w;
    const Matrix wp = e_step(data, spec, tp).w;
    for (int k = 0; k < K; ++k) {
      CHECK((wp.col(k) - w.col(perm[static_cast<std::size_t>(k)])).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
}

TEST_CASE("count_parameters") {
  CHECK(count_parameters(paper_spec(1)) == 32);
  CHECK(count_parameters(paper_spec(2)) == 37);
  CHECK(count_parameters(paper_spec(3)) == 42);
  CHECK(count_parameters(paper_spec(4)) == 47);
  ModelSpec tiny = ModelSpec::all_covariates(0, 1, 2, 1);
  tiny.binary_uses_z1 = false;
  tiny.outcome_uses_z1 = false;
  tiny.outcome_uses_z2 = false;
  CHECK(count_parameters(tiny) == 4);
  for (int d = 1; d <= 3; ++d) {
    for (int K = 1; K < 6; ++K) {
      CHECK(count_parameters(ModelSpec::all_covariates(3, K + 1, 4, d)) -
                count_parameters(ModelSpec::all_covariates(3, K, 4, d)) ==
            2 + d + 1);
    }
  }
}

TEST_CASE("input validation") {
  CHECK_THROWS(Dataset(Matrix::Zero(0, 1), IntVector(0), IntVector(0), Matrix::Zero(0, 2)));
  CHECK_THROWS(Dataset(Matrix::Zero(1, 1), IntVector::Ones(1), IntVector::Constant(1, 2),
                       Matrix::Zero(1, 2)));
  CHECK_THROWS(Dataset(Matrix::Zero(1, 1), IntVector::Zero(1), IntVector::Zero(1),
                       Matrix::Zero(1, 2)));
  Matrix nan_y = Matrix::Zero(1, 2);
  nan_y(0, 1) = std::nan("");
  CHECK_THROWS(Dataset(Matrix::Zero(1, 1), IntVector::Ones(1), IntVector::Zero(1), nan_y));

  ModelSpec bad = paper_spec(2);
  bad.outcome_x.push_back(9);
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  const ModelSpec spec = paper_spec(2);
  ParameterSet t = mixsem::testing::truth_k2();
  CHECK_NOTHROW(validate_parameters(t, spec));
  ParameterSet t1 = t;
  t1.ordinal.tau(0) = 0.1;
  CHECK_THROWS_AS(validate_parameters(t1, spec), InvalidParameters);
  ParameterSet t2 = t;
  t2.ordinal.tau(1) = 0.5;
  CHECK_THROWS_AS(validate_parameters(t2, spec), InvalidParameters);
  ParameterSet t3 = t;
  t3.latent.pi = Vector{{0.5, 0.6}};
  CHECK_THROWS_AS(validate_parameters(t3, spec), InvalidParameters);
  ParameterSet t4 = t;
  t4.gaussian.Phi = Matrix::Zero(2, 3);
  CHECK_THROWS_AS(validate_parameters(t4, spec), DimensionMismatch);
}

}  // TEST_SUITE
