#pragma once

// Parameter sets and datasets shared by the unit and acceptance tests.

#include "mixsem/data_io.hpp"
#include "mixsem/em.hpp"
#include "mixsem/inference.hpp"
#include "mixsem/model_core.hpp"

#include <random>

namespace mixsem::testing {

// Mother's age, age^2 and two citizenship dummies in every equation.
inline ModelSpec paper_spec(int K) { return ModelSpec::all_covariates(4, K); }

// Coefficients of the application-scale fit (K = 3 Tables 4-6 magnitudes).
inline ParameterSet structural_truth(int K) {
  ParameterSet t = ParameterSet::zeros(paper_spec(K));
  t.ordinal.mu1 = 2.053;
  t.ordinal.tau = Vector{{0.0, -2.695}};
  t.ordinal.beta1 = Vector{{0.103, -0.009, -0.806, -1.100}};
  t.binary.mu2 = -0.763;
  t.binary.beta2 = Vector{{-0.027, 0.008, -0.679, -0.677}};
  t.binary.gamma = Vector{{-0.152, -0.468}};
  t.gaussian.nu = Vector{{39.346, 3.238}};
  t.gaussian.Phi = Matrix{{-0.015, -0.001, -0.194, -0.112}, {-0.004, -0.0003, 0.041, -0.031}};
  t.gaussian.Psi = Matrix{{0.025, 0.029, 0.025}, {0.023, 0.043, 0.011}};
  t.gaussian.Sigma = Matrix{{1.776, 0.248}, {0.248, 0.171}};
  return t;
}

inline ParameterSet truth_k1() { return structural_truth(1); }

// Classes separated by 4.5 residual SDs in gestational age.
inline ParameterSet truth_k3() {
  ParameterSet t = structural_truth(3);
  t.latent.xi1 = Vector{{-0.2, 0.0, 0.3}};
  t.latent.xi2 = Vector{{0.3, 0.0, -0.8}};
  t.latent.zeta = Matrix{{-6.0, -1.2}, {0.0, 0.0}, {6.0, 0.7}};
  t.latent.pi = Vector{{0.25, 0.45, 0.30}};
  return center_support_points(t);
}

// Classes 6 residual SDs apart in gestational age.
inline ParameterSet truth_k2() {
  ParameterSet t = structural_truth(2);
  t.latent.xi1 = Vector{{-0.3, 0.3}};
  t.latent.xi2 = Vector{{0.4, -0.4}};
  t.latent.zeta = Matrix{{-4.0, -0.6}, {4.0, 0.6}};
  t.latent.pi = Vector{{0.4, 0.6}};
  return center_support_points(t);
}

inline SimulatedData simulate_truth(const ParameterSet& theta, std::size_t n, std::uint64_t seed) {
  const SchemaConfig schema;
  return simulate(theta, paper_spec(theta.K()), schema, n, seed);
}

// Random valid parameter set for property tests.
inline ParameterSet random_theta(const ModelSpec& spec, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  std::uniform_real_distribution<double> ud(0.1, 1.0);
  ParameterSet t = ParameterSet::zeros(spec);
  t.ordinal.mu1 = nd(rng);
  for (Index j = 1; j < t.ordinal.tau.size(); ++j) t.ordinal.tau(j) = t.ordinal.tau(j - 1) - ud(rng) * 2.0;
  for (Index j = 0; j < t.ordinal.beta1.size(); ++j) t.ordinal.beta1(j) = 0.3 * nd(rng);
  t.binary.mu2 = nd(rng);
  for (Index j = 0; j < t.binary.beta2.size(); ++j) t.binary.beta2(j) = 0.3 * nd(rng);
  for (Index j = 0; j < t.binary.gamma.size(); ++j) t.binary.gamma(j) = 0.5 * nd(rng);
  for (Index r = 0; r < spec.d; ++r) {
    t.gaussian.nu(r) = 3.0 * nd(rng);
    for (Index c = 0; c < t.gaussian.Phi.cols(); ++c) t.gaussian.Phi(r, c) = 0.3 * nd(rng);
    for (Index c = 0; c < t.gaussian.Psi.cols(); ++c) t.gaussian.Psi(r, c) = 0.3 * nd(rng);
  }
  Matrix A = Matrix::Identity(spec.d, spec.d);
  for (Index r = 0; r < spec.d; ++r) {
    for (Index c = 0; c <= r; ++c) A(r, c) = r == c ? ud(rng) + 0.3 : 0.4 * nd(rng);
  }
  t.gaussian.Sigma = A * A.transpose();
  Vector pi(spec.K);
  for (int k = 0; k < spec.K; ++k) pi(k) = ud(rng);
  t.latent.pi = pi / pi.sum();
  for (int k = 0; k < spec.K; ++k) {
    t.latent.xi1(k) = nd(rng);
    t.latent.xi2(k) = nd(rng);
    for (Index r = 0; r < spec.d; ++r) t.latent.zeta(k, r) = 2.0 * nd(rng);
  }
  return center_support_points(t);
}

// Random records matching a spec (covariates standard normal).
inline Dataset random_dataset(const ModelSpec& spec, Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_int_distribution<int> cat(1, spec.J);
  std::bernoulli_distribution bin(0.4);
  Matrix x(n, spec.x_dim), y(n, spec.d);
  IntVector z1(n), z2(n);
  for (Index i = 0; i < n; ++i) {
    for (Index c = 0; c < spec.x_dim; ++c) x(i, c) = nd(rng);
    for (Index r = 0; r < spec.d; ++r) y(i, r) = 2.0 * nd(rng);
    z1(i) = cat(rng);
    z2(i) = bin(rng) ? 1 : 0;
  }
  return Dataset(x, z1, z2, y);
}

}  // namespace mixsem::testing
