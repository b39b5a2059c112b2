#include "mixsem/em.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

namespace mixsem {

void EmConfig::validate(int K) const {
  if (!(tol > 0.0)) throw std::invalid_argument("tol must be > 0");
  if (max_iter < 1) throw std::invalid_argument("max_iter must be >= 1");
  if (inner_max_iter < 1) throw std::invalid_argument("inner_max_iter must be >= 1");
  if (!(inner_tol > 0.0)) throw std::invalid_argument("inner_tol must be > 0");
  if (!(weight_floor > 0.0) || !(weight_floor < 1.0 / std::max(K, 1))) {
    throw std::invalid_argument("weight_floor must lie in (0, 1/K)");
  }
  if (n_random_starts < 0) throw std::invalid_argument("n_random_starts must be >= 0");
  if (threads < 1) throw std::invalid_argument("threads must be >= 1");
}

// ---------------------------------------------------------------------------
// E-step

PosteriorMatrix posterior_from_log_liks(const Matrix& class_log_liks, const Vector& pi) {
  const Index n = class_log_liks.rows();
  const Index K = class_log_liks.cols();
  if (pi.size() != K) throw DimensionMismatch("weight vector does not match class count");
  PosteriorMatrix post{Matrix(n, K)};
  const Vector log_pi = pi.array().log();
  Vector a(K);
  for (Index i = 0; i < n; ++i) {
    a = class_log_liks.row(i).transpose() + log_pi;
    const double m = a.maxCoeff();
    if (!std::isfinite(m)) {
      throw InvalidParameters("record " + std::to_string(i) +
                              " has no finite class log-likelihood");
    }
    a = (a.array() - m).exp();
    post.w.row(i) = a.transpose() / a.sum();
  }
  return post;
}

PosteriorMatrix e_step(const EquationDesigns& designs, const ParameterSet& theta) {
  return posterior_from_log_liks(class_log_lik_matrix(designs, theta), theta.latent.pi);
}

PosteriorMatrix e_step(const Dataset& data, const ModelSpec& spec,
                       const ParameterSet& theta) {
  return e_step(build_designs(data, spec), theta);
}

Vector update_weights(const PosteriorMatrix& posterior) {
  const Index n = posterior.w.rows();
  if (n == 0) throw std::invalid_argument("empty posterior");
  Vector pi = posterior.w.colwise().sum().transpose() / static_cast<double>(n);
  return pi / pi.sum();
}

// ---------------------------------------------------------------------------
// Identifiability and labels

ParameterSet center_support_points(const ParameterSet& theta) {
  ParameterSet out = theta;
  auto& lat = out.latent;
  const Vector& pi = lat.pi;
  const double m1 = pi.dot(lat.xi1);
  lat.xi1.array() -= m1;
  out.ordinal.mu1 += m1;
  const double m2 = pi.dot(lat.xi2);
  lat.xi2.array() -= m2;
  out.binary.mu2 += m2;
  const Vector mz = lat.zeta.transpose() * pi;
  lat.zeta.rowwise() -= mz.transpose();
  out.gaussian.nu += mz;
  return out;
}

ParameterSet sort_classes(const ParameterSet& theta) {
  std::vector<int> perm(static_cast<std::size_t>(theta.K()));
  std::iota(perm.begin(), perm.end(), 0);
  std::stable_sort(perm.begin(), perm.end(), [&](int a, int b) {
    return theta.latent.zeta(a, 0) < theta.latent.zeta(b, 0);
  });
  return permute_classes(theta, perm);
}

Vector flatten(const ParameterSet& t) {
  std::vector<double> v;
  auto put = [&](const auto& m) {
    for (Index c = 0; c < m.cols(); ++c)
      for (Index r = 0; r < m.rows(); ++r) v.push_back(m(r, c));
  };
  v.push_back(t.ordinal.mu1);
  put(t.ordinal.tau);
  put(t.ordinal.beta1);
  v.push_back(t.binary.mu2);
  put(t.binary.beta2);
  put(t.binary.gamma);
  put(t.gaussian.nu);
  put(t.gaussian.Phi);
  put(t.gaussian.Psi);
  put(t.gaussian.Sigma);
  put(t.latent.xi1);
  put(t.latent.xi2);
  put(t.latent.zeta);
  put(t.latent.pi);
  return Eigen::Map<Vector>(v.data(), static_cast<Index>(v.size()));
}

// ---------------------------------------------------------------------------
// Starts

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Equation-wise MLEs with a single class.
ParameterSet single_class_fit(const EquationDesigns& designs, const ModelSpec& spec,
                              const EmConfig& config) {
  ModelSpec one = spec;
  one.K = 1;
  ParameterSet base = ParameterSet::zeros(one);
  const PosteriorMatrix unit{Matrix::Ones(designs.size(), 1)};
  const auto ord = m_step_ordinal(designs, unit, base.ordinal, base.latent.xi1, config);
  const auto bin = m_step_binary(designs, unit, base.binary, base.latent.xi2, config);
  const auto gau = m_step_gaussian(designs, unit, base.gaussian, base.latent.zeta);
  if (gau.sigma_degenerate) {
    throw EstimationError("single-class outcome fit has a singular residual covariance");
  }
  base.ordinal = ord.params;
  base.binary = bin.params;
  base.gaussian = gau.params;
  return base;
}

// Supports at offsets spanning [-1, 1] residual SDs, optionally jittered.
ParameterSet place_supports(const ParameterSet& base, const ModelSpec& spec,
                            const StartStrategy& strategy) {
  const int K = spec.K;
  ParameterSet theta = ParameterSet::zeros(spec);
  theta.ordinal = base.ordinal;
  theta.binary = base.binary;
  theta.gaussian = base.gaussian;

  const double logit_sd = std::numbers::pi / std::sqrt(3.0);
  const Vector y_sd = base.gaussian.Sigma.diagonal().cwiseSqrt();
  for (int k = 0; k < K; ++k) {
    const double o = K == 1 ? 0.0 : -1.0 + 2.0 * k / (K - 1);
    theta.latent.xi1(k) = o * logit_sd;
    theta.latent.xi2(k) = o * logit_sd;
    theta.latent.zeta.row(k) = o * y_sd.transpose();
  }
  if (strategy.seed) {
    std::mt19937_64 rng(*strategy.seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (int k = 0; k < K; ++k) {
      theta.latent.xi1(k) += logit_sd * unit(rng);
      theta.latent.xi2(k) += logit_sd * unit(rng);
      for (Index c = 0; c < spec.d; ++c) theta.latent.zeta(k, c) += y_sd(c) * unit(rng);
    }
    std::exponential_distribution<double> expo(1.0);
    for (int k = 0; k < K; ++k) theta.latent.pi(k) = expo(rng);
    theta.latent.pi /= theta.latent.pi.sum();
  }
  return center_support_points(theta);
}

double max_relative_change(const ParameterSet& a, const ParameterSet& b) {
  const Vector fa = flatten(a);
  const Vector fb = flatten(b);
  if (fa.size() != fb.size()) return std::numeric_limits<double>::infinity();
  return ((fa - fb).cwiseAbs().array() / (1.0 + fa.cwiseAbs().array())).maxCoeff();
}

FitResult run_em_designs(const EquationDesigns& designs, const ModelSpec& spec,
                         const ParameterSet& init, const EmConfig& config) {
  FitResult res;
  ParameterSet theta = center_support_points(init);
  try {
    validate_parameters(theta, spec);
    Matrix L = class_log_lik_matrix(designs, theta);
    double ll = mixture_log_lik(L, theta.latent.pi);
    if (!std::isfinite(ll)) throw InvalidParameters("starting log-likelihood is not finite");
    res.loglik_trace.push_back(ll);

    for (int it = 1; it <= config.max_iter; ++it) {
      const PosteriorMatrix post = posterior_from_log_liks(L, theta.latent.pi);
      const Vector pi = update_weights(post);
      if (pi.minCoeff() < config.weight_floor) {
        res.degenerate = true;
        std::ostringstream os;
        os << "class weight " << pi.minCoeff() << " fell below the floor "
           << config.weight_floor << " at iteration " << it;
        res.diagnostic = os.str();
        break;
      }
      const auto ord = m_step_ordinal(designs, post, theta.ordinal, theta.latent.xi1, config);
      const auto bin = m_step_binary(designs, post, theta.binary, theta.latent.xi2, config);
      const auto gau = m_step_gaussian(designs, post, theta.gaussian, theta.latent.zeta);
      if (gau.sigma_degenerate) {
        res.degenerate = true;
        res.diagnostic = "residual covariance became singular at iteration " + std::to_string(it);
        break;
      }
      ParameterSet next = theta;
      next.ordinal = ord.params;
      next.latent.xi1 = ord.xi1;
      next.binary = bin.params;
      next.latent.xi2 = bin.xi2;
      next.gaussian = gau.params;
      next.latent.zeta = gau.zeta;
      next.latent.pi = pi;
      next = center_support_points(next);

      Matrix L_next = class_log_lik_matrix(designs, next);
      const double ll_next = mixture_log_lik(L_next, next.latent.pi);
      if (!std::isfinite(ll_next)) throw InvalidParameters("log-likelihood became non-finite");
      if (ll_next < ll - kMonotoneSlack) res.monotonicity_violated = true;
      res.loglik_trace.push_back(ll_next);
      res.iterations = it;
      if (config.on_iteration) {
        config.on_iteration({it, ll_next, max_relative_change(theta, next)});
      }
      const double rel = std::abs(ll_next - ll) / (std::abs(ll) + 1.0);
      theta = std::move(next);
      L = std::move(L_next);
      ll = ll_next;
      if (rel < config.tol) {
        res.converged = true;
        break;
      }
    }
    res.loglik = ll;
  } catch (const EstimationError& e) {
    res.failed = true;
    res.diagnostic = e.what();
  } catch (const InvalidParameters& e) {
    res.failed = true;
    res.diagnostic = e.what();
  }
  if (!res.loglik_trace.empty() && res.failed) res.loglik = res.loglik_trace.back();
  res.theta = sort_classes(theta);
  return res;
}

}  // namespace

std::uint64_t derive_start_seed(std::uint64_t master_seed, int start_id) {
  return splitmix64(splitmix64(master_seed) ^ static_cast<std::uint64_t>(start_id));
}

ParameterSet initialize(const Dataset& data, const ModelSpec& spec,
                        const StartStrategy& strategy, const EmConfig& config) {
  const EquationDesigns designs = build_designs(data, spec);
  return place_supports(single_class_fit(designs, spec, config), spec, strategy);
}

FitResult run_em(const Dataset& data, const ModelSpec& spec, const ParameterSet& init,
                 const EmConfig& config) {
  config.validate(spec.K);
  return run_em_designs(build_designs(data, spec), spec, init, config);
}

FitResult fit_multistart(const Dataset& data, const ModelSpec& spec,
                         const EmConfig& config) {
  config.validate(spec.K);
  const EquationDesigns designs = build_designs(data, spec);
  const ParameterSet base = single_class_fit(designs, spec, config);

  const int n_starts = 1 + config.n_random_starts;
  std::vector<FitResult> runs(static_cast<std::size_t>(n_starts));
  auto run_one = [&](int s) {
    StartStrategy strategy = StartStrategy::deterministic();
    std::uint64_t seed = 0;
    if (s > 0) {
      seed = derive_start_seed(config.master_seed, s);
      strategy = StartStrategy::random(seed);
    }
    FitResult r = run_em_designs(designs, spec, place_supports(base, spec, strategy), config);
    r.start_id = s;
    r.seed = seed;
    runs[static_cast<std::size_t>(s)] = std::move(r);
  };

  const int workers = std::min(config.threads, n_starts);
  if (workers <= 1) {
    for (int s = 0; s < n_starts; ++s) run_one(s);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) {
      pool.emplace_back([&] {
        for (int s = next++; s < n_starts; s = next++) run_one(s);
      });
    }
    for (auto& th : pool) th.join();
  }

  std::vector<StartSummary> summaries;
  int best = -1;
  for (int s = 0; s < n_starts; ++s) {
    const FitResult& r = runs[static_cast<std::size_t>(s)];
    summaries.push_back({s, r.seed, r.loglik, r.iterations, r.converged, r.degenerate,
                         r.failed, r.monotonicity_violated, r.diagnostic});
    if (r.failed || r.degenerate) continue;
    if (best < 0 || r.loglik > runs[static_cast<std::size_t>(best)].loglik) best = s;
  }
  if (best < 0) {
    std::ostringstream os;
    os << "all " << n_starts << " starts failed:";
    for (const auto& s : summaries) {
      os << "\n  start " << s.start_id << ": "
         << (s.diagnostic.empty() ? "degenerate" : s.diagnostic);
    }
    throw EstimationError(os.str());
  }
  FitResult out = std::move(runs[static_cast<std::size_t>(best)]);
  out.starts = std::move(summaries);
  return out;
}

}  // namespace mixsem
