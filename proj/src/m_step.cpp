#include "mixsem/em.hpp"
#include "objectives.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

namespace mixsem {

namespace {

using Objective = std::function<double(const Vector&, detail::Derivatives*)>;

// Damped Newton ascent. A step is accepted only if the objective does not
// decrease (step-halving otherwise), so the returned point is never worse
// than the start. `cap_stops` ends the iteration as soon as a coefficient
// exceeds kCoefficientCap.
FitterDiagnostics newton_maximize(Vector& coef, const Objective& objective,
                                  const EmConfig& config, bool cap_stops,
                                  const char* what) {
  FitterDiagnostics diag;
  detail::Derivatives der;
  double value = objective(coef, &der);
  if (!std::isfinite(value)) {
    throw EstimationError(std::string(what) + " fitter: objective is not finite at the start");
  }
  const double step_tol = std::sqrt(config.inner_tol);

  bool singular_last = false;
  for (int it = 1; it <= config.inner_max_iter; ++it) {
    diag.iterations = it;
    Matrix neg_hess = -der.hess;
    Eigen::LLT<Matrix> llt(neg_hess);
    singular_last = llt.info() != Eigen::Success;
    if (singular_last) {
      neg_hess.diagonal().array() += kRidge;
      llt.compute(neg_hess);
      diag.ridge_used = true;
      if (llt.info() != Eigen::Success) {
        throw EstimationError(std::string(what) + " fitter: Hessian is singular");
      }
    }
    const Vector step = llt.solve(der.grad);
    if (!step.allFinite()) {
      throw EstimationError(std::string(what) + " fitter: Newton step is not finite");
    }

    double t = 1.0;
    bool accepted = false;
    Vector candidate;
    detail::Derivatives cand_der;
    double cand_value = 0.0;
    for (int h = 0; h < 40; ++h) {
      candidate = coef + t * step;
      cand_value = objective(candidate, &cand_der);
      if (std::isfinite(cand_value) && cand_value >= value) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      // No ascent direction left at working precision.
      diag.converged = true;
      break;
    }
    const Vector moved = (t * step).cwiseAbs().array() / (1.0 + candidate.cwiseAbs().array());
    coef = std::move(candidate);
    value = cand_value;
    der = std::move(cand_der);

    if (coef.cwiseAbs().maxCoeff() > kCoefficientCap) {
      diag.diverging = true;
      if (cap_stops) break;
    }
    if (moved.maxCoeff() < step_tol) {
      diag.converged = true;
      break;
    }
  }
  if (!diag.converged && diag.iterations >= config.inner_max_iter) {
    diag.hit_iteration_cap = true;
    // still drifting along a flat direction
    if (singular_last) diag.diverging = true;
  }
  return diag;
}

}  // namespace

double ordinal_objective(const EquationDesigns& designs, const Matrix& w,
                         const OrdinalEqParams& params, const Vector& xi1) {
  return detail::ordinal_eval(designs, w, static_cast<int>(params.tau.size()) + 1,
                              detail::pack_ordinal(params, xi1), nullptr);
}

double binary_objective(const EquationDesigns& designs, const Matrix& w,
                        const BinaryEqParams& params, const Vector& xi2) {
  return detail::binary_eval(designs, w, detail::pack_binary(params, xi2), nullptr);
}

OrdinalUpdate m_step_ordinal(const EquationDesigns& designs,
                             const PosteriorMatrix& posterior,
                             const OrdinalEqParams& current, const Vector& xi1,
                             const EmConfig& config) {
  const int K = static_cast<int>(posterior.w.cols());
  const int J = static_cast<int>(current.tau.size()) + 1;
  if (xi1.size() != K) throw DimensionMismatch("support points do not match K");
  if ((posterior.w.array() < 0.0).any()) {
    throw std::invalid_argument("posterior weights must be non-negative");
  }
  Vector coef = detail::pack_ordinal(current, xi1);
  const Matrix& w = posterior.w;
  Objective objective = [&](const Vector& c, detail::Derivatives* der) {
    return detail::ordinal_eval(designs, w, J, c, der);
  };
  OrdinalUpdate out;
  out.diag = newton_maximize(coef, objective, config, false, "ordinal");
  const Vector pi = update_weights(posterior);
  detail::unpack_ordinal(coef, K, J, pi, out.params, out.xi1);
  return out;
}

BinaryUpdate m_step_binary(const EquationDesigns& designs,
                           const PosteriorMatrix& posterior,
                           const BinaryEqParams& current, const Vector& xi2,
                           const EmConfig& config) {
  const int K = static_cast<int>(posterior.w.cols());
  if (xi2.size() != K) throw DimensionMismatch("support points do not match K");
  if ((posterior.w.array() < 0.0).any()) {
    throw std::invalid_argument("posterior weights must be non-negative");
  }
  Vector coef = detail::pack_binary(current, xi2);
  const Matrix& w = posterior.w;
  Objective objective = [&](const Vector& c, detail::Derivatives* der) {
    return detail::binary_eval(designs, w, c, der);
  };
  BinaryUpdate out;
  out.diag = newton_maximize(coef, objective, config, true, "binary");
  const Vector pi = update_weights(posterior);
  detail::unpack_binary(coef, K, current.beta2.size(), pi, out.params, out.xi2);
  return out;
}

GaussianUpdate m_step_gaussian(const EquationDesigns& designs,
                               const PosteriorMatrix& posterior,
                               const GaussianEqParams& current, const Matrix& zeta) {
  const Matrix& W = posterior.w;
  const Matrix& X = designs.outcome;
  const Matrix& Y = designs.y;
  const Index K = W.cols();
  const Index m = X.cols();
  const Index d = Y.cols();
  const Index P = K + m;
  if (zeta.rows() != K || zeta.cols() != d) throw DimensionMismatch("support vectors do not match K and d");
  if (current.nu.size() != d) throw DimensionMismatch("nu does not match the outcome dimension");
  if ((W.array() < 0.0).any()) throw std::invalid_argument("posterior weights must be non-negative");

  const Vector class_weight = W.colwise().sum().transpose();
  const Vector row_weight = W.rowwise().sum();
  const double total = class_weight.sum();
  if (!(total > static_cast<double>(P))) {
    throw EstimationError("outcome fitter: total weight does not exceed the number of regressors");
  }

  // Normal equations for regressors [class indicators, x, cause dummies].
  Matrix A = Matrix::Zero(P, P);
  A.topLeftCorner(K, K).diagonal() = class_weight;
  const Matrix cx = W.transpose() * X;  // K x m
  A.block(0, K, K, m) = cx;
  A.block(K, 0, m, K) = cx.transpose();
  A.block(K, K, m, m) = X.transpose() * row_weight.asDiagonal() * X;
  Matrix B(P, d);
  B.topRows(K) = W.transpose() * Y;
  B.bottomRows(m) = X.transpose() * (row_weight.asDiagonal() * Y);

  // Rank check on the scale-normalized system so the offending columns can
  // be named.
  const Vector scale = A.diagonal().cwiseMax(0.0).cwiseSqrt();
  std::vector<Index> bad;
  for (Index c = 0; c < P; ++c) {
    if (!(scale(c) > 0.0)) bad.push_back(c);
  }
  if (bad.empty()) {
    const Vector inv = scale.cwiseInverse();
    const Matrix R = inv.asDiagonal() * A * inv.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(R);
    const double tiny = 1e-11 * static_cast<double>(P);
    for (Index e = 0; e < P; ++e) {
      if (eig.eigenvalues()(e) > tiny) continue;
      for (Index c = 0; c < P; ++c) {
        if (std::abs(eig.eigenvectors()(c, e)) > 1e-6 &&
            std::find(bad.begin(), bad.end(), c) == bad.end()) {
          bad.push_back(c);
        }
      }
    }
  }
  if (!bad.empty()) {
    std::sort(bad.begin(), bad.end());
    std::ostringstream os;
    os << "outcome fitter: collinear design columns {";
    for (std::size_t b = 0; b < bad.size(); ++b) os << (b ? ", " : "") << bad[b];
    os << "} (class indicators first, then covariates and cause dummies)";
    throw EstimationError(os.str(), bad);
  }
  const Matrix coef = A.ldlt().solve(B);  // P x d

  GaussianUpdate out;
  out.params = current;
  const Matrix class_int = coef.topRows(K);  // K x d
  const Vector pi = class_weight / total;
  out.params.nu = class_int.transpose() * pi;
  out.zeta = class_int.rowwise() - out.params.nu.transpose();
  const Matrix slopes = coef.bottomRows(m).transpose();  // d x m
  const Index q = current.Psi.cols();
  if (current.Phi.cols() + q != m) throw DimensionMismatch("Phi/Psi do not match the outcome design");
  out.params.Phi = slopes.leftCols(m - q);
  out.params.Psi = slopes.rightCols(q);

  const Matrix resid_base = Y - X * coef.bottomRows(m);  // n x d
  Matrix S = Matrix::Zero(d, d);
  for (Index k = 0; k < K; ++k) {
    const Matrix rk = resid_base.rowwise() - class_int.row(k);
    S.noalias() += rk.transpose() * W.col(k).asDiagonal() * rk;
  }
  S /= total;
  out.params.Sigma = 0.5 * (S + S.transpose());

  // Degenerate when the residual covariance is numerically singular relative
  // to the outcome scale.
  Vector y_scale(d);
  for (Index c = 0; c < d; ++c) {
    const double mean = row_weight.dot(Y.col(c)) / total;
    y_scale(c) = row_weight.dot((Y.col(c).array() - mean).square().matrix()) / total;
  }
  const double ref = std::max(y_scale.maxCoeff(), 1e-300);
  Eigen::SelfAdjointEigenSolver<Matrix> sig(out.params.Sigma, Eigen::EigenvaluesOnly);
  out.sigma_degenerate = !(sig.eigenvalues()(0) > 1e-12 * ref);
  return out;
}

}  // namespace mixsem
