#include "mixsem/inference.hpp"
#include "objectives.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace mixsem {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string x_label(const ColumnMetadata* meta, Index col) {
  if (meta && col < static_cast<Index>(meta->x.size())) {
    const auto& l = meta->x[static_cast<std::size_t>(col)];
    return l.category.empty() ? l.covariate : l.covariate + "=" + l.category;
  }
  return "x" + std::to_string(col + 1);
}

std::string z1_label(const ColumnMetadata* meta, int category) {
  if (meta && category - 1 < static_cast<int>(meta->z1_labels.size())) {
    return meta->z1_name + "=" + meta->z1_labels[static_cast<std::size_t>(category - 1)];
  }
  return "z1=" + std::to_string(category);
}

std::string z2_label(const ColumnMetadata* meta) {
  if (meta && meta->z2_labels.size() == 2) return meta->z2_name + "=" + meta->z2_labels[1];
  return "z2=1";
}

std::string y_label(const ColumnMetadata* meta, Index r) {
  if (meta && r < static_cast<Index>(meta->y_names.size())) {
    return meta->y_names[static_cast<std::size_t>(r)];
  }
  return "y" + std::to_string(r + 1);
}

// Position of Sigma(r, c), r <= c, in the upper-triangular row-major list.
Index sigma_entry(Index d, Index r, Index c) {
  Index idx = 0;
  for (Index i = 0; i < r; ++i) idx += d - i;
  return idx + (c - r);
}

}  // namespace

double bic(double loglik, int npar, Index n) {
  if (n < 1) throw std::invalid_argument("BIC needs n >= 1");
  if (npar < 0) throw std::invalid_argument("BIC needs npar >= 0");
  return -2.0 * loglik + std::log(static_cast<double>(n)) * npar;
}

// ---------------------------------------------------------------------------
// FreeParameterMap

FreeParameterMap::FreeParameterMap(const ModelSpec& spec, const ColumnMetadata* meta)
    : spec_(spec) {
  spec_.validate();
  const int J = spec_.J;
  const int K = spec_.K;
  const Index d = spec_.d;
  names_.push_back("mu1");
  for (int j = 2; j <= J - 1; ++j) names_.push_back("tau" + std::to_string(j));
  for (Index c : spec_.ordinal_x) names_.push_back("beta1[" + x_label(meta, c) + "]");

  binary_off_ = size();
  names_.push_back("mu2");
  for (Index c : spec_.binary_x) names_.push_back("beta2[" + x_label(meta, c) + "]");
  for (int j = 2; j <= spec_.J && spec_.binary_uses_z1; ++j) {
    names_.push_back("gamma[" + z1_label(meta, j) + "]");
  }

  outcome_off_ = size();
  for (Index r = 0; r < d; ++r) {
    const std::string y = y_label(meta, r);
    names_.push_back("nu[" + y + "]");
    for (Index c : spec_.outcome_x) names_.push_back("phi[" + y + "," + x_label(meta, c) + "]");
    if (spec_.outcome_uses_z1) {
      for (int j = 2; j <= J; ++j) names_.push_back("psi[" + y + "," + z1_label(meta, j) + "]");
    }
    if (spec_.outcome_uses_z2) names_.push_back("psi[" + y + "," + z2_label(meta) + "]");
  }

  sigma_off_ = size();
  for (Index r = 0; r < d; ++r) {
    for (Index c = r; c < d; ++c) {
      names_.push_back("sigma[" + y_label(meta, r) + "," + y_label(meta, c) + "]");
    }
  }

  latent_off_ = size();
  for (int dim = 0; dim < n_latent_dims(); ++dim) {
    for (int k = 1; k < K; ++k) {
      names_.push_back(latent_dim_name(dim) + "[" + std::to_string(k + 1) + "]");
    }
  }
  for (int k = 1; k < K; ++k) names_.push_back("logit_pi[" + std::to_string(k + 1) + "]");

  if (size() != count_parameters(spec_)) {
    throw std::logic_error("free-parameter basis disagrees with count_parameters");
  }
}

std::string FreeParameterMap::latent_dim_name(int dim) const {
  if (dim == 0) return "xi1";
  if (dim == 1) return "xi2";
  return "zeta" + std::to_string(dim - 1);
}

Index FreeParameterMap::support_index(int dim, int k) const {
  if (k < 1 || k >= spec_.K) throw std::out_of_range("support index needs 1 <= k < K");
  return latent_off_ + static_cast<Index>(dim) * (spec_.K - 1) + (k - 1);
}

Index FreeParameterMap::weight_index(int k) const {
  if (k < 1 || k >= spec_.K) throw std::out_of_range("weight index needs 1 <= k < K");
  return latent_off_ + static_cast<Index>(n_latent_dims()) * (spec_.K - 1) + (k - 1);
}

double support_value(const ParameterSet& theta, int dim, int k) {
  if (dim == 0) return theta.latent.xi1(k);
  if (dim == 1) return theta.latent.xi2(k);
  return theta.latent.zeta(k, dim - 2);
}

namespace {

double& support_ref(ParameterSet& theta, int dim, int k) {
  if (dim == 0) return theta.latent.xi1(k);
  if (dim == 1) return theta.latent.xi2(k);
  return theta.latent.zeta(k, dim - 2);
}

}  // namespace

Vector FreeParameterMap::to_free(const ParameterSet& theta) const {
  validate_parameters(theta, spec_);
  Vector v(size());
  Index i = 0;
  const auto& o = theta.ordinal;
  v(i++) = o.mu1;
  for (Index j = 1; j < o.tau.size(); ++j) v(i++) = o.tau(j);
  for (Index c = 0; c < o.beta1.size(); ++c) v(i++) = o.beta1(c);
  const auto& b = theta.binary;
  v(i++) = b.mu2;
  for (Index c = 0; c < b.beta2.size(); ++c) v(i++) = b.beta2(c);
  for (Index c = 0; c < b.gamma.size(); ++c) v(i++) = b.gamma(c);
  const auto& g = theta.gaussian;
  for (Index r = 0; r < spec_.d; ++r) {
    v(i++) = g.nu(r);
    for (Index c = 0; c < g.Phi.cols(); ++c) v(i++) = g.Phi(r, c);
    for (Index c = 0; c < g.Psi.cols(); ++c) v(i++) = g.Psi(r, c);
  }
  for (Index r = 0; r < spec_.d; ++r)
    for (Index c = r; c < spec_.d; ++c) v(i++) = g.Sigma(r, c);
  for (int dim = 0; dim < n_latent_dims(); ++dim)
    for (int k = 1; k < spec_.K; ++k) v(i++) = support_value(theta, dim, k);
  const auto& pi = theta.latent.pi;
  for (int k = 1; k < spec_.K; ++k) v(i++) = std::log(pi(k) / pi(0));
  return v;
}

ParameterSet FreeParameterMap::from_free(const Vector& v) const {
  if (v.size() != size()) throw DimensionMismatch("free vector has wrong length");
  ParameterSet t = ParameterSet::zeros(spec_);
  Index i = 0;
  t.ordinal.mu1 = v(i++);
  for (Index j = 1; j < t.ordinal.tau.size(); ++j) t.ordinal.tau(j) = v(i++);
  for (Index c = 0; c < t.ordinal.beta1.size(); ++c) t.ordinal.beta1(c) = v(i++);
  t.binary.mu2 = v(i++);
  for (Index c = 0; c < t.binary.beta2.size(); ++c) t.binary.beta2(c) = v(i++);
  for (Index c = 0; c < t.binary.gamma.size(); ++c) t.binary.gamma(c) = v(i++);
  auto& g = t.gaussian;
  for (Index r = 0; r < spec_.d; ++r) {
    g.nu(r) = v(i++);
    for (Index c = 0; c < g.Phi.cols(); ++c) g.Phi(r, c) = v(i++);
    for (Index c = 0; c < g.Psi.cols(); ++c) g.Psi(r, c) = v(i++);
  }
  for (Index r = 0; r < spec_.d; ++r) {
    for (Index c = r; c < spec_.d; ++c) {
      g.Sigma(r, c) = v(i);
      g.Sigma(c, r) = v(i);
      ++i;
    }
  }
  const int K = spec_.K;
  const Index support_start = i;
  i += static_cast<Index>(n_latent_dims()) * (K - 1);
  Vector odds(K);
  odds(0) = 1.0;
  for (int k = 1; k < K; ++k) odds(k) = std::exp(v(i++));
  t.latent.pi = odds / odds.sum();
  Index s = support_start;
  for (int dim = 0; dim < n_latent_dims(); ++dim) {
    double first = 0.0;
    for (int k = 1; k < K; ++k) {
      support_ref(t, dim, k) = v(s);
      first -= odds(k) * v(s);
      ++s;
    }
    support_ref(t, dim, 0) = first;
  }
  return t;
}

// ---------------------------------------------------------------------------
// Score

Vector score_vector(const ParameterSet& theta, const EquationDesigns& des,
                    const FreeParameterMap& map) {
  const ModelSpec& spec = map.spec();
  const int K = spec.K;
  const Index d = spec.d;
  const PosteriorMatrix post = e_step(des, theta);
  const Matrix& w = post.w;
  Vector score = Vector::Zero(map.size());

  // Full-basis gradients of each latent dimension's support points.
  Matrix support_grad = Matrix::Zero(map.n_latent_dims(), K);

  {
    detail::Derivatives der;
    detail::ordinal_eval(des, w, spec.J, detail::pack_ordinal(theta.ordinal, theta.latent.xi1), &der);
    const Index nt = spec.J - 2;
    const Index p = theta.ordinal.beta1.size();
    score(0) = der.grad.head(K).sum();
    score.segment(1, nt) = der.grad.segment(K, nt);
    score.segment(1 + nt, p) = der.grad.tail(p);
    support_grad.row(0) = der.grad.head(K).transpose();
  }
  {
    detail::Derivatives der;
    detail::binary_eval(des, w, detail::pack_binary(theta.binary, theta.latent.xi2), &der);
    const Index m = der.grad.size() - K;
    const Index off = map.binary_offset();
    score(off) = der.grad.head(K).sum();
    score.segment(off + 1, m) = der.grad.tail(m);
    support_grad.row(1) = der.grad.head(K).transpose();
  }
  {
    const auto& g = theta.gaussian;
    const Index m = des.outcome.cols();
    Matrix coef(d, m);
    coef << g.Phi, g.Psi;
    Matrix mean = des.outcome * coef.transpose();
    mean.rowwise() += g.nu.transpose();
    const GaussianKernel kernel(g.Sigma);
    Matrix V = Matrix::Zero(des.size(), d);
    Matrix Z = Matrix::Zero(K, d);
    Matrix S = Matrix::Zero(d, d);
    Vector r(d);
    for (Index i = 0; i < des.size(); ++i) {
      for (int k = 0; k < K; ++k) {
        const double wik = w(i, k);
        r = des.y.row(i).transpose() - mean.row(i).transpose() - theta.latent.zeta.row(k).transpose();
        const Vector v = kernel.llt().solve(r);
        V.row(i) += wik * v.transpose();
        Z.row(k) += wik * v.transpose();
        S.noalias() += wik * r * r.transpose();
      }
    }
    const Matrix slope_grad = V.transpose() * des.outcome;  // d x m
    const Vector nu_grad = V.colwise().sum().transpose();
    Index idx = map.outcome_offset();
    for (Index rr = 0; rr < d; ++rr) {
      score(idx++) = nu_grad(rr);
      for (Index c = 0; c < m; ++c) score(idx++) = slope_grad(rr, c);
    }
    const Matrix Sinv = kernel.llt().solve(Matrix::Identity(d, d));
    const double total = w.sum();
    const Matrix G = 0.5 * (Sinv * S * Sinv - total * Sinv);
    for (Index a = 0; a < d; ++a) {
      for (Index b = a; b < d; ++b) score(idx++) = a == b ? G(a, a) : G(a, b) + G(b, a);
    }
    for (Index c = 0; c < d; ++c) support_grad.row(2 + c) = Z.col(c).transpose();
  }

  // Reduced latent coordinates.
  const Vector& pi = theta.latent.pi;
  const Vector N = w.colwise().sum().transpose();
  const double total = N.sum();
  for (int k = 1; k < K; ++k) {
    const double ratio = pi(k) / pi(0);
    double eta_grad = N(k) - pi(k) * total;
    for (int dim = 0; dim < map.n_latent_dims(); ++dim) {
      const double g1 = support_grad(dim, 0);
      score(map.support_index(dim, k)) = support_grad(dim, k) - ratio * g1;
      eta_grad += g1 * (-ratio * support_value(theta, dim, k));
    }
    score(map.weight_index(k)) = eta_grad;
  }
  return score;
}

Vector score_vector(const ParameterSet& theta, const Dataset& data, const ModelSpec& spec) {
  const FreeParameterMap map(spec, &data.meta());
  return score_vector(theta, build_designs(data, spec), map);
}

InformationResult observed_information(const ParameterSet& theta,
                                       const EquationDesigns& designs,
                                       const FreeParameterMap& map) {
  const Vector base = map.to_free(center_support_points(theta));
  const Index P = base.size();
  Matrix jac(P, P);
  for (Index j = 0; j < P; ++j) {
    const double h = 1e-5 * (1.0 + std::abs(base(j)));
    Vector plus = base, minus = base;
    plus(j) += h;
    minus(j) -= h;
    const Vector sp = score_vector(map.from_free(plus), designs, map);
    const Vector sm = score_vector(map.from_free(minus), designs, map);
    jac.col(j) = (sp - sm) / (2.0 * h);
  }
  InformationResult out;
  out.info = -0.5 * (jac + jac.transpose());
  Eigen::LLT<Matrix> llt(out.info);
  out.positive_definite = llt.info() == Eigen::Success;
  return out;
}

InformationResult observed_information(const ParameterSet& theta, const Dataset& data,
                                       const ModelSpec& spec) {
  const FreeParameterMap map(spec, &data.meta());
  return observed_information(theta, build_designs(data, spec), map);
}

// ---------------------------------------------------------------------------
// Wald inference

double normal_p_value(double t) {
  if (!std::isfinite(t)) return std::isnan(t) ? kNaN : 0.0;
  return std::erfc(std::abs(t) / std::sqrt(2.0));
}

WaldRow wald(double estimate, double se) {
  WaldRow row;
  row.estimate = estimate;
  row.se = se;
  if (std::isfinite(se) && se > 0.0) {
    row.t = estimate / se;
    row.p = normal_p_value(row.t);
  } else {
    row.se = kNaN;
    row.t = kNaN;
    row.p = kNaN;
  }
  return row;
}

CovarianceResult invert_information(const Matrix& info) {
  const Index P = info.rows();
  CovarianceResult out;
  out.suppressed.assign(static_cast<std::size_t>(P), false);
  if (P == 0) {
    out.cov = Matrix(0, 0);
    return out;
  }
  const Matrix sym = 0.5 * (info + info.transpose());
  Eigen::LLT<Matrix> llt(sym);
  if (llt.info() == Eigen::Success) {
    out.cov = llt.solve(Matrix::Identity(P, P));
    if (out.cov.allFinite() && (out.cov.diagonal().array() > 0.0).all()) return out;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  const Vector& lam = eig.eigenvalues();
  const Matrix& U = eig.eigenvectors();
  const double cutoff = 1e-10 * std::max(lam.cwiseAbs().maxCoeff(), 1e-300);
  out.cov = Matrix::Zero(P, P);
  int dropped = 0;
  for (Index e = 0; e < P; ++e) {
    if (lam(e) > cutoff) {
      out.cov.noalias() += (U.col(e) / lam(e)) * U.col(e).transpose();
    } else {
      ++dropped;
      for (Index j = 0; j < P; ++j) {
        if (std::abs(U(j, e)) > 1e-4) out.suppressed[static_cast<std::size_t>(j)] = true;
      }
    }
  }
  std::ostringstream os;
  os << "observed information is not positive definite (" << dropped
     << " non-positive direction" << (dropped == 1 ? "" : "s")
     << "); standard errors of affected parameters suppressed";
  out.diagnostic = os.str();
  return out;
}

StandardErrors standard_errors(const Matrix& info, const Vector& estimates) {
  if (info.rows() != info.cols() || info.rows() != estimates.size()) {
    throw DimensionMismatch("information and estimate dimensions differ");
  }
  const CovarianceResult cov = invert_information(info);
  StandardErrors out;
  out.diagnostic = cov.diagnostic;
  for (Index j = 0; j < estimates.size(); ++j) {
    const double var = cov.cov(j, j);
    const double se = cov.suppressed[static_cast<std::size_t>(j)] || !(var > 0.0)
                          ? kNaN
                          : std::sqrt(var);
    out.rows.push_back(wald(estimates(j), se));
  }
  return out;
}

double delta_method_se(const Vector& gradient, const Matrix& cov) {
  const double var = gradient.dot(cov * gradient);
  return var > 0.0 ? std::sqrt(var) : kNaN;
}

Vector support_gradient(const ParameterSet& theta, const FreeParameterMap& map, int dim, int k) {
  const int K = map.spec().K;
  Vector g = Vector::Zero(map.size());
  if (K == 1) return g;
  const Vector& pi = theta.latent.pi;
  if (k >= 1) {
    g(map.support_index(dim, k)) = 1.0;
    return g;
  }
  // s_1 = -sum_{m>=2} exp(eta_m) s_m
  for (int m = 1; m < K; ++m) {
    const double ratio = pi(m) / pi(0);
    g(map.support_index(dim, m)) = -ratio;
    g(map.weight_index(m)) = -ratio * support_value(theta, dim, m);
  }
  return g;
}

std::vector<ContrastRow> class_contrasts(const ParameterSet& theta,
                                         const FreeParameterMap& map, const Matrix& cov) {
  std::vector<ContrastRow> out;
  const int K = map.spec().K;
  for (int dim = 0; dim < map.n_latent_dims(); ++dim) {
    const Vector g1 = support_gradient(theta, map, dim, 0);
    for (int k = 1; k < K; ++k) {
      const Vector g = support_gradient(theta, map, dim, k) - g1;
      const double est = support_value(theta, dim, k) - support_value(theta, dim, 0);
      double se = delta_method_se(g, cov);
      ContrastRow row{dim, k, wald(est, se)};
      if (est == 0.0) {
        row.wald.t = 0.0;
        row.wald.p = 1.0;
      }
      out.push_back(row);
    }
  }
  return out;
}

InferenceReport build_inference_report(const ParameterSet& theta_in, const Dataset& data,
                                       const ModelSpec& spec) {
  const ParameterSet theta = center_support_points(theta_in);
  const FreeParameterMap map(spec, &data.meta());
  const EquationDesigns designs = build_designs(data, spec);
  const InformationResult info = observed_information(theta, designs, map);
  const CovarianceResult cov = invert_information(info.info);
  const Vector est = map.to_free(theta);

  InferenceReport rep;
  rep.information_pd = info.positive_definite;
  if (!info.positive_definite) {
    rep.diagnostics.push_back("observed information is not positive definite; "
                              "the fit may not be at a local maximum");
  }
  if (!cov.diagnostic.empty()) rep.diagnostics.push_back(cov.diagnostic);
  for (Index j = 0; j < map.size(); ++j) {
    const bool sup = cov.suppressed[static_cast<std::size_t>(j)];
    const double var = cov.cov(j, j);
    rep.parameters.push_back(
        {map.names()[static_cast<std::size_t>(j)],
         wald(est(j), sup || !(var > 0.0) ? kNaN : std::sqrt(var))});
  }
  const int K = spec.K;
  for (int dim = 0; dim < map.n_latent_dims(); ++dim) {
    for (int k = 0; k < K; ++k) {
      const double se = K == 1 ? kNaN : delta_method_se(support_gradient(theta, map, dim, k), cov.cov);
      rep.support_points.push_back({map.latent_dim_name(dim) + "[" + std::to_string(k + 1) + "]",
                                    wald(support_value(theta, dim, k), se)});
    }
  }
  const Vector& pi = theta.latent.pi;
  for (int k = 0; k < K; ++k) {
    double se = kNaN;
    if (K > 1) {
      Vector g = Vector::Zero(map.size());
      for (int j = 1; j < K; ++j) g(map.weight_index(j)) = pi(k) * ((k == j ? 1.0 : 0.0) - pi(j));
      se = delta_method_se(g, cov.cov);
    }
    rep.weights.push_back({"pi[" + std::to_string(k + 1) + "]", wald(pi(k), se)});
  }
  if (K > 1) rep.contrasts = class_contrasts(theta, map, cov.cov);

  rep.rho.name = "rho";
  if (spec.d >= 2) {
    const Matrix& S = theta.gaussian.Sigma;
    const double rho = correlation_from_sigma(S);
    Vector g = Vector::Zero(map.size());
    const Index off = map.sigma_offset();
    g(off + sigma_entry(spec.d, 0, 0)) = -rho / (2.0 * S(0, 0));
    g(off + sigma_entry(spec.d, 0, 1)) = 1.0 / std::sqrt(S(0, 0) * S(1, 1));
    g(off + sigma_entry(spec.d, 1, 1)) = -rho / (2.0 * S(1, 1));
    rep.rho.wald = wald(rho, delta_method_se(g, cov.cov));
  } else {
    rep.rho.wald = wald(kNaN, kNaN);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Selection

SelectionTable select_k(const Dataset& data, const ModelSpec& spec_template, int k_max,
                        const EmConfig& config) {
  if (k_max < 1) throw std::invalid_argument("k_max must be >= 1");
  SelectionTable table;
  double previous_bic = std::numeric_limits<double>::quiet_NaN();
  for (int K = 1; K <= k_max; ++K) {
    ModelSpec spec = spec_template;
    spec.K = K;
    SelectionRow row;
    row.K = K;
    row.npar = count_parameters(spec);
    FitResult fit;
    try {
      fit = fit_multistart(data, spec, config);
      row.loglik = fit.loglik;
      row.bic = bic(fit.loglik, row.npar, data.size());
      row.converged = fit.converged;
    } catch (const EstimationError& e) {
      row.failed = true;
      row.diagnostic = e.what();
      row.loglik = kNaN;
      row.bic = kNaN;
    }
    table.rows.push_back(row);
    table.fits.push_back(std::move(fit));
    if (!row.failed) {
      if (!std::isnan(previous_bic) && row.bic > previous_bic) break;
      previous_bic = row.bic;
    }
  }
  table.chosen_K = choose_k(table.rows);
  if (table.chosen_K == 0) throw EstimationError("model selection: every K failed to fit");
  return table;
}

int choose_k(const std::vector<SelectionRow>& rows) {
  double best = std::numeric_limits<double>::infinity();
  int chosen = 0;
  for (const auto& r : rows) {
    if (!r.failed && r.bic < best) {
      best = r.bic;
      chosen = r.K;
    }
  }
  return chosen;
}

// ---------------------------------------------------------------------------
// Classification

Classification classify(const PosteriorMatrix& posterior) {
  const Index n = posterior.w.rows();
  Classification out;
  out.label.resize(static_cast<std::size_t>(n));
  out.confidence.resize(n);
  for (Index i = 0; i < n; ++i) {
    Index best = 0;
    for (Index k = 1; k < posterior.w.cols(); ++k) {
      if (posterior.w(i, k) > posterior.w(i, best)) best = k;
    }
    out.label[static_cast<std::size_t>(i)] = static_cast<int>(best) + 1;
    out.confidence(i) = posterior.w(i, best);
  }
  return out;
}

}  // namespace mixsem
