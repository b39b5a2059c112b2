#include "mixsem/model_core.hpp"
#include "objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

namespace mixsem {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionMismatch(what);
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace

// ---------------------------------------------------------------------------
// Dataset

Dataset::Dataset(Matrix x, IntVector z1, IntVector z2, Matrix y,
                 ColumnMetadata meta)
    : x_(std::move(x)),
      z1_(std::move(z1)),
      z2_(std::move(z2)),
      y_(std::move(y)),
      meta_(std::move(meta)) {
  const Index n = y_.rows();
  if (n < 1) throw std::invalid_argument("dataset must contain at least one record");
  require(x_.rows() == n && z1_.size() == n && z2_.size() == n,
          "dataset columns have different lengths");
  if (!all_finite(x_) || !all_finite(y_)) {
    throw std::invalid_argument("dataset contains non-finite covariates or outcomes");
  }
  for (Index i = 0; i < n; ++i) {
    if (z1_(i) < 1) throw std::invalid_argument("ordinal cause must be >= 1");
    if (z2_(i) != 0 && z2_(i) != 1) {
      throw std::invalid_argument("binary cause must be 0 or 1");
    }
  }
}

Dataset Dataset::from_records(std::span<const DataRecord> records,
                              ColumnMetadata meta) {
  if (records.empty()) throw std::invalid_argument("dataset must contain at least one record");
  const Index n = static_cast<Index>(records.size());
  const Index p = records.front().x.size();
  const Index d = records.front().y.size();
  Matrix x(n, p), y(n, d);
  IntVector z1(n), z2(n);
  for (Index i = 0; i < n; ++i) {
    const auto& r = records[static_cast<std::size_t>(i)];
    require(r.x.size() == p && r.y.size() == d, "records have inconsistent dimensions");
    x.row(i) = r.x.transpose();
    y.row(i) = r.y.transpose();
    z1(i) = r.z1;
    z2(i) = r.z2;
  }
  return Dataset(std::move(x), std::move(z1), std::move(z2), std::move(y),
                 std::move(meta));
}

DataRecord Dataset::record(Index i) const {
  return DataRecord{x_.row(i).transpose(), z1_(i), z2_(i), y_.row(i).transpose()};
}

Dataset Dataset::subset(std::span<const Index> rows) const {
  const Index m = static_cast<Index>(rows.size());
  Matrix x(m, x_.cols()), y(m, y_.cols());
  IntVector z1(m), z2(m);
  for (Index r = 0; r < m; ++r) {
    const Index i = rows[static_cast<std::size_t>(r)];
    x.row(r) = x_.row(i);
    y.row(r) = y_.row(i);
    z1(r) = z1_(i);
    z2(r) = z2_(i);
  }
  return Dataset(std::move(x), std::move(z1), std::move(z2), std::move(y), meta_);
}

// ---------------------------------------------------------------------------
// ModelSpec

void ModelSpec::validate() const {
  if (K < 1) throw std::invalid_argument("K must be >= 1");
  if (J < 2) throw std::invalid_argument("J must be >= 2");
  if (d < 1) throw std::invalid_argument("outcome dimension must be >= 1");
  auto check = [&](const std::vector<Index>& cols, const char* eq) {
    std::set<Index> seen;
    for (Index c : cols) {
      if (c < 0 || c >= x_dim) {
        std::ostringstream os;
        os << eq << " equation references covariate column " << c
           << " but x has " << x_dim << " columns";
        throw std::invalid_argument(os.str());
      }
      if (!seen.insert(c).second) {
        throw std::invalid_argument(std::string(eq) + " equation lists a covariate twice");
      }
    }
  };
  check(ordinal_x, "ordinal");
  check(binary_x, "binary");
  check(outcome_x, "outcome");
}

ModelSpec ModelSpec::all_covariates(Index x_dim, int K, int J, int d) {
  ModelSpec spec;
  spec.K = K;
  spec.J = J;
  spec.d = d;
  spec.x_dim = x_dim;
  for (Index c = 0; c < x_dim; ++c) {
    spec.ordinal_x.push_back(c);
    spec.binary_x.push_back(c);
    spec.outcome_x.push_back(c);
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Parameters

ParameterSet ParameterSet::zeros(const ModelSpec& spec) {
  spec.validate();
  ParameterSet theta;
  theta.ordinal.tau = Vector(spec.J - 1);
  for (int j = 0; j < spec.J - 1; ++j) theta.ordinal.tau(j) = -static_cast<double>(j);
  theta.ordinal.beta1 = Vector::Zero(static_cast<Index>(spec.ordinal_x.size()));
  theta.binary.beta2 = Vector::Zero(static_cast<Index>(spec.binary_x.size()));
  theta.binary.gamma = Vector::Zero(spec.n_binary_z1_dummies());
  theta.gaussian.nu = Vector::Zero(spec.d);
  theta.gaussian.Phi = Matrix::Zero(spec.d, static_cast<Index>(spec.outcome_x.size()));
  theta.gaussian.Psi = Matrix::Zero(spec.d, spec.n_outcome_cause_dummies());
  theta.gaussian.Sigma = Matrix::Identity(spec.d, spec.d);
  theta.latent.xi1 = Vector::Zero(spec.K);
  theta.latent.xi2 = Vector::Zero(spec.K);
  theta.latent.zeta = Matrix::Zero(spec.K, spec.d);
  theta.latent.pi = Vector::Constant(spec.K, 1.0 / spec.K);
  return theta;
}

void validate_parameters(const ParameterSet& theta, const ModelSpec& spec) {
  spec.validate();
  const auto& o = theta.ordinal;
  const auto& b = theta.binary;
  const auto& g = theta.gaussian;
  const auto& l = theta.latent;
  require(o.tau.size() == spec.J - 1, "cutpoint vector must have J-1 entries");
  require(o.beta1.size() == static_cast<Index>(spec.ordinal_x.size()),
          "beta1 does not match the ordinal covariate set");
  require(b.beta2.size() == static_cast<Index>(spec.binary_x.size()),
          "beta2 does not match the binary covariate set");
  require(b.gamma.size() == spec.n_binary_z1_dummies(),
          "gamma does not match the ordinal-cause dummies");
  require(g.nu.size() == spec.d, "nu must have d entries");
  require(g.Phi.rows() == spec.d &&
              g.Phi.cols() == static_cast<Index>(spec.outcome_x.size()),
          "Phi does not match the outcome covariate set");
  require(g.Psi.rows() == spec.d && g.Psi.cols() == spec.n_outcome_cause_dummies(),
          "Psi does not match the outcome cause dummies");
  require(g.Sigma.rows() == spec.d && g.Sigma.cols() == spec.d, "Sigma must be d x d");
  require(l.pi.size() == spec.K && l.xi1.size() == spec.K && l.xi2.size() == spec.K &&
              l.zeta.rows() == spec.K && l.zeta.cols() == spec.d,
          "latent structure does not match K and d");

  if (!std::isfinite(o.mu1) || !std::isfinite(b.mu2) || !o.tau.allFinite() ||
      !o.beta1.allFinite() || !b.beta2.allFinite() || !b.gamma.allFinite() ||
      !g.nu.allFinite() || !g.Phi.allFinite() || !g.Psi.allFinite() ||
      !g.Sigma.allFinite() || !l.xi1.allFinite() || !l.xi2.allFinite() ||
      !l.zeta.allFinite() || !l.pi.allFinite()) {
    throw InvalidParameters("parameter set contains non-finite values");
  }
  if (o.tau(0) != 0.0) throw InvalidParameters("first cutpoint must be exactly 0");
  for (Index j = 1; j < o.tau.size(); ++j) {
    if (o.tau(j) > o.tau(j - 1)) throw InvalidParameters("cutpoints must be non-increasing");
  }
  if ((l.pi.array() <= 0.0).any() || std::abs(l.pi.sum() - 1.0) > 1e-8) {
    throw InvalidParameters("class weights must be positive and sum to 1");
  }
  GaussianKernel check(g.Sigma);
  (void)check;
}

ParameterSet permute_classes(const ParameterSet& theta, std::span<const int> perm) {
  const int K = theta.K();
  if (static_cast<int>(perm.size()) != K) {
    throw DimensionMismatch("permutation length must equal K");
  }
  ParameterSet out = theta;
  for (int k = 0; k < K; ++k) {
    const int src = perm[static_cast<std::size_t>(k)];
    out.latent.xi1(k) = theta.latent.xi1(src);
    out.latent.xi2(k) = theta.latent.xi2(src);
    out.latent.zeta.row(k) = theta.latent.zeta.row(src);
    out.latent.pi(k) = theta.latent.pi(src);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scalar helpers

double logistic(double eta) {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double log_sum_exp(std::span<const double> v) {
  double m = kNegInf;
  for (double a : v) m = std::max(m, a);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double a : v) s += std::exp(a - m);
  return m + std::log(s);
}

double ordinal_log_prob(int j, double eta, const Vector& tau) {
  const int J = static_cast<int>(tau.size()) + 1;
  if (j < 1 || j > J) throw DimensionMismatch("ordinal category out of range");
  // a: predictor for P(z >= j), b: predictor for P(z >= j + 1)
  if (j == 1) return detail::logit_point(eta + tau(0)).log_Fc;
  if (j == J) return detail::logit_point(eta + tau(J - 2)).log_F;
  const double a = eta + tau(j - 2);
  const double b = eta + tau(j - 1);
  if (!(a > b)) return kNegInf;
  double p = 0.0;
  return detail::log_prob_between(a, b, detail::logit_point(a), detail::logit_point(b), p);
}

Vector outcome_cause_dummies(const ModelSpec& spec, int z1, int z2) {
  Vector out = Vector::Zero(spec.n_outcome_cause_dummies());
  Index c = 0;
  if (spec.outcome_uses_z1) {
    if (z1 < 1 || z1 > spec.J) throw DimensionMismatch("ordinal category out of range");
    if (z1 > 1) out(z1 - 2) = 1.0;
    c = spec.J - 1;
  }
  if (spec.outcome_uses_z2) out(c) = z2 == 1 ? 1.0 : 0.0;
  return out;
}

Vector select_columns(const Vector& x, std::span<const Index> columns) {
  Vector out(static_cast<Index>(columns.size()));
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (columns[c] < 0 || columns[c] >= x.size()) {
      throw DimensionMismatch("covariate column out of range");
    }
    out(static_cast<Index>(c)) = x(columns[c]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Per-equation evaluation

Vector ordinal_category_probs(const Vector& x, double alpha1,
                              const OrdinalEqParams& params) {
  if (x.size() != params.beta1.size()) {
    throw DimensionMismatch("covariate vector does not match beta1");
  }
  const Index J = params.tau.size() + 1;
  const double eta = params.mu1 + alpha1 + x.dot(params.beta1);
  // cumulative(j) = P(z >= j + 1), j = 0..J
  Vector cumulative(J + 1);
  cumulative(0) = 1.0;
  for (Index j = 1; j < J; ++j) cumulative(j) = logistic(eta + params.tau(j - 1));
  cumulative(J) = 0.0;
  Vector probs(J);
  for (Index j = 0; j < J; ++j) probs(j) = cumulative(j) - cumulative(j + 1);
  return probs;
}

double binary_prob(const Vector& x, int z1, double alpha2,
                   const BinaryEqParams& params) {
  if (x.size() != params.beta2.size()) {
    throw DimensionMismatch("covariate vector does not match beta2");
  }
  double eta = params.mu2 + alpha2 + x.dot(params.beta2);
  if (params.gamma.size() > 0) {
    if (z1 < 1 || z1 > params.gamma.size() + 1) {
      throw DimensionMismatch("ordinal category out of range");
    }
    if (z1 > 1) eta += params.gamma(z1 - 2);
  }
  return logistic(eta);
}

GaussianKernel::GaussianKernel(const Matrix& Sigma) {
  if (Sigma.rows() != Sigma.cols() || Sigma.rows() == 0) {
    throw DimensionMismatch("Sigma must be square");
  }
  const double scale = Sigma.cwiseAbs().maxCoeff();
  if (!Sigma.allFinite() || (Sigma - Sigma.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + scale)) {
    throw InvalidParameters("Sigma must be finite and symmetric");
  }
  llt_.compute(Sigma);
  if (llt_.info() != Eigen::Success) {
    throw InvalidParameters("Sigma is not positive definite");
  }
  const Matrix& L = llt_.matrixLLT();
  double log_det_half = 0.0;
  for (Index j = 0; j < L.rows(); ++j) {
    if (!(L(j, j) > 0.0)) throw InvalidParameters("Sigma is not positive definite");
    log_det_half += std::log(L(j, j));
  }
  log_norm_ = -0.5 * static_cast<double>(Sigma.rows()) * std::log(2.0 * std::numbers::pi) -
              log_det_half;
}

double GaussianKernel::log_density(const Vector& residual) const {
  const Vector v = llt_.matrixL().solve(residual);
  return log_norm_ - 0.5 * v.squaredNorm();
}

double gaussian_log_density(const Vector& y, const Vector& x,
                            const Vector& cause_dummies, const Vector& delta,
                            const GaussianEqParams& params) {
  const Index d = params.nu.size();
  if (y.size() != d || delta.size() != d || params.Phi.cols() != x.size() ||
      params.Psi.cols() != cause_dummies.size()) {
    throw DimensionMismatch("outcome equation dimensions do not match");
  }
  GaussianKernel kernel(params.Sigma);
  const Vector mean = params.nu + delta + params.Phi * x + params.Psi * cause_dummies;
  return kernel.log_density(y - mean);
}

double correlation_from_sigma(const Matrix& Sigma) {
  if (Sigma.rows() < 2 || Sigma.cols() < 2) {
    throw DimensionMismatch("correlation needs at least two outcomes");
  }
  const double v1 = Sigma(0, 0);
  const double v2 = Sigma(1, 1);
  if (!(v1 > 0.0) || !(v2 > 0.0)) throw InvalidParameters("degenerate Sigma: zero variance");
  return Sigma(0, 1) / std::sqrt(v1 * v2);
}

// ---------------------------------------------------------------------------
// Likelihood

EquationDesigns build_designs(const Dataset& data, const ModelSpec& spec) {
  spec.validate();
  require(data.x_dim() == spec.x_dim, "dataset covariate width does not match the model");
  require(data.y_dim() == spec.d, "dataset outcome dimension does not match the model");
  const Index n = data.size();
  for (Index i = 0; i < n; ++i) {
    if (data.z1()(i) > spec.J) {
      throw DimensionMismatch("ordinal cause exceeds the model's category count");
    }
  }
  const Index q1 = spec.n_binary_z1_dummies();
  const Index q = spec.n_outcome_cause_dummies();
  const Index p1 = static_cast<Index>(spec.ordinal_x.size());
  const Index p2 = static_cast<Index>(spec.binary_x.size());
  const Index p3 = static_cast<Index>(spec.outcome_x.size());

  EquationDesigns des;
  des.ordinal = data.x()(Eigen::all, spec.ordinal_x);
  des.binary = Matrix::Zero(n, p2 + q1);
  des.binary.leftCols(p2) = data.x()(Eigen::all, spec.binary_x);
  des.outcome = Matrix::Zero(n, p3 + q);
  des.outcome.leftCols(p3) = data.x()(Eigen::all, spec.outcome_x);
  for (Index i = 0; i < n; ++i) {
    const int z1 = data.z1()(i);
    if (q1 > 0 && z1 > 1) des.binary(i, p2 + z1 - 2) = 1.0;
    des.outcome.row(i).tail(q) = outcome_cause_dummies(spec, z1, data.z2()(i)).transpose();
  }
  (void)p1;
  des.z1 = data.z1();
  des.z2 = data.z2();
  des.y = data.y();
  return des;
}

double class_conditional_log_lik(const DataRecord& record, const ModelSpec& spec,
                                 const ParameterSet& theta, int k) {
  if (k < 0 || k >= theta.K()) throw DimensionMismatch("class index out of range");
  const auto& lat = theta.latent;
  const Vector probs = ordinal_category_probs(select_columns(record.x, spec.ordinal_x),
                                              lat.xi1(k), theta.ordinal);
  if (record.z1 < 1 || record.z1 > probs.size()) {
    throw DimensionMismatch("ordinal category out of range");
  }
  const double p2 = binary_prob(select_columns(record.x, spec.binary_x), record.z1,
                                lat.xi2(k), theta.binary);
  const double log_y = gaussian_log_density(
      record.y, select_columns(record.x, spec.outcome_x),
      outcome_cause_dummies(spec, record.z1, record.z2), lat.zeta.row(k).transpose(),
      theta.gaussian);
  return std::log(probs(record.z1 - 1)) + std::log(record.z2 == 1 ? p2 : 1.0 - p2) + log_y;
}

Matrix class_log_lik_matrix(const EquationDesigns& des, const ParameterSet& theta) {
  const Index n = des.size();
  const int K = theta.K();
  const auto& o = theta.ordinal;
  const auto& b = theta.binary;
  const auto& g = theta.gaussian;
  const auto& lat = theta.latent;

  require(des.ordinal.cols() == o.beta1.size(), "ordinal design does not match beta1");
  require(des.binary.cols() == b.beta2.size() + b.gamma.size(),
          "binary design does not match beta2/gamma");
  require(des.outcome.cols() == g.Phi.cols() + g.Psi.cols(),
          "outcome design does not match Phi/Psi");

  const Vector eta_o = (des.ordinal * o.beta1).array() + o.mu1;
  Vector coef_b(b.beta2.size() + b.gamma.size());
  coef_b << b.beta2, b.gamma;
  const Vector eta_b = (des.binary * coef_b).array() + b.mu2;
  Matrix coef_g(g.nu.size(), g.Phi.cols() + g.Psi.cols());
  coef_g << g.Phi, g.Psi;
  Matrix mean = des.outcome * coef_g.transpose();
  mean.rowwise() += g.nu.transpose();

  const GaussianKernel kernel(g.Sigma);
  const double log_norm = kernel.log_density(Vector::Zero(g.nu.size()));
  const Matrix resid = des.y - mean;
  Matrix out(n, K);
  for (int k = 0; k < K; ++k) {
    Matrix rk = (resid.rowwise() - lat.zeta.row(k)).transpose();  // d x n
    kernel.llt().matrixL().solveInPlace(rk);
    out.col(k) = (log_norm - 0.5 * rk.colwise().squaredNorm().array()).transpose();
  }
  for (Index i = 0; i < n; ++i) {
    const int z1 = des.z1(i);
    const bool z2 = des.z2(i) == 1;
    for (int k = 0; k < K; ++k) {
      const double lo = ordinal_log_prob(z1, eta_o(i) + lat.xi1(k), o.tau);
      const auto pb = detail::logit_point(eta_b(i) + lat.xi2(k));
      out(i, k) += lo + (z2 ? pb.log_F : pb.log_Fc);
    }
  }
  return out;
}

double mixture_log_lik(const Matrix& class_log_liks, const Vector& pi) {
  const Index K = class_log_liks.cols();
  require(pi.size() == K, "weight vector does not match class count");
  Vector log_pi = pi.array().log();
  std::vector<double> terms(static_cast<std::size_t>(K));
  double total = 0.0;
  for (Index i = 0; i < class_log_liks.rows(); ++i) {
    for (Index k = 0; k < K; ++k) {
      terms[static_cast<std::size_t>(k)] = log_pi(k) + class_log_liks(i, k);
    }
    total += log_sum_exp(terms);
  }
  return total;
}

double mixture_log_lik(const EquationDesigns& designs, const ParameterSet& theta) {
  return mixture_log_lik(class_log_lik_matrix(designs, theta), theta.latent.pi);
}

double mixture_log_lik(const Dataset& data, const ModelSpec& spec,
                       const ParameterSet& theta) {
  return mixture_log_lik(build_designs(data, spec), theta);
}

int count_parameters(const ModelSpec& spec) {
  spec.validate();
  const int J = spec.J;
  const int d = spec.d;
  const int K = spec.K;
  const int ordinal = 1 + (J - 2) + static_cast<int>(spec.ordinal_x.size());
  const int binary = 1 + static_cast<int>(spec.binary_x.size()) +
                     static_cast<int>(spec.n_binary_z1_dummies());
  const int gaussian =
      d * (1 + static_cast<int>(spec.outcome_x.size()) +
           static_cast<int>(spec.n_outcome_cause_dummies()));
  const int sigma = d * (d + 1) / 2;
  const int latent = (K - 1) * (2 + d) + (K - 1);
  return ordinal + binary + gaussian + sigma + latent;
}

}  // namespace mixsem
