#pragma once

// Domain types and per-class probability/density computations for the
// three-equation finite mixture SEM:
//
//   z1 (ordinal, J categories)  <- x
//   z2 (binary)                 <- x, z1
//   y  (d-variate normal)       <- x, z1, z2
//
// Each equation carries a class-specific random intercept with K support
// points. Structural slopes are shared across classes.

#include <Eigen/Dense>

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mixsem {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using IntVector = Eigen::VectorXi;

// Parameters that violate a model constraint (e.g. Sigma not positive
// definite). Recoverable by the caller; the EM driver treats it as a failed
// start.
class InvalidParameters : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Data

struct DataRecord {
  Vector x;    // encoded covariates
  int z1 = 1;  // ordinal cause, 1..J
  int z2 = 0;  // binary cause, 0/1
  Vector y;    // continuous outcomes
};

// Column labels carried alongside the numeric data so reports can name rows.
struct ColumnLabel {
  std::string covariate;
  std::string category;  // empty for numeric columns
};

struct ColumnMetadata {
  std::vector<ColumnLabel> x;
  std::string z1_name = "z1";
  std::vector<std::string> z1_labels;  // J labels, first is the reference
  std::string z2_name = "z2";
  std::vector<std::string> z2_labels;  // {reference (0), level (1)}
  std::vector<std::string> y_names;
  // factor name -> reference category, for factors expanded into x dummies
  std::vector<ColumnLabel> x_references;
};

// Immutable, column-major store of validated records.
class Dataset {
 public:
  Dataset(Matrix x, IntVector z1, IntVector z2, Matrix y,
          ColumnMetadata meta = {});

  static Dataset from_records(std::span<const DataRecord> records,
                              ColumnMetadata meta = {});

  Index size() const { return x_.rows(); }
  Index x_dim() const { return x_.cols(); }
  Index y_dim() const { return y_.cols(); }
  int max_z1() const { return z1_.size() ? z1_.maxCoeff() : 0; }

  const Matrix& x() const { return x_; }
  const IntVector& z1() const { return z1_; }
  const IntVector& z2() const { return z2_; }
  const Matrix& y() const { return y_; }
  const ColumnMetadata& meta() const { return meta_; }

  DataRecord record(Index i) const;

  // Rows selected by index, in the given order (duplicates allowed).
  Dataset subset(std::span<const Index> rows) const;

 private:
  Matrix x_;
  IntVector z1_;
  IntVector z2_;
  Matrix y_;
  ColumnMetadata meta_;
};

// ---------------------------------------------------------------------------
// Model specification

struct ModelSpec {
  int K = 1;       // latent classes
  int J = 3;       // ordinal categories
  int d = 2;       // outcome dimension
  Index x_dim = 0; // width of the encoded covariate vector
  std::vector<Index> ordinal_x;
  std::vector<Index> binary_x;
  std::vector<Index> outcome_x;
  bool binary_uses_z1 = true;
  bool outcome_uses_z1 = true;
  bool outcome_uses_z2 = true;

  // Throws std::invalid_argument on out-of-range indices or counts.
  void validate() const;

  Index n_binary_z1_dummies() const { return binary_uses_z1 ? J - 1 : 0; }
  Index n_outcome_cause_dummies() const {
    return (outcome_uses_z1 ? J - 1 : 0) + (outcome_uses_z2 ? 1 : 0);
  }

  // Same covariates in every equation, both causes entering downstream.
  static ModelSpec all_covariates(Index x_dim, int K, int J = 3, int d = 2);
};

// ---------------------------------------------------------------------------
// Parameters

struct OrdinalEqParams {
  double mu1 = 0.0;
  Vector tau;    // J-1 cutpoints, tau(0) == 0, non-increasing
  Vector beta1;  // |ordinal_x|
};

struct BinaryEqParams {
  double mu2 = 0.0;
  Vector beta2;  // |binary_x|
  Vector gamma;  // J-1 reference-coded z1 dummies, or empty
};

struct GaussianEqParams {
  Vector nu;     // d
  Matrix Phi;    // d x |outcome_x|
  Matrix Psi;    // d x n_outcome_cause_dummies
  Matrix Sigma;  // d x d
};

struct LatentStructure {
  Vector xi1;   // K
  Vector xi2;   // K
  Matrix zeta;  // K x d
  Vector pi;    // K
};

struct ParameterSet {
  OrdinalEqParams ordinal;
  BinaryEqParams binary;
  GaussianEqParams gaussian;
  LatentStructure latent;

  int K() const { return static_cast<int>(latent.pi.size()); }

  // All-zero coefficients, tau(j) = -j, identity Sigma, uniform weights.
  static ParameterSet zeros(const ModelSpec& spec);
};

// Shape and constraint checks (tau ordering, weights on the simplex, Sigma
// PD). Throws DimensionMismatch or InvalidParameters.
void validate_parameters(const ParameterSet& theta, const ModelSpec& spec);

// Exact class-label permutation: class k of the result is class perm[k] of
// the input.
ParameterSet permute_classes(const ParameterSet& theta,
                             std::span<const int> perm);

// ---------------------------------------------------------------------------
// Scalar helpers

double logistic(double eta);
// log(1 + exp(x)) without overflow.
double softplus(double x);
// log(sum(exp(v))) with a max shift.
double log_sum_exp(std::span<const double> v);

// log p(z1 = j) for the cumulative logit with linear predictor eta
// (intercept, support point and x'beta already summed) and cutpoints tau.
double ordinal_log_prob(int j, double eta, const Vector& tau);

// Reference-coded dummies for the causes entering the outcome equation.
Vector outcome_cause_dummies(const ModelSpec& spec, int z1, int z2);

// Columns of a full covariate vector used by one equation.
Vector select_columns(const Vector& x, std::span<const Index> columns);

// ---------------------------------------------------------------------------
// Per-equation evaluation

// p(z1 = j | alpha, x) for j = 1..J. x is the ordinal equation's covariate
// vector (already column-selected).
Vector ordinal_category_probs(const Vector& x, double alpha1,
                              const OrdinalEqParams& params);

// p(z2 = 1 | alpha, x, z1). gamma may be empty (z1 absent from the equation).
double binary_prob(const Vector& x, int z1, double alpha2,
                   const BinaryEqParams& params);

// Cholesky-backed evaluator for the d-variate normal with fixed Sigma.
class GaussianKernel {
 public:
  // Throws InvalidParameters if Sigma is not symmetric positive definite.
  explicit GaussianKernel(const Matrix& Sigma);
  double log_density(const Vector& residual) const;
  const Eigen::LLT<Matrix>& llt() const { return llt_; }

 private:
  Eigen::LLT<Matrix> llt_;
  double log_norm_ = 0.0;
};

// log N(y; nu + delta + Phi x + Psi dummies, Sigma). x is the outcome
// equation's covariate vector, cause_dummies from outcome_cause_dummies.
double gaussian_log_density(const Vector& y, const Vector& x,
                            const Vector& cause_dummies, const Vector& delta,
                            const GaussianEqParams& params);

double correlation_from_sigma(const Matrix& Sigma);

// ---------------------------------------------------------------------------
// Record- and dataset-level likelihood

// Per-equation design matrices with columns selected once, so EM loops do
// not re-slice the covariate matrix.
struct EquationDesigns {
  Matrix ordinal;  // n x |ordinal_x|
  Matrix binary;   // n x (|binary_x| + z1 dummies)
  Matrix outcome;  // n x (|outcome_x| + cause dummies)
  IntVector z1;
  IntVector z2;
  Matrix y;        // n x d

  Index size() const { return y.rows(); }
};

// Throws DimensionMismatch when the dataset does not fit the spec.
EquationDesigns build_designs(const Dataset& data, const ModelSpec& spec);

// log p(z1|xi_k1) + log p(z2|xi_k2) + log f(y|zeta_k) for class k (0-based).
double class_conditional_log_lik(const DataRecord& record,
                                 const ModelSpec& spec,
                                 const ParameterSet& theta, int k);

// n x K matrix of class-conditional log-likelihoods.
Matrix class_log_lik_matrix(const EquationDesigns& designs,
                            const ParameterSet& theta);

// sum_i log sum_k pi_k exp(l_ik)
double mixture_log_lik(const Dataset& data, const ModelSpec& spec,
                       const ParameterSet& theta);
double mixture_log_lik(const EquationDesigns& designs,
                       const ParameterSet& theta);
// Same reduction applied to an already-computed class log-lik matrix.
double mixture_log_lik(const Matrix& class_log_liks, const Vector& pi);

int count_parameters(const ModelSpec& spec);

}  // namespace mixsem
