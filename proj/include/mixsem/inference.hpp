#pragma once

// Model selection by BIC, Wald inference from the observed information, and
// MAP classification.
//
// Standard errors are computed in a reduced ("free") parameter basis that
// respects the identifiability constraints:
//   - tau_1 is fixed at 0 and omitted,
//   - class-1 support points are implied by the mean-zero constraint,
//     s_1 = -sum_{k>=2} (pi_k / pi_1) s_k,
//   - class weights are log-odds against class 1, eta_k = log(pi_k / pi_1).
// The basis has exactly count_parameters(spec) coordinates.

#include "mixsem/em.hpp"

#include <string>
#include <vector>

namespace mixsem {

double bic(double loglik, int npar, Index n);

// ---------------------------------------------------------------------------
// Free-parameter basis

class FreeParameterMap {
 public:
  explicit FreeParameterMap(const ModelSpec& spec, const ColumnMetadata* meta = nullptr);

  Index size() const { return static_cast<Index>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }
  const ModelSpec& spec() const { return spec_; }

  // theta must satisfy the centering constraint (see center_support_points).
  Vector to_free(const ParameterSet& theta) const;
  ParameterSet from_free(const Vector& free) const;

  // Latent dimensions: 0 = xi1, 1 = xi2, 2 + c = zeta column c.
  int n_latent_dims() const { return 2 + spec_.d; }
  std::string latent_dim_name(int dim) const;
  // Free index of support point k (k >= 1, 0-based class) in dimension dim.
  Index support_index(int dim, int k) const;
  // Free index of the log-odds of class k >= 1.
  Index weight_index(int k) const;
  Index ordinal_offset() const { return 0; }
  Index binary_offset() const { return binary_off_; }
  Index outcome_offset() const { return outcome_off_; }
  Index sigma_offset() const { return sigma_off_; }
  Index latent_offset() const { return latent_off_; }

 private:
  ModelSpec spec_;
  std::vector<std::string> names_;
  Index binary_off_ = 0;
  Index outcome_off_ = 0;
  Index sigma_off_ = 0;
  Index latent_off_ = 0;
};

// Support value of class k in latent dimension dim.
double support_value(const ParameterSet& theta, int dim, int k);

// ---------------------------------------------------------------------------
// Score and information

// Gradient of the log-likelihood in the free basis, computed as the gradient
// of the expected complete-data log-likelihood with responsibilities frozen
// at e_step(theta).
Vector score_vector(const ParameterSet& theta, const Dataset& data, const ModelSpec& spec);
Vector score_vector(const ParameterSet& theta, const EquationDesigns& designs,
                    const FreeParameterMap& map);

struct InformationResult {
  Matrix info;  // symmetric
  bool positive_definite = false;
};

// Minus the central-difference Jacobian of the score, symmetrized.
InformationResult observed_information(const ParameterSet& theta, const Dataset& data,
                                       const ModelSpec& spec);
InformationResult observed_information(const ParameterSet& theta,
                                       const EquationDesigns& designs,
                                       const FreeParameterMap& map);

struct WaldRow {
  double estimate = 0.0;
  double se = 0.0;  // NaN when suppressed
  double t = 0.0;
  double p = 1.0;
};

// Two-sided p-value against the standard normal.
double normal_p_value(double t);
WaldRow wald(double estimate, double se);

struct CovarianceResult {
  Matrix cov;
  std::vector<bool> suppressed;  // per parameter
  std::string diagnostic;
};

// Inverse of the information. Directions with non-positive curvature are
// dropped; parameters loading on them are suppressed.
CovarianceResult invert_information(const Matrix& info);

struct StandardErrors {
  std::vector<WaldRow> rows;
  std::string diagnostic;
};

StandardErrors standard_errors(const Matrix& info, const Vector& estimates);

double delta_method_se(const Vector& gradient, const Matrix& cov);

// Gradient, in the free basis, of support point k in dimension dim.
Vector support_gradient(const ParameterSet& theta, const FreeParameterMap& map, int dim, int k);

struct ContrastRow {
  int dim = 0;
  int k = 0;  // 0-based class compared against class 0
  WaldRow wald;
};

// support_k - support_1 for k >= 2 in every latent dimension, with delta
// method standard errors.
std::vector<ContrastRow> class_contrasts(const ParameterSet& theta,
                                         const FreeParameterMap& map, const Matrix& cov);

// ---------------------------------------------------------------------------
// Reports

struct NamedEstimate {
  std::string name;
  WaldRow wald;
};

struct InferenceReport {
  std::vector<NamedEstimate> parameters;     // free basis, in map order
  std::vector<NamedEstimate> support_points; // all classes, dimension-major
  std::vector<NamedEstimate> weights;        // pi_k with delta-method SEs
  std::vector<ContrastRow> contrasts;
  NamedEstimate rho;
  bool information_pd = false;
  std::vector<std::string> diagnostics;
};

InferenceReport build_inference_report(const ParameterSet& theta, const Dataset& data,
                                       const ModelSpec& spec);

// ---------------------------------------------------------------------------
// Model selection

struct SelectionRow {
  int K = 0;
  double loglik = 0.0;
  int npar = 0;
  double bic = 0.0;
  bool converged = false;
  bool failed = false;
  std::string diagnostic;
};

struct SelectionTable {
  std::vector<SelectionRow> rows;
  int chosen_K = 0;
  std::vector<FitResult> fits;  // parallel to rows; empty theta on failure
};

// Fits K = 1, 2, ... until BIC first increases over the previous successful
// fit or k_max is reached; chosen_K minimizes BIC over successful rows.
SelectionTable select_k(const Dataset& data, const ModelSpec& spec_template, int k_max,
                        const EmConfig& config);

// argmin BIC over rows that did not fail; 0 when every row failed.
int choose_k(const std::vector<SelectionRow>& rows);

// ---------------------------------------------------------------------------
// Classification

struct Classification {
  std::vector<int> label;  // 1-based class
  Vector confidence;       // max posterior per row
};

// Row-wise argmax; ties go to the lowest class index.
Classification classify(const PosteriorMatrix& posterior);

}  // namespace mixsem
