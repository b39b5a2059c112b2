#pragma once

// EM estimation for the finite mixture SEM.
//
// Each iteration computes responsibilities, updates the class weights in
// closed form, then runs one weighted fitter per equation on the
// class-expanded data (n*K pseudo-records weighted by w_ik). Every fitter
// estimates per-class intercepts c_k = intercept + support_k directly; the
// split into a population intercept and mean-zero support points happens in
// center_support_points.

#include "mixsem/model_core.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace mixsem {

class EstimationError : public std::runtime_error {
 public:
  explicit EstimationError(const std::string& what,
                           std::vector<Index> columns = {})
      : std::runtime_error(what), columns_(std::move(columns)) {}
  // Offending design columns for collinearity failures.
  const std::vector<Index>& columns() const { return columns_; }

 private:
  std::vector<Index> columns_;
};

struct PosteriorMatrix {
  Matrix w;  // n x K, rows on the simplex
};

struct IterationInfo {
  int iteration = 0;
  double loglik = 0.0;
  double max_rel_change = 0.0;
};

struct EmConfig {
  double tol = 1e-8;
  int max_iter = 1000;
  int inner_max_iter = 50;
  double inner_tol = 1e-10;
  double weight_floor = 1e-6;
  int n_random_starts = 19;
  std::uint64_t master_seed = 0;
  int threads = 1;
  // Called after every EM iteration when set. Must be thread-safe if
  // threads > 1.
  std::function<void(const IterationInfo&)> on_iteration;

  void validate(int K) const;
};

struct FitterDiagnostics {
  int iterations = 0;
  bool converged = false;
  bool hit_iteration_cap = false;
  bool ridge_used = false;
  // Some coefficient exceeded the magnitude cap (separation or a
  // non-identified intercept).
  bool diverging = false;
};

struct OrdinalUpdate {
  OrdinalEqParams params;
  Vector xi1;
  FitterDiagnostics diag;
};

struct BinaryUpdate {
  BinaryEqParams params;
  Vector xi2;
  FitterDiagnostics diag;
};

struct GaussianUpdate {
  GaussianEqParams params;
  Matrix zeta;
  // Residual covariance is singular (e.g. an exact fit).
  bool sigma_degenerate = false;
};

struct StartSummary {
  int start_id = 0;
  std::uint64_t seed = 0;
  double loglik = 0.0;
  int iterations = 0;
  bool converged = false;
  bool degenerate = false;
  bool failed = false;
  bool monotonicity_violated = false;
  std::string diagnostic;
};

struct FitResult {
  ParameterSet theta;
  double loglik = 0.0;
  std::vector<double> loglik_trace;  // trace[0] is the starting value
  int iterations = 0;
  bool converged = false;
  int start_id = 0;
  std::uint64_t seed = 0;
  bool degenerate = false;
  bool failed = false;
  bool monotonicity_violated = false;
  std::string diagnostic;
  std::vector<StartSummary> starts;  // filled by fit_multistart
};

inline constexpr double kCoefficientCap = 30.0;
inline constexpr double kRidge = 1e-8;
inline constexpr double kMonotoneSlack = 1e-8;

// ---------------------------------------------------------------------------
// E-step and weights

PosteriorMatrix posterior_from_log_liks(const Matrix& class_log_liks,
                                        const Vector& pi);
PosteriorMatrix e_step(const Dataset& data, const ModelSpec& spec,
                       const ParameterSet& theta);
PosteriorMatrix e_step(const EquationDesigns& designs, const ParameterSet& theta);

Vector update_weights(const PosteriorMatrix& posterior);

// ---------------------------------------------------------------------------
// M-steps. Each maximizes its equation's term of the expected complete-data
// log-likelihood jointly over the structural coefficients and the K class
// intercepts, warm-started from `current` + support points.

OrdinalUpdate m_step_ordinal(const EquationDesigns& designs,
                             const PosteriorMatrix& posterior,
                             const OrdinalEqParams& current, const Vector& xi1,
                             const EmConfig& config = {});
BinaryUpdate m_step_binary(const EquationDesigns& designs,
                           const PosteriorMatrix& posterior,
                           const BinaryEqParams& current, const Vector& xi2,
                           const EmConfig& config = {});
// Closed-form weighted least squares; Sigma divides by total weight.
GaussianUpdate m_step_gaussian(const EquationDesigns& designs,
                               const PosteriorMatrix& posterior,
                               const GaussianEqParams& current,
                               const Matrix& zeta);

// Weighted objectives the M-steps maximize (used for monotonicity checks).
double ordinal_objective(const EquationDesigns& designs, const Matrix& w,
                         const OrdinalEqParams& params, const Vector& xi1);
double binary_objective(const EquationDesigns& designs, const Matrix& w,
                        const BinaryEqParams& params, const Vector& xi2);

ParameterSet center_support_points(const ParameterSet& theta);

// Classes ordered by the first outcome support point, ascending.
ParameterSet sort_classes(const ParameterSet& theta);

// ---------------------------------------------------------------------------
// Starts and drivers

struct StartStrategy {
  // nullopt: deterministic start
  std::optional<std::uint64_t> seed;

  static StartStrategy deterministic() { return {}; }
  static StartStrategy random(std::uint64_t s) { return {s}; }
};

ParameterSet initialize(const Dataset& data, const ModelSpec& spec,
                        const StartStrategy& strategy,
                        const EmConfig& config = {});

// Seed of random start `start_id` (>= 1) under `master_seed`.
std::uint64_t derive_start_seed(std::uint64_t master_seed, int start_id);

FitResult run_em(const Dataset& data, const ModelSpec& spec,
                 const ParameterSet& init, const EmConfig& config = {});

// Deterministic start plus config.n_random_starts random starts; returns the
// best non-degenerate run. Throws EstimationError if every start failed.
FitResult fit_multistart(const Dataset& data, const ModelSpec& spec,
                         const EmConfig& config = {});

// Every free and fixed parameter flattened in a stable order; used for
// change reporting and bitwise comparisons.
Vector flatten(const ParameterSet& theta);

}  // namespace mixsem
