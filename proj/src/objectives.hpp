#pragma once

// Weighted per-equation objectives on the class-expanded data, with analytic
// gradients and Hessians. Internal to the library: shared by the M-step
// fitters and the score computation.
//
// Coefficient layouts:
//   ordinal: [c_1..c_K, tau_2..tau_{J-1}, beta1]
//   binary:  [c_1..c_K, beta2, gamma]
// where c_k is the class-k intercept (population intercept + support point).

#include "mixsem/model_core.hpp"

#include <cmath>

namespace mixsem::detail {

// Logistic quantities at x from a single exp and log1p.
struct LogitPoint {
  double F;       // logistic(x)
  double Fc;      // 1 - logistic(x)
  double log_F;
  double log_Fc;
};

inline LogitPoint logit_point(double x) {
  const double e = std::exp(-std::abs(x));
  const double l = std::log1p(e);
  const double inv = 1.0 / (1.0 + e);
  if (x >= 0.0) return {inv, e * inv, -l, -x - l};
  return {e * inv, inv, x - l, -l};
}

// log(F(a) - F(b)) for a > b given both points; falls back to the expm1 form
// when the difference cancels badly.
inline double log_prob_between(double a, double b, const LogitPoint& pa, const LogitPoint& pb,
                               double& p) {
  p = b >= 0.0 ? pb.Fc - pa.Fc : pa.F - pb.F;
  const double big = b >= 0.0 ? pb.Fc : pa.F;
  if (p > 1e-6 * big) return std::log(p);
  const double lp = b + std::log(std::expm1(a - b)) - (a - pa.log_F) - (-pb.log_Fc);
  p = std::exp(lp);
  return lp;
}

struct Derivatives {
  Vector grad;
  Matrix hess;
};

// Returns -inf when a cutpoint ordering makes some category impossible.
double ordinal_eval(const EquationDesigns& des, const Matrix& w, int J,
                    const Vector& coef, Derivatives* out);

double binary_eval(const EquationDesigns& des, const Matrix& w,
                   const Vector& coef, Derivatives* out);

Vector pack_ordinal(const OrdinalEqParams& p, const Vector& xi1);
Vector pack_binary(const BinaryEqParams& p, const Vector& xi2);

// Splits c_k into intercept = sum_k pi_k c_k and support c_k - intercept.
void unpack_ordinal(const Vector& coef, int K, int J, const Vector& pi,
                    OrdinalEqParams& p, Vector& xi1);
void unpack_binary(const Vector& coef, int K, Index n_beta, const Vector& pi,
                   BinaryEqParams& p, Vector& xi2);

}  // namespace mixsem::detail
