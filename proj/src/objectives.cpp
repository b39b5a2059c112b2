#include "objectives.hpp"

#include <cmath>
#include <limits>

namespace mixsem::detail {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Assembles gradient/Hessian blocks shared by both logit equations. Gik and
// Cik hold w_ik * dlog/deta and w_ik * d2log/deta2 for the linear predictor
// that enters through [c_k, x]. `offset` is where the x block starts.
void assemble_linear_block(const Matrix& X, const Matrix& Gik, const Matrix& Cik,
                           Index offset, Derivatives& out) {
  const Index K = Gik.cols();
  const Index p = X.cols();
  const Vector g_row = Gik.rowwise().sum();
  const Vector c_row = Cik.rowwise().sum();
  out.grad.head(K) = Gik.colwise().sum().transpose();
  out.grad.segment(offset, p) = X.transpose() * g_row;
  out.hess.topLeftCorner(K, K).diagonal() = Cik.colwise().sum().transpose();
  const Matrix xc = X.transpose() * Cik;  // p x K
  out.hess.block(offset, 0, p, K) = xc;
  out.hess.block(0, offset, K, p) = xc.transpose();
  out.hess.block(offset, offset, p, p) = X.transpose() * c_row.asDiagonal() * X;
}

}  // namespace

double ordinal_eval(const EquationDesigns& des, const Matrix& w, int J,
                    const Vector& coef, Derivatives* out) {
  const Index n = des.size();
  const Index K = w.cols();
  const Index nt = J - 2;
  const Index p = des.ordinal.cols();
  const Index P = K + nt + p;
  if (coef.size() != P) throw DimensionMismatch("ordinal coefficient vector has wrong size");

  Vector tau(J - 1);
  tau(0) = 0.0;
  if (nt > 0) tau.tail(nt) = coef.segment(K, nt);
  const Vector xb = des.ordinal * coef.tail(p);

  Matrix Gik, Cik, Mt;
  if (out) {
    out->grad = Vector::Zero(P);
    out->hess = Matrix::Zero(P, P);
    Gik = Matrix::Zero(n, K);
    Cik = Matrix::Zero(n, K);
    Mt = Matrix::Zero(n, nt);
  }

  double value = 0.0;
  for (Index i = 0; i < n; ++i) {
    const int j = des.z1(i);
    const Index ta = j >= 3 ? K + (j - 3) : -1;
    const Index tb = (j >= 2 && j <= J - 1) ? K + (j - 2) : -1;
    for (Index k = 0; k < K; ++k) {
      const double wik = w(i, k);
      if (wik == 0.0) continue;
      const double eta = coef(k) + xb(i);
      // a: predictor of P(z >= j); b: predictor of P(z >= j + 1)
      double logp = 0.0, ra = 0.0, sb = 0.0, haa = 0.0, hbb = 0.0, hab = 0.0;
      if (j == 1) {
        const LogitPoint pb = logit_point(eta + tau(0));
        logp = pb.log_Fc;
        sb = pb.F;
        hbb = -pb.F * pb.Fc;
      } else if (j == J) {
        const LogitPoint pa = logit_point(eta + tau(J - 2));
        logp = pa.log_F;
        ra = pa.Fc;
        haa = -pa.F * pa.Fc;
      } else {
        const double a = eta + tau(j - 2);
        const double b = eta + tau(j - 1);
        if (!(a > b)) return kNegInf;
        const LogitPoint pa = logit_point(a);
        const LogitPoint pb = logit_point(b);
        double p = 0.0;
        logp = log_prob_between(a, b, pa, pb, p);
        if (out) {
          ra = pa.F * pa.Fc / p;
          sb = pb.F * pb.Fc / p;
          haa = ra * (1.0 - 2.0 * pa.F) - ra * ra;
          hbb = -sb * (1.0 - 2.0 * pb.F) - sb * sb;
          hab = ra * sb;
        }
      }
      if (!std::isfinite(logp)) return kNegInf;
      value += wik * logp;
      if (!out) continue;

      Gik(i, k) = wik * (ra - sb);
      Cik(i, k) = wik * (haa + hbb + 2.0 * hab);
      auto& g = out->grad;
      auto& H = out->hess;
      if (ta >= 0) {
        const double A = wik * (haa + hab);
        g(ta) += wik * ra;
        H(ta, k) += A;
        H(k, ta) += A;
        H(ta, ta) += wik * haa;
        Mt(i, ta - K) += A;
      }
      if (tb >= 0) {
        const double B = wik * (hbb + hab);
        g(tb) -= wik * sb;
        H(tb, k) += B;
        H(k, tb) += B;
        H(tb, tb) += wik * hbb;
        Mt(i, tb - K) += B;
      }
      if (ta >= 0 && tb >= 0) {
        H(ta, tb) += wik * hab;
        H(tb, ta) += wik * hab;
      }
    }
  }

  if (out) {
    // tau/c and tau/tau entries were accumulated in place; assemble the rest.
    const Vector g_tau = out->grad.segment(K, nt);
    const Matrix h_tau_c = out->hess.block(K, 0, nt, K);
    const Matrix h_tau_tau = out->hess.block(K, K, nt, nt);
    assemble_linear_block(des.ordinal, Gik, Cik, K + nt, *out);
    out->grad.segment(K, nt) = g_tau;
    out->hess.block(K, 0, nt, K) = h_tau_c;
    out->hess.block(0, K, K, nt) = h_tau_c.transpose();
    out->hess.block(K, K, nt, nt) = h_tau_tau;
    const Matrix tx = Mt.transpose() * des.ordinal;  // nt x p
    out->hess.block(K, K + nt, nt, p) = tx;
    out->hess.block(K + nt, K, p, nt) = tx.transpose();
  }
  return value;
}

double binary_eval(const EquationDesigns& des, const Matrix& w, const Vector& coef,
                   Derivatives* out) {
  const Index n = des.size();
  const Index K = w.cols();
  const Index m = des.binary.cols();
  const Index P = K + m;
  if (coef.size() != P) throw DimensionMismatch("binary coefficient vector has wrong size");
  const Vector xb = des.binary * coef.tail(m);

  Matrix Gik, Cik;
  if (out) {
    out->grad = Vector::Zero(P);
    out->hess = Matrix::Zero(P, P);
    Gik = Matrix::Zero(n, K);
    Cik = Matrix::Zero(n, K);
  }
  double value = 0.0;
  for (Index i = 0; i < n; ++i) {
    const bool y = des.z2(i) == 1;
    for (Index k = 0; k < K; ++k) {
      const double wik = w(i, k);
      if (wik == 0.0) continue;
      const double eta = coef(k) + xb(i);
      const LogitPoint pt = logit_point(eta);
      value += wik * (y ? pt.log_F : pt.log_Fc);
      if (!out) continue;
      Gik(i, k) = wik * ((y ? 1.0 : 0.0) - pt.F);
      Cik(i, k) = -wik * pt.F * pt.Fc;
    }
  }
  if (out) assemble_linear_block(des.binary, Gik, Cik, K, *out);
  return value;
}

Vector pack_ordinal(const OrdinalEqParams& p, const Vector& xi1) {
  const Index K = xi1.size();
  const Index nt = p.tau.size() - 1;
  Vector coef(K + nt + p.beta1.size());
  coef.head(K) = xi1.array() + p.mu1;
  if (nt > 0) coef.segment(K, nt) = p.tau.tail(nt);
  coef.tail(p.beta1.size()) = p.beta1;
  return coef;
}

Vector pack_binary(const BinaryEqParams& p, const Vector& xi2) {
  const Index K = xi2.size();
  Vector coef(K + p.beta2.size() + p.gamma.size());
  coef.head(K) = xi2.array() + p.mu2;
  coef.segment(K, p.beta2.size()) = p.beta2;
  coef.tail(p.gamma.size()) = p.gamma;
  return coef;
}

void unpack_ordinal(const Vector& coef, int K, int J, const Vector& pi,
                    OrdinalEqParams& p, Vector& xi1) {
  const Index nt = J - 2;
  const Vector c = coef.head(K);
  p.mu1 = pi.dot(c);
  xi1 = c.array() - p.mu1;
  p.tau = Vector(J - 1);
  p.tau(0) = 0.0;
  if (nt > 0) p.tau.tail(nt) = coef.segment(K, nt);
  p.beta1 = coef.tail(coef.size() - K - nt);
}

void unpack_binary(const Vector& coef, int K, Index n_beta, const Vector& pi,
                   BinaryEqParams& p, Vector& xi2) {
  const Vector c = coef.head(K);
  p.mu2 = pi.dot(c);
  xi2 = c.array() - p.mu2;
  p.beta2 = coef.segment(K, n_beta);
  p.gamma = coef.tail(coef.size() - K - n_beta);
}

}  // namespace mixsem::detail
