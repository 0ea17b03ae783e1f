#pragma once

#include "common.hpp"

namespace gs4 {

// Continuous-time diagonal-plus-low-rank state space parameters.
// Effective transition matrix A = diag(lambda) - p * q^H.
struct DPLRParams {
  CVec lambda;
  CVec p;
  CVec q;
  CVec b;
  CVec c;
  double log_dt = 0.0;

  int state_dim() const { return int(lambda.size()); }
  double dt() const { return std::exp(log_dt); }
};

struct DiscreteSSM {
  CMat a_bar;
  CVec b_bar;
  CVec c_bar;
};

struct Kernel {
  Vec k;
};

// Dense HiPPO-LegS transition matrix (lower triangular, stable).
Mat hippo_legs_dense(int n);

// DPLR decomposition of HiPPO-LegS with seeded b/c/log_dt initialization.
DPLRParams hippo_legs_init(int n, uint64_t seed);

// Reconstruct the dense effective transition matrix diag(lambda) - p q^H.
CMat dplr_dense(const DPLRParams& params);

// True iff every eigenvalue of the effective A has strictly negative real part.
bool dplr_stable(const DPLRParams& params, double margin = 0.0);

// Bilinear (Tustin) discretization of a dense system with explicit step size.
DiscreteSSM discretize_bilinear_dense(const CMat& a, const CVec& b,
                                      const CVec& c, double dt);

DiscreteSSM discretize_bilinear(const DPLRParams& params);

// Linear recurrence z_k = Abar z_{k-1} + Bbar u_k, y_k = Re(Cbar . z_k), z_0 = 0.
Vec ssm_scan(const DiscreteSSM& d, const Vec& u);

// k[i] = Re(Cbar . Abar^i . Bbar), reference O(L N^2) path.
Kernel kernel_naive(const DiscreteSSM& d, int l);

// Same filter via generating-function evaluation at the L-th roots of unity
// (Cauchy dot products + rank-1 Woodbury correction + inverse FFT).
Kernel kernel_fast(const DPLRParams& params, int l);

}  // namespace gs4
