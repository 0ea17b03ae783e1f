#include "ssm.hpp"

#include <cmath>

#include "fft.hpp"

namespace gs4 {

Mat hippo_legs_dense(int n) {
  require(n >= 1, "hippo_legs_dense: n must be >= 1");
  Mat a = Mat::Zero(n, n);
  for (int i = 0; i < n; i++) {
    for (int k = 0; k < n; k++) {
      if (i > k)
        a(i, k) = -std::sqrt(double(2 * i + 1)) * std::sqrt(double(2 * k + 1));
      else if (i == k)
        a(i, k) = -double(i + 1);
    }
  }
  return a;
}

DPLRParams hippo_legs_init(int n, uint64_t seed) {
  require(n >= 1, "hippo_legs_init: n must be >= 1");

  // A = A_normal - p p^T with p_i = sqrt(i + 1/2); A_normal = -I/2 + skew.
  Vec p_real(n);
  for (int i = 0; i < n; i++) p_real[i] = std::sqrt(double(i) + 0.5);

  Mat a_normal = hippo_legs_dense(n) + p_real * p_real.transpose();

  // a_normal = -I/2 + S with S skew-symmetric, so i*S is Hermitian and a
  // guaranteed-unitary eigenbasis exists.
  Mat skew = a_normal + 0.5 * Mat::Identity(n, n);
  CMat herm = cd(0, 1) * skew.cast<cd>();
  Eigen::SelfAdjointEigenSolver<CMat> es(herm);
  Vec mu = es.eigenvalues();  // ascending; symmetric about 0 for skew S
  CMat v = es.eigenvectors();  // unitary

  // Order modes as adjacent conjugate pairs (mu, -mu) built from the
  // positive-mu eigenvectors, so downstream kernels can exploit the
  // conjugate symmetry. conj(v) is exactly the -mu eigenvector of i*S.
  auto rng = make_rng(mix_seed(seed, 0x55f4));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(std::log(1e-3), std::log(1e-1));
  const double scale = 1.0 / std::sqrt(2.0 * double(n));

  DPLRParams out;
  out.lambda = CVec(n);
  out.p = CVec(n);
  out.b = CVec(n);
  out.c = CVec(n);
  const CVec p_cols = v.adjoint() * p_real.cast<cd>();
  const CVec b_cols = v.adjoint() * CVec::Ones(n);
  // Eigenvalues of the skew part come in (+mu, -mu) pairs; cap at n/2 so a
  // zero eigenvalue perturbed to +1e-16 (odd n) cannot over-pair.
  int positives = 0;
  while (positives < n / 2 && mu[n - 1 - positives] > 0.0) positives++;
  int slot = 0;
  for (int j = n - 1; j >= n - positives; j--) {
    out.lambda[slot] = cd(-0.5, -mu[j]);
    out.p[slot] = p_cols[j];
    out.b[slot] = b_cols[j];
    out.c[slot] = cd(gauss(rng) * scale, gauss(rng) * scale);
    out.lambda[slot + 1] = std::conj(out.lambda[slot]);
    out.p[slot + 1] = std::conj(out.p[slot]);
    out.b[slot + 1] = std::conj(out.b[slot]);
    out.c[slot + 1] = std::conj(out.c[slot]);
    slot += 2;
  }
  // Self-conjugate modes (mu == 0; the negative mus are covered above).
  for (int j = positives; slot < n; j++) {
    out.lambda[slot] = cd(-0.5, -mu[j]);
    out.p[slot] = p_cols[j];
    out.b[slot] = b_cols[j];
    out.c[slot] = cd(gauss(rng) * scale, gauss(rng) * scale);
    slot++;
  }
  out.q = out.p;
  out.log_dt = unif(rng);
  return out;
}

CMat dplr_dense(const DPLRParams& params) {
  const int n = params.state_dim();
  require(n >= 1 && params.p.size() == n && params.q.size() == n &&
              params.b.size() == n && params.c.size() == n,
          "dplr_dense: inconsistent vector lengths");
  CMat a = params.lambda.asDiagonal();
  a -= params.p * params.q.adjoint();
  return a;
}

bool dplr_stable(const DPLRParams& params, double margin) {
  Eigen::ComplexEigenSolver<CMat> es(dplr_dense(params), false);
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); i++)
    if (es.eigenvalues()[i].real() >= -margin) return false;
  return true;
}

DiscreteSSM discretize_bilinear_dense(const CMat& a, const CVec& b,
                                      const CVec& c, double dt) {
  const Eigen::Index n = a.rows();
  require(a.cols() == n && b.size() == n && c.size() == n,
          "discretize_bilinear: shape mismatch");
  CMat left = CMat::Identity(n, n) - (dt / 2.0) * a;
  Eigen::FullPivLU<CMat> lu(left);
  if (!lu.isInvertible())
    throw std::runtime_error("discretize_bilinear: (I - dt/2 A) is singular");
  DiscreteSSM d;
  d.a_bar = lu.solve(CMat::Identity(n, n) + (dt / 2.0) * a);
  d.b_bar = lu.solve((dt * b).eval());
  d.c_bar = c;
  return d;
}

DiscreteSSM discretize_bilinear(const DPLRParams& params) {
  return discretize_bilinear_dense(dplr_dense(params), params.b, params.c,
                                   params.dt());
}

Vec ssm_scan(const DiscreteSSM& d, const Vec& u) {
  const Eigen::Index n = d.a_bar.rows();
  require(d.b_bar.size() == n && d.c_bar.size() == n, "ssm_scan: bad system");
  const Eigen::Index l = u.size();
  Vec y(l);
  CVec z = CVec::Zero(n);
  for (Eigen::Index t = 0; t < l; t++) {
    z = (d.a_bar * z + d.b_bar * u[t]).eval();
    y[t] = (d.c_bar.transpose() * z).value().real();
  }
  return y;
}

Kernel kernel_naive(const DiscreteSSM& d, int l) {
  require(l >= 1, "kernel_naive: l must be >= 1");
  Kernel out;
  out.k = Vec(l);
  CVec z = d.b_bar;
  for (int i = 0; i < l; i++) {
    out.k[i] = (d.c_bar.transpose() * z).value().real();
    if (i + 1 < l) z = (d.a_bar * z).eval();
  }
  return out;
}

namespace {

CMat matrix_power(CMat base, std::size_t e) {
  CMat acc = CMat::Identity(base.rows(), base.cols());
  while (e > 0) {
    if (e & 1) acc = (acc * base).eval();
    base = (base * base).eval();
    e >>= 1;
  }
  return acc;
}

}  // namespace

namespace {

// True iff modes come in adjacent conjugate pairs in every weight vector,
// which makes the pre-real-part kernel sequence exactly real.
bool conjugate_paired(const CVec& lambda, const CVec* w, int count) {
  const int n = int(lambda.size());
  if (n % 2 != 0) return false;
  for (int i = 0; i < n; i += 2) {
    if (lambda[i + 1] != std::conj(lambda[i])) return false;
    for (int k = 0; k < count; k++)
      if (w[k][i + 1] != std::conj(w[k][i])) return false;
  }
  return true;
}

}  // namespace

Kernel kernel_fast(const DPLRParams& params, int l) {
  require(l >= 1, "kernel_fast: l must be >= 1");
  const int n = params.state_dim();
  const std::size_t lp = fft::next_pow2(std::size_t(l));
  const double dt = params.dt();

  // Short kernels: fold the L-step truncation into the output map,
  // ct^T = c^T (I - Abar^L). Long kernels: sample the untruncated generating
  // function on a circle of radius rho < 1 with rho^L = 1e-6; the aliased
  // tail is then bounded by 1e-6 * max|k| and the dense matrix power is
  // never formed.
  const bool damped = lp >= 1024;
  double rho = 1.0;
  CVec ct;
  if (damped) {
    rho = std::exp(std::log(1e-6) / double(lp));
    ct = params.c;
  } else {
    DiscreteSSM d = discretize_bilinear(params);
    CMat al = matrix_power(d.a_bar, lp);
    ct = (CMat::Identity(n, n) - al).transpose() * params.c;
  }

  CVec w[4];
  w[0] = ct.cwiseProduct(params.b);
  w[1] = ct.cwiseProduct(params.p);
  w[2] = params.q.conjugate().cwiseProduct(params.b);
  w[3] = params.q.conjugate().cwiseProduct(params.p);

  const bool paired = damped && conjugate_paired(params.lambda, w, 4);

  std::vector<cd> khat(lp);
  auto eval_generic = [&](const cd& z) -> cd {
    const cd onez = cd(1, 0) + z;
    if (std::abs(onez) < 1e-12) return (dt / 2.0) * w[0].sum();  // z -> -1
    const cd g = (2.0 / dt) * (cd(1, 0) - z) / onez;
    // 1/(g - lambda) as conj(den)/|den|^2 keeps the whole row vectorized.
    CVec den = (-params.lambda).array() + g;
    CVec recip = den.conjugate().array() / den.array().abs2();
    const cd s00 = (w[0].array() * recip.array()).sum();
    const cd s01 = (w[1].array() * recip.array()).sum();
    const cd s10 = (w[2].array() * recip.array()).sum();
    const cd s11 = (w[3].array() * recip.array()).sum();
    return (cd(2, 0) / onez) * (s00 - s01 * s10 / (cd(1, 0) + s11));
  };

  if (paired) {
    // Conjugate pair (lambda, conj lambda) with weights (w, conj w) gives a
    // partial fraction with real coefficients:
    //   w/(g-lambda) + conj(w)/(g-conj(lambda))
    //     = (2 Re(w) g - 2 Re(w conj(lambda))) / (g^2 - 2 Re(lambda) g + |lambda|^2),
    // halving the divisions; and the real kernel sequence makes the spectrum
    // Hermitian, halving the frequency count.
    const int np = n / 2;
    Vec lam2re(np), lamabs2(np);
    Vec wa[4], wb[4];
    for (int k = 0; k < 4; k++) {
      wa[k] = Vec(np);
      wb[k] = Vec(np);
    }
    for (int i = 0; i < np; i++) {
      const cd lam = params.lambda[2 * i];
      lam2re[i] = 2.0 * lam.real();
      lamabs2[i] = std::norm(lam);
      for (int k = 0; k < 4; k++) {
        wa[k][i] = 2.0 * w[k][2 * i].real();
        wb[k][i] = -2.0 * (w[k][2 * i] * std::conj(lam)).real();
      }
    }
    for (std::size_t j = 0; j <= lp / 2; j++) {
      const double ang = -2.0 * M_PI * double(j) / double(lp);
      const cd z = rho * cd(std::cos(ang), std::sin(ang));
      const cd onez = cd(1, 0) + z;
      const cd g = (2.0 / dt) * (cd(1, 0) - z) / onez;
      const cd g2 = g * g;
      cd s[4] = {cd(0, 0), cd(0, 0), cd(0, 0), cd(0, 0)};
      for (int i = 0; i < np; i++) {
        const cd den = g2 - lam2re[i] * g + lamabs2[i];
        const cd inv = std::conj(den) / std::norm(den);
        for (int k = 0; k < 4; k++) s[k] += (wa[k][i] * g + wb[k][i]) * inv;
      }
      const cd value =
          (cd(2, 0) / onez) * (s[0] - s[1] * s[2] / (cd(1, 0) + s[3]));
      khat[j] = value;
      if (j > 0 && j < lp - j) khat[lp - j] = std::conj(value);
    }
  } else {
    for (std::size_t j = 0; j < lp; j++) {
      const double ang = -2.0 * M_PI * double(j) / double(lp);
      khat[j] = eval_generic(rho * cd(std::cos(ang), std::sin(ang)));
    }
  }

  fft::transform(khat, true);
  Kernel out;
  out.k = Vec(l);
  double undamp = 1.0;
  for (int i = 0; i < l; i++) {
    out.k[i] = khat[std::size_t(i)].real() * undamp;
    undamp /= rho;
  }
  return out;
}

}  // namespace gs4
