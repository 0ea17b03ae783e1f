#include <doctest.h>

#include "core/fft.hpp"
#include "core/ssm.hpp"

using namespace gs4;

namespace {

DiscreteSSM scalar_system(cd a_bar, cd b_bar, cd c_bar) {
  DiscreteSSM d;
  d.a_bar = CMat::Constant(1, 1, a_bar);
  d.b_bar = CVec::Constant(1, b_bar);
  d.c_bar = CVec::Constant(1, c_bar);
  return d;
}

// Random stable dense system via a DPLR draw with negative-real-part diagonal.
DPLRParams random_stable(int n, uint64_t seed) {
  auto rng = make_rng(seed);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  DPLRParams p;
  p.lambda = CVec(n);
  p.p = CVec(n);
  p.q = CVec(n);
  p.b = CVec(n);
  p.c = CVec(n);
  for (int i = 0; i < n; i++) {
    p.lambda[i] = cd(-0.5 - ud(rng), 4.0 * (ud(rng) - 0.5));
    // Small low-rank part keeps the effective A in the left half-plane.
    p.p[i] = cd(0.1 * (ud(rng) - 0.5), 0.1 * (ud(rng) - 0.5));
    p.q[i] = cd(0.1 * (ud(rng) - 0.5), 0.1 * (ud(rng) - 0.5));
    p.b[i] = cd(ud(rng) - 0.5, ud(rng) - 0.5);
    p.c[i] = cd(ud(rng) - 0.5, ud(rng) - 0.5);
  }
  p.log_dt = std::log(0.05);
  return p;
}

Vec random_vec(int n, uint64_t seed) {
  auto rng = make_rng(seed);
  std::normal_distribution<double> nd;
  Vec v(n);
  for (int i = 0; i < n; i++) v[i] = nd(rng);
  return v;
}

}  // namespace

TEST_CASE("hippo dense matrix small cases") {
  Mat a1 = hippo_legs_dense(1);
  CHECK(a1(0, 0) == doctest::Approx(-1.0).epsilon(1e-15));

  Mat a2 = hippo_legs_dense(2);
  CHECK(a2(0, 0) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(a2(0, 1) == 0.0);
  CHECK(a2(1, 0) == doctest::Approx(-std::sqrt(3.0)).epsilon(1e-15));
  CHECK(a2(1, 1) == doctest::Approx(-2.0).epsilon(1e-15));
}

TEST_CASE("hippo dense is lower triangular") {
  Mat a = hippo_legs_dense(12);
  for (int i = 0; i < 12; i++)
    for (int j = i + 1; j < 12; j++) CHECK(a(i, j) == 0.0);
}

TEST_CASE("hippo init reconstructs the dense matrix") {
  for (int n : {1, 2, 4, 8}) {
    DPLRParams p = hippo_legs_init(n, 0);
    CMat dense = dplr_dense(p);
    Mat target = hippo_legs_dense(n);
    // Reconstruction lives in the eigenbasis of the normal part; compare
    // the spectrum instead of raw entries.
    Eigen::ComplexEigenSolver<CMat> es(dense);
    Eigen::ComplexEigenSolver<CMat> et(target.cast<cd>());
    std::vector<cd> a(es.eigenvalues().data(),
                      es.eigenvalues().data() + n);
    std::vector<cd> b(et.eigenvalues().data(),
                      et.eigenvalues().data() + n);
    auto key = [](cd x, cd y) {
      return x.real() != y.real() ? x.real() < y.real() : x.imag() < y.imag();
    };
    std::sort(a.begin(), a.end(), key);
    std::sort(b.begin(), b.end(), key);
    for (int i = 0; i < n; i++) CHECK(std::abs(a[i] - b[i]) < 1e-6);
  }
}

TEST_CASE("hippo init invariants") {
  CHECK_THROWS_AS(hippo_legs_init(0, 0), std::invalid_argument);
  for (uint64_t seed : {0ull, 1ull, 2ull}) {
    DPLRParams p = hippo_legs_init(8, seed);
    CHECK(dplr_stable(p));
    CHECK(p.dt() > 1e-4);
    CHECK(p.dt() < 1e-1);
  }
  // Determinism.
  DPLRParams a = hippo_legs_init(8, 42), b = hippo_legs_init(8, 42);
  CHECK((a.b - b.b).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.c - b.c).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.log_dt == b.log_dt);
}

TEST_CASE("bilinear discretization worked examples") {
  // A=[[-1]], B=[[1]], dt=2 -> Abar=0, Bbar=1
  DiscreteSSM d1 = discretize_bilinear_dense(
      CMat::Constant(1, 1, cd(-1, 0)), CVec::Constant(1, cd(1, 0)),
      CVec::Constant(1, cd(1, 0)), 2.0);
  CHECK(std::abs(d1.a_bar(0, 0)) < 1e-15);
  CHECK(std::abs(d1.b_bar[0] - cd(1, 0)) < 1e-15);

  // dt = 0 -> Abar = I, Bbar = 0
  DiscreteSSM d2 = discretize_bilinear_dense(
      CMat::Constant(1, 1, cd(3, 1)), CVec::Constant(1, cd(2, 0)),
      CVec::Constant(1, cd(1, 0)), 0.0);
  CHECK(std::abs(d2.a_bar(0, 0) - cd(1, 0)) < 1e-15);
  CHECK(std::abs(d2.b_bar[0]) < 1e-15);

  // A=[[0]], B=[[2]], dt=0.5 -> Abar=1, Bbar=1
  DiscreteSSM d3 = discretize_bilinear_dense(
      CMat::Zero(1, 1), CVec::Constant(1, cd(2, 0)),
      CVec::Constant(1, cd(1, 0)), 0.5);
  CHECK(std::abs(d3.a_bar(0, 0) - cd(1, 0)) < 1e-15);
  CHECK(std::abs(d3.b_bar[0] - cd(1, 0)) < 1e-15);
}

TEST_CASE("bilinear discretization singularity guard") {
  // A with eigenvalue exactly 2/dt makes (I - dt/2 A) singular.
  CHECK_THROWS_AS(discretize_bilinear_dense(CMat::Constant(1, 1, cd(2, 0)),
                                            CVec::Constant(1, cd(1, 0)),
                                            CVec::Constant(1, cd(1, 0)), 1.0),
                  std::runtime_error);
}

TEST_CASE("ssm_scan scalar geometric example") {
  DiscreteSSM d = scalar_system(0.5, 1.0, 1.0);
  Vec u(3);
  u << 1, 0, 0;
  Vec y = ssm_scan(d, u);
  CHECK(y[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(y[1] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(y[2] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("ssm_scan zero input") {
  DiscreteSSM d = scalar_system(0.5, 1.0, 1.0);
  Vec y = ssm_scan(d, Vec::Zero(16));
  CHECK(y.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("kernel_naive worked examples") {
  DiscreteSSM d = scalar_system(0.5, 1.0, 1.0);
  Kernel k = kernel_naive(d, 3);
  CHECK(k.k[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(k.k[1] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(k.k[2] == doctest::Approx(0.25).epsilon(1e-15));

  Kernel k1 = kernel_naive(scalar_system(0.7, 2.0, 3.0), 1);
  CHECK(k1.k.size() == 1);
  CHECK(k1.k[0] == doctest::Approx(6.0).epsilon(1e-15));

  Kernel kz = kernel_naive(scalar_system(0.0, 2.0, 3.0), 4);
  CHECK(kz.k[0] == doctest::Approx(6.0).epsilon(1e-15));
  for (int i = 1; i < 4; i++) CHECK(kz.k[i] == 0.0);
}

TEST_CASE("scan equals kernel convolution") {
  for (uint64_t s = 0; s < 20; s++) {
    const int n = 1 + int(mix_seed(1, s) % 16);
    const int l = 16 + int(mix_seed(2, s) % 241);
    DPLRParams p = random_stable(n, mix_seed(10, s));
    DiscreteSSM d = discretize_bilinear(p);
    Vec u = random_vec(l, mix_seed(11, s));
    Vec via_scan = ssm_scan(d, u);
    Vec via_conv = fft::causal_conv(kernel_naive(d, l).k, u);
    CHECK((via_scan - via_conv).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("kernel_fast single tap") {
  DPLRParams p = random_stable(4, 3);
  Kernel fast = kernel_fast(p, 1);
  Kernel naive = kernel_naive(discretize_bilinear(p), 1);
  CHECK(std::abs(fast.k[0] - naive.k[0]) < 1e-9);
}

TEST_CASE("kernel_fast diagonal scalar case") {
  DPLRParams p;
  p.lambda = CVec::Constant(1, cd(-1.0, 0.0));
  p.p = CVec::Zero(1);
  p.q = CVec::Zero(1);
  p.b = CVec::Constant(1, cd(1.0, 0.0));
  p.c = CVec::Constant(1, cd(1.0, 0.0));
  p.log_dt = std::log(0.1);
  DiscreteSSM d = discretize_bilinear(p);
  Kernel fast = kernel_fast(p, 64);
  for (int i = 0; i < 64; i++) {
    const double direct =
        (d.c_bar[0] * std::pow(d.a_bar(0, 0), i) * d.b_bar[0]).real();
    CHECK(std::abs(fast.k[i] - direct) < 1e-9);
  }
}

TEST_CASE("kernel_fast matches naive on random stable systems") {
  for (uint64_t s = 0; s < 5; s++) {
    DPLRParams p = random_stable(32, mix_seed(77, s));
    DiscreteSSM d = discretize_bilinear(p);
    for (int l : {128, 512}) {
      Kernel fast = kernel_fast(p, l);
      Kernel naive = kernel_naive(d, l);
      const double scale = naive.k.cwiseAbs().maxCoeff();
      CHECK((fast.k - naive.k).cwiseAbs().maxCoeff() / scale < 1e-4);
    }
  }
}

TEST_CASE("kernel_fast handles non power of two lengths") {
  DPLRParams p = random_stable(8, 5);
  Kernel fast = kernel_fast(p, 100);
  Kernel naive = kernel_naive(discretize_bilinear(p), 100);
  CHECK(fast.k.size() == 100);
  const double scale = naive.k.cwiseAbs().maxCoeff();
  CHECK((fast.k - naive.k).cwiseAbs().maxCoeff() / scale < 1e-4);
}

TEST_CASE("kernel_fast rejects l = 0") {
  CHECK_THROWS_AS(kernel_fast(random_stable(4, 1), 0), std::invalid_argument);
}

TEST_CASE("stability propagates to the discrete system and kernel") {
  DPLRParams p = hippo_legs_init(16, 9);
  REQUIRE(dplr_stable(p));
  DiscreteSSM d = discretize_bilinear(p);
  Eigen::ComplexEigenSolver<CMat> es(d.a_bar);
  for (int i = 0; i < 16; i++) CHECK(std::abs(es.eigenvalues()[i]) < 1.0);
  Kernel k = kernel_naive(d, 64);
  CHECK(std::abs(k.k[63]) < std::abs(k.k[0]));
}
