#include "fft.hpp"

#include <cmath>

namespace gs4::fft {

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

void transform(std::vector<cd>& a, bool invert) {
  const std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0)
    throw std::invalid_argument("fft: size must be a nonzero power of two");

  for (std::size_t i = 1, j = 0; i < n; i++) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }

  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * M_PI / double(len) * (invert ? 1.0 : -1.0);
    const cd wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      cd w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; j++) {
        cd x = a[i + j];
        cd y = a[i + j + len / 2] * w;
        a[i + j] = x + y;
        a[i + j + len / 2] = x - y;
        w *= wlen;
      }
    }
  }
  if (invert) {
    for (auto& v : a) v /= double(n);
  }
}

Vec causal_conv(const Vec& k, const Vec& u) {
  require(k.size() == u.size(), "causal_conv: length mismatch");
  const std::size_t l = std::size_t(k.size());
  if (l == 0) return Vec();
  const std::size_t m = next_pow2(2 * l - 1);
  std::vector<cd> fa(m, cd(0, 0)), fb(m, cd(0, 0));
  for (std::size_t i = 0; i < l; i++) {
    fa[i] = cd(k[Eigen::Index(i)], 0);
    fb[i] = cd(u[Eigen::Index(i)], 0);
  }
  transform(fa, false);
  transform(fb, false);
  for (std::size_t i = 0; i < m; i++) fa[i] *= fb[i];
  transform(fa, true);
  Vec y(l);
  for (std::size_t i = 0; i < l; i++) y[Eigen::Index(i)] = fa[i].real();
  return y;
}

Vec causal_corr(const Vec& a, const Vec& b) {
  require(a.size() == b.size(), "causal_corr: length mismatch");
  const std::size_t l = std::size_t(a.size());
  if (l == 0) return Vec();
  const std::size_t m = next_pow2(2 * l - 1);
  std::vector<cd> fa(m, cd(0, 0)), fb(m, cd(0, 0));
  for (std::size_t i = 0; i < l; i++) {
    fa[i] = cd(a[Eigen::Index(i)], 0);
    fb[i] = cd(b[Eigen::Index(i)], 0);
  }
  transform(fa, false);
  transform(fb, false);
  for (std::size_t i = 0; i < m; i++) fa[i] = std::conj(fa[i]) * fb[i];
  transform(fa, true);
  Vec y(l);
  for (std::size_t i = 0; i < l; i++) y[Eigen::Index(i)] = fa[i].real();
  return y;
}

Vec causal_conv_direct(const Vec& k, const Vec& u) {
  require(k.size() == u.size(), "causal_conv_direct: length mismatch");
  const Eigen::Index l = k.size();
  Vec y = Vec::Zero(l);
  for (Eigen::Index t = 0; t < l; t++)
    for (Eigen::Index i = 0; i <= t; i++) y[t] += k[i] * u[t - i];
  return y;
}

}  // namespace gs4::fft
