#pragma once

#include <vector>

#include "common.hpp"

namespace gs4::fft {

std::size_t next_pow2(std::size_t n);

// In-place iterative radix-2 transform; size must be a power of two.
void transform(std::vector<cd>& a, bool invert);

// y[t] = sum_{i<=t} k[i] * u[t-i]; requires len(k) == len(u).
Vec causal_conv(const Vec& k, const Vec& u);

// c[t] = sum_{i} a[i] * b[t+i] for t in [0, L); cross-correlation at
// non-negative lags. Adjoint of causal_conv in both arguments.
Vec causal_corr(const Vec& a, const Vec& b);

// O(L^2) reference used by tests.
Vec causal_conv_direct(const Vec& k, const Vec& u);

}  // namespace gs4::fft
