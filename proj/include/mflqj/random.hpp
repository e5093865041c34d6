#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace mflqj {

/// Philox4x32-10 counter-based generator. Any (key, counter) pair maps to four
/// 32-bit words, so each path and step owns its own reproducible draws.
class Philox4x32 {
 public:
  using Block = std::array<std::uint32_t, 4>;

  explicit Philox4x32(std::uint64_t seed)
      : k0_(static_cast<std::uint32_t>(seed)), k1_(static_cast<std::uint32_t>(seed >> 32)) {}

  [[nodiscard]] Block operator()(Block ctr) const {
    std::uint32_t k0 = k0_, k1 = k1_;
    for (int r = 0; r < 10; ++r) {
      if (r > 0) {
        k0 += 0x9E3779B9u;
        k1 += 0xBB67AE85u;
      }
      const std::uint64_t p0 = std::uint64_t{0xD2511F53u} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{0xCD9E8D57u} * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ k0, lo1, hi0 ^ ctr[3] ^ k1, lo0};
    }
    return ctr;
  }

 private:
  std::uint32_t k0_, k1_;
};

/// Uniform in [0, 1) with 53 random bits.
inline double to_unit(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t x = (std::uint64_t{hi} << 32 | lo) >> 11;
  return static_cast<double>(x) * 0x1.0p-53;
}

/// Standard normal quantile, Wichura's AS 241 (PPND16), relative accuracy about 1e-16.
inline double normal_quantile(double p) {
  const double q = p - 0.5;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q *
           (((((((2509.0809287301226727 * r + 33430.575583588128105) * r + 67265.770927008700853) * r +
                45921.953931549871457) * r + 13731.693765509461125) * r + 1971.5909503065514427) * r +
             133.14166789178437745) * r + 3.387132872796366608) /
           (((((((5226.495278852545925 * r + 28729.085735721942674) * r + 39307.89580009271061) * r +
                21213.794301586595867) * r + 5394.1960214247511077) * r + 687.1870074920579083) * r +
             42.313330701600911252) * r + 1.0);
  }
  double r = q < 0.0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double v;
  if (r <= 5.0) {
    r -= 1.6;
    v = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r + 0.24178072517745061177) * r +
             1.27045825245236838258) * r + 3.64784832476320460504) * r + 5.7694972214606914055) * r +
          4.6303378461565452959) * r + 1.42343711074968357734) /
        (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r + 0.0151986665636164571966) * r +
             0.14810397642748007459) * r + 0.68976733498510000455) * r + 1.6763848301838038494) * r +
          2.05319162663775882187) * r + 1.0);
  } else {
    r -= 5.0;
    v = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 0.0012426609473880784386) * r +
             0.026532189526576123093) * r + 0.29656057182850489123) * r + 1.7848265399172913358) * r +
          5.4637849111641143699) * r + 6.6579046435011037772) /
        (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r + 1.8463183175100546818e-5) * r +
             7.868691311456132591e-4) * r + 0.0148753612908506148525) * r + 0.13692988092273580531) * r +
          0.59983220655588793769) * r + 1.0);
  }
  return q < 0.0 ? -v : v;
}

/// Poisson draw by CDF inversion; exp_neg_mu = exp(-mu) is passed in to avoid recomputation.
inline int poisson_inverse(double u, double mu, double exp_neg_mu) {
  double p = exp_neg_mu;
  double cdf = p;
  int k = 0;
  while (u > cdf && k < 10000) {
    ++k;
    p *= mu / k;
    cdf += p;
    if (p == 0.0) break;
  }
  return k;
}

/// Uniform in (0, 1) from a single 32-bit word.
inline double to_unit32(std::uint32_t w) { return (static_cast<double>(w) + 0.5) * 0x1.0p-32; }

/// Draws for one path: counter = (step, block, path_lo, path_hi). Block 0 feeds the
/// Brownian increment (words 0-1) and jump atom 0 (word 3); atom i >= 1 uses word
/// (i-1) % 4 of block 1 + (i-1) / 4.
class PathStream {
 public:
  PathStream(const Philox4x32& gen, std::uint64_t path) : gen_(gen), lo_(static_cast<std::uint32_t>(path)),
                                                          hi_(static_cast<std::uint32_t>(path >> 32)) {}

  /// Standard normal for the step by inversion; *u0 receives the uniform of atom 0.
  double normal(std::uint32_t step, double* u0 = nullptr) const {
    const auto b = gen_({step, 0u, lo_, hi_});
    if (u0) *u0 = to_unit32(b[3]);
    // 53-bit uniform strictly inside (0, 1).
    const double u = (static_cast<double>((std::uint64_t{b[0]} << 32 | b[1]) >> 11) + 0.5) * 0x1.0p-53;
    return normal_quantile(u);
  }

  /// Uniform for jump atom i >= 1 at a step.
  [[nodiscard]] double uniform(std::uint32_t step, std::uint32_t atom) const {
    const std::uint32_t j = atom - 1u;
    const auto b = gen_({step, 1u + j / 4u, lo_, hi_});
    return to_unit32(b[j % 4u]);
  }

 private:
  const Philox4x32& gen_;
  std::uint32_t lo_, hi_;
};

}  // namespace mflqj
