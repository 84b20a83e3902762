#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "diffspeech/types.hpp"

namespace diffspeech {

// splitmix64, used to derive independent stream seeds from a root seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
  return splitmix64(splitmix64(root) + stream);
}

// Deterministic RNG. std::mt19937_64 has a fully specified output sequence,
// but the std distributions do not, so uniform/gaussian draws are implemented
// here (Lemire rejection and Box-Muller) to keep outputs bit-stable across
// standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  static Rng stream(std::uint64_t root, std::uint64_t stream_id) {
    return Rng(derive_seed(root, stream_id));
  }

  std::uint64_t next_u64() { return gen_(); }

  // Uniform double in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), unbiased.
  std::uint64_t uniform_index(std::uint64_t n) {
    const std::uint64_t threshold = (0ULL - n) % n;
    for (;;) {
      const std::uint64_t r = gen_();
      if (r >= threshold) return r % n;
    }
  }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(uniform_index(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  // Standard normal via Box-Muller; the cosine branch is returned first.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = static_cast<double>((gen_() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Fills row by row, column by column; the iteration order is part of the
// reproducibility contract.
template <typename Scalar>
Mat<Scalar> gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Mat<Scalar> m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = static_cast<Scalar>(rng.gaussian());
  return m;
}

template <typename Scalar>
Vec<Scalar> gaussian_vector(Eigen::Index n, Rng& rng) {
  Vec<Scalar> v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = static_cast<Scalar>(rng.gaussian());
  return v;
}

}  // namespace diffspeech
