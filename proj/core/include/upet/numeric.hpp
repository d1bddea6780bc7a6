#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <vector>

#include "upet/error.hpp"

namespace upet {

using Vec = std::vector<double>;

/// Dense row-major matrix.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Vec a;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return a[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return a[r * cols + c]; }
  double* row(std::size_t r) { return a.data() + r * cols; }
  const double* row(std::size_t r) const { return a.data() + r * cols; }
  std::size_t size() const { return a.size(); }

  bool operator==(const Mat&) const = default;
};

/// Deterministic counter-style generator (splitmix64). Same seed and call
/// sequence gives the same stream on every platform; no std::random
/// distributions are used anywhere so the mapping to doubles is fixed too.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double next_double();
  /// Uniform in (0, 1].
  double next_open_double();
  /// Standard normal via Box-Muller.
  double next_gaussian();
  /// Uniform integer in [0, n).
  std::size_t next_index(std::size_t n);

  /// Stateless stream derivation: hashes seed and path into a fresh Rng.
  /// Used to give every (iteration, example, ...) site its own stream so
  /// results do not depend on evaluation order or thread count.
  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Floor applied to probabilities before any logarithm.
inline constexpr double kProbFloor = 1e-12;

/// Numerically stable softmax (max subtracted before exponentiation).
Vec softmax(const Vec& logits);

/// Shannon entropy in nats; 0*ln 0 counts as 0. Input must be a valid
/// probability vector (entries in [0,1], sum 1 within 1e-9).
double entropy(const Vec& p);

void validate_prob_vector(const Vec& p);

/// Draws k distinct indices, inclusion probability monotone in weight.
/// Exponent-key method: key_i = u_i^(1/w_i), take the k largest keys.
/// Zero-weight entries are never selected.
std::vector<std::size_t> weighted_sample_without_replacement(const Vec& weights, std::size_t k,
                                                             Rng& rng);

double cosine(const Vec& a, const Vec& b);

double dot(const Vec& a, const Vec& b);
double l2_norm(const Vec& a);
std::size_t argmax_lowest(const Vec& v);

}  // namespace upet
