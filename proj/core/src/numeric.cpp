#include "upet/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace upet {

namespace {

inline std::uint64_t splitmix64_next(std::uint64_t& s) {
  s += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = s;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t mix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t Rng::next_u64() { return splitmix64_next(state_); }

double Rng::next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::next_open_double() {
  return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
}

double Rng::next_gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = next_open_double();
  const double u2 = next_double();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::size_t Rng::next_index(std::size_t n) {
  // Rejection-free modulo is fine here: n is tiny relative to 2^64 and the
  // streams are used for sampling, not cryptography.
  return static_cast<std::size_t>(next_u64() % static_cast<std::uint64_t>(n));
}

Rng Rng::derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = mix(seed ^ 0x5851f42d4c957f2dULL);
  for (std::uint64_t p : path) {
    s = mix(s ^ mix(p ^ 0x14057b7ef767814fULL));
  }
  return Rng(s);
}

Vec softmax(const Vec& logits) {
  if (logits.empty()) {
    throw DimensionError("softmax: empty input");
  }
  for (double v : logits) {
    if (!std::isfinite(v)) {
      throw NumericError("softmax: non-finite logit");
    }
  }
  const double m = *std::max_element(logits.begin(), logits.end());
  Vec out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (double& v : out) {
    v /= sum;
  }
  return out;
}

void validate_prob_vector(const Vec& p) {
  if (p.empty()) {
    throw std::domain_error("probability vector: empty");
  }
  double sum = 0.0;
  for (double v : p) {
    if (!std::isfinite(v) || v < -1e-12 || v > 1.0 + 1e-12) {
      throw std::domain_error("probability vector: entry outside [0,1]");
    }
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw std::domain_error("probability vector: does not sum to 1");
  }
}

double entropy(const Vec& p) {
  validate_prob_vector(p);
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) {
      h -= v * std::log(v);
    }
  }
  return h;
}

std::vector<std::size_t> weighted_sample_without_replacement(const Vec& weights, std::size_t k,
                                                             Rng& rng) {
  std::size_t positive = 0;
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0) {
      throw NumericError("weighted sampling: weights must be finite and nonnegative");
    }
    if (w > 0.0) {
      ++positive;
    }
  }
  if (k > positive) {
    throw SelectionError("weighted sampling: requested " + std::to_string(k) +
                         " draws but only " + std::to_string(positive) +
                         " strictly positive weights (short by " +
                         std::to_string(k - positive) + ")");
  }
  // One uniform per entry, drawn in index order so results are independent of
  // any later reordering.
  std::vector<std::pair<double, std::size_t>> keys;
  keys.reserve(positive);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] > 0.0) {
      const double u = rng.next_open_double();
      keys.emplace_back(std::pow(u, 1.0 / weights[i]), i);
    } else {
      rng.next_open_double();  // keep stream position independent of weights
    }
  }
  std::sort(keys.begin(), keys.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    out.push_back(keys[i].second);
  }
  std::sort(out.begin(), out.end());
  return out;
}

double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s += a[i] * b[i];
  }
  return s;
}

double l2_norm(const Vec& a) { return std::sqrt(dot(a, a)); }

double cosine(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) {
    throw DimensionError("cosine: dimension mismatch");
  }
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) {
    throw std::domain_error("cosine: zero vector");
  }
  const double c = dot(a, b) / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

std::size_t argmax_lowest(const Vec& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) {
      best = i;
    }
  }
  return best;
}

}  // namespace upet
