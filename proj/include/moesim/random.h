/* Copyright 2026 The moesim Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef MOESIM_RANDOM_H_
#define MOESIM_RANDOM_H_

#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

namespace moesim {

// Small counter-style generator for short derived streams. Satisfies
// UniformRandomBitGenerator.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }
  result_type operator()() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

// Mixes several words into one seed; used to derive independent streams.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b,
                              std::uint64_t c = 0) {
  SplitMix64 g(a ^ (b * 0xD6E8FEB86659FD93ull) ^ (c * 0xA0761D6478BD642Full));
  g();
  return g();
}

// The std distributions are implementation-defined; these are not, so
// traces are byte-identical across standard libraries.
template <typename G>
double uniform01(G& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

template <typename G>
std::size_t uniform_index(G& g, std::size_t n) {
  auto i = static_cast<std::size_t>(uniform01(g) * static_cast<double>(n));
  return i < n ? i : n - 1;
}

template <typename G, typename T>
void shuffle_in_place(G& g, std::span<T> items) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::swap(items[i - 1], items[uniform_index(g, i)]);
  }
}

// Inverse-CDF sampler over fixed non-negative weights.
class WeightedSampler {
 public:
  WeightedSampler() = default;
  explicit WeightedSampler(std::span<const double> weights);

  std::size_t size() const { return cumulative_.size(); }

  template <typename G>
  std::size_t sample(G& g) const {
    double u = uniform01(g) * cumulative_.back();
    std::size_t lo = 0, hi = cumulative_.size() - 1;
    while (lo < hi) {
      std::size_t mid = (lo + hi) / 2;
      if (cumulative_[mid] > u) {
        hi = mid;
      } else {
        lo = mid + 1;
      }
    }
    return lo;
  }

  // Rejection-samples an index whose flag in `excluded` is false. The caller
  // guarantees at least one index with non-zero weight is allowed.
  template <typename G>
  std::size_t sample_excluding(G& g, const std::vector<char>& excluded) const {
    for (int attempt = 0; attempt < 64; ++attempt) {
      std::size_t i = sample(g);
      if (!excluded[i]) return i;
    }
    // Heavy exclusion under steep weights: sample the allowed mass directly.
    double allowed = 0;
    for (std::size_t i = 0; i < size(); ++i) {
      if (!excluded[i]) allowed += weight(i);
    }
    double u = uniform01(g) * allowed;
    std::size_t last = size();
    for (std::size_t i = 0; i < size(); ++i) {
      if (excluded[i] || weight(i) <= 0) continue;
      last = i;
      if (u < weight(i)) return i;
      u -= weight(i);
    }
    return last;
  }

  double weight(std::size_t i) const {
    return i == 0 ? cumulative_[0] : cumulative_[i] - cumulative_[i - 1];
  }

 private:
  std::vector<double> cumulative_;
};

inline WeightedSampler::WeightedSampler(std::span<const double> weights)
    : cumulative_(weights.size()) {
  double acc = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    cumulative_[i] = acc;
  }
}

}  // namespace moesim

#endif  // MOESIM_RANDOM_H_
