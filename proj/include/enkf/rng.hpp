#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include <Eigen/Core>

namespace enkf {

/// Roles of the independent random substreams consumed by one trial.
/// Every filter variant in a trial draws from the same role streams, which is
/// what makes comparisons across variants use common random numbers.
enum class StreamRole : std::uint64_t {
  TruthInit = 1,
  EnsembleInit = 2,
  ObservationNoise = 3,
  Perturbation = 4,
  SystemNoiseTruth = 5,
  SystemNoiseEnsemble = 6,
  Climatology = 7,
  Auxiliary = 8,
};

/// SplitMix64 finalizer; a bijective 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives the seed of the substream (base, trial, role). Distinct tuples give
/// statistically independent streams; the mapping depends on nothing else.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t trial, StreamRole role,
                                    std::uint64_t salt = 0) {
  std::uint64_t h = mix64(base);
  h = mix64(h ^ mix64(trial + 0x632be59bd9b4e019ULL));
  h = mix64(h ^ mix64(static_cast<std::uint64_t>(role) * 0x8cb92ba72f3d8dd7ULL));
  return mix64(h ^ salt);
}

/// A single-owner Gaussian stream. Not thread-safe; give each worker its own.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0) : engine_(seed) {}
  RngStream(std::uint64_t base, std::uint64_t trial, StreamRole role, std::uint64_t salt = 0)
      : engine_(derive_seed(base, trial, role, salt)) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }

  // Takes const& so blocks and columns bind (Eigen's writable-temporary idiom).
  template <typename Derived>
  void fill_normal(const Eigen::DenseBase<Derived>& out_) {
    auto& out = const_cast<Eigen::DenseBase<Derived>&>(out_);
    for (Eigen::Index j = 0; j < out.cols(); ++j)
      for (Eigen::Index i = 0; i < out.rows(); ++i) out(i, j) = static_cast<typename Derived::Scalar>(normal());
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace enkf
