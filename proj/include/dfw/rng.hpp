#pragma once

#include <cstdint>
#include <random>

#include "dfw/types.hpp"

namespace dfw {

/// Purpose tags keep substreams for different jobs disjoint.
enum class Stream : std::uint64_t {
  kTruth = 1,
  kObservationNoise = 2,
  kAuxiliary = 3,
  kTraining = 4,
  kInit = 5,
  kFilter = 6,
  kEvaluation = 7,
  kNormalization = 8,
  kReference = 9,
  kModel = 10,
};

/// Splittable generator. A substream is a pure function of
/// (master seed, tag, id) and never depends on how much of the parent has
/// been consumed, so parallel work is reproducible under any scheduling.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(mix(seed)), engine_(key_) {}

  Rng substream(Stream tag, std::uint64_t id = 0) const {
    return Rng(key_, static_cast<std::uint64_t>(tag), id);
  }

  Rng substream(std::uint64_t tag, std::uint64_t id) const { return Rng(key_, tag, id); }

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }

  /// rows x cols matrix of independent N(0, scale^2) draws.
  Mat normal_matrix(Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
    Mat out(rows, cols);
    double* p = out.data();
    for (Eigen::Index i = 0; i < out.size(); ++i) p[i] = scale * normal_(engine_);
    return out;
  }

  std::mt19937_64& engine() { return engine_; }
  std::uint64_t key() const { return key_; }

 private:
  Rng(std::uint64_t parent, std::uint64_t tag, std::uint64_t id)
      : key_(mix(parent ^ mix(tag * 0x9E3779B97F4A7C15ULL + mix(id)))), engine_(key_) {}

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace dfw
