#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace imotion {

// Seeded random stream with distributions implemented here rather than
// taken from <random>, so draws are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  // Independent child stream keyed by `key`; the parent is not advanced.
  Rng split(std::uint64_t key) const;

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1).
  double uniform();
  // Uniform integer on [0, n). n must be positive.
  std::size_t uniform_index(std::size_t n);
  double normal();
  void fill_normal(std::span<double> out);

  // k distinct indices from [0, n) in draw order; k <= n.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

// FNV-1a over raw bytes; used for weight digests.
std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h = 1469598103934665603ULL);

}  // namespace imotion
