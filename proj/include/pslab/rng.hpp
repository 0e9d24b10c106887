#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace pslab {

// Mixes a base seed with a stream tag so independent consumers (scenes,
// proposals, masks, replicate runs) never share a random stream.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag);

/// Seeded random source with samplers that hold no hidden cached state,
/// so the engine text dump fully captures where a stream is.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform();  // [0, 1)
  double uniform(double lo, double hi);
  std::uint64_t uniform_index(std::uint64_t n);  // [0, n)
  int uniform_int(int lo, int hi);               // [lo, hi]
  double normal(double mean = 0.0, double stddev = 1.0);
  bool bernoulli(double p);
  int poisson(double mean);

  std::string state() const;
  void set_state(const std::string& text);

 private:
  std::mt19937_64 engine_;
};

}  // namespace pslab
