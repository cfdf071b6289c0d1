#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <sstream>
#include <string>

namespace utr {

// Deterministic random source. Distributions are hand-rolled on top of
// mt19937_64 so that streams are reproducible across standard libraries
// (std::normal_distribution is implementation-defined).
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // uniform in [0, 1) with 53 bits of precision
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n), unbiased
  int64_t uniform_int(int64_t n) {
    const uint64_t bound = static_cast<uint64_t>(n);
    const uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      uint64_t x = gen_();
      if (x >= threshold) return static_cast<int64_t>(x % bound);
    }
  }

  // standard normal via Box-Muller, one spare cached
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Textual state round-trip, used by training checkpoints to resume the
  // exact sampling stream.
  std::string serialize() const {
    uint64_t bits = 0;
    std::memcpy(&bits, &spare_, sizeof(bits));
    std::ostringstream os;
    os << gen_ << " " << (has_spare_ ? 1 : 0) << " " << bits;
    return os.str();
  }

  void deserialize(const std::string& text) {
    std::istringstream is(text);
    is >> gen_;
    int flag = 0;
    uint64_t bits = 0;
    is >> flag >> bits;
    has_spare_ = flag != 0;
    std::memcpy(&spare_, &bits, sizeof(spare_));
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace utr
