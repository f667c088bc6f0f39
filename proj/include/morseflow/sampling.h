#pragma once

#include <cstdint>
#include <vector>

namespace morseflow {

/// Halton sequence with a seeded Cranley-Patterson rotation.
class Halton {
 public:
  Halton(int dim, std::uint64_t seed);
  /// Point i in [0,1)^dim.
  std::vector<double> point(long i) const;

 private:
  int dim_;
  std::vector<double> shift_;
};

}  // namespace morseflow
