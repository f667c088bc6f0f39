#include "morseflow/sampling.h"

#include <cmath>
#include <random>

namespace morseflow {

namespace {

int Prime(int k) {
  static const int kPrimes[] = {2,  3,  5,  7,  11, 13, 17, 19, 23, 29, 31, 37, 41,
                                43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97};
  return kPrimes[k % 25];
}

double RadicalInverse(long i, int base) {
  double f = 1.0, r = 0.0;
  while (i > 0) {
    f /= base;
    r += f * (i % base);
    i /= base;
  }
  return r;
}

}  // namespace

Halton::Halton(int dim, std::uint64_t seed) : dim_(dim), shift_(dim, 0.0) {
  if (seed != 0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& s : shift_) s = u(rng);
  }
}

std::vector<double> Halton::point(long i) const {
  std::vector<double> p(dim_);
  for (int k = 0; k < dim_; ++k) {
    double v = RadicalInverse(i + 1, Prime(k)) + shift_[k];
    p[k] = v - std::floor(v);
  }
  return p;
}

}  // namespace morseflow
