#pragma once

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "dgmix/rng.hpp"
#include "dgmix/tensor.hpp"

namespace testutil {

inline dgmix::Tensor random_tensor(dgmix::Shape shape, dgmix::Rng& rng, double lo = -1.0,
                                   double hi = 1.0) {
  dgmix::Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

inline double max_abs_diff(const dgmix::Tensor& a, const dgmix::Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::fabs(a[i] - b[i]);
    if (d > m) m = d;
  }
  return m;
}

/// Per-process scratch directory, created on first use.
inline std::string temp_path(const std::string& name) {
  namespace fs = std::filesystem;
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("dgmix-tests-" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return (dir / name).string();
}

}  // namespace testutil
