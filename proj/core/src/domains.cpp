#include <algorithm>
#include <cstring>
#include <string>
#include <vector>

#include "dgmix/data.hpp"
#include "dgmix/errors.hpp"
#include "dgmix/rng.hpp"

namespace dgmix {

RawDigitSet sample_per_class(const RawDigitSet& set, std::size_t n_per_class, std::uint64_t seed) {
  if (n_per_class == 0) return RawDigitSet{};
  detail::require_rank(set.images, 4, "sample_per_class", "images");
  if (set.images.extent(0) != set.labels.size()) {
    throw DataError("sample_per_class: image count " + std::to_string(set.images.extent(0)) +
                    " does not match label count " + std::to_string(set.labels.size()));
  }

  std::vector<std::vector<std::size_t>> by_class(10);
  for (std::size_t i = 0; i < set.labels.size(); ++i) {
    const int y = set.labels[i];
    if (y < 0 || y > 9) {
      throw DataError("sample_per_class: label " + std::to_string(y) + " out of range at index " +
                      std::to_string(i));
    }
    by_class[static_cast<std::size_t>(y)].push_back(i);
  }

  Rng rng(derive_seed(seed, "per-class-sample"));
  std::vector<std::size_t> chosen;
  chosen.reserve(10 * n_per_class);
  for (int cls = 0; cls < 10; ++cls) {
    auto& pool = by_class[static_cast<std::size_t>(cls)];
    if (pool.size() < n_per_class) {
      throw DataError("sample_per_class: class " + std::to_string(cls) + " has only " +
                      std::to_string(pool.size()) + " examples, need " +
                      std::to_string(n_per_class));
    }
    rng.shuffle(pool);
    chosen.insert(chosen.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_per_class));
  }
  rng.shuffle(chosen);

  const std::size_t h = set.images.extent(2), w = set.images.extent(3);
  const std::size_t px = h * w;
  RawDigitSet out{Tensor({chosen.size(), 1, h, w}), {}};
  out.labels.reserve(chosen.size());
  for (std::size_t k = 0; k < chosen.size(); ++k) {
    std::memcpy(out.images.ptr() + k * px, set.images.ptr() + chosen[k] * px, px * sizeof(double));
    out.labels.push_back(set.labels[chosen[k]]);
  }
  return out;
}

std::vector<RotatedDomainSet> build_domains(const RawDigitSet& base,
                                            const std::vector<double>& angles) {
  if (angles.empty()) throw ValidationError("build_domains: angle list is empty");
  for (std::size_t i = 0; i < angles.size(); ++i)
    for (std::size_t j = i + 1; j < angles.size(); ++j)
      if (angles[i] == angles[j]) {
        throw ValidationError("build_domains: duplicate angle " + std::to_string(angles[i]));
      }
  detail::require_rank(base.images, 4, "build_domains", "images");

  const std::size_t m = base.count();
  const std::size_t h = base.images.extent(2), w = base.images.extent(3);
  const std::size_t px = h * w;

  std::vector<RotatedDomainSet> out;
  out.reserve(angles.size());
  for (std::size_t a = 0; a < angles.size(); ++a) {
    RotatedDomainSet dom;
    dom.domain_label = static_cast<int>(a) + 1;
    dom.angle = angles[a];
    dom.images = Tensor({m, 1, h, w});
    dom.labels = base.labels;
    for (std::size_t i = 0; i < m; ++i) {
      Tensor img({1, h, w});
      std::memcpy(img.ptr(), base.images.ptr() + i * px, px * sizeof(double));
      const Tensor rot = rotate_image(img, angles[a]);
      std::memcpy(dom.images.ptr() + i * px, rot.ptr(), px * sizeof(double));
    }
    out.push_back(std::move(dom));
  }
  return out;
}

Episode make_episode(std::vector<RotatedDomainSet> domains, double target_angle) {
  if (domains.size() < 2) {
    throw ValidationError("make_episode: need at least two domains, got " +
                          std::to_string(domains.size()));
  }
  Episode ep;
  bool found = false;
  for (auto& dom : domains) {
    if (dom.angle == target_angle) {
      if (found) throw ValidationError("make_episode: duplicate target angle");
      ep.target = std::move(dom);
      found = true;
    } else {
      ep.sources.push_back(std::move(dom));
    }
  }
  if (!found) {
    throw ValidationError("make_episode: no domain has angle " + std::to_string(target_angle));
  }
  std::sort(ep.sources.begin(), ep.sources.end(),
            [](const RotatedDomainSet& a, const RotatedDomainSet& b) { return a.angle < b.angle; });
  for (std::size_t i = 0; i < ep.sources.size(); ++i) {
    ep.sources[i].domain_label = static_cast<int>(i) + 1;
  }
  ep.target.domain_label = 0;
  return ep;
}

}  // namespace dgmix
