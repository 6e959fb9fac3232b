#include <cstring>
#include <numeric>
#include <string>

#include "dgmix/data.hpp"
#include "dgmix/errors.hpp"
#include "dgmix/rng.hpp"

namespace dgmix {

BatchSampler::BatchSampler(const Episode& episode, std::size_t batch_size, std::uint64_t seed)
    : episode_(&episode), batch_size_(batch_size), seed_(seed) {
  const std::size_t n = episode.domains();
  if (n == 0) throw ValidationError("BatchSampler: episode has no source domains");
  if (batch_size == 0 || batch_size % n != 0) {
    throw ConfigError("BatchSampler: batch size " + std::to_string(batch_size) +
                      " is not a positive multiple of domain count " + std::to_string(n));
  }
  per_domain_ = batch_size / n;
  for (const auto& dom : episode.sources) {
    if (dom.count() < per_domain_) {
      throw ValidationError("BatchSampler: domain " + std::to_string(dom.domain_label) +
                            " holds " + std::to_string(dom.count()) + " samples, batch needs " +
                            std::to_string(per_domain_));
    }
  }
  cached_epoch_.assign(n, static_cast<std::size_t>(-1));
  cached_order_.resize(n);
}

const std::vector<std::size_t>& BatchSampler::epoch_order(std::size_t domain, std::size_t epoch) {
  if (cached_epoch_[domain] != epoch) {
    const std::size_t m = episode_->sources[domain].count();
    auto& order = cached_order_[domain];
    order.resize(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::string tag =
        "epoch-order/" + std::to_string(domain) + "/" + std::to_string(epoch);
    Rng rng(derive_seed(seed_, tag));
    rng.shuffle(order);
    cached_epoch_[domain] = epoch;
  }
  return cached_order_[domain];
}

Batch BatchSampler::next() {
  const std::size_t n = episode_->domains();
  const std::size_t h = episode_->sources[0].images.extent(2);
  const std::size_t w = episode_->sources[0].images.extent(3);
  const std::size_t px = h * w;

  Batch batch{Tensor({batch_size_, 1, h, w}), {}, {}};
  batch.class_labels.reserve(batch_size_);
  batch.domain_labels.reserve(batch_size_);

  std::size_t slot = 0;
  for (std::size_t d = 0; d < n; ++d) {
    const RotatedDomainSet& dom = episode_->sources[d];
    const std::size_t m = dom.count();
    // flat index of this domain's next unread sample across all epochs
    std::size_t cursor = position_ * per_domain_;
    for (std::size_t k = 0; k < per_domain_; ++k, ++cursor, ++slot) {
      const std::size_t epoch = cursor / m;
      const std::size_t within = cursor % m;
      const std::size_t idx = epoch_order(d, epoch)[within];
      std::memcpy(batch.images.ptr() + slot * px, dom.images.ptr() + idx * px,
                  px * sizeof(double));
      batch.class_labels.push_back(dom.labels[idx]);
      batch.domain_labels.push_back(dom.domain_label);
    }
  }
  ++position_;
  return batch;
}

void BatchSampler::seek(std::size_t iteration) { position_ = iteration; }

}  // namespace dgmix
