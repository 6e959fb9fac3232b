#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dgmix/tensor.hpp"

namespace dgmix {

/// Unrotated digit corpus: images [M,1,28,28] with values in [0,1], labels 0..9.
struct RawDigitSet {
  Tensor images;
  std::vector<int> labels;

  std::size_t count() const { return labels.size(); }
};

/// Read an IDX image/label file pair. Headers are big-endian; magic 2051 with
/// dims [M,28,28] for images, 2049 with dims [M] for labels. Pixel bytes are
/// scaled by 1/255.
RawDigitSet load_idx(const std::string& image_path, const std::string& label_path);

/// Write a corpus back out as an IDX pair (inverse of load_idx, bytes rounded).
void write_idx(const RawDigitSet& set, const std::string& image_path,
               const std::string& label_path);

/// Draw exactly n_per_class examples of every class, order shuffled; fully
/// determined by seed. Throws DataError naming the class when one is short.
RawDigitSet sample_per_class(const RawDigitSet& set, std::size_t n_per_class, std::uint64_t seed);

/// Rotate one [1,H,W] image counterclockwise about the pixel-grid center,
/// bilinear interpolation, out-of-bounds sampled as 0.
Tensor rotate_image(const Tensor& image, double angle_deg);

/// One source or target domain: the base corpus rotated by a fixed angle.
struct RotatedDomainSet {
  int domain_label = 0;  // 1..N among the sources of an episode
  double angle = 0.0;    // degrees counterclockwise
  Tensor images;
  std::vector<int> labels;

  std::size_t count() const { return labels.size(); }
};

/// Rotate the whole base set once per angle. Domain labels follow list order
/// (1-based). Angles must be distinct.
std::vector<RotatedDomainSet> build_domains(const RawDigitSet& base,
                                            const std::vector<double>& angles);

/// Leave-one-domain-out split: one angle held out, the rest are sources
/// relabeled 1..N in ascending angle order.
struct Episode {
  std::vector<RotatedDomainSet> sources;
  RotatedDomainSet target;

  std::size_t domains() const { return sources.size(); }
};

Episode make_episode(std::vector<RotatedDomainSet> domains, double target_angle);

/// One training batch, assembled domain-major (all of domain 1, then 2, ...).
struct Batch {
  Tensor images;                  // [B,1,28,28]
  std::vector<int> class_labels;  // 0..9
  std::vector<int> domain_labels; // 1..N
};

/// Balanced batch stream: every batch holds exactly B/N samples per source
/// domain; each domain cycles through seeded reshuffles of its own indices, so
/// every sample appears once per cycle. The stream is a pure function of
/// (episode, batch size, seed, position), which makes mid-run resume exact.
class BatchSampler {
 public:
  BatchSampler(const Episode& episode, std::size_t batch_size, std::uint64_t seed);

  Batch next();

  /// Position the stream as if `iteration` batches had been drawn.
  void seek(std::size_t iteration);

  std::size_t per_domain() const { return per_domain_; }

 private:
  const std::vector<std::size_t>& epoch_order(std::size_t domain, std::size_t epoch);

  const Episode* episode_;
  std::size_t batch_size_;
  std::size_t per_domain_;
  std::uint64_t seed_;
  std::size_t position_ = 0;  // batches drawn so far
  // one cached epoch permutation per domain
  std::vector<std::size_t> cached_epoch_;
  std::vector<std::vector<std::size_t>> cached_order_;
};

}  // namespace dgmix
