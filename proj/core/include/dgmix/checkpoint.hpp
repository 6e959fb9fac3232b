#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "dgmix/model.hpp"
#include "dgmix/optim.hpp"
#include "dgmix/tensorfile.hpp"

namespace dgmix {

inline constexpr std::string_view kCheckpointMagic = "DGMIXCKP";

/// A checkpoint holds the model configuration, the iteration counter, every
/// parameter, and every optimizer velocity, always at 64-bit. Loading is
/// bitwise-exact for 64-bit runs; 32-bit values round-trip exactly through
/// the wider format.
struct Checkpoint {
  ModelConfig config;
  std::uint64_t config_digest = 0;
  std::size_t iteration = 0;
  ModelParams params;
  SgdState state;
};

namespace detail {

inline Tensor encode_model_config(const ModelConfig& cfg, std::size_t iteration) {
  return Tensor::from({10}, {static_cast<double>(cfg.domains), static_cast<double>(cfg.classes),
                             static_cast<double>(cfg.conv1_channels),
                             static_cast<double>(cfg.conv2_channels),
                             static_cast<double>(cfg.fc1_units),
                             static_cast<double>(cfg.image_size), static_cast<double>(cfg.kernel),
                             cfg.head_scope == HeadScope::Fc1AndClassifier ? 1.0 : 0.0,
                             cfg.branch_convs == BranchConvs::Owned ? 1.0 : 0.0,
                             static_cast<double>(iteration)});
}

inline std::pair<ModelConfig, std::size_t> decode_model_config(const Tensor& meta,
                                                               const std::string& origin) {
  if (meta.shape != Shape{10}) {
    throw DataError(origin + ": malformed model description in checkpoint");
  }
  ModelConfig cfg;
  cfg.domains = static_cast<std::size_t>(meta[0]);
  cfg.classes = static_cast<std::size_t>(meta[1]);
  cfg.conv1_channels = static_cast<std::size_t>(meta[2]);
  cfg.conv2_channels = static_cast<std::size_t>(meta[3]);
  cfg.fc1_units = static_cast<std::size_t>(meta[4]);
  cfg.image_size = static_cast<std::size_t>(meta[5]);
  cfg.kernel = static_cast<std::size_t>(meta[6]);
  cfg.head_scope = meta[7] != 0.0 ? HeadScope::Fc1AndClassifier : HeadScope::ClassifierOnly;
  cfg.branch_convs = meta[8] != 0.0 ? BranchConvs::Owned : BranchConvs::Shared;
  cfg.validate();
  return {cfg, static_cast<std::size_t>(meta[9])};
}

}  // namespace detail

template <typename S>
void save_checkpoint(const ModelParamsT<S>& params, const SgdStateT<S>& state,
                     const ModelConfig& cfg, std::uint64_t config_digest, std::size_t iteration,
                     const std::string& path) {
  TensorFile file;
  file.digest = config_digest;
  file.entries.push_back({"meta/model", detail::encode_model_config(cfg, iteration)});
  for_each_param(params, [&](const std::string& name, const TensorT<S>& t) {
    file.entries.push_back({"param/" + name, t.template cast<double>()});
  });
  for_each_param(state.velocity, [&](const std::string& name, const TensorT<S>& t) {
    file.entries.push_back({"state/" + name, t.template cast<double>()});
  });
  write_tensor_file(path, kCheckpointMagic, file);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  const TensorFile file = read_tensor_file(path, kCheckpointMagic);
  const Tensor* meta = file.find("meta/model");
  if (!meta) throw DataError(path + ": checkpoint has no model description");

  Checkpoint ckpt;
  ckpt.config_digest = file.digest;
  std::tie(ckpt.config, ckpt.iteration) = detail::decode_model_config(*meta, path);

  // shape the containers from the config, then fill tensors by name
  ckpt.params = init_params(ckpt.config, 0);
  ckpt.state = make_sgd_state(ckpt.params);
  auto restore = [&](const std::string& prefix, ModelParams& dest) {
    for_each_param(dest, [&](const std::string& name, Tensor& t) {
      const Tensor* stored = file.find(prefix + name);
      if (!stored) throw DataError(path + ": checkpoint is missing tensor " + prefix + name);
      if (stored->shape != t.shape) {
        throw DataError(path + ": tensor " + prefix + name + " has shape " +
                        shape_str(stored->shape) + ", model needs " + shape_str(t.shape));
      }
      t = *stored;
    });
  };
  restore("param/", ckpt.params);
  restore("state/", ckpt.state.velocity);
  return ckpt;
}

}  // namespace dgmix
