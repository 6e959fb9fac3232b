#include <doctest.h>

#include <cmath>

#include "dgmix/model.hpp"
#include "dgmix/modelcheck.hpp"
#include "support.hpp"

using namespace dgmix;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

// Narrow channel counts at full 28x28 input, cheap enough to difference
// every parameter.
ModelConfig narrow28_config() {
  ModelConfig cfg;
  cfg.domains = 2;
  cfg.classes = 3;
  cfg.conv1_channels = 2;
  cfg.conv2_channels = 3;
  cfg.fc1_units = 8;
  cfg.validate();
  return cfg;
}

Tensor random_images(const ModelConfig& cfg, std::size_t batch, Rng& rng) {
  Tensor t({batch, 1, cfg.image_size, cfg.image_size});
  for (double& v : t.data) v = rng.uniform();
  return t;
}

void zero_heads(ModelParams& params) {
  for (HeadT<double>& h : params.heads) {
    h.fc1_w.fill(0);
    h.fc1_b.fill(0);
    h.cls_w.fill(0);
    h.cls_b.fill(0);
  }
}

}  // namespace

TEST_CASE("model config computes the classic geometry") {
  ModelConfig cfg = default_model_config(5);
  CHECK(cfg.conv1_out() == 24);
  CHECK(cfg.pool1_out() == 12);
  CHECK(cfg.conv2_out() == 8);
  CHECK(cfg.pool2_out() == 4);
  CHECK(cfg.flat_units() == 800);
  CHECK(cfg.head_input_units() == 500);

  ModelConfig micro = micro_model_config();
  CHECK(micro.flat_units() == 20);

  ModelConfig bad = cfg;
  bad.image_size = 15;  // 15-5+1 = 11 does not pool evenly
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.domains = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("parameter init is seed-deterministic with zero biases") {
  ModelConfig cfg = micro_model_config();
  ModelParams a = init_params(cfg, 5);
  ModelParams b = init_params(cfg, 5);
  ModelParams c = init_params(cfg, 6);
  CHECK(a.conv1_w.data == b.conv1_w.data);
  CHECK(a.heads[2].cls_w.data == b.heads[2].cls_w.data);
  CHECK(a.conv1_w.data != c.conv1_w.data);

  for (double v : a.conv1_b.data) CHECK(v == 0.0);
  for (double v : a.fc1_b.data) CHECK(v == 0.0);
  for (double v : a.branch.fc_w.data) CHECK(v == 0.0);
  for (double v : a.branch.fc_b.data) CHECK(v == 0.0);

  // uniform glorot bound for conv1: fan_in 1*3*3, fan_out 3*3*3
  const double bound = std::sqrt(6.0 / (9.0 + 27.0));
  for (double v : a.conv1_w.data) {
    CHECK(std::abs(v) <= bound);
  }
}

TEST_CASE("trunk maps a zero image to a zero feature vector") {
  ModelConfig cfg = micro_model_config();
  ModelParams params = init_params(cfg, 3);
  Tensor images({2, 1, cfg.image_size, cfg.image_size});
  auto [features, cache] = trunk_forward(images, params, cfg);
  CHECK(features.shape == Shape{2, cfg.fc1_units});
  for (double v : features.data) CHECK(v == 0.0);
}

TEST_CASE("trunk gives identical rows for identical images") {
  ModelConfig cfg = micro_model_config();
  ModelParams params = init_params(cfg, 4);
  Rng rng(9);
  Tensor one = random_images(cfg, 1, rng);
  Tensor batch({3, 1, cfg.image_size, cfg.image_size});
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t i = 0; i < one.size(); ++i) batch[b * one.size() + i] = one[i];
  auto [features, cache] = trunk_forward(batch, params, cfg);
  const std::size_t f_n = cfg.fc1_units;
  for (std::size_t b = 1; b < 3; ++b)
    for (std::size_t i = 0; i < f_n; ++i) CHECK(features[b * f_n + i] == features[i]);
}

TEST_CASE("trunk rejects images of the wrong shape") {
  ModelConfig cfg = micro_model_config();
  ModelParams params = init_params(cfg, 1);
  CHECK_THROWS_AS(trunk_forward(Tensor({2, 1, 28, 28}), params, cfg), ShapeError);
  CHECK_THROWS_AS(trunk_forward(Tensor({2, 3, 14, 14}), params, cfg), ShapeError);
}

TEST_CASE("identically initialized heads emit identical score slices") {
  ModelConfig cfg = micro_model_config();
  Rng rng(21);
  Tensor features = random_tensor({2, cfg.fc1_units}, rng);
  HeadT<double> h;
  h.cls_w = random_tensor({cfg.fc1_units, cfg.classes}, rng);
  h.cls_b = random_tensor({cfg.classes}, rng);
  std::vector<HeadT<double>> heads{h, h, h};
  auto [scores, cache] = heads_forward(features, heads, HeadScope::ClassifierOnly);
  CHECK(scores.shape == Shape{2, 3, cfg.classes});
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t j = 1; j < 3; ++j)
      for (std::size_t c = 0; c < cfg.classes; ++c) {
        CHECK(scores[(b * 3 + j) * cfg.classes + c] == scores[b * 3 * cfg.classes + c]);
      }
}

TEST_CASE("zero-initialized heads emit all-zero scores") {
  ModelConfig cfg = micro_model_config();
  ModelParams params = init_params(cfg, 2);
  zero_heads(params);
  Rng rng(22);
  Tensor features = random_tensor({3, cfg.fc1_units}, rng);
  auto [scores, cache] = heads_forward(features, params.heads, cfg.head_scope);
  for (double v : scores.data) CHECK(v == 0.0);
}

TEST_CASE("two heads equal two separate affine evaluations") {
  Rng rng(23);
  Tensor features = random_tensor({4, 6}, rng);
  std::vector<HeadT<double>> heads(2);
  for (HeadT<double>& h : heads) {
    h.cls_w = random_tensor({6, 5}, rng);
    h.cls_b = random_tensor({5}, rng);
  }
  auto [scores, cache] = heads_forward(features, heads, HeadScope::ClassifierOnly);
  for (std::size_t j = 0; j < 2; ++j) {
    Tensor direct = affine(features, heads[j].cls_w, heads[j].cls_b);
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t c = 0; c < 5; ++c) {
        CHECK(scores[(b * 2 + j) * 5 + c] == direct[b * 5 + c]);
      }
  }
}

TEST_CASE("zero-initialized branch fc yields uniform weights") {
  ModelConfig cfg = micro_model_config();
  ModelParams params = init_params(cfg, 7);  // branch fc zero by default
  Rng rng(24);
  Tensor images = random_images(cfg, 4, rng);
  auto [w, cache] = domain_branch_forward(images, params, cfg);
  CHECK(w.shape == Shape{4, cfg.domains});
  for (double v : w.data) CHECK(v == 1.0 / 3.0);
}

TEST_CASE("branch weights stay on the simplex") {
  ModelConfig cfg = micro_model_config();
  ModelParams params = init_params(cfg, 8);
  Rng rng(25);
  for (double& v : params.branch.fc_w.data) v = rng.uniform(-2.0, 2.0);
  for (double& v : params.branch.fc_b.data) v = rng.uniform(-2.0, 2.0);
  Tensor images = random_images(cfg, 6, rng);
  auto [w, cache] = domain_branch_forward(images, params, cfg);
  for (std::size_t b = 0; b < 6; ++b) {
    double sum = 0;
    for (std::size_t j = 0; j < cfg.domains; ++j) {
      const double v = w[b * cfg.domains + j];
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      sum += v;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("standalone branch matches the fused forward bitwise") {
  ModelConfig cfg = micro_model_config();
  ModelParams params = init_params(cfg, 9);
  Rng rng(26);
  for (double& v : params.branch.fc_w.data) v = rng.uniform(-0.5, 0.5);
  Tensor images = random_images(cfg, 3, rng);
  auto [w_alone, c1] = domain_branch_forward(images, params, cfg);
  auto [z, cache] = model_forward(images, params, cfg, 0.25, MixPlan::blend());
  CHECK(w_alone.data == cache.w.data);
}

TEST_CASE("mix with one-hot weights at alpha 0 selects a single head") {
  Rng rng(31);
  Tensor scores = random_tensor({2, 3, 4}, rng);
  Tensor w = Tensor::from({2, 3}, {1, 0, 0, 1, 0, 0});
  Tensor z = mix(scores, w, 0.0, MixPlan::blend());
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 4; ++c) {
      CHECK(z[b * 4 + c] == scores[(b * 3 + 0) * 4 + c]);
    }
}

TEST_CASE("mix at alpha 1 averages heads regardless of weights") {
  Tensor scores = Tensor::from({1, 2, 2}, {1, 0, 0, 1});
  Tensor w = Tensor::from({1, 2}, {0.3, 0.7});
  Tensor z = mix(scores, w, 1.0, MixPlan::blend());
  CHECK(z[0] == 0.5);
  CHECK(z[1] == 0.5);
}

TEST_CASE("mix blends by direct arithmetic at alpha 0.25") {
  Tensor scores = Tensor::from({1, 2, 2}, {4, 0, 0, 4});
  Tensor w = Tensor::from({1, 2}, {1, 0});
  Tensor z = mix(scores, w, 0.25, MixPlan::blend());
  CHECK(z[0] == 3.5);
  CHECK(z[1] == 0.5);
}

TEST_CASE("mix endpoints and switch branches obey the expectation identity") {
  Rng rng(32);
  Tensor scores = random_tensor({5, 4, 6}, rng);
  Tensor wl = random_tensor({5, 4}, rng, 0.0, 1.0);
  // normalize rows so the weights are plausible; exactness does not need it
  for (std::size_t b = 0; b < 5; ++b) {
    double sum = 0;
    for (std::size_t j = 0; j < 4; ++j) sum += wl[b * 4 + j];
    for (std::size_t j = 0; j < 4; ++j) wl[b * 4 + j] /= sum;
  }
  Tensor zw = mix(scores, wl, 0.4, MixPlan::switched({0, 0, 0, 0, 0}));
  Tensor zu = mix(scores, wl, 0.4, MixPlan::switched({1, 1, 1, 1, 1}));
  CHECK(mix(scores, wl, 0.0, MixPlan::blend()).data == zw.data);
  CHECK(mix(scores, wl, 1.0, MixPlan::blend()).data == zu.data);

  const double alpha = 0.4;
  Tensor zd = mix(scores, wl, alpha, MixPlan::blend());
  for (std::size_t i = 0; i < zd.size(); ++i) {
    CHECK(zd[i] == alpha * zu[i] + (1.0 - alpha) * zw[i]);
  }

  // mixed flags: each row matches its own branch
  Tensor zm = mix(scores, wl, alpha, MixPlan::switched({1, 0, 1, 0, 0}));
  for (std::size_t c = 0; c < 6; ++c) {
    CHECK(zm[0 * 6 + c] == zu[0 * 6 + c]);
    CHECK(zm[1 * 6 + c] == zw[1 * 6 + c]);
  }
}

TEST_CASE("mix validates alpha and the switch plan") {
  Tensor scores({2, 3, 4});
  Tensor w({2, 3});
  CHECK_THROWS_AS(mix(scores, w, -0.1, MixPlan::blend()), ValidationError);
  CHECK_THROWS_AS(mix(scores, w, 1.5, MixPlan::blend()), ValidationError);
  CHECK_THROWS_AS(mix(scores, w, 0.5, MixPlan::switched({1})), UsageError);
  CHECK_THROWS_AS(mix(scores, Tensor({2, 2}), 0.5, MixPlan::blend()), ShapeError);
}

TEST_CASE("switch draws are exact at the endpoints") {
  Rng rng(33);
  auto zeros = draw_switches(1000, 0.0, rng);
  auto ones = draw_switches(1000, 1.0, rng);
  for (std::size_t i = 0; i < 1000; ++i) {
    CHECK(zeros[i] == 0);
    CHECK(ones[i] == 1);
  }
  auto quarter = draw_switches(4000, 0.25, rng);
  std::size_t count = 0;
  for (auto f : quarter) count += f;
  CHECK(count > 800);
  CHECK(count < 1200);
}

TEST_CASE("indicator weights build one-hot rows") {
  Tensor w = indicator_weights({1, 3}, 3);
  CHECK(w.data == std::vector<double>{1, 0, 0, 0, 0, 1});
  Tensor single = indicator_weights({1, 1, 1}, 1);
  CHECK(single.data == std::vector<double>{1, 1, 1});
  CHECK_THROWS_AS(indicator_weights({0}, 3), ValidationError);
  CHECK_THROWS_AS(indicator_weights({4}, 3), ValidationError);
}

TEST_CASE("indicator weights at alpha 0 silence other-domain head gradients") {
  ModelConfig cfg = micro_model_config();
  ModelParams params = init_params(cfg, 11);
  Rng rng(34);
  const std::size_t batch = 4;
  Tensor features = random_tensor({batch, cfg.fc1_units}, rng);
  auto [scores, hcache] = heads_forward(features, params.heads, cfg.head_scope);

  // domain 2 appears nowhere in the batch
  const std::vector<int> domains{1, 3, 3, 1};
  Tensor w = indicator_weights(domains, cfg.domains);
  Tensor z = mix(scores, w, 0.0, MixPlan::blend());

  std::vector<int> labels;
  for (std::size_t b = 0; b < batch; ++b) labels.push_back(static_cast<int>(rng.below(cfg.classes)));
  Tensor dz = softmax_ce_grad(softmax_rows(z), one_hot(labels, cfg.classes));
  auto [gs, gw] = mix_backward(scores, w, 0.0, MixPlan::blend(), dz);

  // per-sample score gradients vanish for every head but the sample's own
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < cfg.domains; ++j) {
      if (j + 1 == static_cast<std::size_t>(domains[b])) continue;
      for (std::size_t c = 0; c < cfg.classes; ++c) {
        CHECK(gs[(b * cfg.domains + j) * cfg.classes + c] == 0.0);
      }
    }

  // and the parameter gradients of the absent head are exactly zero
  for (std::size_t j = 0; j < cfg.domains; ++j) {
    Tensor slice({batch, cfg.classes});
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t c = 0; c < cfg.classes; ++c)
        slice[b * cfg.classes + c] = gs[(b * cfg.domains + j) * cfg.classes + c];
    auto [out, acache] = affine_forward(features, params.heads[j].cls_w, params.heads[j].cls_b);
    LayerGrads g = affine_backward(acache, slice);
    bool all_zero = true;
    for (const Tensor& t : g.grad_params)
      for (double v : t.data) all_zero = all_zero && v == 0.0;
    CHECK(all_zero == (j == 1));  // head 2 (index 1) saw no samples
  }
}

TEST_CASE("loss at lambda 0 is the classification term alone") {
  Rng rng(41);
  Tensor z = random_tensor({3, 4}, rng);
  Tensor w = Tensor({3, 2}, 0.5);
  Tensor y = one_hot({0, 1, 2}, 4);
  Tensor d = indicator_weights({1, 2, 2}, 2);
  LossParts parts = total_loss(z, y, w, d, 0.0);
  CHECK(parts.total == parts.cls);
  CHECK(parts.total == cross_entropy(softmax_rows(z), y));
  CHECK_THROWS_AS(total_loss(z, y, w, d, -0.5), ValidationError);
}

TEST_CASE("zero-initialized heads and branch start at the uniform loss") {
  ModelConfig cfg = default_model_config(5);
  ModelParams params = init_params(cfg, 12);
  zero_heads(params);
  Rng rng(42);
  Tensor images = random_images(cfg, 4, rng);
  std::vector<int> domains{1, 2, 4, 5};
  auto [z, cache] = model_forward(images, params, cfg, 0.25, MixPlan::blend());
  LossParts parts = total_loss(z, one_hot({0, 3, 7, 9}, 10), cache.w,
                               indicator_weights(domains, 5), 0.5);
  const double expect = std::log(10.0) + 0.5 * std::log(5.0);
  CHECK(std::abs(parts.total - expect) < 1e-9);
  CHECK(std::abs(expect - 3.107304) < 5e-7);
}

TEST_CASE("loss decomposes into its two cross-entropies") {
  ModelConfig cfg = micro_model_config();
  Rng rng(43);
  Tensor z = random_tensor({5, cfg.classes}, rng);
  Tensor logits = random_tensor({5, cfg.domains}, rng);
  Tensor w = softmax_rows(logits);
  std::vector<int> ys, ds;
  for (int b = 0; b < 5; ++b) {
    ys.push_back(static_cast<int>(rng.below(cfg.classes)));
    ds.push_back(1 + static_cast<int>(rng.below(cfg.domains)));
  }
  Tensor y = one_hot(ys, cfg.classes);
  Tensor d = indicator_weights(ds, cfg.domains);
  LossParts parts = total_loss(z, y, w, d, 0.7);

  // per-sample oracle, means taken the long way
  Tensor p = softmax_rows(z);
  double cls = 0, dom = 0;
  for (std::size_t b = 0; b < 5; ++b) {
    cls += -std::log(p[b * cfg.classes + static_cast<std::size_t>(ys[b])]);
    dom += -std::log(w[b * cfg.domains + static_cast<std::size_t>(ds[b] - 1)]);
  }
  cls /= 5;
  dom /= 5;
  CHECK(std::abs(parts.cls - cls) <= 1e-12);
  CHECK(std::abs(parts.dom - dom) <= 1e-12);
  CHECK(std::abs(parts.total - (cls + 0.7 * dom)) <= 1e-12);
}

TEST_CASE("forward replay and duplicated samples are stable") {
  ModelConfig cfg = micro_model_config();
  ModelParams params = init_params(cfg, 13);
  Rng rng(44);
  for (double& v : params.branch.fc_w.data) v = rng.uniform(-0.5, 0.5);
  Tensor images = random_images(cfg, 2, rng);
  MixPlan plan = MixPlan::switched({0, 1});
  auto [z1, c1] = model_forward(images, params, cfg, 0.25, plan);
  auto [z2, c2] = model_forward(images, params, cfg, 0.25, plan);
  CHECK(z1.data == z2.data);

  // append a copy of sample 0; its row must not move
  Tensor bigger({3, 1, cfg.image_size, cfg.image_size});
  const std::size_t px = cfg.image_size * cfg.image_size;
  for (std::size_t i = 0; i < 2 * px; ++i) bigger[i] = images[i];
  for (std::size_t i = 0; i < px; ++i) bigger[2 * px + i] = images[i];
  auto [z3, c3] = model_forward(bigger, params, cfg, 0.25, MixPlan::switched({0, 1, 0}));
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    CHECK(z3[c] == z1[c]);
    CHECK(z3[2 * cfg.classes + c] == z1[c]);
  }
  for (std::size_t j = 0; j < cfg.domains; ++j) {
    CHECK(c3.w[j] == c1.w[j]);
    CHECK(c3.w[2 * cfg.domains + j] == c1.w[j]);
  }
}

TEST_CASE("model backward validates its arguments") {
  ModelConfig cfg = micro_model_config();
  ModelParams params = init_params(cfg, 14);
  Rng rng(45);
  Tensor images = random_images(cfg, 2, rng);
  auto [z, cache] = model_forward(images, params, cfg, 0.25, MixPlan::blend());
  Tensor y = one_hot({0, 1, 2}, cfg.classes);           // batch 3, cache holds 2
  Tensor d = indicator_weights({1, 2, 3}, cfg.domains);
  CHECK_THROWS_AS(model_backward(cache, params, y, d, 0.5), UsageError);
  Tensor y2 = one_hot({0, 1}, cfg.classes);
  Tensor d2 = indicator_weights({1, 2}, cfg.domains);
  CHECK_THROWS_AS(model_backward(cache, params, y2, d2, -1.0), ValidationError);
}

TEST_CASE("full-model gradients match finite differences across seeds") {
  for (std::uint64_t seed : {17, 18, 19}) {
    ModelCheckSetup setup;
    setup.seed = seed;
    GradCheckReport rep = model_grad_check(setup);
    INFO("seed ", seed, " worst ", rep.worst_param, "[", rep.worst_index, "]");
    CHECK(rep.max_rel_err < 1e-4);
  }
}

TEST_CASE("full-model gradients hold under per-sample switching") {
  ModelCheckSetup setup;
  setup.switched = true;
  setup.seed = 27;
  setup.batch = 4;  // mixed draws more likely
  GradCheckReport rep = model_grad_check(setup);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("full-model gradients hold with per-head fc1 layers") {
  ModelCheckSetup setup;
  setup.config.head_scope = HeadScope::Fc1AndClassifier;
  setup.seed = 28;
  GradCheckReport rep = model_grad_check(setup);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("full-model gradients hold with branch-owned convolutions") {
  ModelCheckSetup setup;
  setup.config.branch_convs = BranchConvs::Owned;
  setup.seed = 29;
  GradCheckReport rep = model_grad_check(setup);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("full-model gradients hold on 28x28 input") {
  ModelCheckSetup setup;
  setup.config = narrow28_config();
  setup.seed = 30;
  GradCheckReport rep = model_grad_check(setup);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("uniform switches with lambda 0 leave the branch fc untouched") {
  ModelConfig cfg = micro_model_config();
  ModelParams params = init_params(cfg, 15);
  Rng rng(46);
  for (double& v : params.branch.fc_w.data) v = rng.uniform(-0.5, 0.5);
  Tensor images = random_images(cfg, 3, rng);
  Tensor y = one_hot({0, 1, 2}, cfg.classes);
  Tensor d = indicator_weights({1, 2, 3}, cfg.domains);

  auto [z, cache] = model_forward(images, params, cfg, 0.5, MixPlan::switched({1, 1, 1}));
  ModelParams grads = model_backward(cache, params, y, d, 0.0);
  for (double v : grads.branch.fc_w.data) CHECK(v == 0.0);
  for (double v : grads.branch.fc_b.data) CHECK(v == 0.0);

  // flipping one sample to the weighted branch re-engages the fc gradient
  auto [z2, cache2] = model_forward(images, params, cfg, 0.5, MixPlan::switched({1, 0, 1}));
  ModelParams grads2 = model_backward(cache2, params, y, d, 0.0);
  double mag = 0;
  for (double v : grads2.branch.fc_w.data) mag += std::abs(v);
  CHECK(mag > 0.0);
}

TEST_CASE("predictions follow the deterministic blend argmax") {
  ModelConfig cfg = micro_model_config();
  ModelParams params = init_params(cfg, 16);
  Rng rng(47);
  for (double& v : params.branch.fc_w.data) v = rng.uniform(-0.5, 0.5);
  Tensor images = random_images(cfg, 7, rng);
  Prediction pred = predict(images, params, cfg, 0.25);
  auto [z, cache] = model_forward(images, params, cfg, 0.25, MixPlan::blend());
  for (std::size_t b = 0; b < 7; ++b) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cfg.classes; ++c)
      if (z[b * cfg.classes + c] > z[b * cfg.classes + best]) best = c;
    CHECK(pred.labels[b] == static_cast<int>(best));
  }
  CHECK(pred.w.data == cache.w.data);

  Prediction chunked = predict(images, params, cfg, 0.25, 3);
  CHECK(chunked.labels == pred.labels);
  CHECK(chunked.w.data == pred.w.data);
}

TEST_CASE("zero-score ties predict the lowest class") {
  ModelConfig cfg = micro_model_config();
  ModelParams params = init_params(cfg, 17);
  zero_heads(params);
  Rng rng(48);
  Tensor images = random_images(cfg, 4, rng);
  Prediction pred = predict(images, params, cfg, 0.25);
  for (int label : pred.labels) CHECK(label == 0);
}

TEST_CASE("at alpha 1 predictions ignore the branch") {
  ModelConfig cfg = micro_model_config();
  ModelParams params = init_params(cfg, 18);
  Rng rng(49);
  Tensor images = random_images(cfg, 5, rng);
  Prediction before = predict(images, params, cfg, 1.0);
  for (double& v : params.branch.fc_w.data) v = rng.uniform(-3.0, 3.0);
  for (double& v : params.branch.fc_b.data) v = rng.uniform(-3.0, 3.0);
  Prediction after = predict(images, params, cfg, 1.0);
  CHECK(before.labels == after.labels);
  CHECK(before.w.data != after.w.data);  // the weights themselves did move
}

TEST_CASE("a dominant branch weight routes prediction to that head") {
  ModelConfig cfg = micro_model_config();
  ModelParams params = init_params(cfg, 19);
  params.branch.fc_b[1] = 200.0;  // domain 2 wins by ~e^200
  Rng rng(50);
  Tensor images = random_images(cfg, 5, rng);
  Prediction pred = predict(images, params, cfg, 0.0);
  auto [features, tcache] = trunk_forward(images, params, cfg);
  auto [scores, hcache] = heads_forward(features, params.heads, cfg.head_scope);
  for (std::size_t b = 0; b < 5; ++b) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cfg.classes; ++c) {
      if (scores[(b * cfg.domains + 1) * cfg.classes + c] >
          scores[(b * cfg.domains + 1) * cfg.classes + best]) {
        best = c;
      }
    }
    CHECK(pred.labels[b] == static_cast<int>(best));
  }
}

TEST_CASE("adding a constant to every head leaves the argmax alone") {
  ModelConfig cfg = micro_model_config();
  ModelParams params = init_params(cfg, 20);
  Rng rng(51);
  for (double& v : params.branch.fc_w.data) v = rng.uniform(-0.5, 0.5);
  Tensor images = random_images(cfg, 6, rng);
  Prediction before = predict(images, params, cfg, 0.25);
  for (HeadT<double>& h : params.heads)
    for (double& v : h.cls_b.data) v += 0.75;
  Prediction after = predict(images, params, cfg, 0.25);
  CHECK(before.labels == after.labels);
}
