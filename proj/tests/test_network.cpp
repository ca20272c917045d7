/*
 * (C) Copyright 2026 thalseg developers
 *
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "thalseg/network.hpp"

using namespace thalseg;

namespace {

Tensor4d random_probs(int n, int c, int h, int w, uint64_t seed, double lo = 0.15,
                      double hi = 0.85) {
  Tensor4d t(n, c, h, w);
  Rng rng(seed);
  for (auto& v : t.v) v = rng.uniform(lo, hi);
  return t;
}

Tensor4d random_onehot(int n, int c, int h, int w, uint64_t seed) {
  Rng rng(seed);
  std::vector<int32_t> labels(static_cast<size_t>(n) * h * w);
  for (auto& l : labels) l = static_cast<int32_t>(rng.below(static_cast<uint64_t>(c)));
  return one_hot<double>(labels, n, h, w, c);
}

// independent elementwise-sum oracle for the soft multi-class Dice loss
double dice_loss_oracle(const Tensor4d& p, const Tensor4d& q, double eps) {
  double loss = 0.0;
  const size_t plane = p.plane();
  for (int c = 0; c < p.c; ++c) {
    double num = 0, sp = 0, sq = 0;
    for (int n = 0; n < p.n; ++n)
      for (size_t i = 0; i < plane; ++i) {
        const double pv = p.sample(n)[static_cast<size_t>(c) * plane + i];
        const double qv = q.sample(n)[static_cast<size_t>(c) * plane + i];
        num += pv * qv;
        sp += pv;
        sq += qv;
      }
    loss += 1.0 - (2.0 * num + eps) / (sp + sq + eps);
  }
  return loss / p.c;
}

// independent elementwise oracle for the weighted cross-entropy sum
double wbce_oracle(const Tensor4d& p, const Tensor4d& q, const std::vector<double>& w) {
  double loss = 0.0;
  const size_t plane = p.plane();
  for (int c = 0; c < p.c; ++c)
    for (int n = 0; n < p.n; ++n)
      for (size_t i = 0; i < plane; ++i) {
        const double pv = std::min(1.0 - 1e-7,
                                   std::max(1e-7, p.sample(n)[static_cast<size_t>(c) * plane + i]));
        const double qv = q.sample(n)[static_cast<size_t>(c) * plane + i];
        loss -= w[static_cast<size_t>(c)] * (qv * std::log(pv) + (1 - qv) * std::log(1 - pv));
      }
  return loss;
}

}  // namespace

TEST_CASE("network spec validation") {
  NetworkSpec s;
  CHECK_NOTHROW(s.validate());
  s.num_classes = 1;
  CHECK_THROWS_AS(s.validate(), Error);
  s.num_classes = 13;
  s.depth = 1;
  CHECK_THROWS_AS(s.validate(), Error);
  s.depth = 4;
  s.kernel = 4;
  CHECK_THROWS_AS(s.validate(), Error);
  s.kernel = 3;
  CHECK_NOTHROW(s.validate());
  // json round trip
  const NetworkSpec r = NetworkSpec::from_json(s.to_json());
  CHECK(r.to_json() == s.to_json());
}

TEST_CASE("build is deterministic in the seed") {
  NetworkSpec spec;
  spec.num_classes = 2;
  spec.base_feature_maps = 20;
  spec.depth = 4;
  UnetF a(spec, 77);
  UnetF b(spec, 77);
  UnetF c(spec, 78);
  CHECK(a.parameter_checksum() == b.parameter_checksum());
  CHECK(a.parameter_checksum() != c.parameter_checksum());
}

TEST_CASE("forward on an all-zero 64x64 input yields finite maps in [0,1]") {
  NetworkSpec spec;
  spec.num_classes = 2;
  spec.base_feature_maps = 4;
  spec.depth = 3;
  UnetF net(spec, 1);
  Tensor4f x(1, 1, 64, 64);
  const Tensor4f probs = net.infer(x);
  CHECK(probs.n == 1);
  CHECK(probs.c == 2);
  CHECK(probs.h == 64);
  CHECK(probs.w == 64);
  for (float p : probs.v) {
    CHECK(std::isfinite(p));
    CHECK(p >= 0.0f);
    CHECK(p <= 1.0f);
  }
}

TEST_CASE("inputs not divisible by 2^depth are padded and cropped back") {
  NetworkSpec spec;
  spec.num_classes = 3;
  spec.base_feature_maps = 2;
  spec.depth = 3;
  UnetF net(spec, 5);
  Tensor4f x(2, 1, 13, 11);
  Rng rng(3);
  for (auto& v : x.v) v = static_cast<float>(rng.normal());
  const Tensor4f probs = net.infer(x);
  CHECK(probs.h == 13);
  CHECK(probs.w == 11);
  for (float p : probs.v) CHECK((p >= 0.0f && p <= 1.0f));
}

TEST_CASE("parameter count: analytic oracle and the width-squared scaling") {
  // independent per-layer count: resblock(cin,cout,k) =
  //   conv1 (cout*cin*k^2 + cout) + conv2 (cout*cout*k^2 + cout)
  //   + 2 BN (2*cout trainable each) [+ proj cout*cin + cout + BN]
  auto resblock_params = [](int64_t cin, int64_t cout, int64_t k) {
    int64_t n = cout * cin * k * k + cout + cout * cout * k * k + cout + 2 * (2 * cout);
    if (cin != cout) n += cout * cin + cout + 2 * cout;
    return n;
  };
  auto unet_params = [&](int64_t base, int64_t depth, int64_t classes, int64_t k) {
    int64_t total = resblock_params(1, base, k);
    for (int64_t l = 1; l < depth; ++l) total += resblock_params(base << (l - 1), base << l, k);
    for (int64_t l = 0; l + 1 < depth; ++l) {
      total += (base << (l + 1)) * (base << l) * 4 + (base << l);  // up-conv
      total += resblock_params(2 * (base << l), base << l, k);     // decoder
    }
    total += classes * base + classes;  // 1x1 head
    return total;
  };

  NetworkSpec spec;
  spec.num_classes = 13;
  spec.depth = 4;
  spec.base_feature_maps = 20;
  UnetF small(spec, 1);
  CHECK(small.parameter_count() == unet_params(20, 4, 13, 3));

  spec.base_feature_maps = 40;
  UnetF wide(spec, 1);
  CHECK(wide.parameter_count() == unet_params(40, 4, 13, 3));

  const double ratio = static_cast<double>(wide.parameter_count()) /
                       static_cast<double>(small.parameter_count());
  CHECK(ratio == doctest::Approx(4.0).epsilon(0.10));
}

TEST_CASE("dice loss: perfect overlap, disjoint classes and the sum oracle") {
  // perfect prediction -> loss bounded by the eps guard
  Tensor4d target = random_onehot(1, 2, 8, 8, 11);
  LossResult<double> perfect = dice_loss(target, target, 1.0);
  CHECK(perfect.value < 0.02);
  CHECK(perfect.value >= 0.0);

  // total miss on 2 classes -> loss near 1
  Tensor4d inverted = target;
  for (auto& v : inverted.v) v = 1.0 - v;
  LossResult<double> miss = dice_loss(inverted, target, 1.0);
  CHECK(miss.value > 0.97);
  CHECK(miss.value <= 1.0);

  // random prediction vs the independent summation oracle
  Tensor4d p = random_probs(2, 3, 8, 8, 21, 0.0, 1.0);
  Tensor4d q = random_onehot(2, 3, 8, 8, 22);
  LossResult<double> r = dice_loss(p, q, 1.0);
  CHECK(std::abs(r.value - dice_loss_oracle(p, q, 1.0)) < 1e-10);

  Tensor4d wrong(2, 3, 8, 9);
  CHECK_THROWS_AS(dice_loss(wrong, q, 1.0), Error);
}

TEST_CASE("dice loss is permutation-equivariant over classes and voxels") {
  Tensor4d p = random_probs(1, 3, 6, 6, 31, 0.0, 1.0);
  Tensor4d q = random_onehot(1, 3, 6, 6, 32);
  const double base = dice_loss(p, q, 1.0).value;

  // swap classes 0 and 2 in both
  Tensor4d p2 = p, q2 = q;
  const size_t plane = p.plane();
  for (size_t i = 0; i < plane; ++i) {
    std::swap(p2.v[i], p2.v[2 * plane + i]);
    std::swap(q2.v[i], q2.v[2 * plane + i]);
  }
  CHECK(dice_loss(p2, q2, 1.0).value == doctest::Approx(base).epsilon(1e-12));

  // apply the same voxel shuffle to both
  Rng rng(33);
  std::vector<size_t> perm(plane);
  for (size_t i = 0; i < plane; ++i) perm[i] = i;
  for (size_t i = plane; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  Tensor4d p3 = p, q3 = q;
  for (int c = 0; c < 3; ++c)
    for (size_t i = 0; i < plane; ++i) {
      p3.v[static_cast<size_t>(c) * plane + i] = p.v[static_cast<size_t>(c) * plane + perm[i]];
      q3.v[static_cast<size_t>(c) * plane + i] = q.v[static_cast<size_t>(c) * plane + perm[i]];
    }
  CHECK(dice_loss(p3, q3, 1.0).value == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("weighted cross-entropy: analytic values and the sum oracle") {
  // p == q exactly -> loss ~ 0 (post-clamp)
  Tensor4d q = random_onehot(1, 2, 4, 4, 41);
  LossResult<double> zero = weighted_bce_loss(q, q, {1.0, 1.0});
  CHECK(zero.value == doctest::Approx(0.0).epsilon(1e-5));
  CHECK(zero.value >= 0.0);

  // single voxel, w = 1, q = 1, p = 0.5 -> -log(0.5)
  Tensor4d p1(1, 1, 1, 1), q1(1, 1, 1, 1);
  p1.v[0] = 0.5;
  q1.v[0] = 1.0;
  CHECK(weighted_bce_loss(p1, q1, {1.0}).value ==
        doctest::Approx(0.6931471805599453).epsilon(1e-12));

  // random case vs the elementwise oracle
  Tensor4d p = random_probs(2, 3, 8, 8, 42);
  Tensor4d qq = random_onehot(2, 3, 8, 8, 43);
  const std::vector<double> w{0.5, 2.0, 1.25};
  CHECK(std::abs(weighted_bce_loss(p, qq, w).value - wbce_oracle(p, qq, w)) < 1e-10);

  // non-binary targets are rejected
  Tensor4d soft = qq;
  soft.v[5] = 0.5;
  CHECK_THROWS_AS(weighted_bce_loss(p, soft, w), Error);
  // weights must be positive and match the class count
  CHECK_THROWS_AS(weighted_bce_loss(p, qq, {1.0, 1.0}), Error);
  CHECK_THROWS_AS(weighted_bce_loss(p, qq, {1.0, -1.0, 1.0}), Error);
}

TEST_CASE("loss gradients match central finite differences") {
  Tensor4d p = random_probs(1, 3, 16, 16, 51);
  Tensor4d q = random_onehot(1, 3, 16, 16, 52);
  const std::vector<double> w{1.0, 2.0, 0.5};

  CHECK(gradient_check(LossKind::DICE, p, q, w) < 1e-4);
  CHECK(gradient_check(LossKind::WEIGHTED_BCE, p, q, w) < 1e-4);

  // degenerate constant prediction keeps gradients finite (smooth_eps guard)
  Tensor4d flat(1, 3, 8, 8);
  std::fill(flat.v.begin(), flat.v.end(), 0.5);
  Tensor4d empty(1, 3, 8, 8);  // all-background one-hot: class 0 only
  for (size_t i = 0; i < flat.plane(); ++i) empty.v[i] = 1.0;
  const LossResult<double> r = dice_loss(flat, empty, 1.0);
  for (double g : r.grad.v) CHECK(std::isfinite(g));
  CHECK(gradient_check(LossKind::DICE, flat, empty, w) < 1e-4);
}

TEST_CASE("whole-network backprop matches finite differences (double probe)") {
  NetworkSpec spec;
  spec.num_classes = 2;
  spec.base_feature_maps = 2;
  spec.depth = 2;
  spec.dropout_rate = 0.0;  // keep the loss deterministic for the probe
  Unet<double> net(spec, 9);

  Tensor4d x(2, 1, 6, 6);
  Rng rng(10);
  for (auto& v : x.v) v = rng.normal();
  Tensor4d target = random_onehot(2, 2, 6, 6, 12);

  auto loss_value = [&](Unet<double>& n) {
    Tensor4d probs = n.forward(x, nullptr);
    return dice_loss(probs, target, 1.0).value;
  };

  Tensor4d probs = net.forward(x, nullptr);
  LossResult<double> loss = dice_loss(probs, target, 1.0);
  net.zero_grads();
  net.backward(loss.grad);

  const double h = 1e-5;
  double max_rel = 0.0;
  int checked = 0;
  for (Param<double>* param : net.params()) {
    if (!param->trainable) continue;
    for (size_t i = 0; i < param->value.size(); i += 7) {  // sample every 7th entry
      const double orig = param->value[i];
      param->value[i] = orig + h;
      const double fp = loss_value(net);
      param->value[i] = orig - h;
      const double fm = loss_value(net);
      param->value[i] = orig;
      const double numeric = (fp - fm) / (2 * h);
      const double analytic = param->grad[i];
      const double rel = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      max_rel = std::max(max_rel, rel);
      ++checked;
    }
  }
  CHECK(checked > 100);
  CHECK(max_rel < 2e-4);
}

TEST_CASE("checkpoints reload to bitwise-equal forward outputs") {
  NetworkSpec spec;
  spec.num_classes = 13;
  spec.base_feature_maps = 3;
  spec.depth = 2;
  UnetF net(spec, 13);
  net.fingerprint().data_hash = 0xfeed;

  const auto path = std::filesystem::temp_directory_path() / "thalseg_ckpt_test.tsnet";
  Checkpoint::from_model(net).save(path);
  const Checkpoint loaded = Checkpoint::load(path);
  UnetF restored(spec, 999);  // different init, then overwritten
  loaded.apply_to(restored);
  CHECK(restored.parameter_checksum() == net.parameter_checksum());
  CHECK(restored.fingerprint().data_hash == 0xfeed);

  Tensor4f probe(1, 1, 12, 12);
  Rng rng(14);
  for (auto& v : probe.v) v = static_cast<float>(rng.normal());
  const Tensor4f a = net.infer(probe);
  const Tensor4f b = restored.infer(probe);
  CHECK(a.v == b.v);
  std::filesystem::remove(path);
}

TEST_CASE("initialize_from copies weights and keeps a fresh head on class change") {
  NetworkSpec s2;
  s2.num_classes = 2;
  s2.base_feature_maps = 3;
  s2.depth = 3;
  UnetF source(s2, 21);
  const Checkpoint src = Checkpoint::from_model(source);

  SUBCASE("same spec: forward outputs identical to the source") {
    UnetF target(s2, 22);
    initialize_from(target, src);
    Tensor4f probe(1, 1, 8, 8);
    Rng rng(23);
    for (auto& v : probe.v) v = static_cast<float>(rng.normal());
    CHECK(source.infer(probe).v == target.infer(probe).v);
    CHECK(!target.fingerprint().initialized_from.empty());
  }

  SUBCASE("2-class source into 13-class target: encoder/decoder copied, head fresh") {
    NetworkSpec s13 = s2;
    s13.num_classes = 13;
    UnetF target(s13, 24);
    const UnetF fresh(s13, 24);
    initialize_from(target, src);
    for (Param<float>* p : target.params()) {
      if (p->name.rfind("head.", 0) == 0) continue;
      int idx = -1;
      for (size_t i = 0; i < src.param_names.size(); ++i)
        if (src.param_names[i] == p->name) idx = static_cast<int>(i);
      REQUIRE(idx >= 0);
      CHECK(p->value == src.param_values[static_cast<size_t>(idx)]);
    }
    // the head kept its fresh initialization
    auto find_param = [](UnetF& net, const std::string& name) -> Param<float>* {
      for (Param<float>* p : net.params())
        if (p->name == name) return p;
      return nullptr;
    };
    UnetF fresh_copy(s13, 24);
    CHECK(find_param(target, "head.W")->value == find_param(fresh_copy, "head.W")->value);
  }

  SUBCASE("depth mismatch is rejected listing layers") {
    NetworkSpec deep = s2;
    deep.depth = 4;
    UnetF target(deep, 25);
    CHECK_THROWS_AS(initialize_from(target, src), Error);
  }
}

TEST_CASE("inference is deterministic and repeatable") {
  NetworkSpec spec;
  spec.num_classes = 2;
  spec.base_feature_maps = 2;
  spec.depth = 2;
  UnetF net(spec, 31);
  Tensor4f x(3, 1, 8, 8);
  Rng rng(32);
  for (auto& v : x.v) v = static_cast<float>(rng.normal());
  const Tensor4f a = net.infer(x);
  const Tensor4f b = net.infer(x);
  CHECK(a.v == b.v);
}
