#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "enclab/encoder.hpp"
#include "enclab/gradcheck.hpp"
#include "enclab/nn_ops.hpp"
#include "enclab/packing.hpp"
#include "enclab/rng.hpp"

using namespace enclab;
using namespace enclab::ops;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0,
                     bool requires_grad = false) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (int64_t i = 0; i < t.numel(); ++i)
    t.data()[i] = static_cast<float>(rng.normal(0.0, scale));
  return t;
}

ModelConfig toy_config() {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.d_model = 64;
  cfg.n_heads = 2;
  cfg.vocab_size = 120;
  cfg.max_positions = 64;
  return cfg;
}

PackedBatch single_row(std::vector<int32_t> ids) {
  PackedBatch row;
  const int64_t n = static_cast<int64_t>(ids.size());
  row.token_ids = std::move(ids);
  for (int64_t i = 0; i < n; ++i) {
    row.positions.push_back(static_cast<int32_t>(i));
    row.seq_ids.push_back(0);
    row.mlm_labels.push_back(kIgnoreLabel);
  }
  row.mask_mode = PackMode::Padded;
  return row;
}

}  // namespace

TEST_CASE("rms_norm of a constant unit vector is itself") {
  Tensor x = Tensor::from_data({4}, {1, 1, 1, 1});
  Tensor gain = Tensor::full({4}, 1.0f);
  Tensor y = rms_norm(x, gain, 0.0f);
  for (int i = 0; i < 4; ++i) CHECK(y.data()[i] == doctest::Approx(1.0));
}

TEST_CASE("rms_norm of zero input is zero") {
  Tensor x = Tensor::zeros({6});
  Tensor gain = Tensor::full({6}, 1.0f);
  Tensor y = rms_norm(x, gain, 1e-6f);
  for (int i = 0; i < 6; ++i) CHECK(y.data()[i] == 0.0f);
}

TEST_CASE("rms_norm hand case [3,4]") {
  Tensor x = Tensor::from_data({2}, {3, 4});
  Tensor gain = Tensor::full({2}, 1.0f);
  Tensor y = rms_norm(x, gain, 0.0f);
  // RMS = sqrt((9+16)/2) = sqrt(12.5)
  CHECK(y.data()[0] == doctest::Approx(3.0 / std::sqrt(12.5)).epsilon(1e-5));
  CHECK(y.data()[1] == doctest::Approx(4.0 / std::sqrt(12.5)).epsilon(1e-5));
  CHECK(y.data()[0] == doctest::Approx(0.8485).epsilon(1e-3));
  CHECK(y.data()[1] == doctest::Approx(1.1314).epsilon(1e-3));
}

TEST_CASE("rms_norm output has unit RMS under unit gain") {
  Rng rng(41);
  Tensor x = random_tensor({5, 16}, rng, 2.0);
  Tensor gain = Tensor::full({16}, 1.0f);
  Tensor y = rms_norm(x, gain, 1e-12f);
  for (int64_t r = 0; r < 5; ++r) {
    double ss = 0.0;
    for (int64_t j = 0; j < 16; ++j) {
      double v = y.data()[r * 16 + j];
      ss += v * v;
    }
    CHECK(std::sqrt(ss / 16.0) == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("rms_norm gradients pass the finite-difference check") {
  Rng rng(42);
  Tensor x = random_tensor({3, 8}, rng, 1.0, true);
  Tensor gain = random_tensor({8}, rng, 0.5, true);
  Tensor probe = random_tensor({3, 8}, rng);
  auto f = [&]() { return sum(mul(rms_norm(x, gain, 1e-5f), probe)); };
  CHECK(grad_check(f, x, 1e-3f) < 1e-3);
  CHECK(grad_check(f, gain, 1e-3f) < 1e-3);
}

TEST_CASE("layer_norm gradients pass the finite-difference check") {
  Rng rng(43);
  Tensor x = random_tensor({3, 8}, rng, 1.0, true);
  Tensor gain = random_tensor({8}, rng, 0.5, true);
  Tensor probe = random_tensor({3, 8}, rng);
  auto f = [&]() { return sum(mul(layer_norm(x, gain, 1e-5f), probe)); };
  CHECK(grad_check(f, x, 1e-3f) < 1e-3);
  CHECK(grad_check(f, gain, 1e-3f) < 1e-3);
}

TEST_CASE("rope at position zero is the identity") {
  Rng rng(44);
  Tensor x = random_tensor({1, 2, 8}, rng);
  Tensor y = rope_apply(x, {0}, 10000.0);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("rope single 2-D rotation") {
  Tensor x = Tensor::from_data({1, 1, 2}, {1, 0});
  Tensor y = rope_apply(x, {1}, 10000.0);
  // first band has frequency theta^0 = 1, so angle is 1 radian
  CHECK(y.data()[0] == doctest::Approx(std::cos(1.0)).epsilon(1e-6));
  CHECK(y.data()[1] == doctest::Approx(std::sin(1.0)).epsilon(1e-6));
}

TEST_CASE("rope rejects odd head dimension") {
  Tensor x = Tensor::zeros({1, 1, 3});
  CHECK_THROWS_AS(rope_apply(x, {0}, 10000.0), std::invalid_argument);
}

TEST_CASE("rope shift property: dots depend only on relative offset") {
  Rng rng(45);
  const double theta = 10000.0;
  for (int deltas : {1, 7, 100}) {
    Tensor q = random_tensor({1, 1, 16}, rng);
    Tensor k = random_tensor({1, 1, 16}, rng);
    const int m = 3, n = 11;
    auto dot = [&](const Tensor& a, const Tensor& b) {
      double acc = 0.0;
      for (int64_t i = 0; i < a.numel(); ++i)
        acc += double(a.data()[i]) * b.data()[i];
      return acc;
    };
    double base = dot(rope_apply(q, {m}, theta), rope_apply(k, {n}, theta));
    double shifted = dot(rope_apply(q, {m + deltas}, theta),
                         rope_apply(k, {n + deltas}, theta));
    CHECK(std::abs(base - shifted) < 1e-5);
  }
}

TEST_CASE("rope scaling at scale 1 is a no-op and keeps the shift property") {
  Rng rng(46);
  RopeScaling scaling;
  scaling.scale = 1.0;
  scaling.original_max_positions = 64;
  Tensor x = random_tensor({2, 1, 8}, rng);
  Tensor plain = rope_apply(x, {5, 9}, 10000.0);
  Tensor scaled = rope_apply(x, {5, 9}, 10000.0, scaling);
  for (int64_t i = 0; i < x.numel(); ++i)
    CHECK(plain.data()[i] == scaled.data()[i]);
}

TEST_CASE("rope scaling interpolates the slow bands") {
  RopeScaling scaling;
  scaling.scale = 4.0;
  scaling.original_max_positions = 1024;
  auto plain = rope_frequencies(64, 10000.0, {});
  auto scaled = rope_frequencies(64, 10000.0, scaling);
  // fastest band rotates ~160 times across the original context: untouched
  CHECK(scaled[0] == doctest::Approx(plain[0]));
  // slowest band completes well under one rotation: interpolated by 1/scale
  CHECK(scaled.back() == doctest::Approx(plain.back() / 4.0));
}

TEST_CASE("swiglu_ffn zero input gives zero output") {
  Rng rng(47);
  Tensor w1 = random_tensor({6, 10}, rng);
  Tensor w2 = random_tensor({10, 6}, rng);
  Tensor w3 = random_tensor({6, 10}, rng);
  Tensor x = Tensor::zeros({2, 6});
  Tensor y = swiglu_ffn(x, w1, w2, w3);
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == 0.0f);
}

TEST_CASE("swiglu_ffn scalar hand case") {
  Tensor w1 = Tensor::full({1, 1}, 1.0f);
  Tensor w2 = Tensor::full({1, 1}, 1.0f);
  Tensor w3 = Tensor::full({1, 1}, 1.0f);
  Tensor x = Tensor::full({1, 1}, 2.0f);
  Tensor y = swiglu_ffn(x, w1, w2, w3);
  // silu(2) * 2 = 2 * sigmoid(2) * 2, sigmoid(2) = 0.880797
  CHECK(y.data()[0] == doctest::Approx(3.5232).epsilon(1e-4));
}

TEST_CASE("swiglu_ffn gradients pass the finite-difference check") {
  Rng rng(48);
  Tensor w1 = random_tensor({5, 8}, rng, 0.5, true);
  Tensor w2 = random_tensor({8, 5}, rng, 0.5, true);
  Tensor w3 = random_tensor({5, 8}, rng, 0.5, true);
  Tensor x = random_tensor({3, 5}, rng, 1.0, true);
  Tensor probe = random_tensor({3, 5}, rng);
  auto f = [&]() { return sum(mul(swiglu_ffn(x, w1, w2, w3), probe)); };
  CHECK(grad_check(f, x, 1e-3f) < 1e-3);
  CHECK(grad_check(f, w1, 1e-3f) < 1e-3);
  CHECK(grad_check(f, w2, 1e-3f) < 1e-3);
  CHECK(grad_check(f, w3, 1e-3f) < 1e-3);
}

TEST_CASE("ffn_hidden_size values") {
  CHECK(ffn_hidden_size(768) == 2048);
  CHECK(ffn_hidden_size(1056) == 2816);
  CHECK(ffn_hidden_size(64) == 192);
}

TEST_CASE("attention with one position returns V") {
  Rng rng(49);
  Tensor q = random_tensor({1, 2, 4}, rng);
  Tensor k = random_tensor({1, 2, 4}, rng);
  Tensor v = random_tensor({1, 2, 4}, rng);
  Tensor o = attention(q, k, v, MaskDescriptor::full(1));
  for (int64_t i = 0; i < v.numel(); ++i)
    CHECK(o.data()[i] == doctest::Approx(v.data()[i]).epsilon(1e-6));
}

TEST_CASE("attention with self-only mask returns V") {
  Rng rng(50);
  const int64_t n = 4;
  Tensor q = random_tensor({n, 1, 6}, rng);
  Tensor k = random_tensor({n, 1, 6}, rng);
  Tensor v = random_tensor({n, 1, 6}, rng);
  std::vector<uint8_t> allowed(n * n, 0);
  for (int64_t i = 0; i < n; ++i) allowed[i * n + i] = 1;
  Tensor o = attention(q, k, v, MaskDescriptor::custom(n, std::move(allowed)));
  for (int64_t i = 0; i < v.numel(); ++i)
    CHECK(o.data()[i] == doctest::Approx(v.data()[i]).epsilon(1e-5));
}

TEST_CASE("attention matches 64-bit brute-force oracle") {
  Rng rng(51);
  const int64_t seq = 5, heads = 2, dh = 4;
  Tensor q = random_tensor({seq, heads, dh}, rng);
  Tensor k = random_tensor({seq, heads, dh}, rng);
  Tensor v = random_tensor({seq, heads, dh}, rng);
  Tensor o = attention(q, k, v, MaskDescriptor::full(seq));

  for (int64_t h = 0; h < heads; ++h) {
    std::vector<double> scores(seq * seq);
    for (int64_t i = 0; i < seq; ++i)
      for (int64_t j = 0; j < seq; ++j) {
        double dot = 0.0;
        for (int64_t c = 0; c < dh; ++c)
          dot += double(q.data()[(i * heads + h) * dh + c]) *
                 k.data()[(j * heads + h) * dh + c];
        scores[i * seq + j] = dot / std::sqrt(double(dh));
      }
    for (int64_t i = 0; i < seq; ++i) {
      double mx = -1e300;
      for (int64_t j = 0; j < seq; ++j) mx = std::max(mx, scores[i * seq + j]);
      double z = 0.0;
      for (int64_t j = 0; j < seq; ++j) z += std::exp(scores[i * seq + j] - mx);
      for (int64_t c = 0; c < dh; ++c) {
        double want = 0.0;
        for (int64_t j = 0; j < seq; ++j)
          want += std::exp(scores[i * seq + j] - mx) / z *
                  v.data()[(j * heads + h) * dh + c];
        CHECK(std::abs(double(o.data()[(i * heads + h) * dh + c]) - want) < 1e-5);
      }
    }
  }
}

TEST_CASE("attention gradients pass the finite-difference check") {
  Rng rng(52);
  const int64_t seq = 4, heads = 2, dh = 4;
  Tensor q = random_tensor({seq, heads, dh}, rng, 0.7, true);
  Tensor k = random_tensor({seq, heads, dh}, rng, 0.7, true);
  Tensor v = random_tensor({seq, heads, dh}, rng, 0.7, true);
  Tensor probe = random_tensor({seq, heads, dh}, rng);
  MaskDescriptor mask = MaskDescriptor::same_seq({0, 0, 1, 1});
  auto f = [&]() { return sum(mul(attention(q, k, v, mask), probe)); };
  CHECK(grad_check(f, q, 1e-3f) < 1e-3);
  CHECK(grad_check(f, k, 1e-3f) < 1e-3);
  CHECK(grad_check(f, v, 1e-3f) < 1e-3);
}

TEST_CASE("rope attention logits are invariant under uniform position shift") {
  Rng rng(53);
  const int64_t seq = 6, heads = 2, dh = 8;
  const double theta = 10000.0;
  Tensor q = random_tensor({seq, heads, dh}, rng);
  Tensor k = random_tensor({seq, heads, dh}, rng);

  auto logits = [&](int32_t offset) {
    std::vector<int32_t> pos(seq);
    for (int64_t i = 0; i < seq; ++i) pos[i] = static_cast<int32_t>(i) + offset;
    Tensor qr = rope_apply(q, pos, theta);
    Tensor kr = rope_apply(k, pos, theta);
    std::vector<double> out;
    for (int64_t h = 0; h < heads; ++h)
      for (int64_t i = 0; i < seq; ++i)
        for (int64_t j = 0; j < seq; ++j) {
          double dot = 0.0;
          for (int64_t c = 0; c < dh; ++c)
            dot += double(qr.data()[(i * heads + h) * dh + c]) *
                   kr.data()[(j * heads + h) * dh + c];
          out.push_back(dot / std::sqrt(double(dh)));
        }
    return out;
  };

  auto base = logits(0);
  for (int32_t shift : {1, 7, 100}) {
    auto shifted = logits(shift);
    for (size_t i = 0; i < base.size(); ++i)
      CHECK(std::abs(base[i] - shifted[i]) < 1e-5);
  }
}

TEST_CASE("mean_pool basics") {
  Tensor h = Tensor::from_data({3, 2}, {1, 2, 5, 5, -1, -2});
  SUBCASE("single valid token") {
    Tensor p = mean_pool(h, {0, 1, 0});
    CHECK(p.data()[0] == 5.0f);
    CHECK(p.data()[1] == 5.0f);
  }
  SUBCASE("v and -v cancel") {
    Tensor p = mean_pool(h, {1, 0, 1});
    CHECK(p.data()[0] == 0.0f);
    CHECK(p.data()[1] == 0.0f);
  }
  SUBCASE("all-invalid is an error") {
    CHECK_THROWS_AS(mean_pool(h, {0, 0, 0}), std::runtime_error);
  }
}

TEST_CASE("mean_pool ignores appended padding rows") {
  Rng rng(54);
  Tensor h = random_tensor({4, 8}, rng);
  Tensor p1 = mean_pool(h, {1, 1, 1, 1});
  Tensor padded = Tensor::zeros({6, 8});
  for (int64_t i = 0; i < h.numel(); ++i) padded.data()[i] = h.data()[i];
  padded.data()[4 * 8] = 99.0f;  // garbage in the padding rows
  Tensor p2 = mean_pool(padded, {1, 1, 1, 1, 0, 0});
  for (int64_t j = 0; j < 8; ++j)
    CHECK(std::abs(p1.data()[j] - p2.data()[j]) < 1e-6);
}

TEST_CASE("encoder forward shape contract") {
  ModelConfig cfg = toy_config();
  cfg.n_layers = 1;
  EncoderModel model(cfg, 7);
  PackedBatch row = single_row({2, 101, 102, 103, 3});
  Tensor h = model.forward(row);
  CHECK(h.shape() == Shape{5, 64});
}

TEST_CASE("encoder rejects out-of-vocabulary ids") {
  EncoderModel model(toy_config(), 7);
  PackedBatch row = single_row({2, 7000, 3});
  CHECK_THROWS_AS(model.forward(row), std::out_of_range);
}

TEST_CASE("block-diagonal packing: swapping two sequences permutes outputs") {
  ModelConfig cfg = toy_config();
  EncoderModel model(cfg, 11);

  PackedBatch ab;
  ab.mask_mode = PackMode::PackedBlockDiagonal;
  auto push = [](PackedBatch& b, std::vector<int32_t> ids, int32_t seq) {
    for (size_t i = 0; i < ids.size(); ++i) {
      b.token_ids.push_back(ids[i]);
      b.positions.push_back(static_cast<int32_t>(i));
      b.seq_ids.push_back(seq);
      b.mlm_labels.push_back(kIgnoreLabel);
    }
  };
  push(ab, {101, 102, 103}, 0);
  push(ab, {104, 105}, 1);

  PackedBatch ba;
  ba.mask_mode = PackMode::PackedBlockDiagonal;
  push(ba, {104, 105}, 0);
  push(ba, {101, 102, 103}, 1);

  Tensor hab = model.forward(ab);
  Tensor hba = model.forward(ba);
  const int64_t d = cfg.d_model;
  for (int64_t t = 0; t < 3; ++t)  // first sequence of ab == second of ba
    for (int64_t j = 0; j < d; ++j)
      CHECK(hab.data()[t * d + j] ==
            doctest::Approx(hba.data()[(2 + t) * d + j]).epsilon(1e-6));
  for (int64_t t = 0; t < 2; ++t)
    for (int64_t j = 0; j < d; ++j)
      CHECK(hab.data()[(3 + t) * d + j] ==
            doctest::Approx(hba.data()[t * d + j]).epsilon(1e-6));
}

TEST_CASE("pre-norm residual identity with zeroed output projections") {
  ModelConfig cfg = toy_config();
  EncoderModel model(cfg, 13);
  for (auto& e : model.params()) {
    if (e.name.find("attn.wo") != std::string::npos ||
        e.name.find("ffn.w2") != std::string::npos)
      std::fill(e.tensor.data(), e.tensor.data() + e.tensor.numel(), 0.0f);
  }
  PackedBatch row = single_row({2, 110, 111, 3});
  Tensor h = model.forward(row);

  // the stack is the identity; the output is final_norm(embeddings)
  Tensor emb = gather_rows(model.param("tok_emb"), row.token_ids);
  Tensor want = rms_norm(emb, model.param("final_norm.gain"), cfg.norm_eps);
  for (int64_t i = 0; i < h.numel(); ++i)
    CHECK(h.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-6));
}

TEST_CASE("mlm_logits picks the matching embedding row") {
  ModelConfig cfg = toy_config();
  EncoderModel model(cfg, 17);
  Tensor emb = model.param("tok_emb");
  const int64_t d = cfg.d_model;
  // hidden equal to one embedding row; normalize all rows to unit length
  // first so self-similarity wins
  for (int64_t r = 0; r < cfg.vocab_size; ++r) {
    double ss = 0.0;
    for (int64_t j = 0; j < d; ++j) ss += double(emb.data()[r * d + j]) * emb.data()[r * d + j];
    double inv = 1.0 / std::sqrt(ss);
    for (int64_t j = 0; j < d; ++j)
      emb.data()[r * d + j] = static_cast<float>(emb.data()[r * d + j] * inv);
  }
  const int32_t target = 42;
  Tensor hidden = gather_rows(emb, {target});
  Tensor logits = model.mlm_logits(hidden);
  int64_t argmax = 0;
  for (int64_t j = 1; j < cfg.vocab_size; ++j)
    if (logits.data()[j] > logits.data()[argmax]) argmax = j;
  CHECK(argmax == target);
}

TEST_CASE("mlm_logits of zero hidden state is the zero vector") {
  EncoderModel model(toy_config(), 19);
  Tensor hidden = Tensor::zeros({1, 64});
  Tensor logits = model.mlm_logits(hidden);
  for (int64_t j = 0; j < logits.numel(); ++j) CHECK(logits.data()[j] == 0.0f);
}

TEST_CASE("tied and untied-but-copied MLM heads agree") {
  ModelConfig tied_cfg = toy_config();
  EncoderModel tied(tied_cfg, 23);

  ModelConfig untied_cfg = toy_config();
  untied_cfg.tie_mlm_head = false;
  EncoderModel untied(untied_cfg, 23);
  // copy every shared parameter plus the embedding into the untied head
  for (auto& e : untied.params()) {
    const std::string src = e.name == "mlm_head.weight" ? "tok_emb" : e.name;
    Tensor from = tied.param(src);
    std::copy(from.data(), from.data() + from.numel(), e.tensor.data());
  }

  PackedBatch row = single_row({2, 101, 3});
  Tensor h1 = tied.forward(row);
  Tensor l1 = tied.mlm_logits(h1);
  Tensor h2 = untied.forward(row);
  Tensor l2 = untied.mlm_logits(h2);
  for (int64_t i = 0; i < l1.numel(); ++i)
    CHECK(l1.data()[i] == doctest::Approx(l2.data()[i]).epsilon(1e-6));
}

TEST_CASE("param_count matches the registry walk on a toy config") {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.d_model = 64;
  cfg.n_heads = 2;
  cfg.vocab_size = 100;
  cfg.ffn_hidden = 192;
  EncoderModel model(cfg, 29);
  CHECK(param_count(cfg) == model.param_count_registry());

  SUBCASE("variants also agree") {
    for (bool bias : {false, true}) {
      for (auto act : {Activation::Swiglu, Activation::Gelu}) {
        for (auto pos : {Positional::Rope, Positional::AbsoluteLearned}) {
          ModelConfig c = cfg;
          c.ffn_hidden = 0;
          c.use_bias = bias;
          c.activation = act;
          c.positional = pos;
          c.tie_mlm_head = !bias;
          EncoderModel m(c, 31);
          CHECK(param_count(c) == m.param_count_registry());
        }
      }
    }
  }
}

TEST_CASE("param_count is linear in depth") {
  ModelConfig cfg = toy_config();
  ModelConfig deeper = cfg;
  deeper.n_layers = 2 * cfg.n_layers;
  const int64_t base = param_count(cfg);
  const int64_t big = param_count(deeper);
  const int64_t per_layer = (big - base) / cfg.n_layers;
  CHECK(big - base == cfg.n_layers * per_layer);
  ModelConfig three = cfg;
  three.n_layers = cfg.n_layers + 1;
  CHECK(param_count(three) - base == per_layer);
}

TEST_CASE("preset parameter count brackets 250M") {
  ModelConfig cfg = ModelConfig::preset_medium();
  const int64_t count = param_count(cfg);
  CHECK(count >= 200'000'000);
  CHECK(count <= 280'000'000);
}

TEST_CASE("gelu and swiglu FFNs have near-equal parameter budgets at 768") {
  ModelConfig gelu_cfg = ModelConfig::preset_medium();
  gelu_cfg.activation = Activation::Gelu;
  gelu_cfg.ffn_hidden = 0;  // 4 * 768
  ModelConfig swiglu_cfg = ModelConfig::preset_medium();
  const int64_t g = param_count(gelu_cfg);
  const int64_t s = param_count(swiglu_cfg);
  CHECK(std::abs(double(g) - double(s)) / double(g) < 0.01);
}

TEST_CASE("config validation") {
  ModelConfig cfg = toy_config();
  cfg.n_heads = 3;  // 64 % 3 != 0
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  ModelConfig odd = toy_config();
  odd.d_model = 66;
  odd.n_heads = 2;  // d_head 33 is odd under rope
  CHECK_THROWS_AS(odd.validate(), ConfigError);

  ModelConfig wide = toy_config();
  wide.d_model = 1056;
  wide.n_heads = 16;
  wide.validate();  // legal, only warns
  CHECK(!wide.warnings().empty());
}

TEST_CASE("encoder block gradients pass the finite-difference check") {
  ModelConfig cfg = toy_config();
  cfg.n_layers = 1;
  cfg.d_model = 64;
  cfg.vocab_size = 110;
  EncoderModel model(cfg, 37);
  PackedBatch row = single_row({2, 101, 102, 3});
  row.mlm_labels = {kIgnoreLabel, 105, 106, kIgnoreLabel};

  auto loss = [&]() {
    Tensor h = model.forward(row);
    Tensor logits = model.mlm_logits(h);
    return cross_entropy(logits, row.mlm_labels, kIgnoreLabel);
  };
  for (const char* name : {"layer.0.attn.wq", "layer.0.ffn.w1", "tok_emb",
                           "layer.0.norm1.gain", "final_norm.gain"}) {
    Tensor p = model.param(name);
    CHECK_MESSAGE(grad_check(loss, p, 1e-3f, 64, 5) < 1e-3, name);
  }
}
