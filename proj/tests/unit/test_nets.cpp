#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "../support/oracles.hpp"
#include "sos/errors.hpp"
#include "sos/nets.hpp"
#include "sos/ops.hpp"

using namespace sos;

namespace {

Tensor random_image(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  return Tensor::from({h, w, 1}, oracle::random_vec(h * w, rng, 0.0, 1.0));
}

oracle::Vec values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

void zero_out(Tensor t) {
  auto d = t.mutable_data();
  std::fill(d.begin(), d.end(), 0.0);
}

GruParams zero_gru(std::size_t d) {
  Rng rng(0);
  auto g = make_gru(d, rng);
  for (auto* t : {&g.w_z, &g.u_z, &g.w_r, &g.u_r, &g.w_h, &g.u_h}) zero_out(*t);
  return g;
}

oracle::Gru to_oracle(const GruParams& g) {
  return {values(g.w_z), values(g.u_z), values(g.w_r), values(g.u_r), values(g.w_h),
          values(g.u_h), values(g.b_z), values(g.b_r), values(g.b_h)};
}

}  // namespace

TEST_SUITE("nets") {
  TEST_CASE("extract of a zero image with zero biases is zero") {
    Rng rng(1);
    auto extractor = make_extractor({}, rng);
    auto v = extract(extractor, Tensor::zeros({32, 32, 1}));
    CHECK(v.shape() == Shape{32});
    for (double x : v.data()) CHECK(x == 0.0);
  }

  TEST_CASE("extract matches a straight-line reimplementation") {
    Rng rng(7);
    auto extractor = make_extractor({}, rng);
    // Non-zero biases so the oracle exercises them too.
    std::mt19937_64 noise(8);
    for (auto& block : extractor.blocks) {
      auto b = block.bias.mutable_data();
      auto r = oracle::random_vec(b.size(), noise, -0.1, 0.1);
      std::copy(r.begin(), r.end(), b.begin());
    }
    std::mt19937_64 data(9);
    auto image = random_image(32, 32, data);
    auto v = extract(extractor, image);

    std::vector<oracle::Mat> maps(1, oracle::Mat(32, oracle::Vec(32)));
    for (std::size_t y = 0; y < 32; ++y)
      for (std::size_t x = 0; x < 32; ++x) maps[0][y][x] = image[y * 32 + x];
    for (const auto& block : extractor.blocks) {
      maps = oracle::conv(maps, values(block.weight), values(block.bias), 3, 2, 1);
      oracle::relu_inplace(maps);
    }
    auto expected = oracle::avg_pool(maps);
    REQUIRE(expected.size() == v.size());
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(v[i] - expected[i]) < 1e-13);
  }

  TEST_CASE("extract shape contract") {
    Rng rng(2);
    auto extractor = make_extractor({}, rng);
    std::mt19937_64 data(3);
    CHECK(extract(extractor, random_image(16, 16, data)).size() == 32);
    CHECK(extract(extractor, random_image(64, 48, data)).size() == 32);
    CHECK_THROWS_AS(extract(extractor, Tensor::zeros({32, 32, 2})), ShapeError);
    CHECK_THROWS_AS(extract(extractor, Tensor::zeros({32, 32})), ShapeError);
    CHECK_THROWS_AS(extract(extractor, Tensor::zeros({20, 32, 1})), ShapeError);
    CHECK(extractor.blocks[0].weight.shape()[1] == 1);
  }

  TEST_CASE("heads produce distributions matching the affine-softmax oracle") {
    Rng rng(4);
    SUBCASE("zero input and bias give uniform") {
      auto head = make_head(4, 32, rng);
      auto p = classify_lowres(head, Tensor::zeros({32}));
      for (double x : p.data()) CHECK(x == doctest::Approx(0.25).epsilon(1e-15));
      auto attention = make_head(64, 32, rng);
      auto a = attention_distribution(attention, Tensor::zeros({32}));
      for (double x : a.data()) CHECK(x == doctest::Approx(1.0 / 64).epsilon(1e-15));
    }
    SUBCASE("degenerate single output") {
      auto head = make_head(1, 8, rng);
      std::mt19937_64 data(5);
      auto v = Tensor::vector(oracle::random_vec(8, data));
      CHECK(classify_lowres(head, v)[0] == 1.0);
      CHECK(attention_distribution(head, v)[0] == 1.0);
    }
    SUBCASE("seeded inputs") {
      std::mt19937_64 data(6);
      for (auto [out, in] : {std::pair<std::size_t, std::size_t>{4, 32}, {64, 32}, {4, 64}}) {
        auto head = make_head(out, in, rng);
        auto b = head.bias.mutable_data();
        auto rb = oracle::random_vec(out, data);
        std::copy(rb.begin(), rb.end(), b.begin());
        auto v = oracle::random_vec(in, data);
        auto p = head_distribution(head, Tensor::vector(v));
        auto expected = oracle::affine_softmax(values(head.weight), values(head.bias), v);
        for (std::size_t i = 0; i < out; ++i) CHECK(std::abs(p[i] - expected[i]) < 1e-14);
      }
    }
    SUBCASE("adding a constant to every logit leaves the output unchanged") {
      auto head = make_head(4, 64, rng);
      std::mt19937_64 data(7);
      auto m = Tensor::vector(oracle::random_vec(64, data));
      auto before = classify_highres(head, m);
      for (auto& b : head.bias.mutable_data()) b += 3.25;
      auto after = classify_highres(head, m);
      for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(before[i] - after[i]) < 1e-12);
    }
    SUBCASE("dimension mismatch") {
      auto head = make_head(4, 32, rng);
      CHECK_THROWS_AS(classify_lowres(head, Tensor::zeros({16})), ShapeError);
      CHECK_THROWS_AS(classify_highres(head, Tensor::zeros({64})), ShapeError);
    }
  }

  TEST_CASE("extract_patch_features is an order-preserving map") {
    Rng rng(10);
    auto extractor = make_extractor({}, rng);
    std::mt19937_64 data(11);
    auto a = random_image(32, 32, data);
    auto b = random_image(32, 32, data);
    auto c = random_image(32, 32, data);

    std::vector<Tensor> same{a, a, a};
    auto same_out = extract_patch_features(extractor, same);
    for (const auto& f : same_out) CHECK(values(f) == values(same_out[0]));

    std::vector<Tensor> single{b};
    CHECK(values(extract_patch_features(extractor, single)[0]) == values(extract(extractor, b)));

    std::vector<Tensor> forward{a, b, c}, backward{c, b, a};
    auto fo = extract_patch_features(extractor, forward);
    auto bo = extract_patch_features(extractor, backward);
    CHECK(values(fo[0]) == values(bo[2]));
    CHECK(values(fo[1]) == values(bo[1]));
    CHECK(values(fo[2]) == values(bo[0]));

    CHECK_THROWS_AS(extract_patch_features(extractor, {}), UsageError);
  }

  TEST_CASE("gru_fuse hand case: zero parameters, K = 1") {
    auto gru = zero_gru(4);
    auto v = Tensor::vector({0.4, -1.0, 2.0, 0.0});
    std::vector<Tensor> feats{Tensor::vector({9, 9, 9, 9})};
    auto m = gru_fuse(gru, v, feats);
    REQUIRE(m.size() == 8);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(m[i] == 0.5 * v[i]);
      CHECK(m[4 + i] == v[i]);
    }
  }

  TEST_CASE("gru_fuse matches the step-by-step oracle") {
    Rng rng(12);
    auto gru = make_gru(6, rng);
    std::mt19937_64 data(13);
    for (auto* b : {&gru.b_z, &gru.b_r, &gru.b_h}) {
      auto r = oracle::random_vec(6, data, -0.2, 0.2);
      std::copy(r.begin(), r.end(), b->mutable_data().begin());
    }
    auto v = oracle::random_vec(6, data);
    std::vector<oracle::Vec> xs{oracle::random_vec(6, data), oracle::random_vec(6, data)};
    std::vector<Tensor> feats{Tensor::vector(xs[0]), Tensor::vector(xs[1])};
    auto m = gru_fuse(gru, Tensor::vector(v), feats);

    auto ref = to_oracle(gru);
    auto h = v;
    for (const auto& x : xs) h = oracle::gru_step(ref, h, x);
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(std::abs(m[i] - h[i]) < 1e-14);
      CHECK(m[6 + i] == v[i]);
    }
    CHECK_THROWS_AS(gru_fuse(gru, Tensor::zeros({5}), feats), ShapeError);
    CHECK_THROWS_AS(gru_fuse(gru, Tensor::vector(v), {}), UsageError);
  }

  TEST_CASE("gru fusion is order dependent; average pooling is not") {
    Rng rng(14);
    auto gru = make_gru(5, rng);
    std::mt19937_64 data(15);
    auto v = Tensor::vector(oracle::random_vec(5, data));
    std::vector<Tensor> abc{Tensor::vector(oracle::random_vec(5, data)), Tensor::vector(oracle::random_vec(5, data)),
                            Tensor::vector(oracle::random_vec(5, data))};
    std::vector<Tensor> cab{abc[2], abc[0], abc[1]};
    CHECK(values(gru_fuse(gru, v, abc)) != values(gru_fuse(gru, v, cab)));
    auto avg1 = fuse_pool(FusionMode::Average, v, abc);
    auto avg2 = fuse_pool(FusionMode::Average, v, cab);
    for (std::size_t i = 0; i < avg1.size(); ++i) CHECK(std::abs(avg1[i] - avg2[i]) < 1e-15);
  }

  TEST_CASE("fuse_pool examples") {
    auto v = Tensor::vector({7, 8});
    std::vector<Tensor> pair{Tensor::vector({1, 3}), Tensor::vector({3, 1})};
    auto avg = fuse_pool(FusionMode::Average, v, pair);
    auto mx = fuse_pool(FusionMode::Max, v, pair);
    CHECK(values(avg) == oracle::Vec{2, 2, 7, 8});
    CHECK(values(mx) == oracle::Vec{3, 3, 7, 8});
    std::vector<Tensor> same{Tensor::vector({0.5, -2}), Tensor::vector({0.5, -2}), Tensor::vector({0.5, -2})};
    CHECK(values(fuse_pool(FusionMode::Average, v, same)) == oracle::Vec{0.5, -2, 7, 8});
    CHECK(values(fuse_pool(FusionMode::Max, v, same)) == oracle::Vec{0.5, -2, 7, 8});
    CHECK_THROWS_AS(fuse_pool(FusionMode::Max, v, {}), UsageError);
  }

  TEST_CASE("low-res and patch extractors are parameter-disjoint") {
    ModelConfig cfg;
    auto model = make_model(cfg, 5);
    std::mt19937_64 data(16);
    auto image = random_image(32, 32, data);
    auto before = values(extract(model.lowres_extractor, image));
    for (auto& block : model.patch_extractor.blocks) {
      for (auto& w : block.weight.mutable_data()) w += 0.5;
    }
    CHECK(values(extract(model.lowres_extractor, image)) == before);
    CHECK(model.lowres_extractor.blocks[0].weight.id() != model.patch_extractor.blocks[0].weight.id());
  }

  TEST_CASE("model composition per variant") {
    ModelConfig cfg;
    auto count = [&](Variant v, FusionMode f = FusionMode::Gru) {
      ModelConfig c = cfg;
      c.variant = v;
      c.fusion = f;
      return make_model(c, 1).parameter_count();
    };
    const auto image = count(Variant::ImageLevel);
    const auto sos = count(Variant::Sos);
    CHECK(image < sos);
    CHECK(count(Variant::MultiScale) + 1 + 4 * 32 + 4 == sos);  // no threshold, no low-res head
    CHECK(count(Variant::Rdms) > sos);
    CHECK(count(Variant::Sos, FusionMode::Max) < sos);

    auto model = make_model(cfg, 3);
    CHECK(model.threshold() == 0.5);
    CHECK(model.lowres_head.weight.shape() == Shape{4, 32});
    CHECK(model.attention_head.weight.shape() == Shape{64, 32});
    CHECK(model.fused_head.weight.shape() == Shape{4, 64});
    ModelConfig patch = cfg;
    patch.variant = Variant::PatchLevel;
    CHECK(make_model(patch, 3).fused_head.weight.shape() == Shape{4, 32});

    ModelConfig bad = cfg;
    bad.top_k = 65;
    CHECK_THROWS_AS(make_model(bad, 1), UsageError);
  }

  TEST_CASE("initialization is deterministic and within the Glorot bound") {
    auto a = make_model({}, 42);
    auto b = make_model({}, 42);
    auto pa = a.named_parameters();
    auto pb = b.named_parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(values(pa[i].tensor) == values(pb[i].tensor));
    const double bound = std::sqrt(6.0 / (32 + 4));
    for (double w : a.lowres_head.weight.data()) CHECK(std::abs(w) <= bound);
    for (double w : a.lowres_head.bias.data()) CHECK(w == 0.0);
  }
}
