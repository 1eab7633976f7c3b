#include <doctest.h>

#include "stpatch/embedding.hpp"

using namespace stpatch;

namespace {

EmbeddingConfig small_cfg(int n = 3, int h = 4) {
  EmbeddingConfig cfg;
  cfg.history_len = h;
  cfg.input_dim = 5;
  cfg.week_dim = 2;
  cfg.day_dim = 3;
  cfg.spatial_dim = 2;
  cfg.day_size = 96;
  cfg.point_count = n;
  return cfg;
}

EmbeddingRefs make_refs(Tape& tape, std::mt19937_64& rng, const EmbeddingConfig& cfg) {
  EmbeddingRefs r;
  r.input_w = tape.leaf(random_uniform<double>(
      rng, {std::size_t(cfg.input_dim), std::size_t(cfg.history_len)}, -1, 1));
  r.input_b = tape.leaf(random_uniform<double>(rng, {std::size_t(cfg.input_dim)}, -1, 1));
  r.week = tape.leaf(
      random_uniform<double>(rng, {std::size_t(cfg.week_size), std::size_t(cfg.week_dim)}, -1, 1));
  r.day = tape.leaf(
      random_uniform<double>(rng, {std::size_t(cfg.day_size), std::size_t(cfg.day_dim)}, -1, 1));
  r.spatial = tape.leaf(random_uniform<double>(
      rng, {std::size_t(cfg.point_count), std::size_t(cfg.spatial_dim)}, -1, 1));
  return r;
}

}  // namespace

TEST_CASE("paper-default widths concatenate to 224") {
  EmbeddingConfig cfg;
  cfg.input_dim = 128;
  cfg.week_dim = 32;
  cfg.day_dim = 32;
  cfg.spatial_dim = 32;
  CHECK(cfg.model_dim() == 224);
}

TEST_CASE("15-minute slicing gives 96 slices per day and tod index 4 at 01:00") {
  // 35040 slices over 365 days
  CHECK(35040 / 365 == 96);
  EmbeddingConfig cfg = small_cfg();
  cfg.day_size = 96;
  const auto ts = parse_iso8601("2019-03-05T01:00:00");
  const auto [dow, tod] = temporal_indices(ts, 15, cfg);
  CHECK(tod == 4);
  CHECK(dow == 1);  // Tuesday
}

TEST_CASE("timestamp outside the dictionaries is an error") {
  EmbeddingConfig cfg = small_cfg();
  cfg.day_size = 4;  // pretends slices cover only part of the day
  const auto ts = parse_iso8601("2019-03-05T23:00:00");
  CHECK_THROWS_AS(temporal_indices(ts, 15, cfg), std::invalid_argument);
}

TEST_CASE("output shape and row structure") {
  auto cfg = small_cfg();
  Tape tape;
  std::mt19937_64 rng(5);
  auto refs = make_refs(tape, rng, cfg);
  auto window = random_uniform<double>(
      rng, {std::size_t(cfg.history_len), std::size_t(cfg.point_count)}, -1, 1);
  auto out = embed(tape, window, 2, 10, refs, cfg);
  REQUIRE(out->value.rank() == 2);
  CHECK(out->value.dim(0) == std::size_t(cfg.point_count));
  CHECK(out->value.dim(1) == std::size_t(cfg.model_dim()));

  // temporal columns identical across points, spatial distinct per point
  const int base_w = cfg.input_dim;
  for (int n = 1; n < cfg.point_count; ++n) {
    for (int j = 0; j < cfg.week_dim + cfg.day_dim; ++j) {
      CHECK(out->value(std::size_t(n), std::size_t(base_w + j)) ==
            out->value(0, std::size_t(base_w + j)));
    }
  }
  const int spatial_off = cfg.input_dim + cfg.week_dim + cfg.day_dim;
  bool any_diff = false;
  for (int j = 0; j < cfg.spatial_dim; ++j) {
    if (out->value(0, std::size_t(spatial_off + j)) !=
        out->value(1, std::size_t(spatial_off + j))) {
      any_diff = true;
    }
  }
  CHECK(any_diff);
}

TEST_CASE("zero projection leaves only dictionary rows") {
  auto cfg = small_cfg();
  Tape tape;
  std::mt19937_64 rng(6);
  auto refs = make_refs(tape, rng, cfg);
  refs.input_w = tape.leaf(Tensor({std::size_t(cfg.input_dim), std::size_t(cfg.history_len)}));
  refs.input_b = tape.leaf(Tensor({std::size_t(cfg.input_dim)}));
  auto window = random_uniform<double>(
      rng, {std::size_t(cfg.history_len), std::size_t(cfg.point_count)}, -1, 1);
  const int dow = 3, tod = 17;
  auto out = embed(tape, window, dow, tod, refs, cfg);
  for (int n = 0; n < cfg.point_count; ++n) {
    for (int j = 0; j < cfg.input_dim; ++j) CHECK(out->value(std::size_t(n), std::size_t(j)) == 0.0);
    for (int j = 0; j < cfg.week_dim; ++j) {
      CHECK(out->value(std::size_t(n), std::size_t(cfg.input_dim + j)) ==
            refs.week->value(std::size_t(dow), std::size_t(j)));
    }
    for (int j = 0; j < cfg.day_dim; ++j) {
      CHECK(out->value(std::size_t(n), std::size_t(cfg.input_dim + cfg.week_dim + j)) ==
            refs.day->value(std::size_t(tod), std::size_t(j)));
    }
  }
}

TEST_CASE("permuting points and spatial rows together permutes output rows") {
  auto cfg = small_cfg(4);
  std::mt19937_64 rng(7);
  Tensor window = random_uniform<double>(
      rng, {std::size_t(cfg.history_len), std::size_t(cfg.point_count)}, -1, 1);
  Tensor spatial = random_uniform<double>(
      rng, {std::size_t(cfg.point_count), std::size_t(cfg.spatial_dim)}, -1, 1);
  const std::vector<std::size_t> perm = {2, 0, 3, 1};

  Tensor window_p(window.shape());
  Tensor spatial_p(spatial.shape());
  for (std::size_t n = 0; n < 4; ++n) {
    for (int t = 0; t < cfg.history_len; ++t) window_p(std::size_t(t), n) = window(std::size_t(t), perm[n]);
    for (int j = 0; j < cfg.spatial_dim; ++j) spatial_p(n, std::size_t(j)) = spatial(perm[n], std::size_t(j));
  }

  Tape t1, t2;
  std::mt19937_64 r1(9), r2(9);
  auto refs1 = make_refs(t1, r1, cfg);
  auto refs2 = make_refs(t2, r2, cfg);
  refs1.spatial = t1.leaf(spatial);
  refs2.spatial = t2.leaf(spatial_p);
  auto out1 = embed(t1, window, 1, 5, refs1, cfg);
  auto out2 = embed(t2, window_p, 1, 5, refs2, cfg);
  for (std::size_t n = 0; n < 4; ++n)
    for (int j = 0; j < cfg.model_dim(); ++j)
      CHECK(out2->value(n, std::size_t(j)) == out1->value(perm[n], std::size_t(j)));
}

TEST_CASE("gradients reach all four tables") {
  auto cfg = small_cfg();
  Tape tape;
  std::mt19937_64 rng(8);
  auto refs = make_refs(tape, rng, cfg);
  auto window = random_uniform<double>(
      rng, {std::size_t(cfg.history_len), std::size_t(cfg.point_count)}, -1, 1);
  auto out = embed(tape, window, 2, 10, refs, cfg);
  tape.backward(tape.sum_all(out));
  CHECK(refs.input_w->has_grad());
  CHECK(refs.input_b->has_grad());
  CHECK(refs.week->has_grad());
  CHECK(refs.day->has_grad());
  CHECK(refs.spatial->has_grad());

  // finite-difference spot check on one entry of each table
  auto fd = [&](const NodePtr& leaf, Tensor base, auto rebuild) {
    const std::size_t idx = 0;
    const double step = 1e-6;
    auto eval = [&](double delta) {
      Tensor shifted = base;
      shifted(idx) += delta;
      return rebuild(shifted);
    };
    const double numeric = (eval(step) - eval(-step)) / (2 * step);
    CHECK(leaf->grad(idx) == doctest::Approx(numeric).epsilon(1e-4));
  };
  fd(refs.week, refs.week->value, [&](const Tensor& t) {
    Tape tp;
    auto r2 = refs;
    r2.input_w = tp.leaf(refs.input_w->value);
    r2.input_b = tp.leaf(refs.input_b->value);
    r2.week = tp.leaf(t);
    r2.day = tp.leaf(refs.day->value);
    r2.spatial = tp.leaf(refs.spatial->value);
    return tp.sum_all(embed(tp, window, 2, 10, r2, cfg))->value(0);
  });
}
