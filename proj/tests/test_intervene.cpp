#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <vector>

#include "incline/intervene.hpp"
#include "incline/rng.hpp"

using namespace incline;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.vocab_size = 24;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 16;
  c.max_seq_len = 24;
  c.seed = 3;
  return c;
}

RepTable random_reps(const std::vector<SiteId>& sites, size_t n, size_t d, uint64_t seed) {
  RepTable table;
  uint64_t k = seed;
  for (const SiteId& site : sites) {
    CounterRng rng(k++);
    DenseMatrix m(n, d);
    for (auto& v : m.data) v = rng.normal();
    table[site] = std::move(m);
  }
  return table;
}

// identity maps for every site of the model, for shape-safe hooks
AlignmentSet identity_alignment(const ModelConfig& mc) {
  AlignmentSet set;
  set.src_lang = "b";
  set.tgt_lang = "a";
  for (const SiteId& site : all_sites(mc)) {
    SiteAlignment sa;
    sa.w = DenseMatrix::identity(static_cast<size_t>(mc.d_model));
    sa.ridge_used = 0.0;
    sa.residual = 0.0;
    set.sites.emplace(site, sa);
  }
  return set;
}

}  // namespace

TEST_CASE("alpha 0 leaves logits bit-identical") {
  const ToyTransformer model(small_config());
  const AlignmentSet align = identity_alignment(model.config());
  InterventionConfig cfg;
  cfg.alpha = 0.0;
  const auto hook = make_interventor(&align, nullptr, cfg, model.config());

  const std::vector<int> tokens = {2, 9, 17, 4};
  const ForwardResult clean = model.forward(tokens);
  const ForwardResult hooked = model.forward(tokens, hook.get());
  CHECK(std::memcmp(clean.logits.data.data(), hooked.logits.data.data(),
                    clean.logits.data.size() * sizeof(double)) == 0);
  // it still counts as an application: the hook ran, the math was skipped
  CHECK(hook->applications() == 2);
}

TEST_CASE("the counter tallies sites times layers once per item") {
  const ToyTransformer model(small_config());
  const AlignmentSet align = identity_alignment(model.config());

  InterventionConfig cfg;
  cfg.site_kinds = {SiteKind::Hidden, SiteKind::AttnOutput};
  cfg.layers = {};  // all
  auto hook = make_interventor(&align, nullptr, cfg, model.config());
  CHECK(selected_sites(cfg, model.config()).size() == 4);

  model.forward({2, 3, 4}, hook.get());
  CHECK(hook->applications() == 4);
  model.forward({5, 6}, hook.get());
  CHECK(hook->applications() == 8);

  // a 16-token decode recomputes the prefix every step but counts once
  hook->reset_counter();
  model.greedy_decode({2, 3, 4}, 16, hook.get());
  CHECK(hook->applications() == 4);

  // embedding is layer 0 only: kinds x layers is not a plain product
  InterventionConfig emb;
  emb.site_kinds = {SiteKind::Embedding, SiteKind::Hidden};
  auto hook2 = make_interventor(&align, nullptr, emb, model.config());
  hook2->reset_counter();
  model.forward({2, 3, 4}, hook2.get());
  CHECK(hook2->applications() == 3);  // emb@0, hidden@0, hidden@1
}

TEST_CASE("layer masks narrow the selection") {
  const ModelConfig mc = small_config();
  InterventionConfig cfg;
  cfg.layers = {1};
  const auto sites = selected_sites(cfg, mc);
  REQUIRE(sites.size() == 1);
  CHECK(sites[0] == SiteId{SiteKind::Hidden, 1});

  cfg.layers = {0, 1};
  CHECK(selected_sites(cfg, mc).size() == 2);
  cfg.layers = {2};  // out of range for a 2-layer model
  const AlignmentSet align = identity_alignment(mc);
  CHECK_THROWS_AS(make_interventor(&align, nullptr, cfg, mc), Error);
}

TEST_CASE("hand-checked incline arithmetic") {
  // W = I, alpha = 1: h becomes 2h
  DenseVector h = {1.0, 2.0};
  AlignmentSet align;
  align.src_lang = "b";
  align.tgt_lang = "a";
  SiteAlignment sa;
  sa.w = DenseMatrix::identity(2);
  align.sites.emplace(SiteId{SiteKind::Hidden, 0}, sa);

  ModelConfig mc;
  mc.d_model = 2;
  mc.n_layers = 1;
  mc.n_heads = 1;
  mc.d_ff = 4;
  mc.vocab_size = 8;

  InterventionConfig cfg;
  cfg.alpha = 1.0;
  auto hook = make_interventor(&align, nullptr, cfg, mc);
  hook->apply({SiteKind::Hidden, 0}, h, true);
  CHECK(h[0] == 2.0);
  CHECK(h[1] == 4.0);

  // W = [[0,1],[1,0]], alpha = 0.5 on (1, 0): h + 0.5*(Wh) = (1, 0.5)
  DenseMatrix swap(2, 2);
  swap.at(0, 1) = 1.0;
  swap.at(1, 0) = 1.0;
  align.sites.at({SiteKind::Hidden, 0}).w = swap;
  cfg.alpha = 0.5;
  hook = make_interventor(&align, nullptr, cfg, mc);
  h = {1.0, 0.0};
  hook->apply({SiteKind::Hidden, 0}, h, true);
  CHECK(h[0] == 1.0);
  CHECK(h[1] == 0.5);
}

TEST_CASE("the edit is affine in alpha") {
  const ModelConfig mc = small_config();
  const AlignmentSet align = identity_alignment(mc);
  CounterRng rng(404);
  DenseVector base(8);
  for (auto& v : base) v = rng.normal();

  auto shifted = [&](double alpha) {
    InterventionConfig cfg;
    cfg.alpha = alpha;
    auto hook = make_interventor(&align, nullptr, cfg, mc);
    DenseVector h = base;
    hook->apply({SiteKind::Hidden, 0}, h, true);
    return h;
  };
  const DenseVector at1 = shifted(1.0);
  const DenseVector at_half = shifted(0.5);
  for (size_t i = 0; i < 8; ++i) {
    const double delta1 = at1[i] - base[i];
    const double delta_half = at_half[i] - base[i];
    CHECK(std::abs(delta_half - 0.5 * delta1) <= 1e-12 * std::max(1.0, std::abs(delta1)));
  }
}

TEST_CASE("caa adds a constant offset independent of h") {
  SteeringSet steer;
  steer.vectors[{SiteKind::Hidden, 0}] = {0.5, -1.0, 0.0, 0.25, 1.0, 2.0, -0.5, 0.125};
  ModelConfig mc = small_config();
  InterventionConfig cfg;
  cfg.mode = InterventionMode::Caa;
  cfg.alpha = 1.0;
  cfg.layers = {0};  // the steering set only covers the first block
  auto hook = make_interventor(nullptr, &steer, cfg, mc);

  CounterRng rng(7);
  for (int trial = 0; trial < 3; ++trial) {
    DenseVector h(8);
    for (auto& v : h) v = rng.normal();
    DenseVector expect = h;
    for (size_t i = 0; i < 8; ++i) expect[i] += steer.vectors.at({SiteKind::Hidden, 0})[i];
    hook->apply({SiteKind::Hidden, 0}, h, true);
    for (size_t i = 0; i < 8; ++i) CHECK(h[i] == expect[i]);
  }
}

TEST_CASE("fit_caa computes the mean difference") {
  const std::vector<SiteId> sites = {{SiteKind::Hidden, 0}};
  // identical tables: zero vector
  const RepTable reps = random_reps(sites, 20, 4, 31);
  const SteeringSet zero = fit_caa(reps, reps);
  for (double v : zero.vectors.at(sites[0])) CHECK(v == 0.0);

  // constant shift: exactly that shift
  RepTable shifted = reps;
  DenseMatrix& m = shifted.at(sites[0]);
  const DenseVector c = {1.5, -2.0, 0.25, 3.0};
  for (size_t r = 0; r < m.rows; ++r) {
    for (size_t col = 0; col < m.cols; ++col) m.at(r, col) += c[col];
  }
  const SteeringSet steer = fit_caa(reps, shifted);
  for (size_t i = 0; i < 4; ++i) {
    CHECK(std::abs(steer.vectors.at(sites[0])[i] - c[i]) <= 1e-12);
  }

  // mismatched inputs are rejected
  const RepTable other = random_reps({{SiteKind::Hidden, 1}}, 20, 4, 32);
  CHECK_THROWS_AS(fit_caa(reps, other), Error);
  const RepTable fewer = random_reps(sites, 10, 4, 33);
  CHECK_THROWS_AS(fit_caa(reps, fewer), Error);
}

TEST_CASE("mode none never fires") {
  const ModelConfig mc = small_config();
  InterventionConfig cfg;
  cfg.mode = InterventionMode::None;
  cfg.site_kinds.clear();  // legal only for None
  auto hook = make_interventor(nullptr, nullptr, cfg, mc);
  const ToyTransformer model(mc);
  const std::vector<int> tokens = {2, 3, 4};
  const ForwardResult clean = model.forward(tokens);
  const ForwardResult hooked = model.forward(tokens, hook.get());
  CHECK(std::memcmp(clean.logits.data.data(), hooked.logits.data.data(),
                    clean.logits.data.size() * sizeof(double)) == 0);
  CHECK(hook->applications() == 0);
  for (const SiteId& site : all_sites(mc)) CHECK_FALSE(hook->wants(site));
}

TEST_CASE("configuration errors are loud") {
  const ModelConfig mc = small_config();
  const AlignmentSet align = identity_alignment(mc);

  InterventionConfig cfg;
  cfg.alpha = 1.5;  // outside [-1, 1]
  CHECK_THROWS_AS(make_interventor(&align, nullptr, cfg, mc), Error);

  cfg = {};
  cfg.site_kinds.clear();  // empty selection with an active mode
  CHECK_THROWS_AS(make_interventor(&align, nullptr, cfg, mc), Error);

  cfg = {};
  CHECK_THROWS_AS(make_interventor(nullptr, nullptr, cfg, mc), Error);  // no payload

  // missing site: alignment only covers hidden@0
  AlignmentSet partial;
  partial.src_lang = "b";
  partial.tgt_lang = "a";
  SiteAlignment sa;
  sa.w = DenseMatrix::identity(8);
  partial.sites.emplace(SiteId{SiteKind::Hidden, 0}, sa);
  cfg = {};
  try {
    make_interventor(&partial, nullptr, cfg, mc);
    FAIL("expected MissingSiteMatrix");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingSiteMatrix);
  }

  // wrong shape
  AlignmentSet bad = identity_alignment(mc);
  bad.sites.at({SiteKind::Hidden, 1}).w = DenseMatrix::identity(4);
  CHECK_THROWS_AS(make_interventor(&bad, nullptr, cfg, mc), Error);

  // caa payload missing a vector
  SteeringSet steer;
  steer.vectors[{SiteKind::Hidden, 0}] = DenseVector(8, 0.0);
  InterventionConfig ccfg;
  ccfg.mode = InterventionMode::Caa;
  try {
    make_interventor(nullptr, &steer, ccfg, mc);
    FAIL("expected MissingSiteVector");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingSiteVector);
  }
}

TEST_CASE("steering files round-trip bit-exactly") {
  SteeringSet set;
  CounterRng rng(61);
  DenseVector v(6);
  for (auto& x : v) x = rng.normal();
  set.vectors[{SiteKind::Hidden, 0}] = v;
  set.vectors[{SiteKind::AttnOutput, 1}] = DenseVector(6, 0.5);

  const std::string text = serialize_steering(set);
  const SteeringSet back = parse_steering(text);
  REQUIRE(back.vectors.size() == 2);
  for (const auto& [site, vec] : set.vectors) {
    CHECK(std::memcmp(back.vectors.at(site).data(), vec.data(), vec.size() * sizeof(double)) == 0);
  }
  CHECK(serialize_steering(back) == text);

  const auto path = std::filesystem::temp_directory_path() / "steer_roundtrip.txt";
  save_steering(path.string(), set);
  CHECK(serialize_steering(load_steering(path.string())) == text);
  std::filesystem::remove(path);

  CHECK_THROWS_AS(parse_steering("incline-caa v7\n"), Error);
}

TEST_CASE("mode names parse both ways") {
  CHECK(parse_intervention_mode("incline") == InterventionMode::Incline);
  CHECK(parse_intervention_mode("caa") == InterventionMode::Caa);
  CHECK(parse_intervention_mode("none") == InterventionMode::None);
  CHECK(intervention_mode_name(InterventionMode::Incline) == std::string("incline"));
  CHECK_THROWS_AS(parse_intervention_mode("bogus"), Error);
}

TEST_CASE("an intervened forward really changes the answer distribution") {
  const ToyTransformer model(small_config());
  AlignmentSet align = identity_alignment(model.config());
  // double every hidden state: a visible but shape-safe edit
  InterventionConfig cfg;
  cfg.alpha = 1.0;
  auto hook = make_interventor(&align, nullptr, cfg, model.config());
  const std::vector<int> tokens = {2, 9, 17, 4};
  const ForwardResult clean = model.forward(tokens);
  const ForwardResult hooked = model.forward(tokens, hook.get());
  double diff = 0.0;
  const size_t last = tokens.size() - 1;
  for (size_t v = 0; v < 24; ++v) diff += std::abs(clean.logits.at(last, v) - hooked.logits.at(last, v));
  CHECK(diff > 1e-6);
}
