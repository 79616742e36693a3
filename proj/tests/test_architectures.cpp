#include <map>
#include <random>

#include "doctest.h"
#include "seqseg/build.hpp"
#include "test_util.hpp"

using namespace seqseg;
using testutil::random_tensor;

namespace {

Tensor<float> random_frame(int h, int w, uint64_t seed) {
  Tensor<float> f(Shape{1, 3, h, w});
  std::mt19937_64 rng(seed);
  for (auto& v : *f.store) v = (float)((rng() >> 11) * 0x1.0p-53);
  return f;
}

float max_abs_diff(const Tensor<float>& a, const Tensor<float>& b) {
  float m = 0;
  for (long long i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs((*a.store)[i] - (*b.store)[i]));
  return m;
}

// Frame-t output for the sequence (B,B,B,A) vs (A,A,A,A); equal outputs mean
// the net is frame-independent on this probe.
std::pair<Tensor<float>, Tensor<float>> probe_outputs(Network<float>& net) {
  auto A = random_frame(net.spec().input_h, net.spec().input_w, 100);
  auto B = random_frame(net.spec().input_h, net.spec().input_w, 200);
  auto oa = forward_sequence(net, {A, A, A, A}, (Tape<float>*)nullptr);
  auto ob = forward_sequence(net, {B, B, B, A}, (Tape<float>*)nullptr);
  // compare logits: for tiny activations softmax rounds away real differences
  return {oa.logits, ob.logits};
}

}  // namespace

TEST_SUITE_BEGIN("architectures");

TEST_CASE("all eleven variants build with normalized full-size output") {
  for (const auto& spec : all_variants(4, 16, 32, 64)) {
    CAPTURE(spec.variant_name());
    auto net = build<float>(spec);
    init_params(*net, 9);
    auto frame = random_frame(32, 64, 1);
    auto out = forward_sequence(*net, {frame, frame}, (Tape<float>*)nullptr);
    REQUIRE(out.probs.shape == Shape{1, 4, 32, 64});
    REQUIRE(out.logits.shape == Shape{1, 4, 32, 64});
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 64; ++x) {
        float s = 0;
        for (int c = 0; c < 4; ++c) s += out.probs.at(0, c, y, x);
        CHECK(std::abs(s - 1.0f) < 1e-6f);
      }
  }
}

TEST_CASE("convLSTM cell counts match the version table") {
  const std::map<std::string, int> want = {
      {"segnet", 0},   {"segnet_v1", 1}, {"segnet_v2", 1}, {"segnet_v3", 2},
      {"icnet", 0},    {"icnet_v1", 1},  {"icnet_v2", 1},  {"icnet_v3", 1},
      {"icnet_v4", 2}, {"icnet_v5", 3},  {"icnet_v6", 4}};
  for (const auto& spec : all_variants(4, 16, 32, 64)) {
    auto net = build<float>(spec);
    CHECK((int)net->cells().size() == want.at(spec.variant_name()));
  }
}

TEST_CASE("icnet v5 places one cell per branch") {
  auto net = build<float>({Family::icnet, 5, 4, 16, 32, 64});
  auto cs = net->cells();
  REQUIRE(cs.size() == 3);
  CHECK(cs[0].tag == "low");
  CHECK(cs[1].tag == "med");
  CHECK(cs[2].tag == "high");
  CHECK(cs[0].input_shape == Shape{1, 8, 2, 4});    // stride 16
  CHECK(cs[1].input_shape == Shape{1, 8, 4, 8});    // stride 8
  CHECK(cs[2].input_shape == Shape{1, 8, 8, 16});   // stride 4
}

TEST_CASE("segnet v3 parameter count is additive over placements") {
  auto count = [](int v) {
    auto net = build<float>({Family::segnet, v, 4, 16, 32, 64});
    return count_params(*net);
  };
  CHECK(count(3) == count(1) + count(2) - count(0));
}

TEST_CASE("cascade fusion output sits at quarter resolution") {
  auto net = build<float>({Family::icnet, 0, 4, 16, 32, 64});
  init_params(*net, 3);
  auto frame = random_frame(32, 64, 2);
  auto states = net->zero_states(1);
  auto out = net->forward(frame, states, nullptr);
  REQUIRE(out.aux.size() == 2);
  CHECK(out.aux[0].shape == Shape{1, 4, 4, 8});   // CFF1 guidance at stride 8
  CHECK(out.aux[1].shape == Shape{1, 4, 8, 16});  // CFF2 guidance at stride 4
}

TEST_CASE("cff zero coarse input reduces to the projected fine path") {
  std::mt19937_64 rng(20);
  Cff<double> cff("t", 3, 4);
  std::vector<Param<double>*> ps;
  cff.collect(ps);
  for (auto* p : ps) testutil::fill_uniform(p->value, rng, -0.4, 0.4);

  auto low = Tensor<double>::zeros(Shape{1, 3, 3, 4});
  auto high = random_tensor(Shape{1, 3, 6, 8}, rng);
  auto [fused, aux] = cff.forward(low, high, nullptr);
  auto want = relu(add(cff.dil.forward(bilinear_upsample(low, 2), nullptr),
                       cff.proj.forward(high, nullptr)));
  CHECK(fused.shape == high.shape);
  for (long long i = 0; i < fused.numel(); ++i)
    CHECK((*fused.store)[i] == doctest::Approx((*want.store)[i]));

  auto bad = Tensor<double>::zeros(Shape{1, 3, 4, 4});
  CHECK_THROWS_AS((void)cff.forward(bad, high, nullptr), std::invalid_argument);
}

TEST_CASE("cff passes finite differences through both paths") {
  std::mt19937_64 rng(21);
  Cff<double> cff("fd", 2, 3);
  std::vector<Param<double>*> ps;
  cff.collect(ps);
  for (auto* p : ps) testutil::fill_uniform(p->value, rng, -0.4, 0.4);

  std::vector<Tensor<double>> xs{random_tensor(Shape{1, 2, 2, 3}, rng),
                                 random_tensor(Shape{1, 2, 4, 6}, rng)};
  auto err = testutil::max_rel_err(xs, [&](auto& v, Tape<double>*) {
    auto [fused, aux] = cff.forward(v[0], v[1], v[0].tape);
    return add(sum_all(mul(fused, fused)), sum_all(mul(aux, aux)));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("frame independence holds exactly for baselines and fails for variants") {
  for (const auto& spec : all_variants(4, 16, 32, 64)) {
    CAPTURE(spec.variant_name());
    auto net = build<float>(spec);
    init_params(*net, 17);
    auto [pa, pb] = probe_outputs(*net);
    if (spec.version == 0)
      CHECK(max_abs_diff(pa, pb) == 0.0f);  // bitwise frame independence
    else
      CHECK(max_abs_diff(pa, pb) > 0.0f);  // temporal influence is live
  }
}

TEST_CASE("opened-gate v5 cells restore frame independence") {
  auto net = build<float>({Family::icnet, 5, 4, 16, 32, 64});
  init_params(*net, 23);
  for (auto& ci : net->cells()) {
    auto& c = *ci.cell;
    for (auto* w : {&c.w_xi, &c.w_hi, &c.w_xf, &c.w_hf, &c.w_xg, &c.w_hg, &c.w_xo, &c.w_ho})
      std::fill(w->value.store->begin(), w->value.store->end(), 0.0f);
    std::fill(c.b_i.value.store->begin(), c.b_i.value.store->end(), 20.0f);
    std::fill(c.b_f.value.store->begin(), c.b_f.value.store->end(), -20.0f);
    std::fill(c.b_o.value.store->begin(), c.b_o.value.store->end(), 20.0f);
    std::fill(c.b_g.value.store->begin(), c.b_g.value.store->end(), 0.0f);
  }
  auto [pa, pb] = probe_outputs(*net);
  CHECK(max_abs_diff(pa, pb) < 1e-5f);
}

TEST_CASE("invalid specs are rejected with diagnostics") {
  CHECK_THROWS_AS((void)build<float>({Family::segnet, 4, 4, 16, 32, 64}),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)build<float>({Family::icnet, 7, 4, 16, 32, 64}),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)build<float>({Family::icnet, 1, 4, 16, 33, 64}),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)build<float>({Family::segnet, 1, 1, 16, 32, 64}),
                  std::invalid_argument);
}

TEST_CASE("seeded init is reproducible with shared layer names") {
  auto base = build<float>({Family::segnet, 0, 4, 8, 32, 64});
  auto base2 = build<float>({Family::segnet, 0, 4, 8, 32, 64});
  auto v2 = build<float>({Family::segnet, 2, 4, 8, 32, 64});
  init_params(*base, 5);
  init_params(*base2, 5);
  init_params(*v2, 5);

  std::map<std::string, Param<float>*> by_name;
  for (auto* p : v2->params()) by_name[p->name] = p;
  for (auto* p : base->params()) {
    REQUIRE(by_name.count(p->name) == 1);
    CHECK(*p->value.store == *by_name[p->name]->value.store);
  }
  auto ps1 = base->params();
  auto ps2 = base2->params();
  for (size_t i = 0; i < ps1.size(); ++i) CHECK(*ps1[i]->value.store == *ps2[i]->value.store);

  // uniform +-1/sqrt(fan_in) has variance 1/(3 fan_in); check the largest layer
  Param<float>* big = ps1[0];
  for (auto* p : ps1)
    if (p->value.numel() > big->value.numel()) big = p;
  long long fan_in = big->value.shape.c;  // fan-in counted in input channels
  double mean = 0, var = 0;
  for (float v : *big->value.store) mean += v;
  mean /= big->value.numel();
  for (float v : *big->value.store) var += (v - mean) * (v - mean);
  var /= big->value.numel();
  CHECK(var == doctest::Approx(1.0 / (3.0 * fan_in)).epsilon(0.10));
}

TEST_SUITE_END();
