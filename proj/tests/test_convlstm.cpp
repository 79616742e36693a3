#include <random>

#include "doctest.h"
#include "seqseg/convlstm.hpp"
#include "test_util.hpp"

using namespace seqseg;
using testutil::fill_uniform;
using testutil::random_tensor;

namespace {

ConvLstmCell<double> random_cell(int ch, std::mt19937_64& rng, double amp = 0.3) {
  ConvLstmCell<double> cell(ch, "cell");
  for (auto* p : cell.params()) fill_uniform(p->value, rng, -amp, amp);
  return cell;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (long long i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs((*a.store)[i] - (*b.store)[i]));
  return m;
}

}  // namespace

TEST_SUITE_BEGIN("convlstm");

TEST_CASE("zero_state is all zero and repeatable") {
  ConvLstmCell<double> cell(3, "c");
  auto s1 = cell.zero_state(1, 4, 4);
  auto s2 = cell.zero_state(1, 4, 4);
  CHECK(s1.h.shape == Shape{1, 3, 4, 4});
  for (double v : *s1.h.store) CHECK(v == 0.0);
  for (double v : *s1.c.store) CHECK(v == 0.0);
  CHECK(*s1.h.store == *s2.h.store);
  CHECK(*s1.c.store == *s2.c.store);
  CHECK_THROWS_AS((void)cell.zero_state(0, 4, 4), std::invalid_argument);
}

TEST_CASE("zero state means hidden weights contribute nothing") {
  std::mt19937_64 rng(11);
  auto cell = random_cell(2, rng);
  auto x = random_tensor(Shape{1, 2, 5, 6}, rng);
  auto [h1, s1] = cell.step(x, cell.zero_state(1, 5, 6), nullptr);

  auto ablated = cell;
  for (auto* p : {&ablated.w_hi, &ablated.w_hf, &ablated.w_hg, &ablated.w_ho}) {
    p->value = Tensor<double>::zeros(p->value.shape);
  }
  auto [h2, s2] = ablated.step(x, ablated.zero_state(1, 5, 6), nullptr);
  CHECK(max_abs_diff(h1, h2) == 0.0);
  CHECK(max_abs_diff(s1.c, s2.c) == 0.0);
}

TEST_CASE("all-zero cell maps anything to zero") {
  ConvLstmCell<double> cell(2, "z");  // weights and biases default to zero
  std::mt19937_64 rng(12);
  auto x = random_tensor(Shape{1, 2, 4, 4}, rng);
  auto [h, s] = cell.step(x, cell.zero_state(1, 4, 4), nullptr);
  for (double v : *h.store) CHECK(v == doctest::Approx(0.0));
  for (double v : *s.c.store) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("cell recurrence matches independently recomputed gates") {
  std::mt19937_64 rng(13);
  auto cell = random_cell(2, rng);
  auto x = random_tensor(Shape{1, 2, 4, 6}, rng);
  ConvLstmState<double> st{random_tensor(Shape{1, 2, 4, 6}, rng),
                           random_tensor(Shape{1, 2, 4, 6}, rng)};
  auto [h, s2] = cell.step(x, st, nullptr);

  Tensor<double> none;
  auto gate = [&](Param<double>& wx, Param<double>& wh, Param<double>& b) {
    return add(conv2d(x, wx.value, b.value, 1, 1, 1), conv2d(st.h, wh.value, none, 1, 1, 1));
  };
  auto i = sigmoid(gate(cell.w_xi, cell.w_hi, cell.b_i));
  auto f = sigmoid(gate(cell.w_xf, cell.w_hf, cell.b_f));
  auto g = tanh_t(gate(cell.w_xg, cell.w_hg, cell.b_g));
  auto o = sigmoid(gate(cell.w_xo, cell.w_ho, cell.b_o));
  auto c2 = add(mul(f, st.c), mul(i, g));
  auto h2 = mul(o, tanh_t(c2));
  CHECK(max_abs_diff(s2.c, c2) == 0.0);
  CHECK(max_abs_diff(h, h2) == 0.0);

  for (double v : *i.store) CHECK((v > 0.0 && v < 1.0));
  for (double v : *f.store) CHECK((v > 0.0 && v < 1.0));
  for (double v : *o.store) CHECK((v > 0.0 && v < 1.0));
  for (double v : *g.store) CHECK((v > -1.0 && v < 1.0));
}

TEST_CASE("saturated forget gate preserves memory") {
  std::mt19937_64 rng(14);
  auto cell = random_cell(2, rng);
  std::fill(cell.b_f.value.store->begin(), cell.b_f.value.store->end(), 20.0);
  std::fill(cell.w_xf.value.store->begin(), cell.w_xf.value.store->end(), 0.0);
  std::fill(cell.w_hf.value.store->begin(), cell.w_hf.value.store->end(), 0.0);
  auto x = random_tensor(Shape{1, 2, 4, 4}, rng);
  ConvLstmState<double> st{random_tensor(Shape{1, 2, 4, 4}, rng),
                           random_tensor(Shape{1, 2, 4, 4}, rng)};
  auto [h, s2] = cell.step(x, st, nullptr);

  Tensor<double> none;
  auto i = sigmoid(add(conv2d(x, cell.w_xi.value, cell.b_i.value, 1, 1, 1),
                       conv2d(st.h, cell.w_hi.value, none, 1, 1, 1)));
  auto g = tanh_t(add(conv2d(x, cell.w_xg.value, cell.b_g.value, 1, 1, 1),
                      conv2d(st.h, cell.w_hg.value, none, 1, 1, 1)));
  auto want = add(st.c, mul(i, g));  // f == sigma(20) ~= 1
  CHECK(max_abs_diff(s2.c, want) < 1e-6);
}

TEST_CASE("memoryless degeneration when hidden paths are cut") {
  std::mt19937_64 rng(15);
  auto cell = random_cell(2, rng);
  for (auto* p : {&cell.w_hi, &cell.w_hf, &cell.w_hg, &cell.w_ho})
    p->value = Tensor<double>::zeros(p->value.shape);
  std::fill(cell.b_f.value.store->begin(), cell.b_f.value.store->end(), -20.0);

  auto a = random_tensor(Shape{1, 2, 4, 4}, rng);
  auto b = random_tensor(Shape{1, 2, 4, 4}, rng);
  auto h_first = cell.run_sequence({a}, nullptr);
  auto h_last = cell.run_sequence({b, b, b, a}, nullptr);
  CHECK(max_abs_diff(h_first, h_last) < 1e-6);
}

TEST_CASE("run_sequence basics and determinism") {
  std::mt19937_64 rng(16);
  auto cell = random_cell(3, rng);
  auto x = random_tensor(Shape{1, 3, 4, 4}, rng);
  auto [h_step, st] = cell.step(x, cell.zero_state(1, 4, 4), nullptr);
  auto h_seq = cell.run_sequence({x}, nullptr);
  CHECK(max_abs_diff(h_step, h_seq) == 0.0);

  auto frames = std::vector<Tensor<double>>{x, random_tensor(Shape{1, 3, 4, 4}, rng)};
  auto r1 = cell.run_sequence(frames, nullptr);
  auto r2 = cell.run_sequence(frames, nullptr);
  CHECK(*r1.store == *r2.store);

  CHECK_THROWS_AS((void)cell.run_sequence({}, nullptr), std::invalid_argument);
}

TEST_CASE("repeated-frame hidden state approaches a fixed point") {
  // Diagnostic property: the step map is contractive for small weights, so
  // successive hidden-state distances should not grow. WARN keeps it visible
  // without gating the build on an empirical contraction argument.
  std::mt19937_64 rng(17);
  int violations = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto cell = random_cell(2, rng, 0.2);
    std::fill(cell.b_f.value.store->begin(), cell.b_f.value.store->end(), 1.0);
    auto x = random_tensor(Shape{1, 2, 4, 4}, rng);
    auto st = cell.zero_state(1, 4, 4);
    Tensor<double> prev_h = st.h;
    double prev_d = -1;
    bool bad = false;
    for (int t = 0; t < 4; ++t) {
      auto [h, s2] = cell.step(x, st, nullptr);
      double d = max_abs_diff(h, prev_h);
      if (t >= 2 && d > prev_d + 1e-12) bad = true;
      prev_d = d;
      prev_h = h;
      st = s2;
    }
    violations += bad;
  }
  WARN_LE(violations, 5);
  CHECK(violations < 50);
}

TEST_CASE("four-step unrolled backward matches finite differences") {
  std::mt19937_64 rng(18);
  ConvLstmCell<double> cell(2, "fd");
  for (auto* p : cell.params()) fill_uniform(p->value, rng, -0.3, 0.3);
  std::vector<Tensor<double>> frames;
  for (int t = 0; t < 4; ++t) frames.push_back(random_tensor(Shape{1, 2, 3, 4}, rng));

  auto run = [&](Tape<double>* tp) {
    std::vector<Tensor<double>> fs;
    for (auto& f : frames) fs.push_back(tp ? tp->track(f) : f);
    auto h = cell.run_sequence(fs, tp);
    return std::pair{sum_all(mul(h, h)), fs};
  };

  Tape<double> tape;
  auto [loss, tracked] = run(&tape);
  tape.backward(loss);

  double eps = 1e-3, worst = 0;
  auto probe = [&](std::vector<double>& buf, const std::vector<double>& grad) {
    for (size_t i = 0; i < buf.size(); ++i) {
      double orig = buf[i];
      buf[i] = orig + eps;
      double fp = run(nullptr).first.data()[0];
      buf[i] = orig - eps;
      double fm = run(nullptr).first.data()[0];
      buf[i] = orig;
      double fd = (fp - fm) / (2 * eps);
      worst = std::max(worst, std::abs(grad[i] - fd) / std::max(1.0, std::abs(fd)));
    }
  };
  for (auto* p : cell.params()) probe(*p->value.store, tape.grad(p->node_on(tape)));
  for (auto& f : tracked) probe(*frames[&f - tracked.data()].store, tape.grad(f.node));
  CHECK(worst < 1e-4);

  // BPTT connectivity: gradient reaches the oldest frame
  double g0 = 0;
  for (double g : tape.grad(tracked[0].node)) g0 = std::max(g0, std::abs(g));
  CHECK(g0 > 0.0);
}

TEST_SUITE_END();
