#include <random>

#include "doctest.h"
#include "seqseg/build.hpp"
#include "seqseg/checkpoint.hpp"
#include "seqseg/training.hpp"
#include "test_util.hpp"

using namespace seqseg;
using testutil::scratch_dir;
using testutil::slurp;

namespace {

std::string make_dataset(const std::string& tag, int seqs, int hw = 32, int k = 4,
                         double occl = 0.0) {
  GenConfig cfg;
  cfg.num_sequences = seqs;
  cfg.H = hw;
  cfg.W = hw;
  cfg.K = k;
  cfg.occlusion_prob = occl;
  cfg.out_dir = scratch_dir(tag);
  generate_dataset(cfg);
  return cfg.out_dir;
}

NetworkSpec tiny_spec(Family fam, int version) {
  return {fam, version, 4, 16, 32, 32};
}

}  // namespace

TEST_SUITE_BEGIN("training");

TEST_CASE("poly schedule endpoints and shape") {
  TrainConfig cfg;
  cfg.max_iterations = 3000;
  CHECK(poly_lr(0, cfg) == doctest::Approx(0.001).epsilon(1e-12));
  CHECK(poly_lr(3000, cfg) == doctest::Approx(0.0));
  CHECK(poly_lr(1500, cfg) == doctest::Approx(0.001 * std::pow(0.5, 0.9)));
  CHECK(poly_lr(1500, cfg) == doctest::Approx(5.359e-4).epsilon(1e-3));
  for (int i = 1; i <= 3000; ++i) CHECK(poly_lr(i, cfg) < poly_lr(i - 1, cfg));
  CHECK_THROWS_AS((void)poly_lr(-1, cfg), std::invalid_argument);
  CHECK_THROWS_AS((void)poly_lr(3001, cfg), std::invalid_argument);
}

TEST_CASE("momentum recurrence matches the closed form") {
  TrainConfig cfg;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.0;

  Param<float> p;
  p.name = "w";
  p.value = Tensor<float>::full(Shape{1, 1, 1, 2}, 1.0f);
  std::vector<float> g{0.5f, -0.25f};
  OptimizerState st;

  // zero gradient, wd = 0: nothing moves
  std::vector<float> zero{0.0f, 0.0f};
  sgd_momentum_step({&p}, {&zero}, st, 0.01, cfg);
  CHECK(p.value.data()[0] == 1.0f);
  CHECK(p.value.data()[1] == 1.0f);

  // one step from rest: w -= lr * g
  sgd_momentum_step({&p}, {&g}, st, 0.01, cfg);
  CHECK(p.value.data()[0] == doctest::Approx(1.0 - 0.01 * 0.5));

  // second step with the same gradient: total drop = lr*g*(2 + momentum)
  sgd_momentum_step({&p}, {&g}, st, 0.01, cfg);
  CHECK(p.value.data()[0] == doctest::Approx(1.0 - 0.01 * 0.5 * (2.0 + 0.9)));

  // coupled L2: the decay term rides on the gradient
  TrainConfig wd = cfg;
  wd.weight_decay = 0.1;
  Param<float> q;
  q.value = Tensor<float>::full(Shape{1, 1, 1, 1}, 2.0f);
  std::vector<float> gq{0.5f};
  OptimizerState st2;
  sgd_momentum_step({&q}, {&gq}, st2, 0.01, wd);
  CHECK(q.value.data()[0] == doctest::Approx(2.0 - 0.01 * (0.5 + 0.1 * 2.0)));
}

TEST_CASE("an lr=0 step is a complete no-op") {
  TrainConfig cfg;
  Param<float> p;
  p.value = Tensor<float>::full(Shape{1, 1, 1, 2}, 3.0f);
  std::vector<float> g{1.0f, -1.0f};
  OptimizerState st;
  sgd_momentum_step({&p}, {&g}, st, 0.01, cfg);  // builds velocity
  auto w_before = *p.value.store;
  auto v_before = st.velocity;
  sgd_momentum_step({&p}, {&g}, st, 0.0, cfg);
  CHECK(*p.value.store == w_before);
  CHECK(st.velocity == v_before);
}

TEST_CASE("smoke training run decreases the loss") {
  auto root = make_dataset("train_smoke", 8);
  auto net = build<float>(tiny_spec(Family::segnet, 0));
  init_params(*net, 1);
  TrainConfig cfg;
  cfg.max_iterations = 150;
  cfg.T = 1;
  cfg.out_dir = scratch_dir("train_smoke_out");
  auto res = train(*net, Dataset::open(root), nullptr, cfg);
  REQUIRE(res.losses.size() == 150);
  // single-window losses are noisy; compare wide head/tail averages
  double head = 0, tail = 0;
  for (int i = 0; i < 30; ++i) {
    head += res.losses[i] / 30;
    tail += res.losses[120 + i] / 30;
  }
  CHECK(tail < head);
}

TEST_CASE("training is deterministic and keeps states zero at window starts") {
  auto root = make_dataset("train_det", 4);
  TrainConfig cfg;
  cfg.max_iterations = 6;
  cfg.T = 2;
  cfg.val_interval = 3;

  auto run = [&](const std::string& out) {
    auto net = build<float>(tiny_spec(Family::icnet, 2));
    init_params(*net, 9);
    cfg.out_dir = scratch_dir(out);
    auto val = Dataset::open(root);
    int checked = 0;
    auto res = train(*net, Dataset::open(root), &val, cfg,
                     [&](const std::vector<ConvLstmState<float>>& states) {
                       for (const auto& s : states) {
                         for (float v : *s.h.store) CHECK(v == 0.0f);
                         for (float v : *s.c.store) CHECK(v == 0.0f);
                       }
                       ++checked;
                     });
    CHECK(checked == cfg.max_iterations);
    return std::pair{slurp(res.checkpoint_path), slurp(res.log_path)};
  };

  auto [ckpt1, log1] = run("train_det_o1");
  auto [ckpt2, log2] = run("train_det_o2");
  CHECK(ckpt1 == ckpt2);
  CHECK(log1 == log2);
  CHECK(log1.substr(0, log1.find('\n')) == "iter,lr,loss,val_acc,val_miou,wall_ms");
}

TEST_CASE("baselines trained with T=4 and T=1 are bitwise identical") {
  auto root = make_dataset("train_t14", 4);
  auto run = [&](int T, const std::string& out) {
    auto net = build<float>(tiny_spec(Family::segnet, 0));
    init_params(*net, 5);
    TrainConfig cfg;
    cfg.max_iterations = 8;
    cfg.T = T;
    cfg.out_dir = scratch_dir(out);
    auto res = train(*net, Dataset::open(root), nullptr, cfg);
    return slurp(res.checkpoint_path);
  };
  CHECK(run(4, "train_t4") == run(1, "train_t1"));
}

TEST_CASE("gradients flow through past frames only for recurrent nets") {
  auto root = make_dataset("train_flow", 2);
  auto data = Dataset::open(root);
  auto sample = data.load_window(0, 4);

  auto frame_grad = [&](int version) {
    auto net = build<float>(tiny_spec(Family::segnet, version));
    init_params(*net, 3);
    Tape<float> tape;
    std::vector<Tensor<float>> frames;
    for (auto& f : sample.frames) frames.push_back(tape.track(f.detached()));
    auto states = net->zero_states(1);
    StepOut<float> out;
    for (const auto& fr : frames) out = net->forward(fr, states, &tape);
    auto loss = cross_entropy_loss(out.logits, sample.label);
    tape.backward(loss);
    double g = 0;
    for (float v : tape.grad(frames[0].node)) g = std::max(g, (double)std::abs(v));
    return g;
  };
  CHECK(frame_grad(0) == 0.0);  // baseline: loss reads frame t only
  CHECK(frame_grad(2) > 0.0);   // recurrent: BPTT reaches frame t-3
}

TEST_CASE("non-finite gradients abort with the parameter named") {
  auto root = make_dataset("train_nan", 2);
  auto net = build<float>(tiny_spec(Family::segnet, 0));
  init_params(*net, 1);
  // poison the classifier head bias: a NaN in an early conv is squashed by
  // relu (NaN > 0 is false) and never reaches the loss
  auto params = net->params();
  (*params.back()->value.store)[0] = std::numeric_limits<float>::quiet_NaN();
  TrainConfig cfg;
  cfg.max_iterations = 2;
  cfg.T = 1;
  cfg.out_dir = scratch_dir("train_nan_out");
  CHECK_THROWS_WITH_AS(train(*net, Dataset::open(root), nullptr, cfg),
                       doctest::Contains("non-finite gradient"), std::runtime_error);
}

TEST_CASE("class mismatch is rejected before the first iteration") {
  auto root = make_dataset("train_mismatch", 2, 32, 6);
  auto net = build<float>(tiny_spec(Family::segnet, 0));  // 4 classes
  init_params(*net, 1);
  TrainConfig cfg;
  cfg.out_dir = scratch_dir("train_mismatch_out");
  CHECK_THROWS_AS(train(*net, Dataset::open(root), nullptr, cfg), std::invalid_argument);
}

TEST_CASE("checkpoints round-trip parameters and metadata") {
  auto net = build<float>(tiny_spec(Family::icnet, 1));
  init_params(*net, 7);
  auto params = net->params();
  auto path = scratch_dir("ckpt") + "/a.ckpt";
  save_checkpoint(path, params, {1234, 0.625});

  auto copy = build<float>(tiny_spec(Family::icnet, 1));
  init_params(*copy, 8);  // different values before loading
  auto cparams = copy->params();
  auto meta = load_checkpoint(path, cparams);
  CHECK(meta.iteration == 1234);
  CHECK(meta.val_miou == doctest::Approx(0.625));
  for (size_t i = 0; i < params.size(); ++i)
    CHECK(*params[i]->value.store == *cparams[i]->value.store);

  CHECK(slurp(path).substr(0, 7) == "SEQSEG1");

  auto other = build<float>(tiny_spec(Family::icnet, 2));  // different parameter set
  auto oparams = other->params();
  CHECK_THROWS_AS((void)load_checkpoint(path, oparams), std::runtime_error);
  CHECK_THROWS_AS((void)load_checkpoint("/nonexistent/x.ckpt", oparams), std::runtime_error);
}

TEST_CASE("resume continues the iteration counter") {
  auto root = make_dataset("train_resume", 4);
  auto net = build<float>(tiny_spec(Family::segnet, 0));
  init_params(*net, 2);
  TrainConfig cfg;
  cfg.max_iterations = 5;
  cfg.T = 1;
  cfg.out_dir = scratch_dir("resume_a");
  auto first = train(*net, Dataset::open(root), nullptr, cfg);

  TrainConfig cfg2 = cfg;
  cfg2.max_iterations = 9;
  cfg2.resume = first.checkpoint_path;
  cfg2.out_dir = scratch_dir("resume_b");
  auto net2 = build<float>(tiny_spec(Family::segnet, 0));
  init_params(*net2, 2);
  auto second = train(*net2, Dataset::open(root), nullptr, cfg2);
  CHECK(second.iterations == 9);

  // the continued log starts at iteration 5
  auto log = slurp(second.log_path);
  auto first_row = log.substr(log.find('\n') + 1);
  CHECK(first_row.substr(0, 2) == "5,");
}

TEST_SUITE_END();
