#include "seqseg/training.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>

#include "seqseg/checkpoint.hpp"
#include "seqseg/metrics.hpp"

namespace seqseg {

double poly_lr(int iter, const TrainConfig& cfg) {
  SS_CHECK(iter >= 0 && iter <= cfg.max_iterations,
           "poly_lr: iteration " << iter << " outside [0," << cfg.max_iterations << "]");
  return cfg.base_lr * std::pow(1.0 - (double)iter / cfg.max_iterations, cfg.poly_power);
}

void sgd_momentum_step(const std::vector<Param<float>*>& params,
                       const std::vector<const std::vector<float>*>& grads,
                       OptimizerState& state, double lr, const TrainConfig& cfg) {
  SS_CHECK(params.size() == grads.size(), "sgd_momentum_step: param/grad count mismatch");
  if (state.velocity.empty()) {
    state.velocity.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i)
      state.velocity[i].assign(params[i]->value.numel(), 0.0f);
  }
  if (lr == 0.0) return;
  for (size_t i = 0; i < params.size(); ++i) {
    Param<float>& p = *params[i];
    const std::vector<float>& g = *grads[i];
    SS_CHECK((long long)g.size() == p.value.numel(),
             "sgd_momentum_step: gradient size mismatch for " << p.name);
    auto& v = state.velocity[i];
    float* w = p.value.data();
    for (size_t j = 0; j < g.size(); ++j) {
      float gj = g[j] + (float)cfg.weight_decay * w[j];
      v[j] = (float)cfg.momentum * v[j] + gj;
      w[j] -= (float)lr * v[j];
    }
  }
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

TrainResult train(Network<float>& net, const Dataset& train_data, const Dataset* val_data,
                  const TrainConfig& cfg, const WindowHook& hook) {
  cfg.validate();
  SS_CHECK(train_data.num_windows() > 0, "train: empty training dataset");
  {
    // class-count agreement, checked before the first iteration
    auto probe = train_data.load_window(0, cfg.T);
    for (int32_t v : probe.label.v)
      SS_CHECK(v == kIgnoreLabel || v < net.spec().num_classes,
               "train: dataset label " << v << " exceeds network classes "
                                       << net.spec().num_classes);
  }

  std::filesystem::create_directories(cfg.out_dir.empty() ? "." : cfg.out_dir);
  std::string dir = cfg.out_dir.empty() ? "." : cfg.out_dir;
  TrainResult result;
  result.checkpoint_path = dir + "/best.ckpt";
  result.log_path = dir + "/log.csv";

  auto params = net.params();
  OptimizerState opt;
  if (!cfg.resume.empty()) {
    auto meta = load_checkpoint(cfg.resume, params);
    opt.iteration = (int)meta.iteration;
    result.best_miou = meta.val_miou;
  }

  std::ofstream log(result.log_path);
  if (!log) throw std::runtime_error("train: cannot write " + result.log_path);
  log << "iter,lr,loss,val_acc,val_miou,wall_ms\n";

  std::mt19937_64 rng(detail::splitmix64(cfg.seed));
  bool have_best = false;
  using clock = std::chrono::steady_clock;

  for (; opt.iteration < cfg.max_iterations; ++opt.iteration) {
    auto t0 = clock::now();
    int widx = (int)(rng() % (uint64_t)train_data.num_windows());
    auto sample = train_data.load_window(widx, cfg.T);
    auto draw = draw_augment(rng);  // drawn even if unused, to keep streams aligned
    if (cfg.augment) augment_with(sample, draw);

    Tape<float> tape;
    auto states = net.zero_states(1);
    if (hook) hook(states);
    StepOut<float> out;
    for (const auto& fr : sample.frames) out = net.forward(fr, states, &tape);

    auto loss = cross_entropy_loss(out.logits, sample.label);
    for (const auto& aux : out.aux) {
      auto aux_labels = downsample_labels(sample.label, aux.shape.h, aux.shape.w);
      loss = add(loss, scale(cross_entropy_loss(aux, aux_labels), (float)cfg.aux_weight));
    }
    tape.backward(loss);

    std::vector<const std::vector<float>*> grads;
    for (Param<float>* p : params) {
      int node = p->node_on(tape);
      SS_CHECK(node >= 0, "train: parameter " << p->name << " not used in forward pass");
      const auto& g = tape.grad(node);
      for (float v : g)
        if (!std::isfinite(v))
          throw std::runtime_error("train: non-finite gradient in parameter '" + p->name +
                                   "' at iteration " + std::to_string(opt.iteration));
      grads.push_back(&g);
    }
    double lr = poly_lr(opt.iteration, cfg);
    sgd_momentum_step(params, grads, opt, lr, cfg);
    result.losses.push_back(loss.data()[0]);

    bool last = opt.iteration + 1 == cfg.max_iterations;
    std::string val_acc_s, val_miou_s;
    if (val_data && ((opt.iteration + 1) % cfg.val_interval == 0 || last)) {
      auto ev = evaluate(net, *val_data, cfg.T);
      val_acc_s = fmt(ev.accuracy);
      val_miou_s = fmt(ev.miou);
      if (!have_best || ev.miou > result.best_miou) {
        have_best = true;
        result.best_miou = ev.miou;
        result.best_accuracy = ev.accuracy;
        save_checkpoint(result.checkpoint_path, params,
                        {opt.iteration + 1, result.best_miou});
      }
    }
    double wall_ms =
        cfg.timing ? std::chrono::duration<double, std::milli>(clock::now() - t0).count() : 0.0;
    log << opt.iteration << "," << fmt(lr) << "," << fmt(loss.data()[0]) << "," << val_acc_s
        << "," << val_miou_s << "," << fmt(wall_ms) << "\n";
  }

  if (!have_best)  // no validation set: keep the final parameters
    save_checkpoint(result.checkpoint_path, params, {cfg.max_iterations, result.best_miou});
  result.iterations = cfg.max_iterations;
  if (!log) throw std::runtime_error("train: log write failed");
  return result;
}

}  // namespace seqseg
