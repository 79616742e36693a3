#pragma once

#include <functional>

#include "seqseg/dataset.hpp"
#include "seqseg/network.hpp"

namespace seqseg {

struct TrainConfig {
  double base_lr = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.0001;
  int max_iterations = 3000;
  double poly_power = 0.9;
  int T = 4;
  int batch_size = 1;
  uint64_t seed = 42;
  double aux_weight = 0.4;  // per cascade guidance head; final loss weight 1
  int val_interval = 500;
  bool augment = true;
  bool timing = false;  // wall_ms column stays 0 unless enabled (reproducible logs)
  std::string out_dir;
  std::string resume;  // optional checkpoint to continue from

  void validate() const {
    SS_CHECK(base_lr > 0, "TrainConfig: base_lr must be > 0");
    SS_CHECK(poly_power > 0, "TrainConfig: poly_power must be > 0");
    SS_CHECK(T >= 1, "TrainConfig: T must be >= 1");
    SS_CHECK(max_iterations >= 1, "TrainConfig: max_iterations must be >= 1");
    SS_CHECK(batch_size == 1, "TrainConfig: only batch_size 1 is supported");
  }
};

// lr = base * (1 - iter/max)^power
double poly_lr(int iter, const TrainConfig& cfg);

struct OptimizerState {
  std::vector<std::vector<float>> velocity;  // one buffer per parameter
  int iteration = 0;
};

// Coupled-L2 momentum SGD: g' = g + wd*w; v = momentum*v + g'; w -= lr*v.
// A step with lr = 0 changes nothing, velocities included.
void sgd_momentum_step(const std::vector<Param<float>*>& params,
                       const std::vector<const std::vector<float>*>& grads,
                       OptimizerState& state, double lr, const TrainConfig& cfg);

struct TrainResult {
  int iterations = 0;
  double best_miou = 0;
  double best_accuracy = 0;
  std::string checkpoint_path;
  std::string log_path;
  std::vector<float> losses;  // per-iteration training loss
};

// Called at the start of every window with the freshly zeroed states.
using WindowHook = std::function<void(const std::vector<ConvLstmState<float>>&)>;

// The full protocol: sample window -> augment -> forward over the unrolled
// sequence -> cross-entropy on frame-t logits (+ weighted cascade heads) ->
// backward through all frames -> momentum step under the poly schedule.
// States are re-zeroed at every window; best-mIoU parameters are kept.
TrainResult train(Network<float>& net, const Dataset& train_data, const Dataset* val_data,
                  const TrainConfig& cfg, const WindowHook& hook = nullptr);

}  // namespace seqseg
