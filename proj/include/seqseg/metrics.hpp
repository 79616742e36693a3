#pragma once

#include "seqseg/dataset.hpp"
#include "seqseg/network.hpp"

namespace seqseg {

// K x K pixel-count accumulator; entry (i,j) counts pixels with ground truth
// i predicted as j. Ignore-label pixels are never scored.
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<uint64_t> counts;

  explicit ConfusionMatrix(int k = 0) : num_classes(k), counts(1LL * k * k, 0) {}

  uint64_t& at(int gt, int pred) { return counts[1LL * gt * num_classes + pred]; }
  uint64_t at(int gt, int pred) const { return counts[1LL * gt * num_classes + pred]; }

  uint64_t total() const {
    uint64_t t = 0;
    for (auto v : counts) t += v;
    return t;
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    SS_CHECK(num_classes == o.num_classes, "ConfusionMatrix: class count mismatch");
    for (size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
    return *this;
  }
};

void confusion_update(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt);
double pixel_accuracy(const ConfusionMatrix& cm);
// Mean of TP/(TP+FP+FN) over classes present in gt or pred; absent classes
// are excluded from the mean.
double miou(const ConfusionMatrix& cm);
std::vector<double> per_class_iou(const ConfusionMatrix& cm);

struct EvalResult {
  double accuracy = 0;
  double miou = 0;
  ConfusionMatrix cm;
};

// Runs the network over every window of the dataset (no augmentation) and
// scores frame-t argmax predictions.
EvalResult evaluate(Network<float>& net, const Dataset& data, int t_len);

struct PlacementTiming {
  std::string tag;
  double median_ms = 0;
  double mean_ms = 0;
};

struct TimingReport {
  double median_ms = 0;  // per-frame forward pass
  double mean_ms = 0;
  std::vector<PlacementTiming> placements;  // isolated convLSTM steps
};

// Single-threaded wall-clock timing: W warm-up runs, then R measured runs.
TimingReport bench_inference(Network<float>& net, int runs, int warmup);

}  // namespace seqseg
