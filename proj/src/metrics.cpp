#include "seqseg/metrics.hpp"

#include <chrono>

namespace seqseg {

void confusion_update(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt) {
  SS_CHECK(pred.n == gt.n && pred.h == gt.h && pred.w == gt.w,
           "confusion_update: shape mismatch");
  for (long long i = 0; i < gt.numel(); ++i) {
    int32_t g = gt.v[i];
    if (g == kIgnoreLabel) continue;
    int32_t p = pred.v[i];
    SS_CHECK(g >= 0 && g < cm.num_classes, "confusion_update: gt label " << g << " >= K");
    SS_CHECK(p >= 0 && p < cm.num_classes, "confusion_update: pred label " << p << " >= K");
    ++cm.at(g, p);
  }
}

double pixel_accuracy(const ConfusionMatrix& cm) {
  uint64_t total = cm.total();
  SS_CHECK(total > 0, "pixel_accuracy: empty confusion matrix");
  uint64_t diag = 0;
  for (int c = 0; c < cm.num_classes; ++c) diag += cm.at(c, c);
  return (double)diag / (double)total;
}

std::vector<double> per_class_iou(const ConfusionMatrix& cm) {
  std::vector<double> iou(cm.num_classes, -1.0);
  for (int c = 0; c < cm.num_classes; ++c) {
    uint64_t tp = cm.at(c, c), fp = 0, fn = 0;
    for (int o = 0; o < cm.num_classes; ++o) {
      if (o == c) continue;
      fp += cm.at(o, c);
      fn += cm.at(c, o);
    }
    if (tp + fp + fn > 0) iou[c] = (double)tp / (double)(tp + fp + fn);
  }
  return iou;
}

double miou(const ConfusionMatrix& cm) {
  SS_CHECK(cm.total() > 0, "miou: empty confusion matrix");
  auto iou = per_class_iou(cm);
  double sum = 0;
  int n = 0;
  for (double v : iou)
    if (v >= 0) {
      sum += v;
      ++n;
    }
  SS_CHECK(n > 0, "miou: no scorable class");
  return sum / n;
}

EvalResult evaluate(Network<float>& net, const Dataset& data, int t_len) {
  int k = net.spec().num_classes;
  EvalResult r{0, 0, ConfusionMatrix(k)};
  for (int i = 0; i < data.num_windows(); ++i) {
    auto sample = data.load_window(i, t_len);
    auto out = forward_sequence(net, sample.frames, (Tape<float>*)nullptr);
    confusion_update(r.cm, argmax_channels(out.probs), sample.label);
  }
  r.accuracy = pixel_accuracy(r.cm);
  r.miou = miou(r.cm);
  return r;
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / v.size();
}

template <class F>
std::vector<double> time_runs(int runs, int warmup, F&& fn) {
  using clock = std::chrono::steady_clock;
  for (int i = 0; i < warmup; ++i) fn();
  std::vector<double> ms(runs);
  for (int i = 0; i < runs; ++i) {
    auto t0 = clock::now();
    fn();
    ms[i] = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
  }
  return ms;
}

}  // namespace

TimingReport bench_inference(Network<float>& net, int runs, int warmup) {
  SS_CHECK(runs >= 10, "bench_inference: need >= 10 runs");
  SS_CHECK(warmup >= 2, "bench_inference: need >= 2 warm-up runs");
  const auto& spec = net.spec();
  Tensor<float> frame(Shape{1, 3, spec.input_h, spec.input_w});
  std::mt19937_64 rng(12345);
  for (auto& v : *frame.store) v = (float)((rng() >> 11) * 0x1.0p-53);

  TimingReport report;
  volatile float sink = 0;
  auto ms = time_runs(runs, warmup, [&] {
    auto states = net.zero_states(1);
    auto out = net.forward(frame, states, nullptr);
    sink = out.probs.data()[0];
  });
  report.median_ms = median(ms);
  report.mean_ms = mean(ms);

  for (auto& ci : net.cells()) {
    Tensor<float> x(ci.input_shape);
    for (auto& v : *x.store) v = (float)((rng() >> 11) * 0x1.0p-53);
    auto pt = time_runs(runs, warmup, [&] {
      auto st = ci.cell->zero_state(1, ci.input_shape.h, ci.input_shape.w);
      auto [h, s2] = ci.cell->step(x, st, nullptr);
      sink = h.data()[0];
    });
    report.placements.push_back({ci.tag, median(pt), mean(pt)});
  }
  (void)sink;
  return report;
}

}  // namespace seqseg
