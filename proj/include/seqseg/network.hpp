#pragma once

#include <random>

#include "seqseg/convlstm.hpp"

namespace seqseg {

enum class Family { segnet, icnet };

inline const char* family_name(Family f) { return f == Family::segnet ? "segnet" : "icnet"; }

// Declarative description of one variant. version 0 is the non-recurrent
// baseline; 1..3 are valid for segnet, 1..6 for icnet.
struct NetworkSpec {
  Family family = Family::segnet;
  int version = 0;
  int num_classes = 0;
  int channel_scale = 4;
  int input_h = 0;
  int input_w = 0;

  bool operator==(const NetworkSpec&) const = default;

  void validate() const {
    int max_v = family == Family::segnet ? 3 : 6;
    SS_CHECK(version >= 0 && version <= max_v,
             "NetworkSpec: version " << version << " invalid for " << family_name(family)
                                     << " (allowed 0.." << max_v << ")");
    SS_CHECK(num_classes >= 2, "NetworkSpec: num_classes must be >= 2, got " << num_classes);
    SS_CHECK(channel_scale >= 1, "NetworkSpec: channel_scale must be >= 1");
    SS_CHECK(input_h > 0 && input_h % 32 == 0,
             "NetworkSpec: input_h must be a positive multiple of 32, got " << input_h);
    SS_CHECK(input_w > 0 && input_w % 32 == 0,
             "NetworkSpec: input_w must be a positive multiple of 32, got " << input_w);
  }

  std::string variant_name() const {
    std::string base = family_name(family);
    return version == 0 ? base : base + "_v" + std::to_string(version);
  }
};

template <class S>
struct StepOut {
  Tensor<S> logits;  // (n, K, H, W)
  Tensor<S> probs;   // softmax of logits
  std::vector<Tensor<S>> aux;  // cascade guidance logits (icnet training only)
};

template <class S>
struct CellInfo {
  std::string tag;
  ConvLstmCell<S>* cell;
  Shape input_shape;  // batch-1 feature map the cell sees
};

template <class S>
class Network {
 public:
  virtual ~Network() = default;

  // Runs one frame, reading and replacing the carried states in place.
  virtual StepOut<S> forward(const Tensor<S>& frame, std::vector<ConvLstmState<S>>& states,
                             Tape<S>* tape) = 0;

  virtual std::vector<Param<S>*> params() = 0;
  virtual std::vector<CellInfo<S>> cells() = 0;
  virtual const NetworkSpec& spec() const = 0;

  std::vector<ConvLstmState<S>> zero_states(int n) const {
    std::vector<ConvLstmState<S>> st;
    for (const auto& ci : const_cast<Network<S>*>(this)->cells())
      st.push_back(ci.cell->zero_state(n, ci.input_shape.h, ci.input_shape.w));
    return st;
  }
};

// Runs the full network over the frames in order, threading every state;
// returns the frame-t outputs only.
template <class S>
StepOut<S> forward_sequence(Network<S>& net, const std::vector<Tensor<S>>& frames,
                            Tape<S>* tape) {
  SS_CHECK(!frames.empty(), "forward_sequence: empty sequence");
  auto states = net.zero_states(frames[0].shape.n);
  StepOut<S> out;
  for (const auto& fr : frames) out = net.forward(fr, states, tape);
  return out;
}

namespace detail {

inline uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace detail

// Seeded uniform +-1/sqrt(fan-in) for weights; biases zero except convLSTM
// forget gates, which start at 1. Each parameter draws from its own stream
// keyed by (seed, name), so networks sharing layer names share weights.
template <class S>
void init_params(Network<S>& net, uint64_t seed) {
  for (Param<S>* p : net.params()) {
    SS_CHECK(!p->name.empty(), "init_params: unnamed parameter");
    auto base = p->name.substr(p->name.rfind('.') + 1);
    bool is_weight = !base.empty() && base[0] == 'w';
    if (!is_weight) {
      S v = base == "b_f" ? S(1) : S(0);
      std::fill(p->value.store->begin(), p->value.store->end(), v);
      continue;
    }
    // fan-in counted in input channels: the per-channel reading keeps layer
    // output variance roughly stable through deep stacks (the full C*k*k
    // count shrinks activations ~6x per conv and deep nets never leave the
    // near-uniform regime within a short training budget). The presoftmax
    // cell is the exception: its gate kernels use the full receptive-field
    // count. Its hidden state is the final logit map, so cross-entropy
    // confidence pressure only ever pushes its gates deeper into
    // saturation; the per-channel bound saturates the cell memory at the
    // first step and the classifier freezes at majority-class output.
    // Mid-network cells face the opposite constraint: the full count
    // crushes the hidden state they pass downstream and the layers above
    // them never see a usable signal.
    bool presoftmax_gate = p->name.rfind("lstm_presoftmax.", 0) == 0;
    const Shape& ws = p->value.shape;
    long long fan_in = presoftmax_gate ? (long long)ws.c * ws.h * ws.w : ws.c;
    S a = S(1) / std::sqrt(S(fan_in));
    std::mt19937_64 rng(detail::splitmix64(seed ^ detail::fnv1a(p->name)));
    for (auto& v : *p->value.store) {
      S u = S((rng() >> 11) * 0x1.0p-53);  // [0,1)
      v = (S(2) * u - S(1)) * a;
    }
  }
}

template <class S>
long long count_params(Network<S>& net) {
  long long n = 0;
  for (Param<S>* p : net.params()) n += p->value.numel();
  return n;
}

}  // namespace seqseg
