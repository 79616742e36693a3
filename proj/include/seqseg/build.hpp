#pragma once

#include "seqseg/icnet.hpp"
#include "seqseg/segnet.hpp"

namespace seqseg {

template <class S>
std::unique_ptr<Network<S>> build(const NetworkSpec& spec) {
  spec.validate();
  if (spec.family == Family::segnet) return std::make_unique<SegNet<S>>(spec);
  return std::make_unique<ICNet<S>>(spec);
}

// The 2 baselines plus the 9 recurrent variants, in report order.
inline std::vector<NetworkSpec> all_variants(int num_classes, int channel_scale, int input_h,
                                             int input_w) {
  std::vector<NetworkSpec> out;
  for (int v = 0; v <= 3; ++v)
    out.push_back({Family::segnet, v, num_classes, channel_scale, input_h, input_w});
  for (int v = 0; v <= 6; ++v)
    out.push_back({Family::icnet, v, num_classes, channel_scale, input_h, input_w});
  return out;
}

}  // namespace seqseg
