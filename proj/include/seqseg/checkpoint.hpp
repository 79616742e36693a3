#pragma once

#include "seqseg/network.hpp"

namespace seqseg {

struct CheckpointMeta {
  int64_t iteration = 0;
  double val_miou = 0;
};

// Binary format: magic "SEQSEG1"; per parameter a record of
// u32 name length, name bytes, u32 rank (4), u32 dims[4], then raw
// little-endian float32 values; a zero name-length sentinel; footer of
// i64 iteration count and f64 validation mIoU.
void save_checkpoint(const std::string& path, const std::vector<Param<float>*>& params,
                     const CheckpointMeta& meta);

// Loads by name into the given parameters; every parameter must be present
// with a matching shape.
CheckpointMeta load_checkpoint(const std::string& path,
                               const std::vector<Param<float>*>& params);

}  // namespace seqseg
