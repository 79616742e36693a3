#pragma once

#include "seqseg/network.hpp"
#include "seqseg/training.hpp"

namespace seqseg {

// Flat `key = value` experiment description (one per line, '#' comments).
// Unknown keys are rejected; parse(serialize(c)) == c.
struct ExperimentConfig {
  NetworkSpec spec{Family::segnet, 0, 6, 4, 64, 128};
  TrainConfig train;
  std::string dataset;
  std::string val_dataset;

  bool operator==(const ExperimentConfig& o) const {
    return spec == o.spec && dataset == o.dataset && val_dataset == o.val_dataset &&
           train.base_lr == o.train.base_lr && train.momentum == o.train.momentum &&
           train.weight_decay == o.train.weight_decay &&
           train.max_iterations == o.train.max_iterations &&
           train.poly_power == o.train.poly_power && train.T == o.train.T &&
           train.batch_size == o.train.batch_size && train.seed == o.train.seed &&
           train.aux_weight == o.train.aux_weight && train.val_interval == o.train.val_interval &&
           train.augment == o.train.augment && train.timing == o.train.timing &&
           train.out_dir == o.train.out_dir && train.resume == o.train.resume;
  }
};

ExperimentConfig parse_config(std::istream& in);
ExperimentConfig parse_config_file(const std::string& path);
std::string serialize_config(const ExperimentConfig& cfg);

}  // namespace seqseg
