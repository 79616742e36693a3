#include "seqseg/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace seqseg {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

int to_int(const std::string& key, const std::string& v) {
  try {
    size_t pos;
    int r = std::stoi(v, &pos);
    SS_CHECK(pos == v.size(), "config: bad integer for " << key << ": '" << v << "'");
    return r;
  } catch (const std::invalid_argument&) {
    throw;
  } catch (...) {
    SS_CHECK(false, "config: bad integer for " << key << ": '" << v << "'");
    return 0;
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    size_t pos;
    double r = std::stod(v, &pos);
    SS_CHECK(pos == v.size(), "config: bad number for " << key << ": '" << v << "'");
    return r;
  } catch (const std::invalid_argument&) {
    throw;
  } catch (...) {
    SS_CHECK(false, "config: bad number for " << key << ": '" << v << "'");
    return 0;
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  SS_CHECK(false, "config: bad boolean for " << key << ": '" << v << "' (use true/false)");
  return false;
}

}  // namespace

ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig c;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    SS_CHECK(eq != std::string::npos, "config: line " << lineno << " is not 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));

    if (key == "family") {
      if (val == "segnet") c.spec.family = Family::segnet;
      else if (val == "icnet") c.spec.family = Family::icnet;
      else SS_CHECK(false, "config: family must be segnet or icnet, got '" << val << "'");
    } else if (key == "version") {
      c.spec.version = val == "baseline" ? 0 : to_int(key, val);
    } else if (key == "classes") {
      c.spec.num_classes = to_int(key, val);
    } else if (key == "channel_scale") {
      c.spec.channel_scale = to_int(key, val);
    } else if (key == "input_h") {
      c.spec.input_h = to_int(key, val);
    } else if (key == "input_w") {
      c.spec.input_w = to_int(key, val);
    } else if (key == "dataset") {
      c.dataset = val;
    } else if (key == "val_dataset") {
      c.val_dataset = val;
    } else if (key == "out_dir") {
      c.train.out_dir = val;
    } else if (key == "iterations") {
      c.train.max_iterations = to_int(key, val);
    } else if (key == "base_lr") {
      c.train.base_lr = to_double(key, val);
    } else if (key == "momentum") {
      c.train.momentum = to_double(key, val);
    } else if (key == "weight_decay") {
      c.train.weight_decay = to_double(key, val);
    } else if (key == "poly_power") {
      c.train.poly_power = to_double(key, val);
    } else if (key == "sequence_length") {
      c.train.T = to_int(key, val);
    } else if (key == "batch_size") {
      c.train.batch_size = to_int(key, val);
    } else if (key == "seed") {
      c.train.seed = std::stoull(val);
    } else if (key == "aux_weight") {
      c.train.aux_weight = to_double(key, val);
    } else if (key == "val_interval") {
      c.train.val_interval = to_int(key, val);
    } else if (key == "augment") {
      c.train.augment = to_bool(key, val);
    } else if (key == "timing") {
      c.train.timing = to_bool(key, val);
    } else if (key == "resume") {
      c.train.resume = val;
    } else {
      SS_CHECK(false, "config: unknown key '" << key << "' on line " << lineno);
    }
  }
  return c;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  return parse_config(in);
}

std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "family = " << family_name(c.spec.family) << "\n";
  os << "version = " << (c.spec.version == 0 ? "baseline" : std::to_string(c.spec.version))
     << "\n";
  os << "classes = " << c.spec.num_classes << "\n";
  os << "channel_scale = " << c.spec.channel_scale << "\n";
  os << "input_h = " << c.spec.input_h << "\n";
  os << "input_w = " << c.spec.input_w << "\n";
  os << "dataset = " << c.dataset << "\n";
  os << "val_dataset = " << c.val_dataset << "\n";
  os << "out_dir = " << c.train.out_dir << "\n";
  os << "iterations = " << c.train.max_iterations << "\n";
  os << "base_lr = " << fmt(c.train.base_lr) << "\n";
  os << "momentum = " << fmt(c.train.momentum) << "\n";
  os << "weight_decay = " << fmt(c.train.weight_decay) << "\n";
  os << "poly_power = " << fmt(c.train.poly_power) << "\n";
  os << "sequence_length = " << c.train.T << "\n";
  os << "batch_size = " << c.train.batch_size << "\n";
  os << "seed = " << c.train.seed << "\n";
  os << "aux_weight = " << fmt(c.train.aux_weight) << "\n";
  os << "val_interval = " << c.train.val_interval << "\n";
  os << "augment = " << (c.train.augment ? "true" : "false") << "\n";
  os << "timing = " << (c.train.timing ? "true" : "false") << "\n";
  os << "resume = " << c.train.resume << "\n";
  return os.str();
}

}  // namespace seqseg
