// seqseg: batch experiment driver for the recurrent segmentation lab.
//
// Subcommands: generate, train, eval, bench, compare. Exit codes: 0 on
// success, 1 on usage errors, 2 on runtime failures.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "seqseg/build.hpp"
#include "seqseg/checkpoint.hpp"
#include "seqseg/config.hpp"
#include "seqseg/metrics.hpp"
#include "seqseg/palette.hpp"
#include "seqseg/training.hpp"

namespace fs = std::filesystem;
using namespace seqseg;

namespace {

bool parse_size(const std::string& s, int& h, int& w) {
  auto x = s.find('x');
  if (x == std::string::npos) return false;
  try {
    h = std::stoi(s.substr(0, x));
    w = std::stoi(s.substr(x + 1));
  } catch (...) {
    return false;
  }
  return h > 0 && w > 0;
}

uint64_t file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  uint64_t h = 1469598103934665603ull;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= (unsigned char)buf[i];
      h *= 1099511628211ull;
    }
  }
  return h;
}

void write_label_ppm(const std::string& path, const LabelMap& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "P6\n" << labels.w << " " << labels.h << "\n255\n";
  for (int y = 0; y < labels.h; ++y)
    for (int x = 0; x < labels.w; ++x) {
      int32_t c = labels.v[(size_t)y * labels.w + x];
      std::array<uint8_t, 3> rgb{0, 0, 0};
      if (c >= 0 && c < kMaxClasses) rgb = kPalette[(size_t)c];
      out.write((const char*)rgb.data(), 3);
    }
}

struct EvalRow {
  std::string variant;
  double accuracy = 0, miou_v = 0, median_ms = 0, mean_ms = 0;
};

void write_eval_csv(const std::string& path, const std::vector<EvalRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "variant,accuracy,miou,median_ms,mean_ms\n";
  for (const auto& r : rows)
    out << r.variant << "," << r.accuracy << "," << r.miou_v << "," << r.median_ms << ","
        << r.mean_ms << "\n";
}

void write_per_class_csv(const std::string& path, const ConfusionMatrix& cm) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "class,iou\n";
  auto ious = per_class_iou(cm);
  for (size_t c = 0; c < ious.size(); ++c) {
    out << c << ",";
    if (ious[c] < 0)
      out << "absent";
    else
      out << ious[c];
    out << "\n";
  }
}

// ---- generate ----

struct GenFlags {
  int seqs = 64;
  std::string size = "64x128";
  int classes = 6;
  uint64_t seed = 42;
  bool seed_given = false;
  double occlusion = 0.0;
  double noise = 0.2;
  int frames = 6;
  int window = 4;
  std::string out;
};

int cmd_generate(const GenFlags& f) {
  GenConfig cfg;
  if (!parse_size(f.size, cfg.H, cfg.W))
    throw std::invalid_argument("--size must look like 64x128");
  SS_CHECK(cfg.H % 32 == 0 && cfg.W % 32 == 0,
           "--size: height and width must be multiples of 32 (network stride), got " << f.size);
  cfg.num_sequences = f.seqs;
  cfg.K = f.classes;
  cfg.T = f.window;
  cfg.frames_per_seq = f.frames;
  cfg.seed = f.seed;
  cfg.occlusion_prob = f.occlusion;
  cfg.noise_sigma = f.noise;
  cfg.out_dir = f.out;
  if (!f.seed_given) std::cout << "seed not given, using default " << cfg.seed << "\n";
  generate_dataset(cfg);
  std::cout << "wrote " << cfg.num_sequences << " sequences to " << cfg.out_dir << "\n";
  return 0;
}

// ---- train ----

int cmd_train(const std::string& config_path) {
  ExperimentConfig cfg = parse_config_file(config_path);
  cfg.spec.validate();
  cfg.train.validate();
  SS_CHECK(!cfg.dataset.empty(), "config: dataset is required for train");
  SS_CHECK(!cfg.train.out_dir.empty(), "config: out_dir is required for train");

  auto net = build<float>(cfg.spec);
  init_params(*net, cfg.train.seed);
  auto train_data = Dataset::open(cfg.dataset);
  std::optional<Dataset> val_data;
  if (!cfg.val_dataset.empty()) val_data = Dataset::open(cfg.val_dataset);

  auto res = train(*net, train_data, val_data ? &*val_data : nullptr, cfg.train);
  std::cout << cfg.spec.variant_name() << ": " << res.iterations << " iterations, best mIoU "
            << res.best_miou << "\n"
            << "checkpoint: " << res.checkpoint_path << "\nlog: " << res.log_path << "\n";
  return 0;
}

// ---- eval ----

int cmd_eval(const std::string& config_path, const std::string& ckpt, const std::string& out_csv,
             const std::string& class_csv, int runs, int warmup) {
  ExperimentConfig cfg = parse_config_file(config_path);
  cfg.spec.validate();
  std::string data_root = !cfg.val_dataset.empty() ? cfg.val_dataset : cfg.dataset;
  SS_CHECK(!data_root.empty(), "config: dataset or val_dataset is required for eval");

  auto net = build<float>(cfg.spec);
  auto params = net->params();
  load_checkpoint(ckpt, params);
  auto data = Dataset::open(data_root);

  auto ev = evaluate(*net, data, cfg.train.T);
  auto tm = bench_inference(*net, runs, warmup);

  EvalRow row{cfg.spec.variant_name(), ev.accuracy, ev.miou, tm.median_ms, tm.mean_ms};
  write_eval_csv(out_csv, {row});
  if (!class_csv.empty()) write_per_class_csv(class_csv, ev.cm);
  std::cout << "variant,accuracy,miou,median_ms,mean_ms\n"
            << row.variant << "," << row.accuracy << "," << row.miou_v << "," << row.median_ms
            << "," << row.mean_ms << "\n";
  return 0;
}

// ---- bench ----

int cmd_bench(const std::string& config_path, const std::string& ckpt, int runs, int warmup,
              const std::string& out_csv) {
  ExperimentConfig cfg = parse_config_file(config_path);
  cfg.spec.validate();
  auto net = build<float>(cfg.spec);
  if (!ckpt.empty()) {
    auto params = net->params();
    load_checkpoint(ckpt, params);
  } else {
    init_params(*net, cfg.train.seed);
  }
  auto tm = bench_inference(*net, runs, warmup);
  std::ostringstream os;
  os << "scope,median_ms,mean_ms\n";
  os << "forward," << tm.median_ms << "," << tm.mean_ms << "\n";
  for (const auto& p : tm.placements)
    os << "cell:" << p.tag << "," << p.median_ms << "," << p.mean_ms << "\n";
  std::cout << os.str();
  if (!out_csv.empty()) {
    std::ofstream out(out_csv);
    if (!out) throw std::runtime_error("cannot write " + out_csv);
    out << os.str();
  }
  return 0;
}

// ---- compare ----

struct CompareFlags {
  std::string dataset;
  std::string val_dataset;
  std::string out = "compare_out";
  int classes = 6;
  int channel_scale = 8;
  std::string size = "64x128";
  int iterations = 300;
  uint64_t seed = 42;
  int T = 4;
  int runs = 20;
  int warmup = 2;
  double base_lr = 0.001;
};

int cmd_compare(const CompareFlags& f) {
  int H, W;
  if (!parse_size(f.size, H, W)) throw std::invalid_argument("--size must look like 64x128");
  SS_CHECK(!f.dataset.empty(), "--dataset is required");
  std::string val_root = f.val_dataset.empty() ? f.dataset : f.val_dataset;

  auto train_data = Dataset::open(f.dataset);
  auto val_data = Dataset::open(val_root);
  uint64_t dhash = file_hash(f.dataset + "/manifest.tsv");
  fs::create_directories(f.out);

  // Fixed probe window: argmax maps become the qualitative comparison strip.
  auto probe = val_data.load_window(0, f.T);
  write_label_ppm(f.out + "/probe_gt.ppm", probe.label);

  std::vector<EvalRow> rows;
  std::map<std::string, double> mious, medians;
  std::ofstream report(f.out + "/report.csv");
  if (!report) throw std::runtime_error("cannot write " + f.out + "/report.csv");
  report << "variant,accuracy,miou,median_ms,mean_ms,dataset_hash\n";

  for (const auto& spec : all_variants(f.classes, f.channel_scale, H, W)) {
    auto net = build<float>(spec);
    init_params(*net, f.seed);

    TrainConfig tc;
    tc.max_iterations = f.iterations;
    tc.base_lr = f.base_lr;
    tc.seed = f.seed;
    tc.T = spec.version == 0 ? 1 : f.T;  // baselines are frame-independent
    tc.out_dir = f.out + "/" + spec.variant_name();
    auto res = train(*net, train_data, &val_data, tc);

    auto params = net->params();
    load_checkpoint(res.checkpoint_path, params);
    auto ev = evaluate(*net, val_data, f.T);
    auto tm = bench_inference(*net, f.runs, f.warmup);

    auto tape_free = net->zero_states(1);
    StepOut<float> out;
    for (const auto& fr : probe.frames) out = net->forward(fr, tape_free, nullptr);
    write_label_ppm(f.out + "/probe_" + spec.variant_name() + ".ppm",
                    argmax_channels(out.probs));

    EvalRow row{spec.variant_name(), ev.accuracy, ev.miou, tm.median_ms, tm.mean_ms};
    rows.push_back(row);
    mious[row.variant] = ev.miou;
    medians[row.variant] = tm.median_ms;
    report << row.variant << "," << row.accuracy << "," << row.miou_v << "," << row.median_ms
           << "," << row.mean_ms << "," << std::hex << dhash << std::dec << "\n";
    std::cout << row.variant << ": acc " << row.accuracy << " miou " << row.miou_v
              << " median_ms " << row.median_ms << "\n";
  }

  auto flag = [](const std::string& name, bool ok) {
    std::cout << (ok ? "PASS " : "FAIL ") << name << "\n";
  };
  bool icnet_fastest = true;
  for (int v = 1; v <= 6; ++v)
    icnet_fastest &= medians["icnet"] < medians["icnet_v" + std::to_string(v)];
  bool v3_fastest = true, v6_slowest = true;
  for (int v = 1; v <= 6; ++v) {
    if (v != 3) v3_fastest &= medians["icnet_v3"] <= medians["icnet_v" + std::to_string(v)];
    if (v != 6) v6_slowest &= medians["icnet_v6"] >= medians["icnet_v" + std::to_string(v)];
  }
  flag("baseline icnet fastest", icnet_fastest);
  flag("icnet_v3 fastest recurrent", v3_fastest);
  flag("icnet_v6 slowest recurrent", v6_slowest);
  flag("icnet_v2 miou advantage >= 2pts", mious["icnet_v2"] >= mious["icnet"] + 0.02);
  flag("icnet_v5 miou advantage >= 2pts", mious["icnet_v5"] >= mious["icnet"] + 0.02);
  flag("segnet_v2 miou advantage >= 2pts", mious["segnet_v2"] >= mious["segnet"] + 0.02);
  std::cout << "report: " << f.out << "/report.csv (" << rows.size() << " variants)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Recurrent semantic video segmentation lab"};
  app.require_subcommand(1);

  GenFlags gf;
  auto* gen = app.add_subcommand("generate", "Render a synthetic video dataset");
  gen->add_option("--seqs", gf.seqs, "Number of sequences")->capture_default_str();
  gen->add_option("--size", gf.size, "Frame size HxW")->capture_default_str();
  gen->add_option("--classes", gf.classes, "Number of classes")->capture_default_str();
  gen->add_option("--seed", gf.seed, "Master seed")->capture_default_str();
  gen->add_option("--occlusion", gf.occlusion, "Occlusion probability")->capture_default_str();
  gen->add_option("--noise", gf.noise, "Gaussian noise sigma")->capture_default_str();
  gen->add_option("--frames", gf.frames, "Frames per sequence")->capture_default_str();
  gen->add_option("--window", gf.window, "Window length recorded in manifest")
      ->capture_default_str();
  gen->add_option("--out", gf.out, "Output directory")->required();

  std::string train_config;
  auto* tr = app.add_subcommand("train", "Train one variant from a config file");
  tr->add_option("config", train_config, "Experiment config path")->required();

  std::string eval_config, eval_ckpt, eval_csv = "eval.csv", eval_class_csv;
  int eval_runs = 20, eval_warmup = 2;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("config", eval_config, "Experiment config path")->required();
  ev->add_option("--checkpoint", eval_ckpt, "Checkpoint path")->required();
  ev->add_option("--out", eval_csv, "Metrics CSV path")->capture_default_str();
  ev->add_option("--class-out", eval_class_csv, "Per-class IoU CSV path");
  ev->add_option("--runs", eval_runs, "Timing runs")->capture_default_str();
  ev->add_option("--warmup", eval_warmup, "Timing warm-ups")->capture_default_str();

  std::string bench_config, bench_ckpt, bench_csv;
  int bench_runs = 20, bench_warmup = 2;
  auto* be = app.add_subcommand("bench", "Time inference for one variant");
  be->add_option("config", bench_config, "Experiment config path")->required();
  be->add_option("--checkpoint", bench_ckpt, "Optional checkpoint path");
  be->add_option("--runs", bench_runs, "Timing runs")->capture_default_str();
  be->add_option("--warmup", bench_warmup, "Timing warm-ups")->capture_default_str();
  be->add_option("--out", bench_csv, "Timing CSV path");

  CompareFlags cf;
  auto* cp = app.add_subcommand("compare", "Train and rank every variant");
  cp->add_option("--dataset", cf.dataset, "Training dataset root")->required();
  cp->add_option("--val-dataset", cf.val_dataset, "Validation dataset root");
  cp->add_option("--out", cf.out, "Report directory")->capture_default_str();
  cp->add_option("--classes", cf.classes, "Number of classes")->capture_default_str();
  cp->add_option("--channel-scale", cf.channel_scale, "Width divisor")->capture_default_str();
  cp->add_option("--size", cf.size, "Frame size HxW")->capture_default_str();
  cp->add_option("--iterations", cf.iterations, "Training iterations per variant")
      ->capture_default_str();
  cp->add_option("--seed", cf.seed, "Shared seed")->capture_default_str();
  cp->add_option("--window", cf.T, "Sequence length")->capture_default_str();
  cp->add_option("--runs", cf.runs, "Timing runs")->capture_default_str();
  cp->add_option("--warmup", cf.warmup, "Timing warm-ups")->capture_default_str();
  cp->add_option("--lr", cf.base_lr, "Base learning rate")->capture_default_str();

  try {
    app.parse(argc, argv);
    gf.seed_given = gen->count("--seed") > 0;
    if (*gen) return cmd_generate(gf);
    if (*tr) return cmd_train(train_config);
    if (*ev) return cmd_eval(eval_config, eval_ckpt, eval_csv, eval_class_csv, eval_runs,
                             eval_warmup);
    if (*be) return cmd_bench(bench_config, bench_ckpt, bench_runs, bench_warmup, bench_csv);
    if (*cp) return cmd_compare(cf);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;  // usage errors collapse to 1; --help stays 0
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
