#include "seqseg/dataset.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "seqseg/palette.hpp"

namespace fs = std::filesystem;

namespace seqseg {

// ---- pixmap I/O ----

namespace {

uint8_t to_byte(float v) {
  float c = std::clamp(v, 0.0f, 1.0f);
  return (uint8_t)std::lround(c * 255.0f);
}

void read_pnm_header(std::ifstream& in, const std::string& path, const char* magic, int& w,
                     int& h) {
  std::string m;
  in >> m;
  if (m != magic) throw std::runtime_error(path + ": expected " + magic + " header, got " + m);
  int maxval;
  in >> w >> h >> maxval;
  if (!in || w <= 0 || h <= 0 || maxval != 255)
    throw std::runtime_error(path + ": bad pnm header");
  in.get();  // single whitespace before raster
}

}  // namespace

void write_ppm(const std::string& path, const Tensor<float>& img) {
  SS_CHECK(img.shape.n == 1 && img.shape.c == 3, "write_ppm: need (1,3,H,W), got " << img.shape.str());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_ppm: cannot open " + path);
  out << "P6\n" << img.shape.w << " " << img.shape.h << "\n255\n";
  const long long hw = 1LL * img.shape.h * img.shape.w;
  std::vector<uint8_t> row(3LL * hw);
  for (long long i = 0; i < hw; ++i)
    for (int c = 0; c < 3; ++c) row[3 * i + c] = to_byte(img.data()[c * hw + i]);
  out.write((const char*)row.data(), (std::streamsize)row.size());
  if (!out) throw std::runtime_error("write_ppm: write failed for " + path);
}

Tensor<float> read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_ppm: cannot open " + path);
  int w, h;
  read_pnm_header(in, path, "P6", w, h);
  std::vector<uint8_t> raw(3LL * h * w);
  in.read((char*)raw.data(), (std::streamsize)raw.size());
  if (!in) throw std::runtime_error("read_ppm: truncated raster in " + path);
  Tensor<float> img(Shape{1, 3, h, w});
  const long long hw = 1LL * h * w;
  for (long long i = 0; i < hw; ++i)
    for (int c = 0; c < 3; ++c) img.data()[c * hw + i] = raw[3 * i + c] / 255.0f;
  return img;
}

void write_pgm(const std::string& path, const LabelMap& labels) {
  SS_CHECK(labels.n == 1, "write_pgm: need single map");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_pgm: cannot open " + path);
  out << "P5\n" << labels.w << " " << labels.h << "\n255\n";
  std::vector<uint8_t> row(labels.numel());
  for (long long i = 0; i < labels.numel(); ++i) {
    int32_t v = labels.v[i];
    SS_CHECK(v >= 0 && v <= 255, "write_pgm: label " << v << " not storable in 8 bits");
    row[i] = (uint8_t)v;
  }
  out.write((const char*)row.data(), (std::streamsize)row.size());
  if (!out) throw std::runtime_error("write_pgm: write failed for " + path);
}

LabelMap read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_pgm: cannot open " + path);
  int w, h;
  read_pnm_header(in, path, "P5", w, h);
  std::vector<uint8_t> raw(1LL * h * w);
  in.read((char*)raw.data(), (std::streamsize)raw.size());
  if (!in) throw std::runtime_error("read_pgm: truncated raster in " + path);
  LabelMap m = LabelMap::zeros(1, h, w);
  for (long long i = 0; i < m.numel(); ++i) m.v[i] = raw[i];
  return m;
}

// ---- scene generation ----

namespace {

uint64_t mix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

double unit(std::mt19937_64& rng) { return (rng() >> 11) * 0x1.0p-53; }

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * unit(rng);
}

// Half extents of an object's footprint.
void extents(const MovingObject& o, double& ex, double& ey) {
  switch (o.kind) {
    case 0: ex = ey = o.size / 2; break;
    case 1: ex = o.size / 2; ey = o.size * 0.35; break;
    default: ex = o.size / 2; ey = o.size * 0.45; break;
  }
}

bool inside_object(const MovingObject& o, int frame, double x, double y) {
  double px = o.cx + o.vx * frame, py = o.cy + o.vy * frame;
  double dx = x - px, dy = y - py;
  switch (o.kind) {
    case 0:
      return dx * dx + dy * dy <= (o.size / 2) * (o.size / 2);
    case 1:
      return std::abs(dx) <= o.size / 2 && std::abs(dy) <= o.size * 0.35;
    default: {
      double hh = o.size * 0.45;
      if (std::abs(dy) > hh) return false;
      // apex up: width grows linearly toward the base
      return std::abs(dx) <= (dy + hh) / (2 * hh) * (o.size / 2);
    }
  }
}

int surface_class(const SceneScript& s, int frame, int y) {
  return y < s.boundary_y + s.jitter[frame] ? 0 : 1;
}

}  // namespace

SceneScript make_scene(uint64_t seed, int h, int w, int k, int frames, double occlusion_prob,
                       double noise_sigma) {
  SS_CHECK(k >= 4 && k <= kMaxClasses, "make_scene: K must be in [4," << kMaxClasses << "], got " << k);
  SS_CHECK(frames >= 1 && h >= 16 && w >= 16, "make_scene: bad geometry");
  SceneScript s;
  s.H = h;
  s.W = w;
  s.K = k;
  s.L = frames;
  s.seed = seed;
  s.noise_sigma = noise_sigma;
  std::mt19937_64 rng(mix(seed));
  s.boundary_y = uniform(rng, 0.3 * h, 0.7 * h);
  s.jitter.resize(frames);
  for (auto& j : s.jitter) j = (int)(rng() % 5) - 2;

  // round-robin classes over a shuffled list so every class shows up
  std::vector<int> classes;
  for (int c = 2; c < k; ++c) classes.push_back(c);
  for (size_t i = classes.size(); i > 1; --i) std::swap(classes[i - 1], classes[rng() % i]);

  int num_objects = 4 + (int)(rng() % 3);
  for (int i = 0; i < num_objects; ++i) {
    MovingObject o;
    o.kind = (int)(rng() % 3);
    o.cls = classes[i % classes.size()];
    // large footprints keep the object classes' pixel share comparable to the
    // surface classes, so per-class gradients are not starved
    double lo = std::min(24.0, h / 2.6), hi = std::max(lo + 2.0, std::min(44.0, h / 1.5));
    o.size = uniform(rng, lo, hi);
    o.vx = uniform(rng, -1.5, 1.5);
    o.vy = uniform(rng, -1.5, 1.5);
    double ex, ey;
    extents(o, ex, ey);
    auto place = [&](double extent, double vel, int dim) {
      double m = extent + 2 + std::abs(vel) * (frames - 1);
      if (m >= dim - 1 - m) return dim / 2.0;  // too tight, park in the middle
      return uniform(rng, m, dim - 1 - m);
    };
    // stays >= 1 px inside bounds across all frames; shrink motion if needed
    double my = ey + 2 + std::abs(o.vy) * (frames - 1);
    if (my >= h - 1 - my) o.vy = 0;
    double mx = ex + 2 + std::abs(o.vx) * (frames - 1);
    if (mx >= w - 1 - mx) o.vx = 0;
    o.cx = place(ex, o.vx, w);
    o.cy = place(ey, o.vy, h);
    s.objects.push_back(o);
  }

  if (unit(rng) < occlusion_prob) {
    // A large curtain anchored over one object's final position. It spans a
    // sizeable fraction of the frame so a single-frame observer loses real
    // area, and it is centered on an object so the evidence for that object
    // exists only in the earlier frames.
    const auto& o = s.objects[rng() % s.objects.size()];
    int f = frames - 1;
    double px = o.cx + o.vx * f, py = o.cy + o.vy * f;
    OcclusionEvent e;
    e.frame = f;
    int pw = (int)std::llround(w * (0.35 + 0.20 * unit(rng)));
    int ph = (int)std::llround(h * (0.45 + 0.30 * unit(rng)));
    pw = std::min(pw, w);
    ph = std::min(ph, h);
    int cx = std::clamp((int)std::llround(px), pw / 2, w - pw + pw / 2);
    int cy = std::clamp((int)std::llround(py), ph / 2, h - ph + ph / 2);
    e.x0 = cx - pw / 2;
    e.x1 = e.x0 + pw;
    e.y0 = cy - ph / 2;
    e.y1 = e.y0 + ph;
    s.occlusion = e;
  }
  return s;
}

Tensor<float> render_frame(const SceneScript& s, int k, bool with_occlusion) {
  SS_CHECK(k >= 0 && k < s.L, "render_frame: frame " << k << " out of range");
  Tensor<float> img(Shape{1, 3, s.H, s.W});
  const long long hw = 1LL * s.H * s.W;
  for (int y = 0; y < s.H; ++y)
    for (int x = 0; x < s.W; ++x) {
      int cls = surface_class(s, k, y);
      for (const auto& o : s.objects)
        if (inside_object(o, k, x, y)) cls = o.cls;
      if (with_occlusion && s.occlusion && s.occlusion->frame == k && x >= s.occlusion->x0 &&
          x < s.occlusion->x1 && y >= s.occlusion->y0 && y < s.occlusion->y1)
        cls = surface_class(s, k, y);  // background-textured patch
      for (int c = 0; c < 3; ++c)
        img.data()[c * hw + 1LL * y * s.W + x] = kPalette[cls][c] / 255.0f;
    }
  // The labeled anchor frame is the degraded one: context frames carry a
  // quarter of the nominal noise while the final frame carries 2.5x. A
  // single-frame observer must read the scene through the heavy noise; a
  // recurrent one can lean on the cleaner history.
  double sigma = (k == s.L - 1) ? 2.5 * s.noise_sigma : 0.25 * s.noise_sigma;
  if (sigma > 0) {
    std::mt19937_64 rng(mix(s.seed + 0x5bd1e995u * (uint64_t)(k + 1)));
    for (long long i = 0; i < 3 * hw; i += 2) {
      double u1 = std::max(unit(rng), 1e-12), u2 = unit(rng);
      double r = std::sqrt(-2.0 * std::log(u1));
      float z0 = (float)(r * std::cos(2 * M_PI * u2));
      float z1 = (float)(r * std::sin(2 * M_PI * u2));
      img.data()[i] = std::clamp(img.data()[i] + (float)sigma * z0, 0.0f, 1.0f);
      if (i + 1 < 3 * hw)
        img.data()[i + 1] = std::clamp(img.data()[i + 1] + (float)sigma * z1, 0.0f, 1.0f);
    }
  }
  return img;
}

LabelMap render_label(const SceneScript& s, int k) {
  SS_CHECK(k >= 0 && k < s.L, "render_label: frame " << k << " out of range");
  LabelMap m = LabelMap::zeros(1, s.H, s.W);
  for (int y = 0; y < s.H; ++y)
    for (int x = 0; x < s.W; ++x) {
      int cls = surface_class(s, k, y);
      for (const auto& o : s.objects)
        if (inside_object(o, k, x, y)) cls = o.cls;
      m.at(0, y, x) = cls;
    }
  return m;
}

// ---- on-disk dataset ----

void generate_dataset(const GenConfig& cfg) {
  SS_CHECK(cfg.num_sequences >= 1, "generate_dataset: need >= 1 sequence");
  SS_CHECK(cfg.H > 0 && cfg.H % 32 == 0 && cfg.W > 0 && cfg.W % 32 == 0,
           "generate_dataset: H and W must be positive multiples of 32, got " << cfg.H << "x"
                                                                              << cfg.W);
  SS_CHECK(cfg.K >= 4 && cfg.K <= kMaxClasses,
           "generate_dataset: K must be in [4," << kMaxClasses << "], got " << cfg.K);
  SS_CHECK(cfg.occlusion_prob >= 0 && cfg.occlusion_prob <= 1,
           "generate_dataset: occlusion_prob must be in [0,1]");
  SS_CHECK(cfg.T >= 1 && cfg.frames_per_seq >= cfg.T,
           "generate_dataset: frames_per_seq must be >= T");
  SS_CHECK(!cfg.out_dir.empty(), "generate_dataset: out_dir required");

  fs::create_directories(cfg.out_dir);
  std::ofstream manifest(cfg.out_dir + "/manifest.tsv");
  if (!manifest) throw std::runtime_error("generate_dataset: cannot write manifest in " + cfg.out_dir);
  manifest << "sequence_id\tt\tframes\tlabel\tseed\n";

  for (int i = 0; i < cfg.num_sequences; ++i) {
    uint64_t sseed = mix(cfg.seed + 0x9e3779b97f4a7c15ull * (uint64_t)(i + 1));
    auto scene = make_scene(sseed, cfg.H, cfg.W, cfg.K, cfg.frames_per_seq,
                            cfg.occlusion_prob, cfg.noise_sigma);
    std::string rel = "seq" + std::to_string(i);
    fs::create_directories(cfg.out_dir + "/" + rel);
    for (int f = 0; f < cfg.frames_per_seq; ++f)
      write_ppm(cfg.out_dir + "/" + rel + "/frame" + std::to_string(f) + ".ppm",
                render_frame(scene, f, true));
    for (int t = cfg.T - 1; t < cfg.frames_per_seq; ++t) {
      std::string lab = rel + "/label" + std::to_string(t) + ".pgm";
      write_pgm(cfg.out_dir + "/" + lab, render_label(scene, t));
      manifest << i << "\t" << t << "\t";
      for (int f = t - cfg.T + 1; f <= t; ++f)
        manifest << rel + "/frame" + std::to_string(f) + ".ppm" << (f == t ? "" : ",");
      manifest << "\t" << lab << "\t" << sseed << "\n";
    }
  }
  if (!manifest) throw std::runtime_error("generate_dataset: manifest write failed");
}

Dataset Dataset::open(const std::string& root) {
  Dataset d;
  d.root_ = root;
  std::ifstream in(root + "/manifest.tsv");
  if (!in) throw std::runtime_error("Dataset::open: cannot read " + root + "/manifest.tsv");
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    WindowRef w;
    std::istringstream ls(line);
    std::string frames, seed;
    std::string seq, t;
    if (!std::getline(ls, seq, '\t') || !std::getline(ls, t, '\t') ||
        !std::getline(ls, frames, '\t') || !std::getline(ls, w.label_path, '\t') ||
        !std::getline(ls, seed, '\t'))
      throw std::runtime_error("Dataset::open: malformed manifest row: " + line);
    w.seq_id = std::stoi(seq);
    w.t = std::stoi(t);
    w.seed = std::stoull(seed);
    std::istringstream fl(frames);
    std::string p;
    while (std::getline(fl, p, ',')) w.frame_paths.push_back(p);
    d.windows_.push_back(std::move(w));
  }
  return d;
}

VideoSample Dataset::load_window(int window_index, int t_len) const {
  SS_CHECK(window_index >= 0 && window_index < (int)windows_.size(),
           "load_window: index " << window_index << " out of range");
  const auto& w = windows_[window_index];
  SS_CHECK(t_len >= 1 && t_len <= (int)w.frame_paths.size(),
           "load_window: T=" << t_len << " not available (stored window has "
                             << w.frame_paths.size() << " frames)");
  VideoSample s;
  s.seq_id = w.seq_id;
  s.t = w.t;
  s.seed = w.seed;
  for (size_t i = w.frame_paths.size() - t_len; i < w.frame_paths.size(); ++i)
    s.frames.push_back(read_ppm(root_ + "/" + w.frame_paths[i]));
  s.label = read_pgm(root_ + "/" + w.label_path);
  return s;
}

VideoSample Dataset::load_window(int seq_id, int t, int t_len) const {
  for (size_t i = 0; i < windows_.size(); ++i)
    if (windows_[i].seq_id == seq_id && windows_[i].t == t)
      return load_window((int)i, t_len);
  SS_CHECK(false, "load_window: no window for sequence " << seq_id << " at t=" << t);
  return {};
}

// ---- augmentation ----

namespace {

void resize_bilinear(const float* in, int h, int w, float* out, int oh, int ow) {
  for (int y = 0; y < oh; ++y) {
    double sy = (y + 0.5) * h / oh - 0.5;
    int y0 = std::clamp((int)std::floor(sy), 0, h - 1);
    int y1 = std::min(y0 + 1, h - 1);
    double fy = std::clamp(sy - y0, 0.0, 1.0);
    for (int x = 0; x < ow; ++x) {
      double sx = (x + 0.5) * w / ow - 0.5;
      int x0 = std::clamp((int)std::floor(sx), 0, w - 1);
      int x1 = std::min(x0 + 1, w - 1);
      double fx = std::clamp(sx - x0, 0.0, 1.0);
      double top = in[y0 * w + x0] + fx * (in[y0 * w + x1] - in[y0 * w + x0]);
      double bot = in[y1 * w + x0] + fx * (in[y1 * w + x1] - in[y1 * w + x0]);
      out[y * ow + x] = (float)(top + fy * (bot - top));
    }
  }
}

template <class T, class Src>
void crop_pad_center(const Src& src, int sh, int sw, T* dst, int dh, int dw, T fill) {
  for (int y = 0; y < dh; ++y)
    for (int x = 0; x < dw; ++x) {
      int sy = y + (sh - dh) / 2;
      int sx = x + (sw - dw) / 2;
      dst[y * dw + x] = (sy >= 0 && sy < sh && sx >= 0 && sx < sw) ? src[sy * sw + sx] : fill;
    }
}

}  // namespace

AugmentDraw draw_augment(std::mt19937_64& rng) {
  AugmentDraw d;
  d.mirror = rng() % 2 == 1;
  d.scale = uniform(rng, 0.5, 2.0);
  return d;
}

void augment_with(VideoSample& sample, const AugmentDraw& draw) {
  SS_CHECK(!sample.frames.empty(), "augment: empty sample");
  const int h = sample.frames[0].shape.h, w = sample.frames[0].shape.w;
  const long long hw = 1LL * h * w;

  if (draw.mirror) {
    for (auto& f : sample.frames) {
      Tensor<float> m(f.shape);
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x)
            m.data()[c * hw + y * w + x] = f.data()[c * hw + y * w + (w - 1 - x)];
      f = m;
    }
    LabelMap ml = sample.label;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) ml.at(0, y, x) = sample.label.at(0, y, w - 1 - x);
    sample.label = ml;
  }

  if (draw.scale == 1.0) return;
  const int nh = std::max(1, (int)std::lround(h * draw.scale));
  const int nw = std::max(1, (int)std::lround(w * draw.scale));
  std::vector<float> buf(1LL * nh * nw);
  for (auto& f : sample.frames) {
    Tensor<float> out(f.shape);
    for (int c = 0; c < 3; ++c) {
      resize_bilinear(f.data() + c * hw, h, w, buf.data(), nh, nw);
      crop_pad_center(buf, nh, nw, out.data() + c * hw, h, w, 0.0f);
    }
    f = out;
  }
  // nearest-neighbor for labels
  std::vector<int32_t> lbuf(1LL * nh * nw);
  for (int y = 0; y < nh; ++y)
    for (int x = 0; x < nw; ++x)
      lbuf[y * nw + x] = sample.label.at(0, std::min(h - 1, (int)(1LL * y * h / nh)),
                                         std::min(w - 1, (int)(1LL * x * w / nw)));
  LabelMap out = LabelMap::zeros(1, h, w);
  crop_pad_center(lbuf, nh, nw, out.v.data(), h, w, (int32_t)kIgnoreLabel);
  sample.label = out;
}

}  // namespace seqseg
