#pragma once

#include <optional>
#include <random>

#include "seqseg/nn_ops.hpp"

namespace seqseg {

// ---- pixmap I/O (binary PPM P6 / PGM P5) ----

void write_ppm(const std::string& path, const Tensor<float>& img);  // (1,3,H,W) in [0,1]
Tensor<float> read_ppm(const std::string& path);
void write_pgm(const std::string& path, const LabelMap& labels);
LabelMap read_pgm(const std::string& path);

// ---- scene scripting and rendering ----

struct MovingObject {
  int kind = 0;  // 0 disc, 1 rectangle, 2 triangle
  int cls = 2;
  double cx = 0, cy = 0;  // position at frame 0
  double vx = 0, vy = 0;  // px/frame
  double size = 10;
};

struct OcclusionEvent {
  int frame = 0;
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open pixel rect
};

// Deterministic description of one sequence: two background surfaces split by
// a jittering horizontal boundary, plus objects on linear trajectories. The
// optional occlusion event targets only the final frame, so that the covered
// pixels are recoverable from earlier frames but never from the frame itself.
struct SceneScript {
  int H = 0, W = 0, K = 0, L = 0;
  uint64_t seed = 0;
  double boundary_y = 0;
  std::vector<int> jitter;  // per frame, +-2 px
  std::vector<MovingObject> objects;
  std::optional<OcclusionEvent> occlusion;
  double noise_sigma = 0.2;
};

SceneScript make_scene(uint64_t seed, int h, int w, int k, int frames, double occlusion_prob,
                       double noise_sigma);

// Renders frame `k`. with_occlusion applies the occlusion patch (appearance
// only); labels always carry the true classes.
Tensor<float> render_frame(const SceneScript& s, int k, bool with_occlusion);
LabelMap render_label(const SceneScript& s, int k);

// ---- on-disk dataset ----

struct GenConfig {
  int num_sequences = 0;
  int H = 0, W = 0, K = 0;
  int T = 4;               // window length recorded in the manifest
  int frames_per_seq = 6;  // sequence length; anchors are T-1 .. frames_per_seq-1
  uint64_t seed = 42;
  double occlusion_prob = 0.0;
  double noise_sigma = 0.2;
  std::string out_dir;
};

void generate_dataset(const GenConfig& cfg);

struct VideoSample {
  std::vector<Tensor<float>> frames;  // each (1,3,H,W)
  LabelMap label;                     // final frame only
  int seq_id = 0;
  int t = 0;  // anchor frame index
  uint64_t seed = 0;
};

struct WindowRef {
  int seq_id = 0;
  int t = 0;
  std::vector<std::string> frame_paths;  // relative to root, oldest first
  std::string label_path;
  uint64_t seed = 0;
};

class Dataset {
 public:
  static Dataset open(const std::string& root);

  const std::string& root() const { return root_; }
  int num_windows() const { return (int)windows_.size(); }
  const std::vector<WindowRef>& windows() const { return windows_; }

  // Frames [t-T+1 .. t] plus the label of frame t.
  VideoSample load_window(int window_index, int t_len) const;
  VideoSample load_window(int seq_id, int t, int t_len) const;

 private:
  std::string root_;
  std::vector<WindowRef> windows_;
};

// ---- augmentation ----

struct AugmentDraw {
  bool mirror = false;
  double scale = 1.0;
};

AugmentDraw draw_augment(std::mt19937_64& rng);

// One mirror decision and one scale ratio applied identically to all frames
// and the label; the result is cropped/padded back to the original size with
// padded label pixels set to the ignore label.
void augment_with(VideoSample& sample, const AugmentDraw& draw);
inline void augment(VideoSample& sample, std::mt19937_64& rng) {
  augment_with(sample, draw_augment(rng));
}

}  // namespace seqseg
