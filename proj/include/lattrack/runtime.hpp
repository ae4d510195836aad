#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "lattrack/model.hpp"
#include "lattrack/synth.hpp"

namespace lattrack {

enum class TrackMode { Rgb, RgbDepth, RgbThermal, RgbEvent, RgbLanguage };

std::string to_string(TrackMode m);
TrackMode track_mode_from_string(const std::string& s);
/// Auxiliary modality a mode consumes, if any.
std::optional<Modality> aux_modality(TrackMode m);

using FrameSet = std::map<Modality, cv::Mat>;

struct TrackerState {
  torch::Tensor template_latent;      // [1, C_z, h_t, w_t], eps = 0
  torch::Tensor aux_template_latent;  // auxiliary modes only
  torch::Tensor condition;            // [1, L_c, d_cond]
  bool null_condition = true;
  PixelBox previous;
  int frame = 0;
};

struct TrackOutput {
  PixelBox box;
  double confidence = 0.0;
  BBox crop_box;
  CropParams search_params;
};

/// Replaces the network's score maps (tests inject an oracle head here).
using HeadOverride = std::function<ScoreMaps(const CropParams& search_params)>;

class Tracker {
 public:
  Tracker(Model& model, TrackMode mode);

  TrackMode mode() const { return mode_; }
  const TrackerState& state() const { return state_; }
  void set_head_override(HeadOverride h) { override_ = std::move(h); }

  /// Crops and encodes the template(s); caches the text condition (the
  /// caption in rgb+language mode, the null condition otherwise).
  void init(const FrameSet& frame0, const PixelBox& gt0, const std::string& caption = {});
  TrackOutput track(const FrameSet& frame);

 private:
  torch::Tensor encode(const ImageCrop& crop);

  Model& model_;
  TrackMode mode_;
  SubModule* sub_ = nullptr;
  TrackerState state_;
  torch::Tensor window_;
  HeadOverride override_;
  int canvas_w_ = 0, canvas_h_ = 0;
};

struct RunOptions {
  std::optional<std::string> caption;  // replaces the sequence caption in rgb+language mode
  std::optional<PixelBox> init_box;    // replaces the frame-0 ground truth
  HeadOverride head_override;
};

struct TrackRecord {
  std::vector<PixelBox> boxes;
  std::vector<double> scores;
};

TrackRecord run_sequence(const SequenceRecord& record, TrackMode mode, Model& model, const RunOptions& opts = {});

/// "x,y,w,h,score" lines with six decimals.
void write_results(const TrackRecord& r, const std::filesystem::path& path);
TrackRecord read_results(const std::filesystem::path& path);

/// Runs every sequence of `records` and writes <root>/<mode>/<name>.txt.
void track_split(const std::vector<SequenceRecord>& records, TrackMode mode, Model& model,
                 const std::filesystem::path& results_root, const RunOptions& opts = {});

}  // namespace lattrack
