#pragma once

// Synthetic multi-modal tracking sequences: rendering, on-disk format and the
// template/search cropping pipeline.
//
// On disk a sequence is
//   <root>/<split>/<name>/{meta.json, groundtruth.txt, rgb/, depth/, thermal/, event/}
// with frames stored as %06d.png and groundtruth lines "x,y,w,h,visible".

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "lattrack/archive.hpp"
#include "lattrack/codec.hpp"
#include "lattrack/head.hpp"

namespace lattrack {

/// Axis-aligned box in pixels, top-left convention.
struct PixelBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double cx() const { return x + w / 2.0; }
  double cy() const { return y + h / 2.0; }
  bool valid() const { return w > 0.0 && h > 0.0; }
};

enum class ShapeKind { Circle, Square, Triangle };

std::string to_string(ShapeKind s);
ShapeKind shape_from_string(const std::string& s);

struct NamedColor {
  std::string name;
  double r, g, b;
};

/// Fixed palette; every entry's name is in the caption vocabulary.
const std::vector<NamedColor>& palette();
const NamedColor& color_by_name(const std::string& name);

struct ObjectSpec {
  ShapeKind shape = ShapeKind::Circle;
  std::string color = "red";
  double radius = 16.0;  // half extent in pixels
  double depth = 3.0;    // metric depth, nearer objects occlude farther ones
  double heat = 0.9;     // thermal intensity in [0, 1]
  double x0 = 128.0;
  double y0 = 128.0;
  double speed = 1.0;    // scale on the motion model
  /// When set, the object keeps a fixed offset (plus slow drift) from the
  /// target instead of walking on its own.
  std::optional<std::pair<double, double>> tether;

  std::string caption() const;
  json to_json() const;
};

struct Episode {
  int begin = 0;  // inclusive
  int end = 0;    // exclusive
  double level = 1.0;
};

struct MotionModel {
  double max_speed = 3.0;     // pixels per frame
  double accel_noise = 0.6;   // std of per-frame velocity perturbation
  double damping = 0.92;
};

struct SequenceSpec {
  std::string name;
  std::uint64_t seed = 0;
  int length = 40;
  int width = 256;
  int height = 256;
  ObjectSpec target;
  std::vector<ObjectSpec> distractors;
  MotionModel motion;
  std::vector<Episode> darkness;   // illumination level in [0.02, 0.15]
  std::vector<Episode> occlusion;  // target hidden in every modality
  double noise_std = 0.02;

  void validate() const;
  json to_json() const;
};

/// Profiles used to draw random specs.
enum class SequenceProfile {
  Standard,  // normal illumination, assorted distractors, some tethered confusers
  Dark,      // long darkness episode(s)
  Caption,   // target plus one tethered same-shape, different-color confuser
};

std::string to_string(SequenceProfile p);
SequenceProfile profile_from_string(const std::string& s);

struct ProfileOptions {
  int length = 40;
  int width = 256;
  int height = 256;
  double noise_std = 0.02;
};

SequenceSpec random_spec(const std::string& name, std::uint64_t seed, SequenceProfile profile,
                         const ProfileOptions& opts = {});

/// Raw (pre RGB-like) modality frames.
struct RawFrame {
  cv::Mat rgb;       // CV_32FC3, RGB order, [0, 1]
  cv::Mat depth;     // CV_32F metric depth
  cv::Mat thermal;   // CV_32F heat in [0, 1]
  cv::Mat event;     // CV_8S polarity in {-1, 0, 1}
};

constexpr double kDepthNear = 1.0;
constexpr double kDepthFar = 10.0;

/// depth -> replicated normalized inverse depth, thermal -> replicated heat,
/// event -> polarity false color (+ red, 0 gray, - blue), rgb -> identity.
/// Output is CV_32FC3 in RGB order.
cv::Mat modality_to_rgb_like(const cv::Mat& raw, Modality modality);

struct RenderedSequence {
  SequenceSpec spec;
  std::map<Modality, std::vector<cv::Mat>> frames;  // RGB-like CV_32FC3 per modality
  std::vector<PixelBox> boxes;                      // target, clipped to canvas
  std::vector<bool> visible;
  std::vector<std::vector<PixelBox>> distractor_boxes;  // [distractor][frame]
  std::vector<double> illumination;
  std::string caption;
};

RenderedSequence render_sequence(const SequenceSpec& spec);

/// Writes the sequence directory (PNG frames, meta.json, groundtruth.txt).
void write_sequence(const RenderedSequence& seq, const std::filesystem::path& dir,
                    const json& extra_meta = json::object());

/// Lazily loaded sequence record.
class SequenceRecord {
 public:
  static SequenceRecord open(const std::filesystem::path& dir);

  const std::string& name() const { return name_; }
  const std::filesystem::path& dir() const { return dir_; }
  int length() const { return static_cast<int>(boxes_.size()); }
  const std::vector<PixelBox>& boxes() const { return boxes_; }
  const std::vector<bool>& visible() const { return visible_; }
  const json& meta() const { return meta_; }
  std::string caption() const { return meta_.value("caption", std::string()); }
  /// Per-frame boxes of distractor `i` as stored in meta.json.
  std::vector<PixelBox> distractor_boxes(std::size_t i) const;
  std::size_t distractor_count() const;

  /// Loads one RGB-like frame (CV_32FC3, RGB order, [0, 1]).
  cv::Mat frame(Modality m, int k) const;

 private:
  std::string name_;
  std::filesystem::path dir_;
  json meta_;
  std::vector<PixelBox> boxes_;
  std::vector<bool> visible_;
};

std::vector<SequenceRecord> open_split(const std::filesystem::path& root, const std::string& split);

/// Square crop of side factor * sqrt(w h) around (cx, cy), resized to `out`,
/// padded with the per-channel frame mean outside the canvas.
ImageCrop crop_square(const cv::Mat& frame, double cx, double cy, double side, int out, Modality m);
ImageCrop crop_template(const cv::Mat& frame, const PixelBox& gt, Modality m = Modality::Rgb,
                        double factor = 2.0, int out = 64);
ImageCrop crop_search(const cv::Mat& frame, const PixelBox& ref, Modality m = Modality::Rgb,
                      double factor = 4.0, int out = 128);

/// Pixel box -> normalized crop box (cx, cy, w, h in [0, 1] of the crop).
BBox box_to_crop(const PixelBox& box, const CropParams& params);
/// Normalized crop box -> pixel box, clipped to the canvas.
PixelBox map_box_to_image(const BBox& box, const CropParams& params, int canvas_w, int canvas_h);

PixelBox clip_box(const PixelBox& b, int canvas_w, int canvas_h);

}  // namespace lattrack
