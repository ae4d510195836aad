#pragma once

#include <optional>
#include <vector>

#include <torch/torch.h>

#include "lattrack/archive.hpp"

namespace lattrack {

/// Box normalized to the search crop (center, size), plus confidence.
struct BBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;
  double confidence = 1.0;
};

struct ScoreMaps {
  torch::Tensor cls;     // [B, H, W] in (0, 1)
  torch::Tensor offset;  // [B, 2, H, W] (x, y) in (0, 1)
  torch::Tensor size;    // [B, 2, H, W] (w, h) in (0, 1)
};

struct HeadConfig {
  int in_channels = 64;
  int stem_channels = 64;
  int branch_channels = 32;
  int groups = 8;
  double cls_prior = 0.01;  // initial sigmoid output of the classification branch

  json to_json() const;
  static HeadConfig from_json(const json& j);
};

/// Anchor-free center head: shared conv stem, then classification, offset and
/// size branches, each ending in a sigmoid.
class TrackingHeadImpl : public torch::nn::Module {
 public:
  explicit TrackingHeadImpl(HeadConfig cfg = {});
  const HeadConfig& config() const { return cfg_; }

  ScoreMaps forward(const torch::Tensor& features);

  torch::nn::Sequential stem{nullptr}, cls{nullptr}, offset{nullptr}, size{nullptr};

 private:
  HeadConfig cfg_;
};
TORCH_MODULE(TrackingHead);

struct GaussianTarget {
  torch::Tensor y;  // [H, W]; exactly one cell equals 1
  int row = 0;
  int col = 0;
  double offset_x = 0.0;
  double offset_y = 0.0;
  double w = 0.0;
  double h = 0.0;
  double sigma = 1.0;
};

GaussianTarget make_gaussian_target(const BBox& gt, int h_m, int w_m);

constexpr double kScoreClamp = 1e-6;

/// CornerNet focal loss over maps of shape [H, W] or [B, H, W] (batch mean).
torch::Tensor focal_loss(const torch::Tensor& cls, const torch::Tensor& target, double alpha = 2.0, double beta = 4.0);

/// 1 - GIoU for [B, 4] (cx, cy, w, h) boxes, averaged over the batch.
torch::Tensor giou_loss(const torch::Tensor& pred, const torch::Tensor& gt);
/// Mean absolute difference over all box coordinates.
torch::Tensor l1_loss(const torch::Tensor& pred, const torch::Tensor& gt);

struct LossWeights {
  double giou = 2.0;
  double l1 = 5.0;
};

torch::Tensor total_loss(const torch::Tensor& cls_loss, const torch::Tensor& giou, const torch::Tensor& l1,
                         LossWeights weights = {});

double giou(const BBox& a, const BBox& b);
double giou_loss(const BBox& pred, const BBox& gt);
double l1_loss(const BBox& pred, const BBox& gt);
double total_loss(double cls_loss, double giou, double l1, LossWeights weights = {});

/// Box decoded at the given cell of each batch entry: [B, 4] (cx, cy, w, h).
torch::Tensor boxes_at(const ScoreMaps& maps, const std::vector<int>& rows, const std::vector<int>& cols);

struct LossTerms {
  torch::Tensor total;
  torch::Tensor cls;
  torch::Tensor giou;
  torch::Tensor l1;
};

/// Full training loss; box losses use the box decoded at each gt cell.
LossTerms tracking_loss(const ScoreMaps& maps, const std::vector<GaussianTarget>& targets, LossWeights weights = {});

/// Separable Hann window that is strictly positive on the map.
torch::Tensor hanning_window(int h, int w);

/// Picks the argmax of (1 - wt) * cls + wt * window (ties: smallest row-major
/// index) for batch entry `index`. Confidence is the raw cls value there.
BBox decode_box(const ScoreMaps& maps, const std::optional<torch::Tensor>& window = std::nullopt,
                double window_weight = 0.49, int index = 0);

}  // namespace lattrack
