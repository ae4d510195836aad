#include "lattrack/head.hpp"

#include <cmath>

#include "lattrack/errors.hpp"

namespace lattrack {

namespace nn = torch::nn;

json HeadConfig::to_json() const {
  return {{"in_channels", in_channels}, {"stem_channels", stem_channels}, {"branch_channels", branch_channels},
          {"groups", groups}, {"cls_prior", cls_prior}};
}

HeadConfig HeadConfig::from_json(const json& j) {
  HeadConfig c;
  c.in_channels = j.at("in_channels");
  c.stem_channels = j.at("stem_channels");
  c.branch_channels = j.at("branch_channels");
  c.groups = j.at("groups");
  c.cls_prior = j.at("cls_prior");
  return c;
}

namespace {

nn::Sequential conv_norm_act(int in, int out, int groups) {
  return nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1)),
                        nn::GroupNorm(nn::GroupNormOptions(groups, out)), nn::ReLU());
}

nn::Sequential branch(int in, int mid, int out, int groups) {
  nn::Sequential s;
  s->extend(*conv_norm_act(in, mid, groups));
  s->extend(*conv_norm_act(mid, mid / 2, groups));
  s->push_back(nn::Conv2d(nn::Conv2dOptions(mid / 2, out, 1)));
  return s;
}

nn::Conv2d last_conv(nn::Sequential& s) {
  return nn::Conv2d(std::dynamic_pointer_cast<nn::Conv2dImpl>(s->ptr(s->size() - 1)));
}

}  // namespace

TrackingHeadImpl::TrackingHeadImpl(HeadConfig cfg) : cfg_(cfg) {
  require(cfg.branch_channels % 2 == 0 && (cfg.branch_channels / 2) % cfg.groups == 0 &&
              cfg.stem_channels % cfg.groups == 0,
          ErrorKind::Config, "head widths must be divisible by the group count");
  stem = register_module("stem", conv_norm_act(cfg.in_channels, cfg.stem_channels, cfg.groups));
  cls = register_module("cls", branch(cfg.stem_channels, cfg.branch_channels, 1, cfg.groups));
  offset = register_module("offset", branch(cfg.stem_channels, cfg.branch_channels, 2, cfg.groups));
  size = register_module("size", branch(cfg.stem_channels, cfg.branch_channels, 2, cfg.groups));
  torch::NoGradGuard g;
  last_conv(cls)->bias.fill_(-std::log((1.0 - cfg.cls_prior) / cfg.cls_prior));
}

ScoreMaps TrackingHeadImpl::forward(const torch::Tensor& features) {
  require(features.dim() == 4 && features.size(1) == cfg_.in_channels, ErrorKind::Shape,
          "head expects [B, " + std::to_string(cfg_.in_channels) + ", H, W] features");
  auto x = stem->forward(features);
  return {torch::sigmoid(cls->forward(x)).squeeze(1), torch::sigmoid(offset->forward(x)),
          torch::sigmoid(size->forward(x))};
}

GaussianTarget make_gaussian_target(const BBox& gt, int h_m, int w_m) {
  require(gt.w > 0.0 && gt.h > 0.0 && std::isfinite(gt.cx) && std::isfinite(gt.cy), ErrorKind::Data,
          "degenerate ground-truth box");
  GaussianTarget t;
  const double fx = gt.cx * w_m;
  const double fy = gt.cy * h_m;
  t.col = std::clamp(static_cast<int>(std::floor(fx)), 0, w_m - 1);
  t.row = std::clamp(static_cast<int>(std::floor(fy)), 0, h_m - 1);
  t.offset_x = std::clamp(fx - t.col, 0.0, 1.0);
  t.offset_y = std::clamp(fy - t.row, 0.0, 1.0);
  t.w = gt.w;
  t.h = gt.h;
  const double diag = std::hypot(gt.w * w_m, gt.h * h_m);
  t.sigma = std::max(1.0, diag / 6.0);
  auto rows = torch::arange(h_m, torch::kFloat64).view({-1, 1}) - t.row;
  auto cols = torch::arange(w_m, torch::kFloat64).view({1, -1}) - t.col;
  t.y = torch::exp(-(rows * rows + cols * cols) / (2.0 * t.sigma * t.sigma)).to(torch::kFloat32);
  t.y.index_put_({t.row, t.col}, 1.0f);
  return t;
}

torch::Tensor focal_loss(const torch::Tensor& cls, const torch::Tensor& target, double alpha, double beta) {
  require(cls.sizes() == target.sizes(), ErrorKind::Shape, "focal loss: score and target shapes differ");
  auto p = cls.clamp(kScoreClamp, 1.0 - kScoreClamp);
  auto p2 = p.dim() <= 2 ? p.reshape({1, -1}) : p.reshape({p.size(0), -1});
  auto y = target.reshape(p2.sizes()).to(p2.scalar_type());
  auto pos = (y == 1.0).to(p2.scalar_type());
  auto neg = 1.0 - pos;
  auto pos_term = pos * torch::pow(1.0 - p2, alpha) * torch::log(p2);
  auto neg_term = neg * torch::pow(1.0 - y, beta) * torch::pow(p2, alpha) * torch::log(1.0 - p2);
  auto n_pos = pos.sum(1).clamp_min(1.0);
  return (-(pos_term + neg_term).sum(1) / n_pos).mean();
}

namespace {

struct Corners {
  torch::Tensor x1, y1, x2, y2;
};

Corners corners(const torch::Tensor& b) {
  auto cx = b.select(1, 0), cy = b.select(1, 1), w = b.select(1, 2), h = b.select(1, 3);
  return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

}  // namespace

torch::Tensor giou_loss(const torch::Tensor& pred, const torch::Tensor& gt) {
  require(pred.dim() == 2 && pred.size(1) == 4 && pred.sizes() == gt.sizes(), ErrorKind::Shape,
          "GIoU loss expects matching [B, 4] boxes");
  const auto a = corners(pred), b = corners(gt);
  auto area_a = (a.x2 - a.x1) * (a.y2 - a.y1);
  auto area_b = (b.x2 - b.x1) * (b.y2 - b.y1);
  auto iw = (torch::min(a.x2, b.x2) - torch::max(a.x1, b.x1)).clamp_min(0.0);
  auto ih = (torch::min(a.y2, b.y2) - torch::max(a.y1, b.y1)).clamp_min(0.0);
  auto inter = iw * ih;
  auto uni = area_a + area_b - inter;
  auto ew = torch::max(a.x2, b.x2) - torch::min(a.x1, b.x1);
  auto eh = torch::max(a.y2, b.y2) - torch::min(a.y1, b.y1);
  auto enclosing = ew * eh;
  auto g = inter / uni - (enclosing - uni) / enclosing;
  return (1.0 - g).mean();
}

torch::Tensor l1_loss(const torch::Tensor& pred, const torch::Tensor& gt) {
  require(pred.sizes() == gt.sizes(), ErrorKind::Shape, "L1 loss expects matching boxes");
  return (pred - gt).abs().mean();
}

torch::Tensor total_loss(const torch::Tensor& cls_loss, const torch::Tensor& giou, const torch::Tensor& l1,
                         LossWeights weights) {
  for (const auto* t : {&cls_loss, &giou, &l1})
    require(torch::isfinite(*t).all().item<bool>(), ErrorKind::Numeric, "loss component is not finite");
  return cls_loss + weights.giou * giou + weights.l1 * l1;
}

namespace {

torch::Tensor box_tensor(const BBox& b) {
  require(b.w > 0.0 && b.h > 0.0, ErrorKind::Data, "degenerate box");
  return torch::tensor({b.cx, b.cy, b.w, b.h}, torch::kFloat64).view({1, 4});
}

}  // namespace

double giou(const BBox& a, const BBox& b) { return 1.0 - giou_loss(box_tensor(a), box_tensor(b)).item<double>(); }

double giou_loss(const BBox& pred, const BBox& gt) { return giou_loss(box_tensor(pred), box_tensor(gt)).item<double>(); }

double l1_loss(const BBox& pred, const BBox& gt) {
  return (std::abs(pred.cx - gt.cx) + std::abs(pred.cy - gt.cy) + std::abs(pred.w - gt.w) + std::abs(pred.h - gt.h)) /
         4.0;
}

double total_loss(double cls_loss, double giou, double l1, LossWeights weights) {
  require(std::isfinite(cls_loss) && std::isfinite(giou) && std::isfinite(l1), ErrorKind::Numeric,
          "loss component is not finite");
  return cls_loss + weights.giou * giou + weights.l1 * l1;
}

torch::Tensor boxes_at(const ScoreMaps& maps, const std::vector<int>& rows, const std::vector<int>& cols) {
  const auto b = maps.cls.size(0), h = maps.cls.size(1), w = maps.cls.size(2);
  require(static_cast<std::int64_t>(rows.size()) == b && rows.size() == cols.size(), ErrorKind::Shape,
          "one cell per batch entry required");
  std::vector<std::int64_t> flat(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) flat[i] = static_cast<std::int64_t>(rows[i]) * w + cols[i];
  auto idx = torch::tensor(flat, torch::kInt64).view({-1, 1, 1}).expand({b, 2, 1});
  auto off = maps.offset.reshape({b, 2, -1}).gather(2, idx).squeeze(2);
  auto sz = maps.size.reshape({b, 2, -1}).gather(2, idx).squeeze(2);
  auto r = torch::tensor(std::vector<double>(rows.begin(), rows.end()), off.options());
  auto c = torch::tensor(std::vector<double>(cols.begin(), cols.end()), off.options());
  auto cx = (c + off.select(1, 0)) / static_cast<double>(w);
  auto cy = (r + off.select(1, 1)) / static_cast<double>(h);
  return torch::stack({cx, cy, sz.select(1, 0), sz.select(1, 1)}, 1);
}

LossTerms tracking_loss(const ScoreMaps& maps, const std::vector<GaussianTarget>& targets, LossWeights weights) {
  std::vector<torch::Tensor> ys;
  std::vector<int> rows, cols;
  std::vector<double> gt;
  for (const auto& t : targets) {
    ys.push_back(t.y);
    rows.push_back(t.row);
    cols.push_back(t.col);
    const auto h = maps.cls.size(1), w = maps.cls.size(2);
    gt.insert(gt.end(), {(t.col + t.offset_x) / w, (t.row + t.offset_y) / h, t.w, t.h});
  }
  auto y = torch::stack(ys).to(maps.cls.scalar_type());
  auto gt_boxes = torch::tensor(gt, maps.cls.options()).view({-1, 4});
  auto pred = boxes_at(maps, rows, cols);
  LossTerms out;
  out.cls = focal_loss(maps.cls, y);
  out.giou = lattrack::giou_loss(pred, gt_boxes);
  out.l1 = lattrack::l1_loss(pred, gt_boxes);
  out.total = total_loss(out.cls, out.giou, out.l1, weights);
  return out;
}

torch::Tensor hanning_window(int h, int w) {
  auto hann = [](int n) {
    auto k = torch::arange(1, n + 1, torch::kFloat64);
    return 0.5 * (1.0 - torch::cos(2.0 * M_PI * k / (n + 1)));
  };
  return torch::outer(hann(h), hann(w)).to(torch::kFloat32);
}

BBox decode_box(const ScoreMaps& maps, const std::optional<torch::Tensor>& window, double window_weight, int index) {
  auto cls = maps.cls.dim() == 3 ? maps.cls[index] : maps.cls;
  auto off = maps.offset.dim() == 4 ? maps.offset[index] : maps.offset;
  auto sz = maps.size.dim() == 4 ? maps.size[index] : maps.size;
  cls = cls.detach().to(torch::kFloat64).contiguous();
  auto score = cls;
  if (window) {
    require(window->sizes() == cls.sizes(), ErrorKind::Shape, "window shape differs from the score map");
    score = (1.0 - window_weight) * cls + window_weight * window->to(torch::kFloat64);
  }
  const auto h = cls.size(0), w = cls.size(1);
  auto s = score.contiguous();
  const double* data = s.data_ptr<double>();
  std::int64_t best = 0;
  for (std::int64_t i = 1; i < h * w; ++i)
    if (data[i] > data[best]) best = i;
  const auto r = best / w, c = best % w;
  BBox box;
  box.cx = (static_cast<double>(c) + off[0][r][c].item<double>()) / static_cast<double>(w);
  box.cy = (static_cast<double>(r) + off[1][r][c].item<double>()) / static_cast<double>(h);
  box.w = sz[0][r][c].item<double>();
  box.h = sz[1][r][c].item<double>();
  box.confidence = cls[r][c].item<double>();
  return box;
}

}  // namespace lattrack
