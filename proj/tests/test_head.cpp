#include <cmath>
#include <random>

#include "lattrack/head.hpp"
#include "test_util.hpp"

using namespace lattrack;
using namespace lattrack::testing;

namespace {

torch::Tensor box(double cx, double cy, double w, double h) {
  return torch::tensor({cx, cy, w, h}, torch::kFloat64).view({1, 4});
}

// Scalar focal loss written out term by term.
double ref_focal(const std::vector<double>& p, const std::vector<double>& y) {
  double sum = 0.0;
  int pos = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p[i], kScoreClamp, 1.0 - kScoreClamp);
    if (y[i] == 1.0) {
      sum += (1 - q) * (1 - q) * std::log(q);
      ++pos;
    } else {
      sum += std::pow(1 - y[i], 4) * q * q * std::log(1 - q);
    }
  }
  return -sum / std::max(pos, 1);
}

// Gradient check helper: relative error of analytic vs central difference.
double worst_rel_error(const std::function<torch::Tensor(const torch::Tensor&)>& f, torch::Tensor x) {
  x = x.detach().clone().requires_grad_(true);
  auto g = torch::autograd::grad(torch::autograd::variable_list{f(x)}, torch::autograd::variable_list{x})[0];
  torch::NoGradGuard ng;
  auto flat = x.detach().clone();
  auto v = flat.view({-1});
  double worst = 0.0;
  const double h = 1e-6;
  for (int64_t i = 0; i < v.size(0); ++i) {
    const double x0 = v[i].item<double>();
    v[i] = x0 + h;
    const double up = f(flat).item<double>();
    v[i] = x0 - h;
    const double dn = f(flat).item<double>();
    v[i] = x0;
    const double fd = (up - dn) / (2 * h);
    const double an = g.view({-1})[i].item<double>();
    worst = std::max(worst, std::abs(fd - an) / std::max(1.0, std::abs(an)));
  }
  return worst;
}

}  // namespace

TEST(Head, OutputShapesAndRanges) {
  torch::manual_seed(0);
  TrackingHead head;
  torch::NoGradGuard ng;
  auto m = head->forward(torch::randn({2, 64, 16, 16}) * 3);
  EXPECT_EQ(m.cls.sizes(), (std::vector<int64_t>{2, 16, 16}));
  EXPECT_EQ(m.offset.sizes(), (std::vector<int64_t>{2, 2, 16, 16}));
  EXPECT_EQ(m.size.sizes(), (std::vector<int64_t>{2, 2, 16, 16}));
  for (const auto& t : {m.cls, m.offset, m.size}) {
    EXPECT_GT(t.min().item<double>(), 0.0);
    EXPECT_LT(t.max().item<double>(), 1.0);
  }
  EXPECT_LT_ERROR(head->forward(torch::randn({1, 32, 16, 16})), ErrorKind::Shape);
}

TEST(Head, Deterministic) {
  torch::manual_seed(1);
  TrackingHead head;
  torch::NoGradGuard ng;
  auto x = torch::randn({1, 64, 16, 16});
  EXPECT_TRUE(torch::equal(head->forward(x).cls, head->forward(x).cls));
}

TEST(GaussianTarget, CellCenterOffset) {
  const auto t = make_gaussian_target({(4 + 0.5) / 16, (7 + 0.5) / 16, 0.2, 0.2}, 16, 16);
  EXPECT_EQ(t.col, 4);
  EXPECT_EQ(t.row, 7);
  EXPECT_NEAR(t.offset_x, 0.5, 1e-12);
  EXPECT_NEAR(t.offset_y, 0.5, 1e-12);
  EXPECT_EQ(t.y[7][4].item<float>(), 1.0f);
  EXPECT_EQ((t.y == 1.0f).sum().item<int64_t>(), 1);
  EXPECT_GT(t.y.sum().item<double>(), 1.0);
}

TEST(GaussianTarget, SigmaFloorAndDegenerate) {
  EXPECT_DOUBLE_EQ(make_gaussian_target({0.5, 0.5, 0.01, 0.01}, 16, 16).sigma, 1.0);
  EXPECT_NEAR(make_gaussian_target({0.5, 0.5, 0.75, 1.0}, 16, 16).sigma, std::hypot(12.0, 16.0) / 6.0, 1e-12);
  EXPECT_LT_ERROR(make_gaussian_target({0.5, 0.5, 0.0, 0.2}, 16, 16), ErrorKind::Data);
}

TEST(FocalLoss, SingleCellValues) {
  const double want = 0.25 * std::log(2.0);
  EXPECT_NEAR(want, 0.17329, 1e-5);
  auto p = torch::full({1, 1}, 0.5, torch::kFloat64);
  EXPECT_NEAR(focal_loss(p, torch::ones({1, 1}, torch::kFloat64)).item<double>(), want, 1e-12);
  EXPECT_NEAR(focal_loss(p, torch::zeros({1, 1}, torch::kFloat64)).item<double>(), want, 1e-12);
}

TEST(FocalLoss, PerfectPrediction) {
  auto y = torch::zeros({8, 8}, torch::kFloat64);
  y[3][4] = 1.0;
  EXPECT_LE(focal_loss(y.clone(), y).item<double>(), 1e-4);
}

TEST(FocalLoss, MatchesScalarReference) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    auto t = make_gaussian_target({u(rng), u(rng), 0.1 + 0.3 * u(rng), 0.1 + 0.3 * u(rng)}, 8, 8);
    std::vector<double> p, y;
    auto pt = torch::empty({8, 8}, torch::kFloat64);
    for (int i = 0; i < 64; ++i) {
      p.push_back(u(rng));
      y.push_back(t.y.view({-1})[i].item<float>());
      pt.view({-1})[i] = p.back();
    }
    EXPECT_NEAR(focal_loss(pt, t.y.to(torch::kFloat64)).item<double>(), ref_focal(p, y), 1e-10);
  }
}

TEST(GIoU, HandValues) {
  EXPECT_NEAR(giou(BBox{0.5, 0.5, 1, 1}, BBox{0.5, 0.5, 1, 1}), 1.0, 1e-12);
  EXPECT_NEAR(giou_loss(BBox{0.5, 0.5, 1, 1}, BBox{0.5, 0.5, 1, 1}), 0.0, 1e-12);
  // (x, y, w, h) = (0,0,1,1) and (2,2,1,1)
  EXPECT_NEAR(giou(BBox{0.5, 0.5, 1, 1}, BBox{2.5, 2.5, 1, 1}), -7.0 / 9.0, 1e-12);
  EXPECT_NEAR(giou_loss(BBox{0.5, 0.5, 1, 1}, BBox{2.5, 2.5, 1, 1}), 16.0 / 9.0, 1e-12);
  // (0,0,2,2) contains (0,0,1,1)
  EXPECT_NEAR(giou(BBox{1, 1, 2, 2}, BBox{0.5, 0.5, 1, 1}), 0.25, 1e-12);
  EXPECT_NEAR(giou_loss(BBox{1, 1, 2, 2}, BBox{0.5, 0.5, 1, 1}), 0.75, 1e-12);
  EXPECT_LT_ERROR(giou_loss(BBox{0.5, 0.5, 0, 1}, BBox{0.5, 0.5, 1, 1}), ErrorKind::Data);
}

TEST(GIoU, TensorMatchesScalar) {
  auto p = torch::cat({box(0.5, 0.5, 1, 1), box(1, 1, 2, 2)});
  auto g = torch::cat({box(2.5, 2.5, 1, 1), box(0.5, 0.5, 1, 1)});
  EXPECT_NEAR(lattrack::giou_loss(p, g).item<double>(), (16.0 / 9.0 + 0.75) / 2.0, 1e-12);
}

TEST(L1, Values) {
  EXPECT_NEAR(l1_loss(BBox{0.5, 0.5, 0.2, 0.2}, BBox{0.5, 0.5, 0.2, 0.2}), 0.0, 1e-15);
  EXPECT_NEAR(l1_loss(BBox{0.6, 0.5, 0.2, 0.2}, BBox{0.5, 0.5, 0.2, 0.2}), 0.025, 1e-12);
  EXPECT_NEAR(lattrack::l1_loss(box(0.6, 0.5, 0.2, 0.2), box(0.5, 0.5, 0.2, 0.2)).item<double>(), 0.025, 1e-12);
  const BBox a{0.1, 0.7, 0.3, 0.2}, b{0.4, 0.2, 0.1, 0.5};
  EXPECT_DOUBLE_EQ(l1_loss(a, b), l1_loss(b, a));
}

TEST(TotalLoss, Weights) {
  EXPECT_NEAR(total_loss(0.1, 0.2, 0.04), 0.7, 1e-12);
  EXPECT_EQ(total_loss(0.0, 0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(total_loss(0.3, 0.2, 0.04, LossWeights{0.0, 0.0}), 0.3);
  EXPECT_LT_ERROR(total_loss(std::nan(""), 0.2, 0.04), ErrorKind::Numeric);
}

TEST(Gradients, MatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    auto gt = torch::tensor({0.3 + 0.4 * u(rng), 0.3 + 0.4 * u(rng), 0.1 + 0.3 * u(rng), 0.1 + 0.3 * u(rng)}, torch::kFloat64).view({1, 4});
    // Prediction kept away from the gt so |.| and min/max stay differentiable.
    auto pred = gt + torch::tensor({0.05 + 0.1 * u(rng), -0.05 - 0.1 * u(rng), 0.03 + 0.05 * u(rng), -0.02 - 0.04 * u(rng)},
                                   torch::kFloat64).view({1, 4});
    auto target = make_gaussian_target({gt[0][0].item<double>(), gt[0][1].item<double>(), 0.3, 0.3}, 6, 6).y.to(torch::kFloat64);
    auto cls = torch::rand({6, 6}, torch::kFloat64) * 0.8 + 0.1;
    worst = std::max(worst, worst_rel_error([&](const torch::Tensor& c) { return focal_loss(c, target); }, cls));
    worst = std::max(worst, worst_rel_error([&](const torch::Tensor& p) { return lattrack::giou_loss(p, gt); }, pred));
    worst = std::max(worst, worst_rel_error([&](const torch::Tensor& p) { return lattrack::l1_loss(p, gt); }, pred));
    auto both = torch::cat({cls.view({-1}), pred.view({-1})});
    worst = std::max(worst, worst_rel_error(
                                [&](const torch::Tensor& x) {
                                  auto c = x.slice(0, 0, 36).view({6, 6});
                                  auto p = x.slice(0, 36).view({1, 4});
                                  return lattrack::total_loss(focal_loss(c, target), lattrack::giou_loss(p, gt),
                                                              lattrack::l1_loss(p, gt));
                                },
                                both));
  }
  EXPECT_LE(worst, 1e-4);
}

TEST(Decode, ArithmeticExample) {
  ScoreMaps m;
  m.cls = torch::full({1, 16, 16}, 0.1);
  m.cls[0][4][5] = 0.9;
  m.offset = torch::full({1, 2, 16, 16}, 0.5);
  m.size = torch::full({1, 2, 16, 16}, 0.25);
  const auto b = decode_box(m);
  EXPECT_NEAR(b.cx, 0.34375, 1e-12);
  EXPECT_NEAR(b.cy, 0.28125, 1e-12);
  EXPECT_NEAR(b.w, 0.25, 1e-7);
  EXPECT_NEAR(b.h, 0.25, 1e-7);
  EXPECT_NEAR(b.confidence, 0.9, 1e-7);
}

TEST(Decode, TieBreakAndWindow) {
  ScoreMaps m;
  m.cls = torch::full({1, 8, 8}, 0.3);
  m.offset = torch::full({1, 2, 8, 8}, 0.0);
  m.size = torch::full({1, 2, 8, 8}, 0.1);
  EXPECT_NEAR(decode_box(m).cx, 0.0, 1e-12);
  EXPECT_NEAR(decode_box(m).cy, 0.0, 1e-12);
  // A corner peak survives a zero-weight window but loses to the center under the default weight.
  m.cls[0][0][7] = 0.35;
  auto w = hanning_window(8, 8);
  EXPECT_GT(w.min().item<double>(), 0.0);
  EXPECT_NEAR(decode_box(m, w, 0.0).cx, 7.0 / 8, 1e-12);
  const auto win = decode_box(m, w, 0.49);
  EXPECT_GT(win.cx, 0.2);
  EXPECT_LT(win.cx, 0.8);
  EXPECT_NEAR(win.confidence, 0.3, 1e-7);
}
