#include "lattrack/selfcheck.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <random>

#include "lattrack/errors.hpp"
#include "lattrack/evaluator.hpp"
#include "lattrack/synth.hpp"
#include "lattrack/trainer.hpp"

namespace lattrack {

ModelConfig tiny_model_config() {
  ModelConfig c;
  c.codec = {8, 4, 8};
  c.unet.base_channels = 16;
  c.unet.channel_mult = {1, 2};
  c.unet.heads = 2;
  c.unet.cond_dim = 16;
  c.unet.time_dim = 32;
  c.unet.groups = 4;
  c.unet.ff_mult = 2;
  c.text.dim = 16;
  c.text.heads = 2;
  c.head.stem_channels = 16;
  c.head.branch_channels = 8;
  c.head.groups = 4;
  c.crop.template_size = 32;
  c.crop.search_size = 64;
  return c;
}

Codec tiny_codec(std::uint64_t seed) {
  torch::manual_seed(seed);
  Codec codec(tiny_model_config().codec);
  codec->freeze();
  return codec;
}

namespace {

std::string fmt(const char* f, double v) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double max_diff(const torch::Tensor& a, const torch::Tensor& b) { return (a - b).abs().max().item<double>(); }

CheckResult check(const std::string& name, const std::function<CheckResult()>& fn) {
  try {
    auto r = fn();
    r.name = name;
    return r;
  } catch (const std::exception& e) {
    return {name, false, std::string("threw: ") + e.what()};
  }
}

CheckResult schedule_check() {
  const auto s = compute_schedule();
  const double a1 = s.alpha_bar_at(1);
  bool mono = true;
  for (std::size_t i = 1; i < s.alpha_bar.size(); ++i) mono = mono && s.alpha_bar[i] < s.alpha_bar[i - 1];
  return {"", std::abs(a1 - 0.99915) < 1e-12 && mono, fmt("alpha_bar(1) = %.6f", a1)};
}

CheckResult concat_check(std::uint64_t seed) {
  torch::manual_seed(seed);
  auto s = torch::randn({2, 12, 5});
  auto t = torch::randn({2, 7, 5});
  auto j = concat_l(s, t);
  auto p = deconcat_l(j, j.split);
  const double d = std::max(max_diff(p.search, s), max_diff(p.tmpl, t));
  bool raised = false;
  try {
    deconcat_l(j, {11, 8});
  } catch (const Error&) {
    raised = true;
  }
  return {"", d == 0.0 && raised, fmt("round trip max diff %.1e, wrong split rejected", d)};
}

CheckResult swap_check(Model& m, std::uint64_t seed, int trials) {
  torch::NoGradGuard ng;
  double worst = 0.0;
  for (int i = 0; i < trials; ++i) {
    torch::manual_seed(seed + static_cast<std::uint64_t>(i));
    auto a = torch::randn({1, 4, 8, 8});
    auto b = torch::randn({1, 4, 8, 8});
    auto cond = m.condition(i % 2 ? "track the red circle" : "");
    auto ab = m.unet->forward_pair(a, b, cond, 1).features;
    auto ba = m.unet->forward_pair(b, a, cond, 1).features;
    worst = std::max({worst, max_diff(ab.search, ba.tmpl), max_diff(ab.tmpl, ba.search)});
  }
  return {"", worst <= 1e-5, fmt("max |F(a,b) - swap(F(b,a))| = %.2e", worst)};
}

CheckResult zero_init_check(Model& m, std::uint64_t seed, int trials) {
  torch::NoGradGuard ng;
  auto sub = clone_submodule(m.unet, SubScope::Depth);
  double worst = 0.0;
  for (int i = 0; i < trials; ++i) {
    torch::manual_seed(seed + 17 + static_cast<std::uint64_t>(i));
    auto s = torch::randn({1, 4, 8, 8});
    auto t = torch::randn({1, 4, 4, 4});
    auto as = torch::randn({1, 4, 8, 8});
    auto at = torch::randn({1, 4, 4, 4});
    auto cond = m.condition("");
    auto plain = m.forward(s, t, cond);
    auto fused = m.forward(s, t, cond, &sub, as, at);
    worst = std::max({worst, max_diff(plain.cls, fused.cls), max_diff(plain.offset, fused.offset),
                      max_diff(plain.size, fused.size)});
  }
  return {"", worst <= 1e-6, fmt("fresh sub-module changes outputs by %.2e", worst)};
}

CheckResult freeze_check(Model& m, std::uint64_t seed) {
  m.subs.clear();
  m.subs.emplace(SubScope::Thermal, clone_submodule(m.unet, SubScope::Thermal));
  TunableMask mask{2, false, false};
  std::vector<torch::Tensor> train;
  for (auto& [name, p] : m.named_parameters()) {
    const bool on = mask.trainable(name);
    p.set_requires_grad(on);
    if (on) train.push_back(p);
  }
  const auto before = m.checksums();
  torch::optim::AdamW opt(train, torch::optim::AdamWOptions(1e-2).weight_decay(1e-3));
  torch::manual_seed(seed + 99);
  for (int step = 0; step < 2; ++step) {
    opt.zero_grad();
    auto s = torch::randn({2, 4, 8, 8});
    auto t = torch::randn({2, 4, 4, 4});
    auto maps = m.forward(s, t, m.conditions({"", ""}), &m.subs.at(SubScope::Thermal), torch::randn({2, 4, 8, 8}),
                          torch::randn({2, 4, 4, 4}));
    (maps.cls.mean() + maps.size.mean()).backward();
    opt.step();
  }
  const auto after = m.checksums();
  int moved_frozen = 0, moved_sub = 0;
  for (const auto& [name, sum] : before) {
    const bool moved = after.at(name) != sum;
    if (mask.trainable(name)) moved_sub += moved ? 1 : 0;
    else moved_frozen += moved ? 1 : 0;
  }
  m.subs.clear();
  return {"", moved_frozen == 0 && moved_sub > 0,
          std::to_string(moved_frozen) + " frozen arrays changed, " + std::to_string(moved_sub) + " sub arrays updated"};
}

CheckResult fd_gradient_check(std::uint64_t seed) {
  torch::manual_seed(seed + 5);
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto pred = (torch::rand({3, 4}, opts) * 0.5 + 0.25).requires_grad_(true);
  auto gt = torch::rand({3, 4}, opts) * 0.5 + 0.25;
  auto cls = (torch::rand({1, 6, 6}, opts) * 0.8 + 0.1).requires_grad_(true);
  auto target = make_gaussian_target({0.4, 0.6, 0.3, 0.3}, 6, 6).y.to(torch::kFloat64).unsqueeze(0);
  auto f = [&](const torch::Tensor& p, const torch::Tensor& c) -> torch::Tensor {
    return lattrack::total_loss(lattrack::focal_loss(c, target), lattrack::giou_loss(p, gt), lattrack::l1_loss(p, gt));
  };
  auto loss = f(pred, cls);
  auto grads = torch::autograd::grad(torch::autograd::variable_list{loss}, torch::autograd::variable_list{pred, cls});
  double worst = 0.0;
  const double h = 1e-6;
  torch::NoGradGuard ng;
  for (int k = 0; k < 2; ++k) {
    auto base = (k == 0 ? pred : cls).detach().clone();
    auto flat = base.view({-1});
    for (int64_t i = 0; i < flat.size(0); ++i) {
      const double v = flat[i].item<double>();
      flat[i] = v + h;
      const double up = (k == 0 ? f(base, cls) : f(pred, base)).item<double>();
      flat[i] = v - h;
      const double dn = (k == 0 ? f(base, cls) : f(pred, base)).item<double>();
      flat[i] = v;
      worst = std::max(worst, std::abs((up - dn) / (2 * h) - grads[static_cast<std::size_t>(k)].view({-1})[i].item<double>()));
    }
  }
  return {"", worst <= 1e-4, fmt("max |analytic - central difference| = %.2e", worst)};
}

CheckResult crop_roundtrip_check(std::uint64_t seed, int trials) {
  std::mt19937_64 rng(seed + 3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < trials; ++i) {
    PixelBox ref{40 + 150 * u(rng), 40 + 150 * u(rng), 10 + 30 * u(rng), 10 + 30 * u(rng)};
    PixelBox box{ref.x + 10 * (u(rng) - 0.5), ref.y + 10 * (u(rng) - 0.5), ref.w * (0.8 + 0.4 * u(rng)),
                 ref.h * (0.8 + 0.4 * u(rng))};
    const double side = 4.0 * std::sqrt(ref.w * ref.h);
    CropParams p{ref.cx(), ref.cy(), 128.0 / side, 128};
    const auto back = map_box_to_image(box_to_crop(box, p), p, 256, 256);
    const auto clipped = clip_box(box, 256, 256);
    worst = std::max({worst, std::abs(back.x - clipped.x), std::abs(back.y - clipped.y), std::abs(back.w - clipped.w),
                      std::abs(back.h - clipped.h)});
  }
  return {"", worst <= 0.5, fmt("max corner error %.2e px", worst)};
}

CheckResult codec_shape_check() {
  auto codec = tiny_codec(0);
  bool raised = false;
  try {
    ImageCrop c{torch::rand({3, 60, 64}), Modality::Rgb, {}};
    encode_crop(c, codec);
  } catch (const Error& e) {
    raised = e.kind() == ErrorKind::Shape;
  }
  ImageCrop ok{torch::rand({3, 64, 64}), Modality::Rgb, {}};
  const auto z = encode_crop(ok, codec).values;
  const bool shape = z.dim() == 3 && z.size(0) == 4 && z.size(1) == 8 && z.size(2) == 8;
  return {"", raised && shape, "60x64 crop rejected, 64x64 crop -> [4, 8, 8]"};
}

CheckResult render_determinism_check(std::uint64_t seed) {
  ProfileOptions o;
  o.length = 6;
  const auto spec = random_spec("check", seed + 11, SequenceProfile::Standard, o);
  const auto a = render_sequence(spec);
  const auto b = render_sequence(spec);
  double worst = 0.0;
  for (const auto& [m, frames] : a.frames)
    for (std::size_t k = 0; k < frames.size(); ++k) worst = std::max(worst, cv::norm(frames[k], b.frames.at(m)[k], cv::NORM_INF));
  bool boxes = a.boxes.size() == b.boxes.size();
  for (std::size_t k = 0; boxes && k < a.boxes.size(); ++k)
    boxes = a.boxes[k].x == b.boxes[k].x && a.boxes[k].y == b.boxes[k].y;
  return {"", worst == 0.0 && boxes, fmt("max pixel difference between renders %.1e", worst)};
}

CheckResult evaluator_oracle_check(std::uint64_t seed, int trials) {
  std::mt19937_64 rng(seed + 23);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < trials; ++i) {
    EvalRun run;
    for (int s = 0; s < 3; ++s) {
      SequenceRun r;
      r.name = "s" + std::to_string(s);
      for (int k = 0; k < 12; ++k) {
        PixelBox g{100 * u(rng), 100 * u(rng), 5 + 20 * u(rng), 5 + 20 * u(rng)};
        PixelBox p{g.x + 12 * (u(rng) - 0.5), g.y + 12 * (u(rng) - 0.5), g.w * (0.7 + 0.6 * u(rng)), g.h};
        r.gt.push_back(g);
        r.pred.push_back(p);
        r.score.push_back(std::round(u(rng) * 8) / 8);
        r.visible.push_back(u(rng) > 0.15);
      }
      run.push_back(r);
    }
    worst = std::max(worst, oracle_check(run).max_abs_diff);
  }
  return {"", worst <= 1e-9, fmt("vectorized vs brute force max diff %.1e", worst)};
}

CheckResult decode_check() {
  ScoreMaps m;
  m.cls = torch::full({1, 4, 4}, 0.2);
  m.cls[0][1][2] = 0.9;
  m.offset = torch::full({1, 2, 4, 4}, 0.5);
  m.size = torch::full({1, 2, 4, 4}, 0.25);
  const auto b = decode_box(m);
  auto w = hanning_window(16, 16);
  const bool positive = w.min().item<double>() > 0.0;
  const bool ok = std::abs(b.cx - 2.5 / 4) < 1e-9 && std::abs(b.cy - 1.5 / 4) < 1e-9 && std::abs(b.w - 0.25) < 1e-9;
  return {"", ok && positive, fmt("decoded center (%.4f", b.cx) + fmt(", %.4f), window > 0", b.cy)};
}

}  // namespace

std::vector<CheckResult> run_selfcheck(std::uint64_t seed, bool quick) {
  const int trials = quick ? 2 : 8;
  auto model = Model::create(tiny_model_config(), tiny_codec(seed), seed);
  std::vector<CheckResult> out;
  out.push_back(check("noise schedule", schedule_check));
  out.push_back(check("joint token concat/deconcat", [&] { return concat_check(seed); }));
  out.push_back(check("stream-swap equivariance", [&] { return swap_check(model, seed, trials); }));
  out.push_back(check("zero-init sub-module is a no-op", [&] { return zero_init_check(model, seed, trials); }));
  out.push_back(check("stage-2 freeze", [&] { return freeze_check(model, seed); }));
  out.push_back(check("loss gradients vs finite differences", [&] { return fd_gradient_check(seed); }));
  out.push_back(check("crop box round trip", [&] { return crop_roundtrip_check(seed, trials * 25); }));
  out.push_back(check("codec divisibility", codec_shape_check));
  out.push_back(check("render determinism", [&] { return render_determinism_check(seed); }));
  out.push_back(check("metric oracle agreement", [&] { return evaluator_oracle_check(seed, trials); }));
  out.push_back(check("box decoding", decode_check));
  return out;
}

}  // namespace lattrack
