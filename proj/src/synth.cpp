#include "lattrack/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "lattrack/errors.hpp"

namespace fs = std::filesystem;

namespace lattrack {

std::string to_string(ShapeKind s) {
  switch (s) {
    case ShapeKind::Circle: return "circle";
    case ShapeKind::Square: return "square";
    case ShapeKind::Triangle: return "triangle";
  }
  return "circle";
}

ShapeKind shape_from_string(const std::string& s) {
  if (s == "circle") return ShapeKind::Circle;
  if (s == "square") return ShapeKind::Square;
  if (s == "triangle") return ShapeKind::Triangle;
  fail(ErrorKind::Config, "unknown shape '" + s + "'");
}

const std::vector<NamedColor>& palette() {
  static const std::vector<NamedColor> colors = {
      {"red", 0.90, 0.10, 0.10},    {"green", 0.10, 0.80, 0.15},  {"blue", 0.10, 0.25, 0.95},
      {"yellow", 0.95, 0.90, 0.10}, {"cyan", 0.10, 0.90, 0.90},   {"magenta", 0.90, 0.10, 0.85},
      {"orange", 1.00, 0.55, 0.05}, {"purple", 0.50, 0.15, 0.70}, {"white", 0.97, 0.97, 0.97},
  };
  return colors;
}

const NamedColor& color_by_name(const std::string& name) {
  for (const auto& c : palette())
    if (c.name == name) return c;
  fail(ErrorKind::Config, "unknown color '" + name + "'");
}

std::string ObjectSpec::caption() const { return "track the " + color + " " + to_string(shape); }

json ObjectSpec::to_json() const {
  json j = {{"shape", to_string(shape)}, {"color", color}, {"radius", radius}, {"depth", depth},
            {"heat", heat},              {"x0", x0},       {"y0", y0},         {"speed", speed}};
  if (tether) j["tether"] = {tether->first, tether->second};
  return j;
}

namespace {

json episodes_json(const std::vector<Episode>& eps) {
  json a = json::array();
  for (const auto& e : eps) a.push_back({{"begin", e.begin}, {"end", e.end}, {"level", e.level}});
  return a;
}

bool in_episode(const std::vector<Episode>& eps, int k, double* level = nullptr) {
  for (const auto& e : eps)
    if (k >= e.begin && k < e.end) {
      if (level) *level = e.level;
      return true;
    }
  return false;
}

}  // namespace

void SequenceSpec::validate() const {
  require(length >= 2, ErrorKind::Data, "sequence '" + name + "': length must be at least 2");
  require(width >= 32 && height >= 32, ErrorKind::Data, "sequence '" + name + "': canvas too small");
  require(noise_std >= 0.0, ErrorKind::Data, "sequence '" + name + "': negative noise_std");
  const double limit = std::min(width, height) / 4.0;
  double area = 0.0;
  auto check_obj = [&](const ObjectSpec& o, const std::string& what) {
    require(o.radius >= 2.0 && o.radius <= limit, ErrorKind::Data,
            "sequence '" + name + "': " + what + " radius outside [2, " + std::to_string(limit) + "]");
    require(o.depth >= kDepthNear && o.depth <= kDepthFar, ErrorKind::Data,
            "sequence '" + name + "': " + what + " depth outside the depth range");
    require(o.heat >= 0.0 && o.heat <= 1.0, ErrorKind::Data, "sequence '" + name + "': " + what + " heat outside [0, 1]");
    color_by_name(o.color);
    area += 4.0 * o.radius * o.radius;
  };
  check_obj(target, "target");
  require(!target.tether, ErrorKind::Data, "sequence '" + name + "': the target cannot be tethered");
  for (std::size_t i = 0; i < distractors.size(); ++i) {
    const auto& d = distractors[i];
    check_obj(d, "distractor " + std::to_string(i));
    require(!(d.shape == target.shape && d.color == target.color), ErrorKind::Data,
            "sequence '" + name + "': distractor " + std::to_string(i) + " is indistinguishable from the target");
  }
  require(area <= 0.4 * width * height, ErrorKind::Data, "sequence '" + name + "': too many objects for the canvas");
  for (const auto& e : darkness) {
    require(e.begin >= 0 && e.begin < e.end && e.end <= length, ErrorKind::Data,
            "sequence '" + name + "': darkness episode outside the sequence");
    require(e.level >= 0.02 && e.level <= 0.15, ErrorKind::Data,
            "sequence '" + name + "': darkness level outside [0.02, 0.15]");
  }
  for (const auto& e : occlusion)
    require(e.begin >= 1 && e.begin < e.end && e.end <= length, ErrorKind::Data,
            "sequence '" + name + "': occlusion episode must lie within frames 1..length-1");
}

json SequenceSpec::to_json() const {
  json d = json::array();
  for (const auto& o : distractors) d.push_back(o.to_json());
  return {{"name", name},
          {"seed", seed},
          {"length", length},
          {"width", width},
          {"height", height},
          {"target", target.to_json()},
          {"distractors", d},
          {"motion", {{"max_speed", motion.max_speed}, {"accel_noise", motion.accel_noise}, {"damping", motion.damping}}},
          {"darkness_episodes", episodes_json(darkness)},
          {"occlusion_episodes", episodes_json(occlusion)},
          {"noise_std", noise_std}};
}

std::string to_string(SequenceProfile p) {
  switch (p) {
    case SequenceProfile::Standard: return "standard";
    case SequenceProfile::Dark: return "dark";
    case SequenceProfile::Caption: return "caption";
  }
  return "standard";
}

SequenceProfile profile_from_string(const std::string& s) {
  if (s == "standard") return SequenceProfile::Standard;
  if (s == "dark") return SequenceProfile::Dark;
  if (s == "caption") return SequenceProfile::Caption;
  fail(ErrorKind::Config, "unknown sequence profile '" + s + "'");
}

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); }
int uniform_int(Rng& rng, int a, int b) { return std::uniform_int_distribution<int>(a, b)(rng); }

ObjectSpec random_object(Rng& rng, const ProfileOptions& o, double rmin, double rmax) {
  ObjectSpec s;
  s.shape = static_cast<ShapeKind>(uniform_int(rng, 0, 2));
  s.color = palette()[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(palette().size()) - 1))].name;
  s.radius = std::round(uniform(rng, rmin, rmax));
  s.depth = uniform(rng, 2.0, 7.0);
  s.heat = uniform(rng, 0.3, 0.6);
  s.x0 = uniform(rng, s.radius + 4, o.width - s.radius - 4);
  s.y0 = uniform(rng, s.radius + 4, o.height - s.radius - 4);
  s.speed = uniform(rng, 0.5, 1.0);
  return s;
}

ObjectSpec tethered_confuser(Rng& rng, const ObjectSpec& target) {
  ObjectSpec c = target;
  while (c.color == target.color)
    c.color = palette()[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(palette().size()) - 1))].name;
  const double angle = uniform(rng, 0.0, 2.0 * M_PI);
  const double dist = uniform(rng, 2.6, 3.2) * target.radius;
  c.tether = std::make_pair(dist * std::cos(angle), dist * std::sin(angle));
  c.depth = std::clamp(target.depth + uniform(rng, -1.0, 1.0), 2.0, 7.0);
  c.heat = uniform(rng, 0.3, 0.6);
  return c;
}

void add_free_distractors(Rng& rng, SequenceSpec& s, const ProfileOptions& o, int count) {
  for (int i = 0; i < count; ++i) {
    ObjectSpec d = random_object(rng, o, 10.0, 20.0);
    while (d.shape == s.target.shape && d.color == s.target.color) d = random_object(rng, o, 10.0, 20.0);
    s.distractors.push_back(d);
  }
}

}  // namespace

SequenceSpec random_spec(const std::string& name, std::uint64_t seed, SequenceProfile profile,
                         const ProfileOptions& opts) {
  Rng rng(seed);
  SequenceSpec s;
  s.name = name;
  s.seed = seed;
  s.length = opts.length;
  s.width = opts.width;
  s.height = opts.height;
  s.noise_std = opts.noise_std;
  s.target = random_object(rng, opts, 12.0, 22.0);
  s.target.heat = uniform(rng, 0.75, 1.0);
  s.target.speed = 1.0;

  switch (profile) {
    case SequenceProfile::Standard: {
      if (uniform(rng, 0, 1) < 0.3) s.distractors.push_back(tethered_confuser(rng, s.target));
      add_free_distractors(rng, s, opts, uniform_int(rng, 1, 2));
      if (uniform(rng, 0, 1) < 0.2 && s.length > 12) {
        const int b = uniform_int(rng, 6, s.length - 6);
        s.occlusion.push_back({b, b + uniform_int(rng, 2, 4), 1.0});
      }
      break;
    }
    case SequenceProfile::Dark: {
      add_free_distractors(rng, s, opts, uniform_int(rng, 1, 2));
      const int b = uniform_int(rng, 2, std::max(2, s.length / 8));
      const int e = s.length - uniform_int(rng, 0, 2);
      if (e > b) s.darkness.push_back({b, e, uniform(rng, 0.02, 0.05)});
      break;
    }
    case SequenceProfile::Caption: {
      s.distractors.push_back(tethered_confuser(rng, s.target));
      break;
    }
  }
  s.validate();
  return s;
}

namespace {

// Signed distance (pixels, negative inside) from (x, y) to the shape centered at (cx, cy).
double signed_distance(ShapeKind shape, double r, double dx, double dy) {
  switch (shape) {
    case ShapeKind::Circle: return std::hypot(dx, dy) - r;
    case ShapeKind::Square: return std::max(std::abs(dx), std::abs(dy)) - r;
    case ShapeKind::Triangle: {
      // apex (0, -r), base corners (-r, r) and (r, r)
      const double inv = 1.0 / std::sqrt(5.0);
      const double d_base = dy - r;
      const double d_left = (-2.0 * dx - dy - r) * inv;
      const double d_right = (2.0 * dx - dy - r) * inv;
      return std::max({d_base, d_left, d_right});
    }
  }
  return 1e9;
}

struct Placed {
  const ObjectSpec* spec;
  double cx, cy;
  bool drawn;
};

struct Walker {
  double x, y, vx = 0.0, vy = 0.0;
};

void step_walker(Walker& w, const MotionModel& m, double speed, double xlo, double xhi, double ylo, double yhi,
                 Rng& rng) {
  const double sd = m.accel_noise * speed;
  w.vx *= m.damping;
  w.vy *= m.damping;
  if (sd > 0.0) {
    std::normal_distribution<double> n(0.0, sd);
    w.vx += n(rng);
    w.vy += n(rng);
  }
  const double vmax = m.max_speed * speed;
  const double v = std::hypot(w.vx, w.vy);
  if (v > vmax) {
    w.vx *= vmax / v;
    w.vy *= vmax / v;
  }
  w.x += w.vx;
  w.y += w.vy;
  if (w.x < xlo) { w.x = 2 * xlo - w.x; w.vx = -w.vx; }
  if (w.x > xhi) { w.x = 2 * xhi - w.x; w.vx = -w.vx; }
  if (w.y < ylo) { w.y = 2 * ylo - w.y; w.vy = -w.vy; }
  if (w.y > yhi) { w.y = 2 * yhi - w.y; w.vy = -w.vy; }
  w.x = std::clamp(w.x, xlo, xhi);
  w.y = std::clamp(w.y, ylo, yhi);
}

PixelBox object_box(double r, double cx, double cy) {
  return {std::round(cx - r), std::round(cy - r), 2.0 * r, 2.0 * r};
}

cv::Mat background_texture(Rng& rng, int w, int h) {
  cv::Mat bg(h, w, CV_32FC3);
  struct Wave { double fx, fy, phase, amp[3]; };
  std::vector<Wave> waves(4);
  for (auto& wv : waves) {
    wv.fx = uniform(rng, -0.06, 0.06);
    wv.fy = uniform(rng, -0.06, 0.06);
    wv.phase = uniform(rng, 0, 2 * M_PI);
    for (double& a : wv.amp) a = uniform(rng, 0.02, 0.07);
  }
  double base[3];
  for (double& b : base) b = uniform(rng, 0.3, 0.55);
  for (int y = 0; y < h; ++y) {
    auto* row = bg.ptr<cv::Vec3f>(y);
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        double v = base[c];
        for (const auto& wv : waves) v += wv.amp[c] * std::sin(wv.fx * x + wv.fy * y + wv.phase);
        row[x][c] = static_cast<float>(v);
      }
    }
  }
  return bg;
}

}  // namespace

cv::Mat modality_to_rgb_like(const cv::Mat& raw, Modality modality) {
  cv::Mat out(raw.rows, raw.cols, CV_32FC3);
  switch (modality) {
    case Modality::Rgb:
      require(raw.type() == CV_32FC3, ErrorKind::Data, "rgb frame must be CV_32FC3");
      return raw.clone();
    case Modality::Depth: {
      require(raw.type() == CV_32F, ErrorKind::Data, "depth frame must be CV_32F");
      const double lo = 1.0 / kDepthFar, hi = 1.0 / kDepthNear;
      for (int y = 0; y < raw.rows; ++y)
        for (int x = 0; x < raw.cols; ++x) {
          const double d = std::clamp(static_cast<double>(raw.at<float>(y, x)), kDepthNear, kDepthFar);
          const auto v = static_cast<float>((1.0 / d - lo) / (hi - lo));
          out.at<cv::Vec3f>(y, x) = {v, v, v};
        }
      return out;
    }
    case Modality::Thermal: {
      require(raw.type() == CV_32F, ErrorKind::Data, "thermal frame must be CV_32F");
      for (int y = 0; y < raw.rows; ++y)
        for (int x = 0; x < raw.cols; ++x) {
          const float v = std::clamp(raw.at<float>(y, x), 0.0f, 1.0f);
          out.at<cv::Vec3f>(y, x) = {v, v, v};
        }
      return out;
    }
    case Modality::Event: {
      require(raw.type() == CV_8S, ErrorKind::Data, "event frame must be CV_8S");
      for (int y = 0; y < raw.rows; ++y)
        for (int x = 0; x < raw.cols; ++x) {
          const auto p = raw.at<schar>(y, x);
          out.at<cv::Vec3f>(y, x) = p > 0 ? cv::Vec3f(1.f, 0.f, 0.f)
                                  : p < 0 ? cv::Vec3f(0.f, 0.f, 1.f)
                                          : cv::Vec3f(128.f / 255.f, 128.f / 255.f, 128.f / 255.f);
        }
      return out;
    }
  }
  fail(ErrorKind::Config, "unknown modality");
}

RenderedSequence render_sequence(const SequenceSpec& spec) {
  spec.validate();
  Rng rng(spec.seed ^ 0x5eedf00dULL);
  const int W = spec.width, H = spec.height, K = spec.length;

  RenderedSequence out;
  out.spec = spec;
  out.caption = spec.target.caption();
  out.distractor_boxes.assign(spec.distractors.size(), {});

  const cv::Mat bg = background_texture(rng, W, H);
  cv::Mat bg_heat(H, W, CV_32F), bg_depth(H, W, CV_32F);
  const double heat0 = uniform(rng, 0.1, 0.2);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      bg_heat.at<float>(y, x) = static_cast<float>(heat0 + 0.05 * (static_cast<double>(y) / H));
      bg_depth.at<float>(y, x) = static_cast<float>(8.0 + 2.0 * (1.0 - static_cast<double>(y) / H));
    }

  // Target domain keeps every tethered object on the canvas.
  const double rt = spec.target.radius;
  double xlo = rt, xhi = W - rt, ylo = rt, yhi = H - rt;
  for (const auto& d : spec.distractors) {
    if (!d.tether) continue;
    const double slack = 0.3 * rt;
    const auto [ox, oy] = *d.tether;
    xlo = std::max(xlo, d.radius - ox + slack);
    xhi = std::min(xhi, W - d.radius - ox - slack);
    ylo = std::max(ylo, d.radius - oy + slack);
    yhi = std::min(yhi, H - d.radius - oy - slack);
  }
  require(xlo < xhi && ylo < yhi, ErrorKind::Data, "sequence '" + spec.name + "': tethered objects do not fit");

  Walker target{std::clamp(spec.target.x0, xlo, xhi), std::clamp(spec.target.y0, ylo, yhi)};
  std::vector<Walker> walkers;
  std::vector<std::pair<double, double>> drift(spec.distractors.size(), {0.0, 0.0});
  for (const auto& d : spec.distractors) walkers.push_back({d.x0, d.y0});

  cv::Mat prev_lum;
  cv::RNG noise_rng(spec.seed * 2654435761ULL + 17);
  for (int k = 0; k < K; ++k) {
    if (k > 0) {
      step_walker(target, spec.motion, spec.target.speed, xlo, xhi, ylo, yhi, rng);
      for (std::size_t i = 0; i < spec.distractors.size(); ++i) {
        const auto& d = spec.distractors[i];
        if (d.tether) {
          const double lim = 0.3 * rt;
          drift[i].first = std::clamp(drift[i].first + uniform(rng, -0.5, 0.5), -lim, lim);
          drift[i].second = std::clamp(drift[i].second + uniform(rng, -0.5, 0.5), -lim, lim);
        } else {
          step_walker(walkers[i], spec.motion, d.speed, d.radius, W - d.radius, d.radius, H - d.radius, rng);
        }
      }
    }

    std::vector<Placed> placed;
    const bool occluded = in_episode(spec.occlusion, k);
    placed.push_back({&spec.target, target.x, target.y, !occluded});
    for (std::size_t i = 0; i < spec.distractors.size(); ++i) {
      const auto& d = spec.distractors[i];
      double cx = walkers[i].x, cy = walkers[i].y;
      if (d.tether) {
        cx = target.x + d.tether->first + drift[i].first;
        cy = target.y + d.tether->second + drift[i].second;
      }
      placed.push_back({&d, cx, cy, true});
      out.distractor_boxes[i].push_back(clip_box(object_box(d.radius, cx, cy), W, H));
    }
    out.boxes.push_back(clip_box(object_box(rt, target.x, target.y), W, H));
    out.visible.push_back(!occluded);

    std::vector<const Placed*> order;
    for (const auto& p : placed)
      if (p.drawn) order.push_back(&p);
    std::stable_sort(order.begin(), order.end(), [](const Placed* a, const Placed* b) { return a->spec->depth > b->spec->depth; });

    cv::Mat clean = bg.clone(), heat = bg_heat.clone(), depth = bg_depth.clone();
    for (const Placed* p : order) {
      const auto& o = *p->spec;
      const auto& col = color_by_name(o.color);
      const int x0 = std::max(0, static_cast<int>(std::floor(p->cx - o.radius - 2)));
      const int x1 = std::min(W - 1, static_cast<int>(std::ceil(p->cx + o.radius + 2)));
      const int y0 = std::max(0, static_cast<int>(std::floor(p->cy - o.radius - 2)));
      const int y1 = std::min(H - 1, static_cast<int>(std::ceil(p->cy + o.radius + 2)));
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          const double sd = signed_distance(o.shape, o.radius, x + 0.5 - p->cx, y + 0.5 - p->cy);
          const double a = std::clamp(0.5 - sd, 0.0, 1.0);
          if (a <= 0.0) continue;
          auto& px = clean.at<cv::Vec3f>(y, x);
          px[0] = static_cast<float>((1 - a) * px[0] + a * col.r);
          px[1] = static_cast<float>((1 - a) * px[1] + a * col.g);
          px[2] = static_cast<float>((1 - a) * px[2] + a * col.b);
          auto& hv = heat.at<float>(y, x);
          hv = static_cast<float>((1 - a) * hv + a * o.heat);
          auto& dv = depth.at<float>(y, x);
          dv = static_cast<float>((1 - a) * dv + a * o.depth);
        }
    }

    double level = 1.0;
    in_episode(spec.darkness, k, &level);
    out.illumination.push_back(level);
    cv::Mat rgb = clean * level;
    if (spec.noise_std > 0.0) {
      cv::Mat n(H, W, CV_32FC3);
      noise_rng.fill(n, cv::RNG::NORMAL, cv::Scalar::all(0.0), cv::Scalar::all(spec.noise_std));
      rgb += n;
    }
    cv::min(cv::max(rgb, 0.0), 1.0, rgb);

    cv::Mat lum;
    cv::cvtColor(clean, lum, cv::COLOR_RGB2GRAY);
    cv::Mat event(H, W, CV_8S, cv::Scalar(0));
    if (k > 0) {
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const float d = lum.at<float>(y, x) - prev_lum.at<float>(y, x);
          event.at<schar>(y, x) = d > 0.03f ? 1 : d < -0.03f ? -1 : 0;
        }
    }
    prev_lum = lum;

    out.frames[Modality::Rgb].push_back(rgb);
    out.frames[Modality::Depth].push_back(modality_to_rgb_like(depth, Modality::Depth));
    out.frames[Modality::Thermal].push_back(modality_to_rgb_like(heat, Modality::Thermal));
    out.frames[Modality::Event].push_back(modality_to_rgb_like(event, Modality::Event));
  }
  return out;
}

namespace {

json box_json(const PixelBox& b) { return {b.x, b.y, b.w, b.h}; }

PixelBox box_from_json(const json& j) { return {j.at(0), j.at(1), j.at(2), j.at(3)}; }

void write_png(const cv::Mat& rgb, const fs::path& path) {
  cv::Mat bgr, u8;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  bgr.convertTo(u8, CV_8UC3, 255.0);
  if (!cv::imwrite(path.string(), u8, {cv::IMWRITE_PNG_COMPRESSION, 6}))
    fail(ErrorKind::Io, "cannot write '" + path.string() + "'");
}

std::string frame_name(int k) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06d.png", k);
  return buf;
}

const Modality kAllModalities[] = {Modality::Rgb, Modality::Depth, Modality::Thermal, Modality::Event};

}  // namespace

void write_sequence(const RenderedSequence& seq, const fs::path& dir, const json& extra_meta) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorKind::Io, "cannot create '" + dir.string() + "': " + ec.message());
  for (Modality m : kAllModalities) {
    const fs::path sub = dir / to_string(m);
    fs::create_directories(sub, ec);
    require(!ec, ErrorKind::Io, "cannot create '" + sub.string() + "'");
    const auto& frames = seq.frames.at(m);
    for (int k = 0; k < static_cast<int>(frames.size()); ++k) write_png(frames[static_cast<std::size_t>(k)], sub / frame_name(k));
  }

  std::ofstream gt(dir / "groundtruth.txt");
  require(static_cast<bool>(gt), ErrorKind::Io, "cannot write groundtruth for '" + seq.spec.name + "'");
  for (std::size_t k = 0; k < seq.boxes.size(); ++k) {
    const auto& b = seq.boxes[k];
    gt << static_cast<long>(b.x) << ',' << static_cast<long>(b.y) << ',' << static_cast<long>(b.w) << ','
       << static_cast<long>(b.h) << ',' << (seq.visible[k] ? 1 : 0) << '\n';
  }

  json meta = seq.spec.to_json();
  meta["caption"] = seq.caption;
  for (std::size_t i = 0; i < seq.distractor_boxes.size(); ++i) {
    json boxes = json::array();
    for (const auto& b : seq.distractor_boxes[i]) boxes.push_back(box_json(b));
    meta["distractors"][i]["boxes"] = boxes;
    meta["distractors"][i]["caption"] = seq.spec.distractors[i].caption();
  }
  meta["illumination"] = seq.illumination;
  for (const auto& [k, v] : extra_meta.items()) meta[k] = v;
  std::ofstream mf(dir / "meta.json");
  require(static_cast<bool>(mf), ErrorKind::Io, "cannot write meta.json for '" + seq.spec.name + "'");
  mf << meta.dump(2) << '\n';
}

SequenceRecord SequenceRecord::open(const fs::path& dir) {
  SequenceRecord r;
  r.dir_ = dir;
  r.name_ = dir.filename().string();
  std::ifstream mf(dir / "meta.json");
  require(static_cast<bool>(mf), ErrorKind::Data, "sequence '" + r.name_ + "': missing meta.json");
  try {
    r.meta_ = json::parse(mf);
  } catch (const json::exception& e) {
    fail(ErrorKind::Data, "sequence '" + r.name_ + "': malformed meta.json: " + e.what());
  }
  std::ifstream gt(dir / "groundtruth.txt");
  require(static_cast<bool>(gt), ErrorKind::Data, "sequence '" + r.name_ + "': missing groundtruth.txt");
  std::string line;
  while (std::getline(gt, line)) {
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream is(line);
    PixelBox b;
    int vis = 1;
    require(static_cast<bool>(is >> b.x >> b.y >> b.w >> b.h >> vis), ErrorKind::Data,
            "sequence '" + r.name_ + "': malformed groundtruth line " + std::to_string(r.boxes_.size()));
    r.boxes_.push_back(b);
    r.visible_.push_back(vis != 0);
  }
  require(!r.boxes_.empty(), ErrorKind::Data, "sequence '" + r.name_ + "': empty groundtruth");
  return r;
}

std::size_t SequenceRecord::distractor_count() const {
  return meta_.contains("distractors") ? meta_.at("distractors").size() : 0;
}

std::vector<PixelBox> SequenceRecord::distractor_boxes(std::size_t i) const {
  require(i < distractor_count(), ErrorKind::Range, "sequence '" + name_ + "': no distractor " + std::to_string(i));
  std::vector<PixelBox> out;
  for (const auto& b : meta_.at("distractors").at(i).at("boxes")) out.push_back(box_from_json(b));
  return out;
}

cv::Mat SequenceRecord::frame(Modality m, int k) const {
  require(k >= 0 && k < length(), ErrorKind::Range, "sequence '" + name_ + "': frame index out of range");
  const fs::path p = dir_ / to_string(m) / frame_name(k);
  require(fs::exists(p), ErrorKind::Data, "sequence '" + name_ + "': missing " + to_string(m) + " frame " + std::to_string(k));
  cv::Mat bgr = cv::imread(p.string(), cv::IMREAD_COLOR);
  require(!bgr.empty(), ErrorKind::Io, "sequence '" + name_ + "': cannot decode '" + p.string() + "'");
  cv::Mat rgb, f;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  rgb.convertTo(f, CV_32FC3, 1.0 / 255.0);
  return f;
}

std::vector<SequenceRecord> open_split(const fs::path& root, const std::string& split) {
  const fs::path dir = root / split;
  require(fs::is_directory(dir), ErrorKind::Data, "split '" + split + "' not found under '" + root.string() + "'");
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  std::vector<SequenceRecord> out;
  for (const auto& d : dirs) out.push_back(SequenceRecord::open(d));
  require(!out.empty(), ErrorKind::Data, "split '" + split + "' is empty");
  return out;
}

ImageCrop crop_square(const cv::Mat& frame, double cx, double cy, double side, int out, Modality m) {
  require(frame.type() == CV_32FC3, ErrorKind::Data, "crop source must be CV_32FC3");
  require(side > 0.0 && std::isfinite(side), ErrorKind::Data, "crop side must be positive");
  const double s = out / side;
  const cv::Mat M = (cv::Mat_<double>(2, 3) << s, 0, s * (0.5 - cx) + out / 2.0 - 0.5, 0, s, s * (0.5 - cy) + out / 2.0 - 0.5);
  cv::Mat dst;
  cv::warpAffine(frame, dst, M, cv::Size(out, out), cv::INTER_LINEAR, cv::BORDER_CONSTANT, cv::mean(frame));
  cv::min(cv::max(dst, 0.0), 1.0, dst);
  auto t = torch::from_blob(dst.data, {out, out, 3}, torch::kFloat32).permute({2, 0, 1}).contiguous();
  return {t, m, {cx, cy, s, out}};
}

ImageCrop crop_template(const cv::Mat& frame, const PixelBox& gt, Modality m, double factor, int out) {
  require(gt.valid(), ErrorKind::Data, "template box is degenerate");
  return crop_square(frame, gt.cx(), gt.cy(), factor * std::sqrt(gt.w * gt.h), out, m);
}

ImageCrop crop_search(const cv::Mat& frame, const PixelBox& ref, Modality m, double factor, int out) {
  require(ref.valid(), ErrorKind::Data, "search reference box is degenerate");
  return crop_square(frame, ref.cx(), ref.cy(), factor * std::sqrt(ref.w * ref.h), out, m);
}

BBox box_to_crop(const PixelBox& box, const CropParams& p) {
  const double n = p.out_size;
  return {(p.scale * (box.cx() - p.center_x) + n / 2.0) / n, (p.scale * (box.cy() - p.center_y) + n / 2.0) / n,
          p.scale * box.w / n, p.scale * box.h / n, 1.0};
}

PixelBox map_box_to_image(const BBox& box, const CropParams& p, int canvas_w, int canvas_h) {
  const double n = p.out_size;
  const double cx = (box.cx * n - n / 2.0) / p.scale + p.center_x;
  const double cy = (box.cy * n - n / 2.0) / p.scale + p.center_y;
  const double w = box.w * n / p.scale, h = box.h * n / p.scale;
  return clip_box({cx - w / 2.0, cy - h / 2.0, w, h}, canvas_w, canvas_h);
}

PixelBox clip_box(const PixelBox& b, int canvas_w, int canvas_h) {
  const double x0 = std::clamp(b.x, 0.0, static_cast<double>(canvas_w));
  const double y0 = std::clamp(b.y, 0.0, static_cast<double>(canvas_h));
  const double x1 = std::clamp(b.x + b.w, 0.0, static_cast<double>(canvas_w));
  const double y1 = std::clamp(b.y + b.h, 0.0, static_cast<double>(canvas_h));
  return {x0, y0, x1 - x0, y1 - y0};
}

}  // namespace lattrack
