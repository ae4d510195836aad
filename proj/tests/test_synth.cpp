#include <fstream>
#include <sstream>

#include <opencv2/core.hpp>

#include "lattrack/synth.hpp"
#include "test_util.hpp"

using namespace lattrack;
using namespace lattrack::testing;
namespace fs = std::filesystem;

namespace {

SequenceSpec static_spec() {
  SequenceSpec s;
  s.name = "static";
  s.seed = 5;
  s.length = 5;
  s.target.speed = 0.0;
  s.motion.accel_noise = 0.0;
  return s;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double mean_inside(const cv::Mat& rgb_like, const PixelBox& b) {
  const cv::Rect r(static_cast<int>(b.x + b.w * 0.35), static_cast<int>(b.y + b.h * 0.35), static_cast<int>(b.w * 0.3),
                   static_cast<int>(b.h * 0.3));
  return cv::mean(rgb_like(r))[0];
}

}  // namespace

TEST(Spec, ValidationErrors) {
  auto s = static_spec();
  EXPECT_NO_THROW(s.validate());
  auto bad = s;
  bad.length = 1;
  EXPECT_LT_ERROR(bad.validate(), ErrorKind::Data);
  bad = s;
  bad.target.radius = 100;
  EXPECT_LT_ERROR(bad.validate(), ErrorKind::Data);
  bad = s;
  bad.target.depth = 12;
  EXPECT_LT_ERROR(bad.validate(), ErrorKind::Data);
  bad = s;
  bad.distractors.push_back(s.target);
  EXPECT_LT_ERROR(bad.validate(), ErrorKind::Data);
  bad = s;
  for (int i = 0; i < 12; ++i) {
    ObjectSpec o = s.target;
    o.radius = 60;
    o.color = palette()[static_cast<std::size_t>(i) % palette().size()].name;
    o.shape = static_cast<ShapeKind>(i % 3);
    bad.distractors.push_back(o);
  }
  EXPECT_LT_ERROR(bad.validate(), ErrorKind::Data);
  bad = s;
  bad.darkness.push_back({1, 3, 0.5});
  EXPECT_LT_ERROR(bad.validate(), ErrorKind::Data);
  bad = s;
  bad.occlusion.push_back({3, 9, 0.0});
  EXPECT_LT_ERROR(bad.validate(), ErrorKind::Data);
}

TEST(Spec, CaptionAndNames) {
  ObjectSpec o;
  o.color = "cyan";
  o.shape = ShapeKind::Triangle;
  EXPECT_EQ(o.caption(), "track the cyan triangle");
  EXPECT_EQ(shape_from_string("square"), ShapeKind::Square);
  EXPECT_LT_ERROR(color_by_name("beige"), ErrorKind::Config);
}

TEST(Spec, RandomSpecsAreValidAndSeeded) {
  for (auto p : {SequenceProfile::Standard, SequenceProfile::Dark, SequenceProfile::Caption})
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      const auto a = random_spec("x", seed, p);
      EXPECT_NO_THROW(a.validate());
      EXPECT_EQ(a.to_json(), random_spec("x", seed, p).to_json());
    }
  const auto cap = random_spec("c", 3, SequenceProfile::Caption);
  ASSERT_EQ(cap.distractors.size(), 1u);
  EXPECT_EQ(cap.distractors[0].shape, cap.target.shape);
  EXPECT_NE(cap.distractors[0].color, cap.target.color);
  EXPECT_TRUE(cap.distractors[0].tether.has_value());
  EXPECT_FALSE(random_spec("d", 3, SequenceProfile::Dark).darkness.empty());
}

TEST(Render, WrittenDirectoriesAreByteIdentical) {
  TempDir tmp("synth");
  ProfileOptions o;
  o.length = 6;
  const auto spec = random_spec("seq", 17, SequenceProfile::Standard, o);
  write_sequence(render_sequence(spec), tmp.path() / "a");
  write_sequence(render_sequence(spec), tmp.path() / "b");
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(tmp.path() / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), tmp.path() / "a");
    EXPECT_EQ(slurp(e.path()), slurp(tmp.path() / "b" / rel)) << rel;
    ++files;
  }
  EXPECT_EQ(files, 4 * 6 + 2);
}

TEST(Render, RecordMatchesRender) {
  TempDir tmp("record");
  ProfileOptions o;
  o.length = 4;
  const auto seq = render_sequence(random_spec("seq", 2, SequenceProfile::Caption, o));
  write_sequence(seq, tmp.path() / "seq");
  const auto rec = SequenceRecord::open(tmp.path() / "seq");
  EXPECT_EQ(rec.length(), 4);
  EXPECT_EQ(rec.caption(), seq.caption);
  EXPECT_EQ(rec.distractor_count(), 1u);
  for (int k = 0; k < 4; ++k) {
    EXPECT_EQ(rec.boxes()[k].x, seq.boxes[k].x);
    EXPECT_EQ(rec.distractor_boxes(0)[k].w, seq.distractor_boxes[0][k].w);
    // 8-bit PNG quantization only.
    EXPECT_LE(cv::norm(rec.frame(Modality::Thermal, k), seq.frames.at(Modality::Thermal)[k], cv::NORM_INF), 0.5 / 255 + 1e-6);
  }
}

TEST(Render, StaticSceneEventsAreGray) {
  const auto seq = render_sequence(static_spec());
  const auto& ev = seq.frames.at(Modality::Event);
  const cv::Vec3f gray(128.f / 255, 128.f / 255, 128.f / 255);
  for (std::size_t k = 1; k < ev.size(); ++k)
    EXPECT_EQ(cv::norm(ev[k], cv::Mat(ev[k].size(), CV_32FC3, cv::Scalar(gray[0], gray[1], gray[2])), cv::NORM_INF), 0.0);
}

TEST(Render, DarknessKeepsThermal) {
  auto s = static_spec();
  s.darkness.push_back({1, 4, 0.03});
  const auto seq = render_sequence(s);
  for (int k = 1; k < 4; ++k) {
    const auto m = cv::mean(seq.frames.at(Modality::Rgb)[static_cast<std::size_t>(k)]);
    EXPECT_LT((m[0] + m[1] + m[2]) / 3.0, 0.1);
    EXPECT_GT(mean_inside(seq.frames.at(Modality::Thermal)[static_cast<std::size_t>(k)], seq.boxes[static_cast<std::size_t>(k)]), 0.5);
  }
}

TEST(Render, OcclusionHidesTarget) {
  auto s = static_spec();
  s.occlusion.push_back({2, 4, 0.0});
  const auto seq = render_sequence(s);
  EXPECT_TRUE(seq.visible[1]);
  EXPECT_FALSE(seq.visible[2]);
  EXPECT_FALSE(seq.visible[3]);
  EXPECT_TRUE(seq.visible[4]);
  EXPECT_LT(mean_inside(seq.frames.at(Modality::Thermal)[2], seq.boxes[2]), 0.3);
}

TEST(RgbLike, Conversions) {
  cv::Mat rgb(4, 4, CV_32FC3, cv::Scalar(0.1, 0.2, 0.3));
  EXPECT_EQ(cv::norm(modality_to_rgb_like(rgb, Modality::Rgb), rgb, cv::NORM_INF), 0.0);
  cv::Mat depth(4, 4, CV_32F, cv::Scalar(4.0));
  const auto d = modality_to_rgb_like(depth, Modality::Depth);
  double lo, hi;
  cv::minMaxLoc(d.reshape(1), &lo, &hi);
  EXPECT_EQ(lo, hi);
  cv::Mat ev = (cv::Mat_<schar>(1, 3) << 1, 0, -1);
  const auto e = modality_to_rgb_like(ev, Modality::Event);
  EXPECT_EQ(e.at<cv::Vec3f>(0, 0), cv::Vec3f(1, 0, 0));
  EXPECT_EQ(e.at<cv::Vec3f>(0, 1), cv::Vec3f(128.f / 255, 128.f / 255, 128.f / 255));
  EXPECT_EQ(e.at<cv::Vec3f>(0, 2), cv::Vec3f(0, 0, 1));
  EXPECT_LT_ERROR(modality_to_rgb_like(ev, static_cast<Modality>(9)), ErrorKind::Config);
}

TEST(Crop, TemplateWindowIsExactWhenInside) {
  cv::Mat frame(256, 256, CV_32FC3);
  cv::randu(frame, 0.0, 1.0);
  const auto c = crop_template(frame, {112, 112, 32, 32});
  EXPECT_EQ(c.pixels.sizes(), (std::vector<int64_t>{3, 64, 64}));
  EXPECT_DOUBLE_EQ(c.params.scale, 1.0);
  cv::Mat want = frame(cv::Rect(96, 96, 64, 64));
  auto got = c.pixels.permute({1, 2, 0}).contiguous();
  cv::Mat got_m(64, 64, CV_32FC3, got.data_ptr<float>());
  EXPECT_LE(cv::norm(got_m, want, cv::NORM_INF), 1e-6);
}

TEST(Crop, SearchWindowScale) {
  cv::Mat frame(256, 256, CV_32FC3, cv::Scalar(0.4, 0.4, 0.4));
  const auto c = crop_search(frame, {112, 112, 32, 32});
  EXPECT_EQ(c.pixels.sizes(), (std::vector<int64_t>{3, 128, 128}));
  EXPECT_DOUBLE_EQ(c.params.scale, 1.0);
  EXPECT_DOUBLE_EQ(c.params.center_x, 128.0);
}

TEST(Crop, CornerPadsWithFrameMean) {
  cv::Mat frame(256, 256, CV_32FC3, cv::Scalar(0.2, 0.2, 0.2));
  frame(cv::Rect(0, 0, 128, 256)).setTo(cv::Scalar(0.6, 0.6, 0.6));
  const auto c = crop_template(frame, {0, 0, 20, 20});
  EXPECT_DOUBLE_EQ(c.params.center_x, 10.0);
  EXPECT_DOUBLE_EQ(c.params.center_y, 10.0);
  EXPECT_NEAR(c.pixels[0][0][0].item<float>(), 0.4, 1e-5);
  EXPECT_LT_ERROR(crop_template(frame, {0, 0, 0, 20}), ErrorKind::Data);
}

TEST(Crop, BoxRoundTrip) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const PixelBox ref{30 + 170 * u(rng), 30 + 170 * u(rng), 12 + 30 * u(rng), 12 + 30 * u(rng)};
    const PixelBox gt{ref.x + 8 * (u(rng) - 0.5), ref.y + 8 * (u(rng) - 0.5), ref.w, ref.h};
    cv::Mat frame(256, 256, CV_32FC3, cv::Scalar(0, 0, 0));
    const auto p = crop_search(frame, ref).params;
    const auto back = map_box_to_image(box_to_crop(gt, p), p, 256, 256);
    const auto want = clip_box(gt, 256, 256);
    EXPECT_LE(std::abs(back.x - want.x), 0.5);
    EXPECT_LE(std::abs(back.y - want.y), 0.5);
    EXPECT_LE(std::abs(back.w - want.w), 0.5);
    EXPECT_LE(std::abs(back.h - want.h), 0.5);
  }
}

TEST(Crop, CenteredBoxMapsToCropCenter) {
  const CropParams p{100.0, 80.0, 0.5, 128};
  const auto b = map_box_to_image({0.5, 0.5, 0.25, 0.25}, p, 256, 256);
  EXPECT_DOUBLE_EQ(b.cx(), 100.0);
  EXPECT_DOUBLE_EQ(b.cy(), 80.0);
  EXPECT_DOUBLE_EQ(b.w, 64.0);
  const auto c = clip_box({-10, 250, 30, 30}, 256, 256);
  EXPECT_DOUBLE_EQ(c.x, 0.0);
  EXPECT_DOUBLE_EQ(c.w, 20.0);
  EXPECT_DOUBLE_EQ(c.h, 6.0);
}

TEST(Crop, MotionBoundKeepsTargetInSearchWindow) {
  ProfileOptions o;
  o.length = 40;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto seq = render_sequence(random_spec("m", seed, SequenceProfile::Standard, o));
    for (std::size_t k = 1; k < seq.boxes.size(); ++k) {
      const auto& prev = seq.boxes[k - 1];
      const auto& cur = seq.boxes[k];
      if (cur.w != prev.w || cur.h != prev.h || prev.w != prev.h) continue;
      const double limit = (4.0 - 1.0) / 2.0 * std::sqrt(prev.w * prev.h);
      if (std::max(std::abs(cur.cx() - prev.cx()), std::abs(cur.cy() - prev.cy())) >= limit) continue;
      const auto c = crop_search(seq.frames.at(Modality::Rgb)[k], prev);
      const auto b = box_to_crop(cur, c.params);
      EXPECT_GE(b.cx - b.w / 2, -1e-9);
      EXPECT_LE(b.cx + b.w / 2, 1 + 1e-9);
    }
  }
}

TEST(Split, MissingOrEmpty) {
  TempDir tmp("split");
  EXPECT_LT_ERROR(open_split(tmp.path(), "none"), ErrorKind::Data);
  fs::create_directories(tmp.path() / "empty");
  EXPECT_LT_ERROR(open_split(tmp.path(), "empty"), ErrorKind::Data);
}
