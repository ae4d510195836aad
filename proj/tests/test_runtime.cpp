#include <fstream>
#include <sstream>

#include "lattrack/runtime.hpp"
#include "test_util.hpp"

using namespace lattrack;
using namespace lattrack::testing;
namespace fs = std::filesystem;

namespace {

// Score maps that put a single sharp peak on the ground-truth box.
HeadOverride oracle_head(const std::vector<PixelBox>& gt, int map_size, const int* frame) {
  return [gt, map_size, frame](const CropParams& p) {
    const auto b = box_to_crop(gt[static_cast<std::size_t>(*frame)], p);
    const int n = map_size;
    const int col = std::clamp(static_cast<int>(std::floor(b.cx * n)), 0, n - 1);
    const int row = std::clamp(static_cast<int>(std::floor(b.cy * n)), 0, n - 1);
    ScoreMaps m;
    m.cls = torch::zeros({1, n, n});
    m.cls[0][row][col] = 1.0;
    m.offset = torch::zeros({1, 2, n, n});
    m.offset[0][0][row][col] = b.cx * n - col;
    m.offset[0][1][row][col] = b.cy * n - row;
    m.size = torch::zeros({1, 2, n, n});
    m.size[0][0] = b.w;
    m.size[0][1] = b.h;
    return m;
  };
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SequenceRecord write_static(const fs::path& dir) {
  SequenceSpec s;
  s.name = "still";
  s.seed = 3;
  s.length = 5;
  s.width = 128;
  s.height = 128;
  s.target.x0 = 60;
  s.target.y0 = 50;
  s.target.radius = 12;
  s.target.speed = 0.0;
  s.motion.accel_noise = 0.0;
  write_sequence(render_sequence(s), dir);
  return SequenceRecord::open(dir);
}

}  // namespace

TEST(TrackMode, Names) {
  for (auto m : {TrackMode::Rgb, TrackMode::RgbDepth, TrackMode::RgbThermal, TrackMode::RgbEvent, TrackMode::RgbLanguage})
    EXPECT_EQ(track_mode_from_string(to_string(m)), m);
  EXPECT_EQ(to_string(TrackMode::RgbThermal), "rgb+thermal");
  EXPECT_EQ(aux_modality(TrackMode::RgbEvent), Modality::Event);
  EXPECT_FALSE(aux_modality(TrackMode::RgbLanguage).has_value());
  EXPECT_LT_ERROR(track_mode_from_string("rgb+sonar"), ErrorKind::Config);
}

TEST(Tracker, ScopeChecks) {
  auto model = tiny_model();
  EXPECT_LT_ERROR(Tracker(model, TrackMode::RgbThermal), ErrorKind::Config);
  model.subs.emplace(SubScope::Depth, clone_submodule(model.unet, SubScope::Depth));
  EXPECT_NO_THROW(Tracker(model, TrackMode::RgbDepth));
  EXPECT_LT_ERROR(Tracker(model, TrackMode::RgbThermal), ErrorKind::Config);
  model.subs.emplace(SubScope::Generalist, clone_submodule(model.unet, SubScope::Generalist));
  EXPECT_NO_THROW(Tracker(model, TrackMode::RgbThermal));
}

TEST(Tracker, DefaultTemplateLatentShape) {
  Codec codec(CodecConfig{});
  codec->freeze();
  auto model = Model::create(ModelConfig{}, codec, 0);
  Tracker t(model, TrackMode::Rgb);
  cv::Mat frame(256, 256, CV_32FC3, cv::Scalar(0.3, 0.3, 0.3));
  t.init({{Modality::Rgb, frame}}, {100, 100, 32, 32});
  EXPECT_EQ(t.state().template_latent.sizes(), (std::vector<int64_t>{1, 4, 8, 8}));
  EXPECT_TRUE(t.state().null_condition);
}

TEST(Tracker, LanguageModeCachesCaption) {
  auto model = tiny_model();
  cv::Mat frame(128, 128, CV_32FC3, cv::Scalar(0.3, 0.3, 0.3));
  Tracker lang(model, TrackMode::RgbLanguage), plain(model, TrackMode::Rgb);
  lang.init({{Modality::Rgb, frame}}, {40, 40, 20, 20}, "track the red circle");
  plain.init({{Modality::Rgb, frame}}, {40, 40, 20, 20}, "track the red circle");
  EXPECT_FALSE(lang.state().null_condition);
  EXPECT_TRUE(plain.state().null_condition);
  EXPECT_GT(max_abs(lang.state().condition, plain.state().condition), 0.0);
}

TEST(Tracker, MissingAuxFrame) {
  auto model = tiny_model();
  model.subs.emplace(SubScope::Thermal, clone_submodule(model.unet, SubScope::Thermal));
  Tracker t(model, TrackMode::RgbThermal);
  cv::Mat frame(128, 128, CV_32FC3, cv::Scalar(0.3, 0.3, 0.3));
  EXPECT_LT_ERROR(t.init({{Modality::Rgb, frame}}, {40, 40, 20, 20}), ErrorKind::Data);
}

TEST(Tracker, OracleHeadRecoversStaticTarget) {
  TempDir tmp("oracle");
  const auto rec = write_static(tmp.path() / "still");
  auto model = tiny_model();
  int frame = 0;
  Tracker t(model, TrackMode::Rgb);
  const int n = model.cfg.crop.search_size / model.cfg.codec.downsample / model.cfg.unet.feature_stride();
  t.set_head_override(oracle_head(rec.boxes(), n, &frame));
  t.init({{Modality::Rgb, rec.frame(Modality::Rgb, 0)}}, rec.boxes()[0]);
  for (frame = 1; frame < rec.length(); ++frame) {
    const auto out = t.track({{Modality::Rgb, rec.frame(Modality::Rgb, frame)}});
    const auto& g = rec.boxes()[static_cast<std::size_t>(frame)];
    EXPECT_LE(std::abs(out.box.x - g.x), 0.5);
    EXPECT_LE(std::abs(out.box.y - g.y), 0.5);
    EXPECT_LE(std::abs(out.box.w - g.w), 0.5);
    EXPECT_LE(std::abs(out.box.h - g.h), 0.5);
    EXPECT_NEAR(out.confidence, 1.0, 1e-6);
  }
}

TEST(Tracker, ConfidenceIsRawPeak) {
  TempDir tmp("conf");
  const auto rec = write_static(tmp.path() / "still");
  auto model = tiny_model();
  Tracker t(model, TrackMode::Rgb);
  t.init({{Modality::Rgb, rec.frame(Modality::Rgb, 0)}}, rec.boxes()[0]);
  const auto a = t.track({{Modality::Rgb, rec.frame(Modality::Rgb, 1)}});
  EXPECT_GT(a.confidence, 0.0);
  EXPECT_LT(a.confidence, 1.0);
  Tracker u(model, TrackMode::Rgb);
  u.init({{Modality::Rgb, rec.frame(Modality::Rgb, 0)}}, rec.boxes()[0]);
  const auto b = u.track({{Modality::Rgb, rec.frame(Modality::Rgb, 1)}});
  EXPECT_EQ(a.box.x, b.box.x);
  EXPECT_EQ(a.confidence, b.confidence);
}

TEST(RunSequence, ResultFileContract) {
  TempDir tmp("results");
  const auto rec = write_static(tmp.path() / "still");
  auto model = tiny_model();
  const auto r = run_sequence(rec, TrackMode::Rgb, model);
  ASSERT_EQ(static_cast<int>(r.boxes.size()), rec.length());
  EXPECT_EQ(r.boxes[0].x, rec.boxes()[0].x);
  EXPECT_EQ(r.boxes[0].w, rec.boxes()[0].w);
  EXPECT_EQ(r.scores[0], 1.0);
  write_results(r, tmp.path() / "a.txt");
  write_results(run_sequence(rec, TrackMode::Rgb, model), tmp.path() / "b.txt");
  EXPECT_EQ(slurp(tmp.path() / "a.txt"), slurp(tmp.path() / "b.txt"));
  const auto back = read_results(tmp.path() / "a.txt");
  EXPECT_EQ(back.boxes.size(), r.boxes.size());
  EXPECT_NEAR(back.boxes[3].x, r.boxes[3].x, 1e-6);
  std::istringstream lines(slurp(tmp.path() / "a.txt"));
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) ++count;
  EXPECT_EQ(count, rec.length());
}

TEST(RunSequence, ErrorsNameTheSequence) {
  TempDir tmp("broken");
  const auto rec = write_static(tmp.path() / "still");
  fs::remove(tmp.path() / "still" / "rgb" / "000003.png");
  auto model = tiny_model();
  try {
    run_sequence(rec, TrackMode::Rgb, model);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("still"), std::string::npos) << e.what();
  }
  EXPECT_LT_ERROR(read_results(tmp.path() / "nope.txt"), ErrorKind::Io);
}
