#include <fstream>

#include "lattrack/config.hpp"
#include "test_util.hpp"

using namespace lattrack;
using namespace lattrack::testing;

TEST(Config, DefaultsValidateAndRoundTrip) {
  const auto cfg = RunConfig::defaults();
  EXPECT_NO_THROW(cfg.validate());
  const auto back = RunConfig::from_json(cfg.to_json());
  EXPECT_EQ(back.to_json(), cfg.to_json());
  EXPECT_EQ(back.hash(), cfg.hash());
  EXPECT_EQ(cfg.data.splits.at("train").count(), 200);
  EXPECT_EQ(cfg.data.splits.at("test").count(), 20);
  EXPECT_EQ(cfg.data.splits.at("test_dark").count(), 20);
  EXPECT_DOUBLE_EQ(cfg.stage1.giou_weight, 2.0);
  EXPECT_DOUBLE_EQ(cfg.stage1.l1_weight, 5.0);
  EXPECT_DOUBLE_EQ(cfg.model.window_weight, 0.49);
  EXPECT_EQ(cfg.model.diffusion.timestep, 1);
}

TEST(Config, PartialOverlay) {
  const auto cfg = RunConfig::from_json(json::parse(R"({"train": {"stage1": {"steps": 7}}, "runtime": {"workers": 3}})"));
  EXPECT_EQ(cfg.stage1.steps, 7);
  EXPECT_EQ(cfg.runtime.workers, 3);
  EXPECT_EQ(cfg.stage2.steps, RunConfig::defaults().stage2.steps);
  EXPECT_NE(cfg.hash(), RunConfig::defaults().hash());
}

TEST(Config, UnknownKeyAndTypeErrors) {
  try {
    RunConfig::from_json(json::parse(R"({"train": {"stage1": {"stepz": 7}}})"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
    EXPECT_NE(std::string(e.what()).find("stepz"), std::string::npos);
  }
  EXPECT_LT_ERROR(RunConfig::from_json(json::parse(R"({"train": {"stage1": {"steps": "many"}}})")), ErrorKind::Config);
}

TEST(Config, CustomSplits) {
  const auto cfg = RunConfig::from_json(json::parse(
      R"({"data": {"splits": {"mine": {"seed": 5, "parts": [{"profile": "dark", "count": 3}]}}}})"));
  ASSERT_EQ(cfg.data.splits.size(), 1u);
  EXPECT_EQ(cfg.data.splits.at("mine").count(), 3);
  EXPECT_EQ(cfg.data.splits.at("mine").parts[0].first, SequenceProfile::Dark);
}

TEST(Config, ValidateRejects) {
  auto cfg = RunConfig::defaults();
  cfg.model.text.dim = 32;
  EXPECT_LT_ERROR(cfg.validate(), ErrorKind::Config);
  cfg = RunConfig::defaults();
  cfg.data.splits.at("test").seed = cfg.data.splits.at("train").seed + 10;
  EXPECT_LT_ERROR(cfg.validate(), ErrorKind::Config);
  cfg = RunConfig::defaults();
  cfg.stage2.scope = "sonar";
  EXPECT_LT_ERROR(cfg.validate(), ErrorKind::Config);
  cfg = RunConfig::defaults();
  cfg.eval.modes = {"rgb+lidar"};
  EXPECT_LT_ERROR(cfg.validate(), ErrorKind::Config);
}

TEST(Config, LoadFromFile) {
  TempDir tmp("cfg");
  {
    std::ofstream(tmp.path() / "c.json") << R"({"eval": {"precision_at": 10}})";
    std::ofstream(tmp.path() / "bad.json") << "{ not json";
  }
  EXPECT_DOUBLE_EQ(RunConfig::load(tmp.path() / "c.json").eval.precision_at, 10.0);
  EXPECT_LT_ERROR(RunConfig::load(tmp.path() / "bad.json"), ErrorKind::Config);
  EXPECT_LT_ERROR(RunConfig::load(tmp.path() / "missing.json"), ErrorKind::Config);
}

TEST(Config, ArtifactPaths) {
  auto cfg = RunConfig::defaults();
  cfg.runtime.out_dir = "/x";
  EXPECT_EQ(cfg.stage2_path("thermal"), std::filesystem::path("/x/stage2_thermal.ltar"));
  EXPECT_EQ(cfg.codec_path(), std::filesystem::path("/x/codec.ltar"));
}

TEST(Config, HashIgnoresPathsAndWorkers) {
  auto cfg = RunConfig::defaults();
  const auto h = cfg.hash();
  cfg.runtime.out_dir = "/elsewhere";
  cfg.runtime.workers = 8;
  cfg.data.root = "/tmp/other";
  EXPECT_EQ(cfg.hash(), h);
  cfg.data.splits.at("val").seed += 1;
  EXPECT_NE(cfg.hash(), h);
}
