#include <cmath>

#include "lattrack/config.hpp"
#include "lattrack/trainer.hpp"
#include "test_util.hpp"

using namespace lattrack;
using namespace lattrack::testing;
namespace fs = std::filesystem;

namespace {

// Six short sequences on a 128 x 128 canvas, shared by every test in this file.
class TinyData : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("trainer");
    ProfileOptions o{6, 128, 128, 0.02};
    const SequenceProfile profiles[] = {SequenceProfile::Standard, SequenceProfile::Caption, SequenceProfile::Dark};
    for (int i = 0; i < 6; ++i) {
      const auto name = "s" + std::to_string(i);
      write_sequence(render_sequence(random_spec(name, 40 + i, profiles[i % 3], o)), dir_->path() / "train" / name);
    }
    for (int i = 0; i < 2; ++i) {
      const auto name = "v" + std::to_string(i);
      write_sequence(render_sequence(random_spec(name, 90 + i, profiles[i], o)), dir_->path() / "val" / name);
    }
  }
  static void TearDownTestSuite() { delete dir_; }

  static std::vector<SequenceRecord> split(const std::string& s) { return open_split(dir_->path(), s); }

  static TrainConfig config(int stage, int steps) {
    TrainConfig c;
    c.stage = stage;
    c.steps = steps;
    c.batch_size = 4;
    c.val_size = 4;
    c.val_every = 2;
    c.log_every = 1;
    c.lr_backbone = 1e-3;
    c.lr_head = 1e-2;
    if (stage == 2) {
      c.caption_dropout = 1.0;
      c.retarget_prob = 0.0;
      c.tune_text = false;
    }
    return c;
  }

  static TempDir* dir_;
};

TempDir* TinyData::dir_ = nullptr;

}  // namespace

TEST(CosineLr, Values) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 1e-3, 0.01), 1e-3);
  EXPECT_NEAR(cosine_lr(100, 100, 1e-3, 0.01), 1e-5, 1e-18);
  EXPECT_NEAR(cosine_lr(50, 100, 1e-3, 0.01), 5.05e-4, 1e-15);
  EXPECT_LT_ERROR(cosine_lr(101, 100, 1e-3, 0.01), ErrorKind::Range);
  EXPECT_LT_ERROR(cosine_lr(-1, 100, 1e-3, 0.01), ErrorKind::Range);
}

TEST(TunableMask, Stage1) {
  TunableMask m{1, false, false};
  EXPECT_TRUE(m.trainable("unet.enc.blocks.0.0.sa.attn.q.weight"));
  EXPECT_FALSE(m.trainable("unet.enc.blocks.0.0.ca.attn.q.weight"));
  EXPECT_FALSE(m.trainable("unet.enc.blocks.0.0.res.conv1.weight"));
  EXPECT_TRUE(m.trainable("head.cls.0.weight"));
  EXPECT_FALSE(m.trainable("text.tok.weight"));
  EXPECT_FALSE(m.trainable("codec.enc.0.weight"));
  EXPECT_TRUE((TunableMask{1, true, false}).trainable("text.tok.weight"));
  EXPECT_TRUE(TunableMask::head_class("head.size.2.bias"));
  EXPECT_FALSE(TunableMask::head_class("unet.mid.blocks.0.sa.norm.weight"));
}

TEST(TunableMask, Stage2) {
  TunableMask m{2, false, false};
  EXPECT_TRUE(m.trainable("sub.thermal.zconv.0.weight"));
  EXPECT_FALSE(m.trainable("unet.enc.blocks.0.0.sa.attn.q.weight"));
  EXPECT_FALSE(m.trainable("head.cls.0.weight"));
  EXPECT_FALSE(m.trainable("text.tok.weight"));
  EXPECT_TRUE((TunableMask{2, false, true}).trainable("unet.enc.stem.weight"));
  EXPECT_FALSE((TunableMask{2, false, true}).trainable("codec.enc.0.weight"));
}

TEST_F(TinyData, Stage1BatchHasNoAux) {
  auto model = tiny_model();
  BatchSampler s(split("train"), model, config(1, 1), std::nullopt);
  std::mt19937_64 rng(1);
  auto b = s.load(s.plan_batch(rng, 4));
  EXPECT_FALSE(b.aux_search.defined());
  EXPECT_EQ(b.search.sizes(), (std::vector<int64_t>{4, 3, 64, 64}));
  EXPECT_EQ(b.tmpl_latent.sizes(), (std::vector<int64_t>{4, 4, 4, 4}));
  for (const auto& box : b.boxes) {
    EXPECT_GT(box.cx, 0.0);
    EXPECT_LT(box.cx, 1.0);
  }
}

TEST_F(TinyData, GeneralistBatchMixesModalities) {
  auto model = tiny_model();
  BatchSampler s(split("train"), model, config(2, 1), SubScope::Generalist);
  std::mt19937_64 rng(3);
  const auto plans = s.plan_batch(rng, 12);
  std::map<Modality, int> counts;
  for (const auto& p : plans) counts[p.aux]++;
  EXPECT_GE(counts[Modality::Depth], 1);
  EXPECT_GE(counts[Modality::Thermal], 1);
  EXPECT_GE(counts[Modality::Event], 1);
  EXPECT_EQ(counts[Modality::Rgb], 0);
  auto b = s.load(plans);
  EXPECT_EQ(b.aux_search.sizes(), b.search.sizes());
}

TEST_F(TinyData, PlansAreSeeded) {
  auto model = tiny_model();
  BatchSampler s(split("train"), model, config(1, 1), std::nullopt);
  std::mt19937_64 a(5), b(5);
  const auto pa = s.plan_batch(a, 8), pb = s.plan_batch(b, 8);
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].sequence, pb[i].sequence);
    EXPECT_EQ(pa[i].frame, pb[i].frame);
    EXPECT_EQ(pa[i].jitter_x, pb[i].jitter_x);
  }
}

TEST_F(TinyData, ScopeNeedsModalityFrames) {
  TempDir tmp("scope");
  fs::create_directories(tmp.path() / "only");
  fs::copy(split("train")[0].dir(), tmp.path() / "only" / "s0", fs::copy_options::recursive);
  fs::remove_all(tmp.path() / "only" / "s0" / "depth");
  auto model = tiny_model();
  EXPECT_LT_ERROR(BatchSampler(open_split(tmp.path(), "only"), model, config(2, 1), SubScope::Depth), ErrorKind::Config);
  EXPECT_NO_THROW(BatchSampler(open_split(tmp.path(), "only"), model, config(2, 1), SubScope::Thermal));
}

TEST_F(TinyData, Stage1FreezesNonAttentionUNet) {
  auto model = tiny_model(2);
  const auto before = model.checksums();
  const auto r = train_stage1(model, split("train"), split("val"), config(1, 6));
  const auto after = model.checksums();
  int sa_moved = 0;
  for (const auto& [name, sum] : before) {
    const bool is_sa = name.rfind("unet.", 0) == 0 && name.find(".sa.") != std::string::npos;
    if ((name.rfind("unet.", 0) == 0 && !is_sa) || name.rfind("codec.", 0) == 0) EXPECT_EQ(after.at(name), sum) << name;
    if (is_sa && after.at(name) != sum) ++sa_moved;
  }
  EXPECT_GT(sa_moved, 0);
  EXPECT_EQ(r.steps, 6);
  EXPECT_EQ(r.val_losses.size(), 4u);
  EXPECT_EQ(r.frozen_before, r.frozen_after);
}

TEST_F(TinyData, Stage1IsRepeatableAndReloadable) {
  auto m1 = tiny_model(3);
  auto m2 = tiny_model(3);
  const auto r1 = train_stage1(m1, split("train"), split("val"), config(1, 4));
  const auto r2 = train_stage1(m2, split("train"), split("val"), config(1, 4));
  ASSERT_EQ(r1.val_losses.size(), r2.val_losses.size());
  for (std::size_t i = 0; i < r1.val_losses.size(); ++i) EXPECT_NEAR(r1.val_losses[i], r2.val_losses[i], 1e-5);

  TempDir tmp("reload");
  m1.save(tmp.path() / "m.ltar");
  auto back = Model::load(tmp.path() / "m.ltar");
  const auto cfg = config(1, 4);
  BatchSampler s1(split("val"), m1, cfg, std::nullopt), s2(split("val"), back, cfg, std::nullopt);
  std::mt19937_64 rng(cfg.seed + 1000003);
  const auto plans = s1.plan_batch(rng, 4);
  const LossWeights w{cfg.giou_weight, cfg.l1_weight};
  const double a = validation_loss(m1, s1, s1.load(plans), nullptr, w);
  const double b = validation_loss(back, s2, s2.load(plans), nullptr, w);
  EXPECT_NEAR(a, b, 1e-6);
  EXPECT_NEAR(a, r1.final_val_loss, 1e-5);
}

TEST_F(TinyData, Stage2TouchesOnlyTheSubModule) {
  auto model = tiny_model(4);
  train_stage1(model, split("train"), split("val"), config(1, 2));
  const auto before = model.checksums();
  auto cfg = config(2, 4);
  cfg.scope = "thermal";
  const auto r = train_stage2(model, split("train"), split("val"), cfg);
  const auto after = model.checksums();
  for (const auto& [name, sum] : before) EXPECT_EQ(after.at(name), sum) << name;
  int sub = 0;
  for (const auto& [name, sum] : after) sub += name.rfind("sub.thermal.", 0) == 0;
  EXPECT_GT(sub, 0);
  EXPECT_EQ(r.frozen_before, r.frozen_after);
  ASSERT_EQ(model.subs.size(), 1u);
}

TEST_F(TinyData, Stage2StepZeroEqualsRgbOnly) {
  auto model = tiny_model(5);
  auto cfg = config(2, 1);
  BatchSampler s(split("val"), model, cfg, SubScope::Event);
  std::mt19937_64 rng(9);
  const auto batch = s.load(s.plan_batch(rng, 4));
  auto fresh = clone_submodule(model.unet, SubScope::Event);
  const LossWeights w{cfg.giou_weight, cfg.l1_weight};
  EXPECT_EQ(validation_loss(model, s, batch, &fresh, w), validation_loss(model, s, batch, nullptr, w));
}

TEST_F(TinyData, GeneralistHasOneFamily) {
  auto model = tiny_model(6);
  auto cfg = config(2, 2);
  cfg.scope = "generalist";
  train_stage2(model, split("train"), split("val"), cfg);
  std::set<std::string> families;
  for (const auto& [name, p] : model.named_parameters())
    if (name.rfind("sub.", 0) == 0) families.insert(name.substr(0, name.find('.', 4)));
  EXPECT_EQ(families, (std::set<std::string>{"sub.generalist"}));
}

TEST_F(TinyData, RgbOnlyLeavesModelUntouched) {
  auto model = tiny_model(7);
  const auto before = model.checksums();
  auto cfg = config(2, 2);
  cfg.rgb_only = true;
  train_stage2(model, split("train"), split("val"), cfg);
  EXPECT_EQ(model.checksums(), before);
  EXPECT_TRUE(model.subs.empty());
}

TEST_F(TinyData, GeneralistStepFactor) {
  auto cfg = config(2, 2);
  cfg.generalist_step_factor = 3;
  cfg.scope = "thermal";
  EXPECT_EQ(cfg.effective_steps(), 2);
  cfg.scope = "generalist";
  EXPECT_EQ(cfg.effective_steps(), 6);
  auto model = tiny_model(8);
  EXPECT_EQ(train_stage2(model, split("train"), split("val"), cfg).steps, 6);
  EXPECT_EQ(RunConfig::defaults().stage2.generalist_step_factor, 3);
}
