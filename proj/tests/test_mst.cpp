#include "lattrack/mst.hpp"
#include "test_util.hpp"

using namespace lattrack;
using namespace lattrack::testing;

namespace {

struct Inputs {
  torch::Tensor s, t, as, at, cond;
};

Inputs inputs(std::uint64_t seed) {
  torch::manual_seed(seed);
  return {torch::randn({1, 4, 8, 8}), torch::randn({1, 4, 4, 4}), torch::randn({1, 4, 8, 8}), torch::randn({1, 4, 4, 4}),
          torch::randn({1, 8, 16})};
}

}  // namespace

TEST(SubModule, DefaultSiteCount) {
  torch::manual_seed(0);
  UNet unet;
  auto sub = clone_submodule(unet, SubScope::Depth);
  EXPECT_EQ(sub->sites(), 3u);
}

TEST(SubModule, CloneCopiesWeightsAndZeroesInjection) {
  auto m = tiny_model();
  auto sub = clone_submodule(m.unet, SubScope::Thermal);
  auto src_enc = m.unet->enc->named_parameters();
  for (const auto& p : sub->enc->named_parameters()) EXPECT_TRUE(torch::equal(p.value(), src_enc[p.key()])) << p.key();
  auto src_mid = m.unet->mid->named_parameters();
  for (const auto& p : sub->mid->named_parameters()) EXPECT_TRUE(torch::equal(p.value(), src_mid[p.key()])) << p.key();
  for (const auto& z : sub->zconv) {
    EXPECT_EQ(z->weight.abs().max().item<double>(), 0.0);
    EXPECT_EQ(z->bias.abs().max().item<double>(), 0.0);
  }
  // The clone owns its storage.
  torch::NoGradGuard ng;
  sub->enc->stem->weight.add_(1.0);
  EXPECT_FALSE(torch::equal(sub->enc->stem->weight, m.unet->enc->stem->weight));
}

TEST(SubModule, ScopeNames) {
  EXPECT_EQ(scope_from_string("generalist"), SubScope::Generalist);
  EXPECT_EQ(to_string(SubScope::Event), "event");
  EXPECT_LT_ERROR(scope_from_string("lidar"), ErrorKind::Config);
}

TEST(SubModule, FreshDeltasAreZeroAndShaped) {
  auto m = tiny_model();
  auto sub = clone_submodule(m.unet, SubScope::Depth);
  auto in = inputs(1);
  torch::NoGradGuard ng;
  auto deltas = submodule_forward(in.as, in.at, in.cond, 1, m.unet, sub);
  const auto shapes = m.unet->stash_shapes(1, 8, 8, 4, 4);
  ASSERT_EQ(deltas.size(), shapes.size());
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    EXPECT_EQ(deltas[i].search.abs().max().item<double>(), 0.0);
    EXPECT_EQ(deltas[i].tmpl.abs().max().item<double>(), 0.0);
    EXPECT_EQ(deltas[i].search.sizes().vec(), shapes[i].first);
    EXPECT_EQ(deltas[i].tmpl.sizes().vec(), shapes[i].second);
  }
}

TEST(SubModule, IdentityInjectionReturnsSnapshot) {
  auto m = tiny_model();
  auto sub = clone_submodule(m.unet, SubScope::Depth);
  auto in = inputs(2);
  torch::NoGradGuard ng;
  auto& z = sub->zconv[0];
  const auto c = z->weight.size(0);
  z->weight.copy_(torch::eye(c).view({c, c, 1, 1}));
  auto deltas = submodule_forward(in.as, in.at, in.cond, 1, m.unet, sub);
  // Same dataflow through the (identical) cloned weights as the UNet encoder on the aux pair.
  auto ref = m.unet->forward_pair(in.as, in.at, in.cond, 1).laterals;
  EXPECT_LE(max_abs(deltas[0].search, ref[0].search), 1e-6);
  EXPECT_LE(max_abs(deltas[0].tmpl, ref[0].tmpl), 1e-6);
  EXPECT_EQ(deltas[1].search.abs().max().item<double>(), 0.0);
}

TEST(SubModule, FreshFusedEqualsRgbOnly) {
  auto m = tiny_model();
  auto sub = clone_submodule(m.unet, SubScope::Event);
  torch::NoGradGuard ng;
  for (int i = 0; i < 20; ++i) {
    auto in = inputs(100 + i);
    auto plain = m.unet->forward_pair(in.s, in.t, in.cond, 1).features;
    auto fused = fused_forward(in.s, in.t, in.as, in.at, in.cond, 1, m.unet, sub);
    EXPECT_LE(max_abs(plain.search, fused.search), 1e-6);
    EXPECT_LE(max_abs(plain.tmpl, fused.tmpl), 1e-6);
  }
}

TEST(SubModule, NoZeroInitChangesOutput) {
  auto m = tiny_model();
  SubModuleOptions o;
  o.no_zero_init = true;
  auto sub = clone_submodule(m.unet, SubScope::Event, o);
  auto in = inputs(3);
  torch::NoGradGuard ng;
  auto plain = m.unet->forward_pair(in.s, in.t, in.cond, 1).features;
  auto fused = fused_forward(in.s, in.t, in.as, in.at, in.cond, 1, m.unet, sub);
  EXPECT_GT(max_abs(plain.search, fused.search), 0.0);
}

TEST(SubModule, TrainedSubChangesOutputEvenOnZeroAux) {
  auto m = tiny_model();
  auto sub = clone_submodule(m.unet, SubScope::Depth);
  {
    torch::NoGradGuard ng;
    for (auto& z : sub->zconv) z->bias.fill_(0.1);
  }
  auto in = inputs(4);
  torch::NoGradGuard ng;
  auto plain = m.unet->forward_pair(in.s, in.t, in.cond, 1).features;
  auto fused = fused_forward(in.s, in.t, torch::zeros_like(in.as), torch::zeros_like(in.at), in.cond, 1, m.unet, sub);
  EXPECT_GT(max_abs(plain.search, fused.search), 0.0);
  auto again = fused_forward(in.s, in.t, torch::zeros_like(in.as), torch::zeros_like(in.at), in.cond, 1, m.unet, sub);
  EXPECT_TRUE(torch::equal(fused.search, again.search));
}

TEST(SubModule, ShapeMismatch) {
  auto m = tiny_model();
  auto sub = clone_submodule(m.unet, SubScope::Depth);
  auto in = inputs(5);
  torch::NoGradGuard ng;
  EXPECT_LT_ERROR(fused_forward(in.s, in.t, torch::randn({1, 4, 4, 4}), in.at, in.cond, 1, m.unet, sub), ErrorKind::Shape);
}
