#include "lattrack/config.hpp"

#include <algorithm>
#include <fstream>

#include "lattrack/errors.hpp"

namespace fs = std::filesystem;

namespace lattrack {

int SplitConfig::count() const {
  int n = 0;
  for (const auto& [p, c] : parts) n += c;
  return n;
}

json SplitConfig::to_json() const {
  json p = json::array();
  for (const auto& [profile, c] : parts) p.push_back({{"profile", to_string(profile)}, {"count", c}});
  return {{"seed", seed}, {"parts", p}};
}

SplitConfig SplitConfig::from_json(const json& j, const std::string& name) {
  require(j.is_object(), ErrorKind::Config, "data.splits." + name + " must be an object");
  for (const auto& [k, v] : j.items())
    require(k == "seed" || k == "parts", ErrorKind::Config, "unknown key 'data.splits." + name + "." + k + "'");
  SplitConfig s;
  try {
    s.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& p : j.at("parts")) {
      for (const auto& [k, v] : p.items())
        require(k == "profile" || k == "count", ErrorKind::Config, "unknown key '" + k + "' in data.splits." + name + ".parts");
      const int c = p.at("count");
      require(c >= 0, ErrorKind::Config, "data.splits." + name + ": negative count");
      s.parts.emplace_back(profile_from_string(p.at("profile")), c);
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, "data.splits." + name + ": " + e.what());
  }
  return s;
}

json DataConfig::to_json() const {
  json sp = json::object();
  for (const auto& [name, s] : splits) sp[name] = s.to_json();
  return {{"root", root}, {"length", length}, {"width", width}, {"height", height}, {"noise_std", noise_std}, {"splits", sp}};
}

DataConfig DataConfig::from_json(const json& j) {
  DataConfig d;
  d.root = j.at("root");
  d.length = j.at("length");
  d.width = j.at("width");
  d.height = j.at("height");
  d.noise_std = j.at("noise_std");
  for (const auto& [name, s] : j.at("splits").items()) d.splits[name] = SplitConfig::from_json(s, name);
  return d;
}

json TrainConfig::to_json() const {
  return {{"stage", stage},
          {"scope", scope},
          {"batch_size", batch_size},
          {"steps", steps},
          {"lr_backbone", lr_backbone},
          {"lr_head", lr_head},
          {"floor_frac", floor_frac},
          {"weight_decay", weight_decay},
          {"giou_weight", giou_weight},
          {"l1_weight", l1_weight},
          {"seed", seed},
          {"rgb_only", rgb_only},
          {"no_zero_init", no_zero_init},
          {"tune_unet_stage2", tune_unet_stage2},
          {"tune_text", tune_text},
          {"caption_dropout", caption_dropout},
          {"retarget_prob", retarget_prob},
          {"center_jitter", center_jitter},
          {"scale_jitter", scale_jitter},
          {"train_split", train_split},
          {"val_split", val_split},
          {"val_size", val_size},
          {"val_every", val_every},
          {"log_every", log_every},
          {"generalist_step_factor", generalist_step_factor}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.stage = j.at("stage");
  c.scope = j.at("scope");
  c.batch_size = j.at("batch_size");
  c.steps = j.at("steps");
  c.lr_backbone = j.at("lr_backbone");
  c.lr_head = j.at("lr_head");
  c.floor_frac = j.at("floor_frac");
  c.weight_decay = j.at("weight_decay");
  c.giou_weight = j.at("giou_weight");
  c.l1_weight = j.at("l1_weight");
  c.seed = j.at("seed");
  c.rgb_only = j.at("rgb_only");
  c.no_zero_init = j.at("no_zero_init");
  c.tune_unet_stage2 = j.at("tune_unet_stage2");
  c.tune_text = j.at("tune_text");
  c.caption_dropout = j.at("caption_dropout");
  c.retarget_prob = j.at("retarget_prob");
  c.center_jitter = j.at("center_jitter");
  c.scale_jitter = j.at("scale_jitter");
  c.train_split = j.at("train_split");
  c.val_split = j.at("val_split");
  c.val_size = j.at("val_size");
  c.val_every = j.at("val_every");
  c.log_every = j.at("log_every");
  c.generalist_step_factor = j.at("generalist_step_factor");
  return c;
}

RunConfig RunConfig::defaults() {
  RunConfig c;
  using P = SequenceProfile;
  c.data.splits = {
      {"train", {100000, {{P::Standard, 150}, {P::Caption, 50}}}},
      {"train_mm", {200000, {{P::Dark, 100}, {P::Standard, 20}}}},
      {"val", {300000, {{P::Standard, 8}, {P::Caption, 4}, {P::Dark, 4}}}},
      {"test", {400000, {{P::Standard, 20}}}},
      {"test_dark", {500000, {{P::Dark, 20}}}},
      {"test_caption", {600000, {{P::Caption, 20}}}},
  };
  c.stage1.stage = 1;
  c.stage2.stage = 2;
  c.stage2.steps = 1500;
  c.stage2.train_split = "train_mm";
  c.stage2.caption_dropout = 1.0;
  c.stage2.retarget_prob = 0.0;
  c.stage2.tune_text = false;
  c.stage2.seed = 2;
  c.stage2.generalist_step_factor = 3;
  return c;
}

json RunConfig::to_json() const {
  const auto& ct = codec.train;
  return {{"model", model.to_json()},
          {"data", data.to_json()},
          {"train",
           {{"codec",
             {{"steps", ct.steps},
              {"batch_size", ct.batch_size},
              {"lr", ct.lr},
              {"patch", ct.patch},
              {"seed", ct.seed},
              {"split", codec.split},
              {"crops", codec.crops},
              {"holdout_split", codec.holdout_split},
              {"holdout_crops", codec.holdout_crops}}},
            {"stage1", stage1.to_json()},
            {"stage2", stage2.to_json()}}},
          {"eval", {{"precision_at", eval.precision_at}, {"modes", eval.modes}}},
          {"runtime", {{"out_dir", runtime.out_dir}, {"workers", runtime.workers}}}};
}

namespace {

bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return !(a.is_number_integer() && b.is_number_float());
  return a.type() == b.type();
}

}  // namespace

json merge_strict(const json& defaults, const json& user, const std::vector<std::string>& free, const std::string& path) {
  require(user.is_object(), ErrorKind::Config, "config section '" + (path.empty() ? std::string("<root>") : path) + "' must be an object");
  json out = defaults;
  for (const auto& [k, v] : user.items()) {
    const std::string p = path.empty() ? k : path + "." + k;
    require(defaults.contains(k), ErrorKind::Config, "unknown config key '" + p + "'");
    const json& d = defaults.at(k);
    if (std::find(free.begin(), free.end(), p) != free.end()) {
      require(v.is_object(), ErrorKind::Config, "config key '" + p + "' must be an object");
      out[k] = v;
    } else if (d.is_object()) {
      out[k] = merge_strict(d, v, free, p);
    } else {
      require(same_kind(d, v), ErrorKind::Config,
              "config key '" + p + "' expects " + std::string(d.type_name()) + ", got " + v.type_name());
      out[k] = v;
    }
  }
  return out;
}

RunConfig RunConfig::from_json(const json& user) {
  const json merged = merge_strict(defaults().to_json(), user, {"data.splits"});
  RunConfig c;
  try {
    c.model = ModelConfig::from_json(merged.at("model"));
    c.data = DataConfig::from_json(merged.at("data"));
    const auto& cj = merged.at("train").at("codec");
    c.codec.train.steps = cj.at("steps");
    c.codec.train.batch_size = cj.at("batch_size");
    c.codec.train.lr = cj.at("lr");
    c.codec.train.patch = cj.at("patch");
    c.codec.train.seed = cj.at("seed");
    c.codec.split = cj.at("split");
    c.codec.crops = cj.at("crops");
    c.codec.holdout_split = cj.at("holdout_split");
    c.codec.holdout_crops = cj.at("holdout_crops");
    c.stage1 = TrainConfig::from_json(merged.at("train").at("stage1"));
    c.stage2 = TrainConfig::from_json(merged.at("train").at("stage2"));
    c.eval.precision_at = merged.at("eval").at("precision_at");
    c.eval.modes = merged.at("eval").at("modes").get<std::vector<std::string>>();
    c.runtime.out_dir = merged.at("runtime").at("out_dir");
    c.runtime.workers = merged.at("runtime").at("workers");
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("malformed config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::Config, "cannot read config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, "config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return from_json(j);
}

std::string RunConfig::hash() const {
  auto j = to_json();
  j.erase("runtime");
  j["data"].erase("root");
  return json_hash(j);
}

void RunConfig::validate() const {
  model.unet.validate();
  require(model.text.dim == model.unet.cond_dim, ErrorKind::Config, "model.text.dim must equal model.unet.cond_dim");
  require(model.text.dim % model.text.heads == 0, ErrorKind::Config, "model.text.dim not divisible by its heads");
  require(model.text.length >= 1, ErrorKind::Config, "model.text.length must be positive");
  require(model.codec.latent_channels == model.unet.latent_channels, ErrorKind::Config,
          "model.codec.latent_channels must equal model.unet.latent_channels");
  require(model.codec.downsample >= 2 && (model.codec.downsample & (model.codec.downsample - 1)) == 0, ErrorKind::Config,
          "model.codec.downsample must be a power of two");
  require(model.crop.template_size % model.codec.downsample == 0 && model.crop.search_size % model.codec.downsample == 0,
          ErrorKind::Config, "crop sizes must be multiples of the codec downsample factor");
  compute_schedule(model.diffusion.t_max, model.diffusion.beta_start, model.diffusion.beta_end);
  require(model.diffusion.timestep >= 1 && model.diffusion.timestep <= model.diffusion.t_max, ErrorKind::Config,
          "model.diffusion.timestep outside [1, t_max]");
  require(model.window_weight >= 0.0 && model.window_weight <= 1.0, ErrorKind::Config, "model.window_weight outside [0, 1]");
  require(data.length >= 2 && data.width >= 32 && data.height >= 32, ErrorKind::Config, "data canvas/length too small");

  std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;
  for (const auto& [name, s] : data.splits) {
    const std::uint64_t lo = s.seed, hi = s.seed + static_cast<std::uint64_t>(s.count());
    for (const auto& [a, b] : ranges)
      require(hi <= a || lo >= b, ErrorKind::Config, "data split '" + name + "' seed range overlaps another split");
    ranges.emplace_back(lo, hi);
  }

  require(codec.train.steps >= 1 && codec.train.batch_size >= 1 && codec.crops >= 1, ErrorKind::Config,
          "train.codec needs positive steps, batch_size and crops");
  for (const TrainConfig* t : {&stage1, &stage2}) {
    const std::string sec = t == &stage1 ? "train.stage1" : "train.stage2";
    require(t->batch_size >= 1 && t->steps >= 1, ErrorKind::Config, sec + " needs positive batch_size and steps");
    require(t->lr_backbone > 0 && t->lr_head > 0, ErrorKind::Config, sec + " learning rates must be positive");
    require(t->floor_frac >= 0 && t->floor_frac <= 1, ErrorKind::Config, sec + ".floor_frac outside [0, 1]");
    require(t->caption_dropout >= 0 && t->caption_dropout <= 1 && t->retarget_prob >= 0 && t->retarget_prob <= 1,
            ErrorKind::Config, sec + " probabilities outside [0, 1]");
    require(t->val_every >= 1 && t->log_every >= 1 && t->val_size >= 1, ErrorKind::Config, sec + " intervals must be positive");
    require(t->generalist_step_factor >= 1, ErrorKind::Config, sec + ".generalist_step_factor must be >= 1");
  }
  require(stage1.stage == 1 && stage2.stage == 2, ErrorKind::Config, "train.stage1.stage must be 1 and train.stage2.stage 2");
  scope_from_string(stage2.scope);
  for (const auto& m : eval.modes)
    require(m == "rgb" || m == "rgb+depth" || m == "rgb+thermal" || m == "rgb+event" || m == "rgb+language",
            ErrorKind::Config, "unknown eval mode '" + m + "'");
  require(runtime.workers >= 1, ErrorKind::Config, "runtime.workers must be at least 1");
}

fs::path RunConfig::codec_path() const { return fs::path(runtime.out_dir) / "codec.ltar"; }
fs::path RunConfig::stage1_path() const { return fs::path(runtime.out_dir) / "stage1.ltar"; }
fs::path RunConfig::stage2_path(const std::string& scope) const {
  return fs::path(runtime.out_dir) / ("stage2_" + scope + ".ltar");
}
fs::path RunConfig::results_root() const { return fs::path(runtime.out_dir) / "results"; }
fs::path RunConfig::report_dir() const { return fs::path(runtime.out_dir) / "report"; }

}  // namespace lattrack
