#include "lattrack/trainer.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include <ATen/CPUGeneratorImpl.h>

#include "lattrack/errors.hpp"

namespace fs = std::filesystem;

namespace lattrack {

double cosine_lr(int step, int total_steps, double base_lr, double floor_frac) {
  require(total_steps >= 1, ErrorKind::Config, "cosine schedule needs total_steps >= 1");
  require(step >= 0 && step <= total_steps, ErrorKind::Range,
          "step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
  const double floor = floor_frac * base_lr;
  return floor + (base_lr - floor) * (1.0 + std::cos(M_PI * step / total_steps)) / 2.0;
}

bool TunableMask::trainable(const std::string& name) const {
  if (name.rfind("codec.", 0) == 0) return false;
  if (stage == 1) {
    if (name.rfind("head.", 0) == 0) return true;
    if (name.rfind("unet.", 0) == 0) return name.find(".sa.") != std::string::npos;
    if (name.rfind("text.", 0) == 0) return tune_text;
    return false;
  }
  if (name.rfind("sub.", 0) == 0) return true;
  if (name.rfind("unet.", 0) == 0) return tune_unet;
  return false;
}

// ---------------------------------------------------------------------------
// Batches

namespace {

double uniform(std::mt19937_64& rng, double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); }

}  // namespace

BatchSampler::BatchSampler(std::vector<SequenceRecord> sequences, Model& model, const TrainConfig& cfg,
                           std::optional<SubScope> aux_scope, int workers)
    : seqs_(std::move(sequences)), model_(model), cfg_(cfg), scope_(aux_scope), workers_(std::max(1, workers)) {
  require(!seqs_.empty(), ErrorKind::Data, "training split is empty");
  for (const auto& s : seqs_) {
    std::vector<int> t;
    const auto& ds = s.meta().value("distractors", json::array());
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (ds[i].contains("tether")) t.push_back(static_cast<int>(i));
    tethered_.push_back(t);
    bool any = false;
    for (bool v : std::vector<bool>(s.visible().begin() + 1, s.visible().end())) any = any || v;
    require(any, ErrorKind::Data, "sequence '" + s.name() + "' has no visible frame after the first");
  }
  if (scope_) {
    std::vector<Modality> need;
    switch (*scope_) {
      case SubScope::Depth: need = {Modality::Depth}; break;
      case SubScope::Thermal: need = {Modality::Thermal}; break;
      case SubScope::Event: need = {Modality::Event}; break;
      case SubScope::Generalist: need = {Modality::Depth, Modality::Thermal, Modality::Event}; break;
    }
    for (const auto& s : seqs_)
      for (Modality m : need)
        require(fs::is_directory(s.dir() / to_string(m)), ErrorKind::Config,
                "scope '" + to_string(*scope_) + "' needs " + to_string(m) + " frames, missing in '" + s.name() + "'");
  }
}

std::vector<int> BatchSampler::tethered(int seq) const { return tethered_.at(static_cast<std::size_t>(seq)); }

SamplePlan BatchSampler::plan(std::mt19937_64& rng) const {
  const auto& crop = model_.cfg.crop;
  for (int attempt = 0;; ++attempt) {
    SamplePlan p;
    p.sequence = std::uniform_int_distribution<int>(0, static_cast<int>(seqs_.size()) - 1)(rng);
    const auto& rec = seqs_[static_cast<std::size_t>(p.sequence)];
    p.frame = std::uniform_int_distribution<int>(1, rec.length() - 1)(rng);
    p.drop_caption = uniform(rng, 0, 1) < cfg_.caption_dropout;
    const auto teth = tethered(p.sequence);
    if (!teth.empty()) {
      const int pick = teth[static_cast<std::size_t>(std::uniform_int_distribution<int>(0, static_cast<int>(teth.size()) - 1)(rng))];
      if (!p.drop_caption && uniform(rng, 0, 1) < cfg_.retarget_prob) p.retarget = pick;
      if (uniform(rng, 0, 1) < 0.5) p.center_on = pick;
    }
    p.jitter_x = uniform(rng, -cfg_.center_jitter, cfg_.center_jitter);
    p.jitter_y = uniform(rng, -cfg_.center_jitter, cfg_.center_jitter);
    p.log_scale = uniform(rng, -cfg_.scale_jitter, cfg_.scale_jitter);
    if (scope_) {
      switch (*scope_) {
        case SubScope::Depth: p.aux = Modality::Depth; break;
        case SubScope::Thermal: p.aux = Modality::Thermal; break;
        case SubScope::Event: p.aux = Modality::Event; break;
        case SubScope::Generalist: {
          const Modality ms[] = {Modality::Depth, Modality::Thermal, Modality::Event};
          p.aux = ms[std::uniform_int_distribution<int>(0, 2)(rng)];
          break;
        }
      }
    }

    const auto k = static_cast<std::size_t>(p.frame);
    if (p.retarget < 0 && !rec.visible()[k]) continue;
    const PixelBox target_box = rec.boxes()[k];
    const PixelBox gt_box = p.retarget < 0 ? target_box : rec.distractor_boxes(static_cast<std::size_t>(p.retarget))[k];
    const PixelBox center_box = p.center_on < 0 ? target_box : rec.distractor_boxes(static_cast<std::size_t>(p.center_on))[k];
    if (!gt_box.valid() || !target_box.valid()) continue;
    const double sz = std::sqrt(target_box.w * target_box.h);
    const double side = crop.search_factor * sz * std::exp(p.log_scale);
    const CropParams params{center_box.cx() + p.jitter_x * sz, center_box.cy() + p.jitter_y * sz,
                            crop.search_size / side, crop.search_size};
    const BBox b = box_to_crop(gt_box, params);
    if (b.cx > 0.02 && b.cx < 0.98 && b.cy > 0.02 && b.cy < 0.98) return p;
    require(attempt < 1000, ErrorKind::Data, "cannot draw a valid training sample");
  }
}

std::vector<SamplePlan> BatchSampler::plan_batch(std::mt19937_64& rng, int n) const {
  std::vector<SamplePlan> out;
  for (int i = 0; i < n; ++i) out.push_back(plan(rng));
  return out;
}

torch::Tensor BatchSampler::template_latent(int seq, Modality m) {
  const auto key = std::make_pair(seq, m);
  if (auto it = tmpl_cache_.find(key); it != tmpl_cache_.end()) return it->second;
  const auto& rec = seqs_[static_cast<std::size_t>(seq)];
  const auto& c = model_.cfg.crop;
  const auto crop = crop_template(rec.frame(m, 0), rec.boxes()[0], m, c.template_factor, c.template_size);
  torch::NoGradGuard ng;
  auto z = model_.codec->encode(crop.pixels.unsqueeze(0)).squeeze(0);
  tmpl_cache_.emplace(key, z);
  return z;
}

BatchSampler::Loaded BatchSampler::load_one(const SamplePlan& p) const {
  const auto& rec = seqs_[static_cast<std::size_t>(p.sequence)];
  const auto& c = model_.cfg.crop;
  const auto k = static_cast<std::size_t>(p.frame);
  const PixelBox target_box = rec.boxes()[k];
  const PixelBox gt_box = p.retarget < 0 ? target_box : rec.distractor_boxes(static_cast<std::size_t>(p.retarget))[k];
  const PixelBox center_box = p.center_on < 0 ? target_box : rec.distractor_boxes(static_cast<std::size_t>(p.center_on))[k];
  const double sz = std::sqrt(target_box.w * target_box.h);
  const double side = c.search_factor * sz * std::exp(p.log_scale);
  const double cx = center_box.cx() + p.jitter_x * sz, cy = center_box.cy() + p.jitter_y * sz;

  Loaded out;
  auto crop = crop_square(rec.frame(Modality::Rgb, p.frame), cx, cy, side, c.search_size, Modality::Rgb);
  out.search = crop.pixels;
  if (scope_) out.aux_search = crop_square(rec.frame(p.aux, p.frame), cx, cy, side, c.search_size, p.aux).pixels;
  out.box = box_to_crop(gt_box, crop.params);
  out.box.w = std::clamp(out.box.w, 1e-3, 1.0);
  out.box.h = std::clamp(out.box.h, 1e-3, 1.0);
  const int hm = c.search_size / model_.cfg.codec.downsample / model_.cfg.unet.feature_stride();
  out.target = make_gaussian_target(out.box, hm, hm);
  if (!p.drop_caption) {
    out.caption = p.retarget < 0 ? rec.caption()
                                 : rec.meta().at("distractors").at(static_cast<std::size_t>(p.retarget)).at("caption").get<std::string>();
  }
  return out;
}

Batch BatchSampler::load(const std::vector<SamplePlan>& plans) {
  Batch b;
  std::vector<torch::Tensor> tl, atl;
  for (const auto& p : plans) {
    tl.push_back(template_latent(p.sequence, Modality::Rgb));
    if (scope_) atl.push_back(template_latent(p.sequence, p.aux));
  }
  std::vector<Loaded> loaded(plans.size());
  if (workers_ <= 1 || plans.size() < 2) {
    for (std::size_t i = 0; i < plans.size(); ++i) loaded[i] = load_one(plans[i]);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers_));
    for (int w = 0; w < workers_; ++w)
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = static_cast<std::size_t>(w); i < plans.size(); i += static_cast<std::size_t>(workers_))
            loaded[i] = load_one(plans[i]);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  std::vector<torch::Tensor> s, as;
  for (std::size_t i = 0; i < plans.size(); ++i) {
    s.push_back(loaded[i].search);
    if (scope_) as.push_back(loaded[i].aux_search);
    b.targets.push_back(loaded[i].target);
    b.boxes.push_back(loaded[i].box);
    b.captions.push_back(loaded[i].caption);
    b.aux_modalities.push_back(plans[i].aux);
    b.sequences.push_back(plans[i].sequence);
    b.frames.push_back(plans[i].frame);
  }
  b.search = torch::stack(s);
  b.tmpl_latent = torch::stack(tl);
  if (scope_) {
    b.aux_search = torch::stack(as);
    b.aux_tmpl_latent = torch::stack(atl);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Training

namespace {

LossTerms batch_loss(Model& model, const Batch& b, SubModule* sub, LossWeights w, torch::Generator* gen) {
  const int t = model.cfg.diffusion.timestep;
  torch::Tensor s0, as0;
  {
    torch::NoGradGuard ng;
    s0 = model.codec->encode(b.search);
    if (sub) as0 = model.codec->encode(b.aux_search);
  }
  auto noisy = [&](const torch::Tensor& z) {
    return gen ? add_noise_with(z, t, model.schedule, *gen) : add_noise(z, t, model.schedule);
  };
  auto s = noisy(s0), g = noisy(b.tmpl_latent);
  torch::Tensor as, ag;
  if (sub) {
    as = noisy(as0);
    ag = noisy(b.aux_tmpl_latent);
  }
  auto cond = model.conditions(b.captions);
  auto maps = model.forward(s, g, cond, sub, as, ag);
  return tracking_loss(maps, b.targets, w);
}

std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

class JsonlLog {
 public:
  explicit JsonlLog(const std::optional<fs::path>& p) {
    if (p) {
      if (p->has_parent_path()) fs::create_directories(p->parent_path());
      out_.open(*p);
      require(static_cast<bool>(out_), ErrorKind::Io, "cannot write log '" + p->string() + "'");
    }
  }
  void write(const json& j) {
    if (out_.is_open()) out_ << j.dump() << '\n' << std::flush;
  }

 private:
  std::ofstream out_;
};

TrainResult run_training(Model& model, const TunableMask& mask, SubModule* sub, BatchSampler& train_sampler,
                         BatchSampler& val_sampler, const TrainConfig& cfg, const TrainHooks& hooks) {
  const LossWeights w{cfg.giou_weight, cfg.l1_weight};
  std::vector<torch::Tensor> backbone, head;
  TrainResult r;
  for (auto& [name, p] : model.named_parameters()) {
    const bool on = mask.trainable(name);
    p.set_requires_grad(on);
    if (!on) {
      r.frozen_before[name] = checksum(p);
    } else if (TunableMask::head_class(name)) {
      head.push_back(p);
    } else {
      backbone.push_back(p);
    }
  }
  require(!backbone.empty() || !head.empty(), ErrorKind::Config, "no trainable parameters under the stage mask");

  std::vector<torch::optim::OptimizerParamGroup> groups;
  auto opts = [&](double lr) {
    return std::make_unique<torch::optim::AdamWOptions>(
        torch::optim::AdamWOptions(lr).betas({0.9, 0.999}).weight_decay(cfg.weight_decay));
  };
  std::vector<double> base_lr;
  if (!backbone.empty()) {
    groups.emplace_back(backbone, opts(cfg.lr_backbone));
    base_lr.push_back(cfg.lr_backbone);
  }
  if (!head.empty()) {
    groups.emplace_back(head, opts(cfg.lr_head));
    base_lr.push_back(cfg.lr_head);
  }
  torch::optim::AdamW optim(groups, torch::optim::AdamWOptions(cfg.lr_backbone));

  std::mt19937_64 rng(cfg.seed);
  auto gen = at::make_generator<at::CPUGeneratorImpl>(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::mt19937_64 val_rng(cfg.seed + 1000003ULL);
  const Batch val_batch = val_sampler.load(val_sampler.plan_batch(val_rng, cfg.val_size));

  JsonlLog log(hooks.log_path);
  auto validate = [&](int step) {
    const double v = validation_loss(model, val_sampler, val_batch, sub, w);
    r.val_losses.push_back(v);
    log.write({{"step", step}, {"val_loss", v}});
    return v;
  };
  validate(0);

  for (int step = 0; step < cfg.steps; ++step) {
    for (std::size_t g = 0; g < base_lr.size(); ++g)
      static_cast<torch::optim::AdamWOptions&>(optim.param_groups()[g].options())
          .lr(cosine_lr(step, cfg.steps, base_lr[g], cfg.floor_frac));
    const Batch b = train_sampler.load(train_sampler.plan_batch(rng, cfg.batch_size));
    auto terms = batch_loss(model, b, sub, w, &gen);
    optim.zero_grad();
    terms.total.backward();
    optim.step();
    const double loss = terms.total.item<double>();
    require(std::isfinite(loss), ErrorKind::Numeric, "training loss became non-finite at step " + std::to_string(step));
    if (step % cfg.log_every == 0 || step + 1 == cfg.steps)
      log.write({{"step", step},
                 {"lr_backbone", cosine_lr(step, cfg.steps, cfg.lr_backbone, cfg.floor_frac)},
                 {"lr_head", cosine_lr(step, cfg.steps, cfg.lr_head, cfg.floor_frac)},
                 {"loss", loss},
                 {"cls", terms.cls.item<double>()},
                 {"giou", terms.giou.item<double>()},
                 {"l1", terms.l1.item<double>()}});
    if (hooks.on_step) hooks.on_step(step, loss);
    if ((step + 1) % cfg.val_every == 0 && step + 1 != cfg.steps) validate(step + 1);
  }
  r.steps = cfg.steps;
  r.final_val_loss = validate(cfg.steps);

  for (auto& [name, p] : model.named_parameters()) {
    p.set_requires_grad(false);
    if (r.frozen_before.count(name)) r.frozen_after[name] = checksum(p);
  }
  for (const auto& [name, c] : r.frozen_before)
    require(r.frozen_after.at(name) == c, ErrorKind::Consistency, "frozen parameter '" + name + "' changed during training");
  r.rng_state = rng_state(rng);
  return r;
}

}  // namespace

double validation_loss(Model& model, BatchSampler& sampler, const Batch& batch, SubModule* sub, LossWeights w) {
  torch::NoGradGuard ng;
  return batch_loss(model, batch, sub, w, nullptr).total.item<double>();
}

TrainResult train_stage1(Model& model, const std::vector<SequenceRecord>& train, const std::vector<SequenceRecord>& val,
                         const TrainConfig& cfg, const TrainHooks& hooks, int workers) {
  require(model.codec && model.codec->frozen(), ErrorKind::Config, "stage 1 needs a pretrained, frozen codec");
  require(cfg.stage == 1, ErrorKind::Config, "train_stage1 called with a stage-2 config");
  BatchSampler ts(train, model, cfg, std::nullopt, workers);
  BatchSampler vs(val, model, cfg, std::nullopt, workers);
  TunableMask mask{1, cfg.tune_text, false};
  return run_training(model, mask, nullptr, ts, vs, cfg, hooks);
}

TrainResult train_stage2(Model& model, const std::vector<SequenceRecord>& train, const std::vector<SequenceRecord>& val,
                         const TrainConfig& cfg, const TrainHooks& hooks, int workers) {
  require(cfg.stage == 2, ErrorKind::Config, "train_stage2 called with a stage-1 config");
  require(model.codec && model.codec->frozen(), ErrorKind::Config, "stage 2 needs a frozen codec");
  const SubScope scope = scope_from_string(cfg.scope);
  if (cfg.rgb_only) return {};
  SubModuleOptions opts = model.cfg.sub;
  opts.no_zero_init = cfg.no_zero_init;
  model.cfg.sub = opts;
  model.subs.clear();
  torch::manual_seed(cfg.seed);
  model.subs.emplace(scope, clone_submodule(model.unet, scope, opts));
  SubModule* sub = &model.subs.at(scope);
  TrainConfig run = cfg;
  run.steps = cfg.effective_steps();
  BatchSampler ts(train, model, run, scope, workers);
  BatchSampler vs(val, model, run, scope, workers);
  TunableMask mask{2, false, cfg.tune_unet_stage2};
  return run_training(model, mask, sub, ts, vs, run, hooks);
}

json train_meta(const TrainConfig& cfg, const TrainResult& r, const std::string& config_hash) {
  return {{"stage", cfg.stage},
          {"scope", cfg.stage == 2 ? cfg.scope : std::string()},
          {"config", cfg.to_json()},
          {"step", r.steps},
          {"val_losses", r.val_losses},
          {"final_val_loss", r.final_val_loss},
          {"rng_state", r.rng_state},
          {"config_hash", config_hash}};
}

}  // namespace lattrack
