#include "lattrack/runtime.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "lattrack/errors.hpp"

namespace fs = std::filesystem;

namespace lattrack {

std::string to_string(TrackMode m) {
  switch (m) {
    case TrackMode::Rgb: return "rgb";
    case TrackMode::RgbDepth: return "rgb+depth";
    case TrackMode::RgbThermal: return "rgb+thermal";
    case TrackMode::RgbEvent: return "rgb+event";
    case TrackMode::RgbLanguage: return "rgb+language";
  }
  return "rgb";
}

TrackMode track_mode_from_string(const std::string& s) {
  for (TrackMode m : {TrackMode::Rgb, TrackMode::RgbDepth, TrackMode::RgbThermal, TrackMode::RgbEvent, TrackMode::RgbLanguage})
    if (to_string(m) == s) return m;
  fail(ErrorKind::Config, "unknown tracking mode '" + s + "'");
}

std::optional<Modality> aux_modality(TrackMode m) {
  switch (m) {
    case TrackMode::RgbDepth: return Modality::Depth;
    case TrackMode::RgbThermal: return Modality::Thermal;
    case TrackMode::RgbEvent: return Modality::Event;
    default: return std::nullopt;
  }
}

Tracker::Tracker(Model& model, TrackMode mode) : model_(model), mode_(mode) {
  if (auto aux = aux_modality(mode)) {
    sub_ = model.sub_for(*aux);
    if (!sub_) {
      std::string loaded;
      for (const auto& [scope, s] : model.subs) loaded += (loaded.empty() ? "" : ", ") + to_string(scope);
      fail(ErrorKind::Config, "mode '" + to_string(mode) + "' needs a " + to_string(*aux) +
                                  " or generalist sub-module; checkpoint has " + (loaded.empty() ? "none" : loaded));
    }
  }
  const auto& c = model.cfg.crop;
  const int hm = c.search_size / model.cfg.codec.downsample / model.cfg.unet.feature_stride();
  window_ = hanning_window(hm, hm);
}

torch::Tensor Tracker::encode(const ImageCrop& crop) {
  torch::NoGradGuard ng;
  auto z = encode_crop(crop, model_.codec).values.unsqueeze(0);
  return add_noise(z, model_.cfg.diffusion.timestep, model_.schedule, std::nullopt, NoiseMode::Inference);
}

void Tracker::init(const FrameSet& frame0, const PixelBox& gt0, const std::string& caption) {
  require(gt0.valid(), ErrorKind::Data, "initial box is degenerate");
  auto rgb = frame0.find(Modality::Rgb);
  require(rgb != frame0.end(), ErrorKind::Data, "initial frame has no rgb image");
  canvas_w_ = rgb->second.cols;
  canvas_h_ = rgb->second.rows;
  const auto& c = model_.cfg.crop;
  state_ = {};
  state_.template_latent = encode(crop_template(rgb->second, gt0, Modality::Rgb, c.template_factor, c.template_size));
  if (auto aux = aux_modality(mode_)) {
    auto it = frame0.find(*aux);
    require(it != frame0.end(), ErrorKind::Data, "initial frame has no " + to_string(*aux) + " image");
    state_.aux_template_latent = encode(crop_template(it->second, gt0, *aux, c.template_factor, c.template_size));
  }
  torch::NoGradGuard ng;
  state_.null_condition = !(mode_ == TrackMode::RgbLanguage && !caption.empty());
  state_.condition = model_.condition(state_.null_condition ? std::string() : caption);
  state_.previous = gt0;
  state_.frame = 0;
}

TrackOutput Tracker::track(const FrameSet& frame) {
  require(state_.template_latent.defined(), ErrorKind::Config, "tracker used before init");
  const auto& c = model_.cfg.crop;
  auto rgb = frame.find(Modality::Rgb);
  require(rgb != frame.end(), ErrorKind::Data, "frame has no rgb image");
  const auto crop = crop_search(rgb->second, state_.previous, Modality::Rgb, c.search_factor, c.search_size);

  ScoreMaps maps;
  if (override_) {
    maps = override_(crop.params);
  } else {
    torch::NoGradGuard ng;
    const auto s = encode(crop);
    if (sub_) {
      const auto aux = *aux_modality(mode_);
      auto it = frame.find(aux);
      require(it != frame.end(), ErrorKind::Data, "frame " + std::to_string(state_.frame + 1) + " has no " + to_string(aux) + " image");
      const auto as = encode(crop_search(it->second, state_.previous, aux, c.search_factor, c.search_size));
      maps = model_.forward(s, state_.template_latent, state_.condition, sub_, as, state_.aux_template_latent);
    } else {
      maps = model_.forward(s, state_.template_latent, state_.condition);
    }
  }

  TrackOutput out;
  out.search_params = crop.params;
  out.crop_box = decode_box(maps, window_, model_.cfg.window_weight);
  out.confidence = out.crop_box.confidence;
  out.box = map_box_to_image(out.crop_box, crop.params, canvas_w_, canvas_h_);
  if (out.box.w >= 1.0 && out.box.h >= 1.0) {
    state_.previous = out.box;
  } else {
    out.box = state_.previous;
  }
  ++state_.frame;
  return out;
}

namespace {

FrameSet load_frames(const SequenceRecord& r, TrackMode mode, int k) {
  FrameSet f;
  f[Modality::Rgb] = r.frame(Modality::Rgb, k);
  if (auto aux = aux_modality(mode)) f[*aux] = r.frame(*aux, k);
  return f;
}

}  // namespace

TrackRecord run_sequence(const SequenceRecord& record, TrackMode mode, Model& model, const RunOptions& opts) {
  Tracker tracker(model, mode);
  if (opts.head_override) tracker.set_head_override(opts.head_override);
  const PixelBox init = opts.init_box.value_or(record.boxes().at(0));
  TrackRecord out;
  try {
    tracker.init(load_frames(record, mode, 0), init, opts.caption.value_or(record.caption()));
    out.boxes.push_back(init);
    out.scores.push_back(1.0);
    for (int k = 1; k < record.length(); ++k) {
      const auto r = tracker.track(load_frames(record, mode, k));
      out.boxes.push_back(r.box);
      out.scores.push_back(r.confidence);
    }
  } catch (const Error& e) {
    throw Error(e.kind(), "sequence '" + record.name() + "': " + e.message());
  }
  return out;
}

void write_results(const TrackRecord& r, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write results '" + path.string() + "'");
  char buf[160];
  for (std::size_t k = 0; k < r.boxes.size(); ++k) {
    const auto& b = r.boxes[k];
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%.6f,%.6f\n", b.x, b.y, b.w, b.h, r.scores[k]);
    out << buf;
  }
}

TrackRecord read_results(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot read results '" + path.string() + "'");
  TrackRecord r;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream is(line);
    PixelBox b;
    double s = 0.0;
    require(static_cast<bool>(is >> b.x >> b.y >> b.w >> b.h >> s), ErrorKind::Data,
            "malformed results line " + std::to_string(r.boxes.size()) + " in '" + path.string() + "'");
    r.boxes.push_back(b);
    r.scores.push_back(s);
  }
  return r;
}

void track_split(const std::vector<SequenceRecord>& records, TrackMode mode, Model& model, const fs::path& results_root,
                 const RunOptions& opts) {
  for (const auto& rec : records) write_results(run_sequence(rec, mode, model, opts), results_root / to_string(mode) / (rec.name() + ".txt"));
}

}  // namespace lattrack
