#include "lattrack/pipeline.hpp"

#include <cstdio>
#include <random>
#include <thread>

#include "lattrack/errors.hpp"

namespace fs = std::filesystem;

namespace lattrack {

std::vector<SequenceSpec> split_specs(const DataConfig& data, const std::string& split) {
  auto it = data.splits.find(split);
  require(it != data.splits.end(), ErrorKind::Config, "no split named '" + split + "' in the data config");
  std::vector<SequenceSpec> out;
  int i = 0;
  for (const auto& [profile, count] : it->second.parts)
    for (int c = 0; c < count; ++c, ++i) {
      char name[64];
      std::snprintf(name, sizeof name, "%s_%04d", split.c_str(), i);
      out.push_back(random_spec(name, it->second.seed + static_cast<std::uint64_t>(i), profile, data.profile_options()));
    }
  return out;
}

void generate_split(const DataConfig& data, const std::string& split, const fs::path& root, const std::string& config_hash,
                    int workers) {
  const auto specs = split_specs(data, split);
  const fs::path dir = root / split;
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorKind::Io, "cannot create '" + dir.string() + "'");
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(std::max(1, workers)));
  auto job = [&](int w) {
    try {
      for (std::size_t i = static_cast<std::size_t>(w); i < specs.size(); i += errors.size()) {
        const auto seq = render_sequence(specs[i]);
        write_sequence(seq, dir / specs[i].name, {{"config_hash", config_hash}, {"split", split}});
      }
    } catch (...) {
      errors[static_cast<std::size_t>(w)] = std::current_exception();
    }
  };
  if (errors.size() == 1) {
    job(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < errors.size(); ++w) pool.emplace_back(job, static_cast<int>(w));
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

torch::Tensor gather_crops(const std::vector<SequenceRecord>& records, int count, std::uint64_t seed, const CropConfig& crop) {
  require(!records.empty(), ErrorKind::Data, "no sequences to draw codec crops from");
  require(count >= 1, ErrorKind::Config, "codec crop count must be positive");
  std::mt19937_64 rng(seed);
  const Modality mods[] = {Modality::Rgb, Modality::Rgb, Modality::Rgb, Modality::Depth, Modality::Thermal, Modality::Event};
  std::vector<torch::Tensor> out;
  for (int i = 0; i < count; ++i) {
    const auto& rec = records[std::uniform_int_distribution<std::size_t>(0, records.size() - 1)(rng)];
    const int k = std::uniform_int_distribution<int>(0, rec.length() - 1)(rng);
    const Modality m = mods[std::uniform_int_distribution<int>(0, 5)(rng)];
    const auto& b = rec.boxes()[static_cast<std::size_t>(k)];
    const double sz = std::sqrt(std::max(1.0, b.w * b.h));
    const double side = sz * std::uniform_real_distribution<double>(1.5, 5.0)(rng);
    const double cx = b.cx() + sz * std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
    const double cy = b.cy() + sz * std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
    out.push_back(crop_square(rec.frame(m, k), cx, cy, side, crop.search_size, m).pixels);
  }
  return torch::stack(out);
}

Codec pretrain_codec_from_config(const RunConfig& cfg, CodecReport* report) {
  const fs::path root(cfg.data.root);
  const auto train = open_split(root, cfg.codec.split);
  const auto hold = open_split(root, cfg.codec.holdout_split);
  auto crops = gather_crops(train, cfg.codec.crops, cfg.codec.train.seed, cfg.model.crop);
  auto holdout = gather_crops(hold, cfg.codec.holdout_crops, cfg.codec.train.seed + 1, cfg.model.crop);
  std::vector<double> losses;
  Codec codec = pretrain_codec(crops, cfg.codec.train, cfg.model.codec, &losses);
  if (report) {
    report->losses = losses;
    report->holdout_psnr = reconstruction_psnr(codec, holdout);
    torch::NoGradGuard ng;
    auto z = codec->encode(holdout);
    auto sd = z.transpose(0, 1).reshape({z.size(1), -1}).std(1);
    report->channel_std.clear();
    for (int64_t c = 0; c < sd.size(0); ++c) report->channel_std.push_back(sd[c].item<double>());
  }
  return codec;
}

void save_codec_checkpoint(const Codec& codec, const RunConfig& cfg, const CodecReport& report, const fs::path& path) {
  Archive ar;
  json train = {{"steps", cfg.codec.train.steps},
                {"batch_size", cfg.codec.train.batch_size},
                {"lr", cfg.codec.train.lr},
                {"patch", cfg.codec.train.patch},
                {"seed", cfg.codec.train.seed},
                {"crops", cfg.codec.crops}};
  save_codec(codec, ar, train);
  ar.meta["config_hash"] = cfg.hash();
  ar.meta["holdout_psnr"] = report.holdout_psnr;
  ar.meta["holdout_channel_std"] = report.channel_std;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  ar.save(path);
}

Codec load_codec_checkpoint(const fs::path& path) {
  require(fs::exists(path), ErrorKind::Config, "codec checkpoint '" + path.string() + "' not found");
  return load_codec(Archive::load(path));
}

}  // namespace lattrack
