#pragma once

// Glue between the config and the modules: dataset generation, codec
// pretraining on generated crops, and checkpoint helpers shared by the CLI
// and the acceptance runs.

#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "lattrack/config.hpp"
#include "lattrack/trainer.hpp"

namespace lattrack {

/// Specs of every sequence of a split, in name order.
std::vector<SequenceSpec> split_specs(const DataConfig& data, const std::string& split);

/// Renders and writes a split under <root>/<split>; sequences are spread over
/// `workers` threads, each writing only its own directory.
void generate_split(const DataConfig& data, const std::string& split, const std::filesystem::path& root,
                    const std::string& config_hash, int workers = 1);

/// Random search-style crops ([N, 3, S, S]) from all modalities of a split.
torch::Tensor gather_crops(const std::vector<SequenceRecord>& records, int count, std::uint64_t seed, const CropConfig& crop);

struct CodecReport {
  double holdout_psnr = 0.0;
  std::vector<double> channel_std;
  std::vector<double> losses;
};

Codec pretrain_codec_from_config(const RunConfig& cfg, CodecReport* report = nullptr);
void save_codec_checkpoint(const Codec& codec, const RunConfig& cfg, const CodecReport& report,
                           const std::filesystem::path& path);
Codec load_codec_checkpoint(const std::filesystem::path& path);

}  // namespace lattrack
