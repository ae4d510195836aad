#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "lattrack/archive.hpp"
#include "lattrack/layers.hpp"

namespace lattrack {

class Vocabulary {
 public:
  static constexpr std::int64_t kPad = 0;
  static constexpr std::int64_t kNull = 1;
  static constexpr std::int64_t kUnk = 2;

  /// Reserved tokens first, then `words` in order (duplicates ignored).
  explicit Vocabulary(const std::vector<std::string>& words);

  /// The caption grammar used by the synthetic corpus.
  static Vocabulary caption_grammar();

  std::int64_t size() const { return static_cast<std::int64_t>(tokens_.size()); }
  std::int64_t id(const std::string& word) const;
  const std::string& token(std::int64_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }

  json to_json() const;
  static Vocabulary from_json(const json& j);

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, std::int64_t> index_;
};

/// Lowercase, whitespace split, UNK for unknown words, pad/truncate to
/// `length`. The empty caption becomes [NULL, PAD, ...].
std::vector<std::int64_t> tokenize(const std::string& caption, const Vocabulary& vocab, int length = 8);

struct TextCondition {
  torch::Tensor embeddings;  // [L_c, d_cond]
  torch::Tensor token_ids;   // [L_c] int64
  bool is_null = false;
};

struct TextEncoderConfig {
  int length = 8;   // L_c
  int dim = 64;     // d_cond
  int heads = 4;
  std::int64_t vocab_size = 0;
};

/// Token + positional embedding followed by one pre-norm transformer layer.
class TextEncoderImpl : public torch::nn::Module {
 public:
  explicit TextEncoderImpl(TextEncoderConfig cfg);

  const TextEncoderConfig& config() const { return cfg_; }

  /// [B, L_c] int64 -> [B, L_c, d_cond].
  torch::Tensor forward(const torch::Tensor& ids);

  torch::nn::Embedding tok{nullptr};
  torch::Tensor pos;
  torch::nn::LayerNorm norm{nullptr};
  Attention attn{nullptr};
  FeedForward ff{nullptr};
  torch::nn::LayerNorm final_norm{nullptr};

 private:
  TextEncoderConfig cfg_;
};
TORCH_MODULE(TextEncoder);

TextCondition encode_text(const std::vector<std::int64_t>& ids, TextEncoder& encoder);
TextCondition null_condition(const Vocabulary& vocab, TextEncoder& encoder);

}  // namespace lattrack
