#include "lattrack/text.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "lattrack/errors.hpp"

namespace lattrack {

namespace nn = torch::nn;

Vocabulary::Vocabulary(const std::vector<std::string>& words) {
  tokens_ = {"<pad>", "<null>", "<unk>"};
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_[tokens_[i]] = static_cast<std::int64_t>(i);
  for (const auto& w : words) {
    if (index_.count(w)) continue;
    index_[w] = static_cast<std::int64_t>(tokens_.size());
    tokens_.push_back(w);
  }
}

Vocabulary Vocabulary::caption_grammar() {
  return Vocabulary({
      // verbs and function words
      "track", "follow", "find", "the", "a", "an", "of", "in", "on", "near", "with", "and", "that", "is",
      // nouns
      "object", "target", "shape", "thing",
      // shapes
      "circle", "square", "triangle", "disk", "box",
      // colors
      "red", "green", "blue", "yellow", "cyan", "magenta", "orange", "purple", "white", "pink", "gray",
      // modifiers
      "small", "large", "big", "tiny", "moving", "bright", "dark", "left", "right", "top", "bottom",
      "center", "colored", "solid", "round",
  });
}

std::int64_t Vocabulary::id(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? kUnk : it->second;
}

json Vocabulary::to_json() const { return tokens_; }

Vocabulary Vocabulary::from_json(const json& j) {
  auto tokens = j.get<std::vector<std::string>>();
  require(tokens.size() >= 3 && tokens[0] == "<pad>" && tokens[1] == "<null>" && tokens[2] == "<unk>",
          ErrorKind::Data, "vocabulary must start with the reserved tokens");
  return Vocabulary(std::vector<std::string>(tokens.begin() + 3, tokens.end()));
}

std::vector<std::int64_t> tokenize(const std::string& caption, const Vocabulary& vocab, int length) {
  std::string lower(caption);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  std::istringstream in(lower);
  std::vector<std::int64_t> ids;
  for (std::string w; in >> w;) ids.push_back(vocab.id(w));
  if (ids.empty()) ids.push_back(Vocabulary::kNull);
  ids.resize(static_cast<std::size_t>(length), Vocabulary::kPad);
  return ids;
}

TextEncoderImpl::TextEncoderImpl(TextEncoderConfig cfg) : cfg_(cfg) {
  require(cfg.vocab_size > 3 && cfg.length >= 1 && cfg.dim >= 1, ErrorKind::Config, "invalid text encoder config");
  tok = register_module("tok", nn::Embedding(cfg.vocab_size, cfg.dim));
  pos = register_parameter("pos", torch::randn({cfg.length, cfg.dim}) * 0.1);
  norm = register_module("norm", nn::LayerNorm(nn::LayerNormOptions({cfg.dim})));
  attn = register_module("attn", Attention(cfg.dim, cfg.dim, cfg.heads));
  ff = register_module("ff", FeedForward(cfg.dim, 2));
  final_norm = register_module("final_norm", nn::LayerNorm(nn::LayerNormOptions({cfg.dim})));
}

torch::Tensor TextEncoderImpl::forward(const torch::Tensor& ids) {
  require(ids.dim() == 2 && ids.size(1) == cfg_.length, ErrorKind::Shape, "token ids must be [B, L_c]");
  require(ids.min().item<std::int64_t>() >= 0 && ids.max().item<std::int64_t>() < cfg_.vocab_size, ErrorKind::Range,
          "token id outside the vocabulary");
  auto x = tok(ids) + pos.unsqueeze(0);
  auto h = norm(x);
  x = x + attn(h, h);
  x = x + ff(x);
  return final_norm(x);
}

TextCondition encode_text(const std::vector<std::int64_t>& ids, TextEncoder& encoder) {
  auto t = torch::tensor(ids, torch::kInt64);
  torch::NoGradGuard g;
  auto emb = encoder(t.unsqueeze(0)).squeeze(0);
  const bool is_null = !ids.empty() && ids[0] == Vocabulary::kNull;
  return {emb, t, is_null};
}

TextCondition null_condition(const Vocabulary& vocab, TextEncoder& encoder) {
  auto c = encode_text(tokenize("", vocab, encoder->config().length), encoder);
  c.is_null = true;
  return c;
}

}  // namespace lattrack
