#include "lattrack/layers.hpp"

#include "lattrack/errors.hpp"

namespace lattrack {

namespace nn = torch::nn;

AttentionImpl::AttentionImpl(int dim, int context_dim, int heads) : heads_(heads) {
  require(heads >= 1 && dim % heads == 0, ErrorKind::Config,
          "attention width " + std::to_string(dim) + " not divisible by " + std::to_string(heads) + " heads");
  q = register_module("q", nn::Linear(nn::LinearOptions(dim, dim).bias(false)));
  k = register_module("k", nn::Linear(nn::LinearOptions(context_dim, dim).bias(false)));
  v = register_module("v", nn::Linear(nn::LinearOptions(context_dim, dim).bias(false)));
  out = register_module("out", nn::Linear(dim, dim));
}

torch::Tensor AttentionImpl::forward(const torch::Tensor& x, const torch::Tensor& context) {
  const auto b = x.size(0);
  const auto split = [&](const torch::Tensor& t) {
    return t.view({b, t.size(1), heads_, -1}).transpose(1, 2);  // [B, H, L, d]
  };
  auto attn = torch::scaled_dot_product_attention(split(q(x)), split(k(context)), split(v(context)));
  return out(attn.transpose(1, 2).reshape({b, x.size(1), -1}));
}

FeedForwardImpl::FeedForwardImpl(int dim, int mult) {
  norm = register_module("norm", nn::LayerNorm(nn::LayerNormOptions({dim})));
  fc1 = register_module("fc1", nn::Linear(dim, dim * mult));
  fc2 = register_module("fc2", nn::Linear(dim * mult, dim));
}

torch::Tensor FeedForwardImpl::forward(const torch::Tensor& x) {
  return fc2(torch::gelu(fc1(norm(x))));
}

}  // namespace lattrack
