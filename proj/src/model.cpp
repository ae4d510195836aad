#include "lattrack/model.hpp"

#include "lattrack/errors.hpp"

namespace lattrack {

json ModelConfig::to_json() const {
  return {
      {"codec", {{"downsample", codec.downsample}, {"latent_channels", codec.latent_channels}, {"width", codec.width}}},
      {"unet", unet.to_json()},
      {"head", head.to_json()},
      {"text", {{"length", text.length}, {"dim", text.dim}, {"heads", text.heads}}},
      {"diffusion",
       {{"t_max", diffusion.t_max},
        {"beta_start", diffusion.beta_start},
        {"beta_end", diffusion.beta_end},
        {"timestep", diffusion.timestep}}},
      {"crop",
       {{"template_factor", crop.template_factor},
        {"search_factor", crop.search_factor},
        {"template_size", crop.template_size},
        {"search_size", crop.search_size}}},
      {"sub", {{"ingest_rgb", sub.ingest_rgb}, {"no_zero_init", sub.no_zero_init}}},
      {"window_weight", window_weight},
  };
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  const auto& cj = j.at("codec");
  c.codec = {cj.at("downsample"), cj.at("latent_channels"), cj.at("width")};
  c.unet = UNetConfig::from_json(j.at("unet"));
  c.head = HeadConfig::from_json(j.at("head"));
  const auto& tj = j.at("text");
  c.text.length = tj.at("length");
  c.text.dim = tj.at("dim");
  c.text.heads = tj.at("heads");
  const auto& dj = j.at("diffusion");
  c.diffusion = {dj.at("t_max"), dj.at("beta_start"), dj.at("beta_end"), dj.at("timestep")};
  const auto& kj = j.at("crop");
  c.crop = {kj.at("template_factor"), kj.at("search_factor"), kj.at("template_size"), kj.at("search_size")};
  c.sub.ingest_rgb = j.at("sub").at("ingest_rgb");
  c.sub.no_zero_init = j.at("sub").at("no_zero_init");
  c.window_weight = j.at("window_weight");
  return c;
}

Model Model::create(ModelConfig cfg, Codec codec, std::uint64_t seed) {
  require(codec->config().latent_channels == cfg.unet.latent_channels, ErrorKind::Config,
          "codec latent channels differ from the UNet input channels");
  require(cfg.text.dim == cfg.unet.cond_dim, ErrorKind::Config, "text encoder width must equal the UNet d_cond");
  cfg.codec = codec->config();
  cfg.head.in_channels = cfg.unet.feature_channels();
  torch::manual_seed(seed);
  Model m;
  m.cfg = cfg;
  m.schedule = compute_schedule(cfg.diffusion.t_max, cfg.diffusion.beta_start, cfg.diffusion.beta_end);
  require(cfg.diffusion.timestep >= 1 && cfg.diffusion.timestep <= cfg.diffusion.t_max, ErrorKind::Config,
          "diffusion timestep outside [1, t_max]");
  m.codec = codec;
  m.cfg.text.vocab_size = m.vocab.size();
  m.text = TextEncoder(m.cfg.text);
  m.unet = UNet(cfg.unet);
  m.head = TrackingHead(m.cfg.head);
  return m;
}

torch::Tensor Model::condition(const std::string& caption) { return conditions({caption}); }

torch::Tensor Model::conditions(const std::vector<std::string>& captions) {
  std::vector<torch::Tensor> rows;
  for (const auto& c : captions) rows.push_back(torch::tensor(tokenize(c, vocab, cfg.text.length), torch::kInt64));
  return text(torch::stack(rows));
}

ScoreMaps Model::forward(const torch::Tensor& search_latent, const torch::Tensor& template_latent,
                         const torch::Tensor& cond, SubModule* sub, const torch::Tensor& aux_search,
                         const torch::Tensor& aux_template) {
  const int t = cfg.diffusion.timestep;
  if (sub) {
    require(aux_search.defined() && aux_template.defined(), ErrorKind::Data, "auxiliary latents missing");
    auto feats = fused_forward(search_latent, template_latent, aux_search, aux_template, cond, t, unet, *sub);
    return head(extract_tracking_features(feats));
  }
  auto out = unet->forward_pair(search_latent, template_latent, cond, t);
  return head(extract_tracking_features(out.features));
}

SubModule* Model::sub_for(Modality m) {
  if (m == Modality::Rgb) return nullptr;
  const auto scope = m == Modality::Depth ? SubScope::Depth : m == Modality::Thermal ? SubScope::Thermal : SubScope::Event;
  if (auto it = subs.find(scope); it != subs.end()) return &it->second;
  if (auto it = subs.find(SubScope::Generalist); it != subs.end()) return &it->second;
  return nullptr;
}

std::vector<std::pair<std::string, torch::Tensor>> Model::named_parameters() const {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  auto add = [&](const std::string& prefix, const torch::nn::Module& mod) {
    for (const auto& p : mod.named_parameters(true)) out.emplace_back(prefix + "." + p.key(), p.value());
  };
  add("codec", *codec);
  add("text", *text);
  add("unet", *unet);
  add("head", *head);
  for (const auto& [scope, sub] : subs) add("sub." + to_string(scope), *sub);
  return out;
}

std::map<std::string, std::uint64_t> Model::checksums() const {
  std::map<std::string, std::uint64_t> out;
  for (const auto& [name, t] : named_parameters()) out[name] = checksum(t);
  return out;
}

void Model::save(const std::filesystem::path& path, const json& extra_meta) const {
  Archive ar;
  save_codec(codec, ar);
  ar.put_module("text", *text);
  ar.put_module("unet", *unet);
  ar.put_module("head", *head);
  json scopes = json::array();
  for (const auto& [scope, sub] : subs) {
    ar.put_module("sub." + to_string(scope), *sub);
    scopes.push_back(to_string(scope));
  }
  ar.meta["model"] = cfg.to_json();
  ar.meta["vocabulary"] = vocab.to_json();
  ar.meta["sub_scopes"] = scopes;
  for (const auto& [k, v] : extra_meta.items()) ar.meta[k] = v;
  ar.save(path);
}

Model Model::load(const std::filesystem::path& path) {
  auto ar = Archive::load(path);
  require(ar.meta.contains("model"), ErrorKind::Config, "'" + path.string() + "' is not a model checkpoint");
  Model m;
  m.cfg = ModelConfig::from_json(ar.meta.at("model"));
  m.schedule = compute_schedule(m.cfg.diffusion.t_max, m.cfg.diffusion.beta_start, m.cfg.diffusion.beta_end);
  m.vocab = Vocabulary::from_json(ar.meta.at("vocabulary"));
  m.cfg.text.vocab_size = m.vocab.size();
  m.codec = load_codec(ar);
  m.text = TextEncoder(m.cfg.text);
  ar.load_module("text", *m.text);
  m.unet = UNet(m.cfg.unet);
  ar.load_module("unet", *m.unet);
  m.head = TrackingHead(m.cfg.head);
  ar.load_module("head", *m.head);
  for (const auto& s : ar.meta.value("sub_scopes", json::array())) {
    const auto scope = scope_from_string(s.get<std::string>());
    SubModule sub(m.cfg.unet, scope, m.cfg.sub);
    ar.load_module("sub." + to_string(scope), *sub);
    m.subs.emplace(scope, sub);
  }
  return m;
}

}  // namespace lattrack
