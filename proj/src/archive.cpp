#include "lattrack/archive.hpp"

#include <cstring>
#include <fstream>

#include "lattrack/errors.hpp"

namespace lattrack {
namespace {

constexpr char kMagic[8] = {'L', 'T', 'A', 'R', 'C', 'H', '0', '1'};

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    default: fail(ErrorKind::Data, "unsupported array dtype in archive");
  }
}

torch::ScalarType dtype_from(const std::string& s) {
  if (s == "f32") return torch::kFloat32;
  if (s == "f64") return torch::kFloat64;
  if (s == "i64") return torch::kInt64;
  fail(ErrorKind::Data, "unknown archive dtype '" + s + "'");
}

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

void Archive::put(const std::string& name, const torch::Tensor& value) {
  arrays_[name] = value.detach().to(torch::kCPU).contiguous().clone();
}

const torch::Tensor& Archive::get(const std::string& name) const {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) fail(ErrorKind::Data, "archive has no array '" + name + "'");
  return it->second;
}

void Archive::put_module(const std::string& prefix, const torch::nn::Module& module) {
  for (const auto& p : module.named_parameters(true)) put(prefix + "." + p.key(), p.value());
  for (const auto& b : module.named_buffers(true)) put(prefix + "." + b.key(), b.value());
}

void Archive::load_module(const std::string& prefix, torch::nn::Module& module) const {
  torch::NoGradGuard no_grad;
  auto copy_into = [&](const std::string& key, torch::Tensor& dst) {
    const auto name = prefix + "." + key;
    const auto& src = get(name);
    if (src.sizes() != dst.sizes()) fail(ErrorKind::Shape, "archive array '" + name + "' has mismatched shape");
    dst.copy_(src);
  };
  for (auto& p : module.named_parameters(true)) copy_into(p.key(), p.value());
  for (auto& b : module.named_buffers(true)) copy_into(b.key(), b.value());
}

std::vector<std::string> Archive::names_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  const auto dotted = prefix + ".";
  for (const auto& [name, _] : arrays_)
    if (name.rfind(dotted, 0) == 0) out.push_back(name);
  return out;
}

void Archive::save(const std::filesystem::path& path) const {
  json index = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : arrays_) {
    const auto nbytes = static_cast<std::uint64_t>(t.numel() * t.element_size());
    index.push_back({{"name", name},
                     {"dtype", dtype_name(t.scalar_type())},
                     {"shape", t.sizes().vec()},
                     {"offset", offset},
                     {"nbytes", nbytes}});
    offset += nbytes;
  }
  const std::string header = json{{"meta", meta}, {"arrays", index}}.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t hlen = header.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& [_, t] : arrays_)
    out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.numel() * t.element_size()));
  if (!out) fail(ErrorKind::Io, "short write to '" + path.string() + "'");
}

Archive Archive::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open checkpoint '" + path.string() + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    fail(ErrorKind::Data, "'" + path.string() + "' is not a checkpoint archive");
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string header(hlen, '\0');
  in.read(header.data(), static_cast<std::streamsize>(hlen));
  if (!in) fail(ErrorKind::Data, "truncated archive header in '" + path.string() + "'");

  Archive ar;
  json doc;
  try {
    doc = json::parse(header);
  } catch (const json::exception& e) {
    fail(ErrorKind::Data, std::string("corrupt archive header: ") + e.what());
  }
  ar.meta = doc.at("meta");
  const auto payload_start = in.tellg();
  for (const auto& entry : doc.at("arrays")) {
    auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
    auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype_from(entry.at("dtype"))));
    const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
    if (nbytes != static_cast<std::uint64_t>(t.numel() * t.element_size()))
      fail(ErrorKind::Data, "array size mismatch for '" + entry.at("name").get<std::string>() + "'");
    in.seekg(payload_start + static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
    in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
    if (!in) fail(ErrorKind::Data, "truncated payload in '" + path.string() + "'");
    ar.arrays_[entry.at("name").get<std::string>()] = t;
  }
  return ar;
}

std::uint64_t checksum(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kCPU).contiguous();
  return fnv1a(c.data_ptr(), static_cast<std::size_t>(c.numel() * c.element_size()));
}

std::map<std::string, std::uint64_t> param_checksums(const std::string& prefix, const torch::nn::Module& module) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& p : module.named_parameters(true)) out[prefix + "." + p.key()] = checksum(p.value());
  return out;
}

std::string json_hash(const json& doc) {
  const auto s = doc.dump();
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(s.data(), s.size())));
  return buf;
}

}  // namespace lattrack
