#include "seas/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>

#include "seas/image_io.hpp"

namespace seas {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'S', 'E', 'A', 'S', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::string& out, T value) {
  out.append(reinterpret_cast<const char*>(&value), sizeof value);
}

template <typename T>
T take(const std::string& in, std::size_t& pos, const std::string& source) {
  if (pos + sizeof(T) > in.size()) throw ParseError(source + ": truncated archive");
  T value;
  std::memcpy(&value, in.data() + pos, sizeof value);
  pos += sizeof value;
  return value;
}

}  // namespace

std::string serialize(const Archive& archive) {
  json index = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : archive.tensors) {
    index.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(t.size());
  }
  const std::string header =
      json{{"kind", archive.kind}, {"config", archive.config}, {"meta", archive.meta}, {"tensors", index}}.dump();
  std::string out(kMagic, sizeof kMagic);
  const std::string version = kCheckpointVersion;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(version.size()));
  out += version;
  put<std::uint64_t>(out, header.size());
  out += header;
  for (const auto& [name, t] : archive.tensors)
    out.append(reinterpret_cast<const char*>(t.data()), static_cast<std::size_t>(t.size()) * sizeof(float));
  return out;
}

Archive deserialize(const std::string& bytes, const std::string& source) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw ParseError(source + ": not a checkpoint archive");
  std::size_t pos = sizeof kMagic;
  const auto version_size = take<std::uint32_t>(bytes, pos, source);
  if (pos + version_size > bytes.size()) throw ParseError(source + ": truncated archive");
  const std::string version = bytes.substr(pos, version_size);
  pos += version_size;
  if (version != kCheckpointVersion)
    throw CompatibilityError(source + ": archive version '" + version + "', expected '" + kCheckpointVersion + "'");
  const auto header_size = take<std::uint64_t>(bytes, pos, source);
  if (pos + header_size > bytes.size()) throw ParseError(source + ": truncated archive");
  json header;
  try {
    header = json::parse(bytes.substr(pos, header_size));
  } catch (const json::exception& e) {
    throw ParseError(source + ": corrupt archive header: " + e.what());
  }
  pos += header_size;
  Archive a;
  a.kind = header.at("kind").get<std::string>();
  a.config = header.at("config");
  a.meta = header.value("meta", json::object());
  const std::size_t data_begin = pos;
  for (const auto& entry : header.at("tensors")) {
    const Shape shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    Tensor<float> t(shape);
    const std::size_t begin = data_begin + offset * sizeof(float);
    const std::size_t length = static_cast<std::size_t>(t.size()) * sizeof(float);
    if (begin + length > bytes.size()) throw ParseError(source + ": truncated tensor data");
    std::memcpy(t.data(), bytes.data() + begin, length);
    a.tensors.emplace(entry.at("name").get<std::string>(), std::move(t));
  }
  return a;
}

void save_archive(const fs::path& path, const Archive& archive) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp.string());
    const std::string bytes = serialize(archive);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed while writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

Archive load_archive(const fs::path& path, const std::string& expected_kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  Archive a = deserialize(std::string(std::istreambuf_iterator<char>(in), {}), path.string());
  if (!expected_kind.empty() && a.kind != expected_kind)
    throw CompatibilityError(path.string() + " holds a '" + a.kind + "' archive, expected '" + expected_kind + "'");
  return a;
}

std::string fingerprint(const Archive& archive) { return sha256_hex(serialize(archive)); }

void to_json(json& j, const UNetConfig& c) {
  j = {{"latent_channels", c.latent_channels}, {"latent_size", c.latent_size}, {"widths", c.widths},
       {"heads", c.heads}, {"context_dim", c.context_dim}, {"groups", c.groups},
       {"decoder_attention", c.decoder_attention}};
}

void from_json(const json& j, UNetConfig& c) {
  c = UNetConfig{};
  c.latent_channels = j.value("latent_channels", c.latent_channels);
  c.latent_size = j.value("latent_size", c.latent_size);
  c.widths = j.value("widths", c.widths);
  c.heads = j.value("heads", c.heads);
  c.context_dim = j.value("context_dim", c.context_dim);
  c.groups = j.value("groups", c.groups);
  c.decoder_attention = j.value("decoder_attention", c.decoder_attention);
}

void to_json(json& j, const VAEConfig& c) {
  j = {{"image_channels", c.image_channels}, {"image_size", c.image_size}, {"latent_channels", c.latent_channels},
       {"widths", c.widths}, {"groups", c.groups}};
}

void from_json(const json& j, VAEConfig& c) {
  c = VAEConfig{};
  c.image_channels = j.value("image_channels", c.image_channels);
  c.image_size = j.value("image_size", c.image_size);
  c.latent_channels = j.value("latent_channels", c.latent_channels);
  c.widths = j.value("widths", c.widths);
  c.groups = j.value("groups", c.groups);
}

void to_json(json& j, const PromptConfig& c) {
  j = {{"num_types", c.num_types},         {"n_anomaly_tokens", c.n_anomaly_tokens},
       {"n_normal_tokens", c.n_normal_tokens}, {"padded_length", c.padded_length},
       {"embed_dim", c.embed_dim},         {"with_tp", c.with_tp}};
}

void from_json(const json& j, PromptConfig& c) {
  c = PromptConfig{};
  c.num_types = j.value("num_types", c.num_types);
  c.n_anomaly_tokens = j.value("n_anomaly_tokens", c.n_anomaly_tokens);
  c.n_normal_tokens = j.value("n_normal_tokens", c.n_normal_tokens);
  c.padded_length = j.value("padded_length", c.padded_length);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.with_tp = j.value("with_tp", c.with_tp);
}

void to_json(json& j, const RMPConfig& c) {
  j = {{"unet_stages", c.unet_stages},
       {"compressed_channels", c.compressed_channels},
       {"transformer_layers", c.transformer_layers},
       {"heads", c.heads},
       {"variant", to_string(c.variant)},
       {"vae_source", to_string(c.vae_source)},
       {"coarse_resolution", c.coarse_resolution},
       {"image_size", c.image_size},
       {"vae_channels", c.vae_channels},
       {"unet_channels", c.unet_channels}};
}

void from_json(const json& j, RMPConfig& c) {
  c = RMPConfig{};
  c.unet_stages = j.value("unet_stages", c.unet_stages);
  c.compressed_channels = j.value("compressed_channels", c.compressed_channels);
  c.transformer_layers = j.value("transformer_layers", c.transformer_layers);
  c.heads = j.value("heads", c.heads);
  c.variant = mrm_variant_from_string(j.value("variant", to_string(c.variant)));
  c.vae_source = feature_source_from_string(j.value("vae_source", to_string(c.vae_source)));
  c.coarse_resolution = j.value("coarse_resolution", c.coarse_resolution);
  c.image_size = j.value("image_size", c.image_size);
  c.vae_channels = j.value("vae_channels", c.vae_channels);
  c.unet_channels = j.value("unet_channels", c.unet_channels);
}

void store_parameters(const nn::ParamList<float>& params, Archive& archive, const std::string& prefix) {
  for (const auto& p : params) {
    if (!archive.tensors.emplace(prefix + p.name, p.var.value()).second)
      throw ValidationError("duplicate parameter name " + prefix + p.name);
  }
}

void load_parameters(const nn::ParamList<float>& params, const Archive& archive, const std::string& prefix) {
  for (const auto& p : params) {
    auto it = archive.tensors.find(prefix + p.name);
    if (it == archive.tensors.end()) throw CompatibilityError("checkpoint lacks tensor " + prefix + p.name);
    if (it->second.shape() != p.var.shape())
      throw CompatibilityError("tensor " + prefix + p.name + " has shape " + shape_string(it->second.shape()) +
                               ", model expects " + shape_string(p.var.shape()));
    ad::Var<float> v = p.var;
    v.mutable_value() = it->second;
  }
}

Archive vae_archive(const VAE<float>& vae) {
  Archive a;
  a.kind = "vae";
  a.config = vae.config();
  a.meta["latent_scale"] = vae.latent_scale();
  store_parameters(vae.parameters(), a);
  return a;
}

VAE<float> vae_from_archive(const Archive& a) {
  if (a.kind != "vae") throw CompatibilityError("expected a 'vae' archive, got '" + a.kind + "'");
  Rng rng(0);
  VAE<float> vae(a.config.get<VAEConfig>(), rng);
  load_parameters(vae.parameters(), a);
  vae.set_latent_scale(a.meta.at("latent_scale").get<float>());
  return vae;
}

Archive unet_archive(const Generator& g) {
  Archive a;
  a.kind = "unet";
  a.config = {{"unet", g.config.unet}, {"num_train_steps", g.config.num_train_steps}};
  store_parameters(g.unet.parameters(), a);
  return a;
}

Archive token_archive(const Generator& g) {
  Archive a;
  a.kind = "tokens";
  a.config = g.config.prompt;
  const auto& table = g.bank.table();
  a.tensors.emplace("base", table.base().value());
  std::vector<std::pair<int, std::string>> rows;
  for (const auto& [name, row] : table.added_ids()) rows.emplace_back(row, name);
  std::sort(rows.begin(), rows.end());
  json names = json::array();
  for (const auto& [row, name] : rows) names.push_back(name);
  a.meta["added"] = names;
  if (table.added().defined()) a.tensors.emplace("added", table.added().value());
  return a;
}

Generator generator_from_archives(const Archive& unet, const Archive& tokens) {
  if (unet.kind != "unet") throw CompatibilityError("expected a 'unet' archive, got '" + unet.kind + "'");
  if (tokens.kind != "tokens") throw CompatibilityError("expected a 'tokens' archive, got '" + tokens.kind + "'");
  GeneratorConfig config;
  config.unet = unet.config.at("unet").get<UNetConfig>();
  config.num_train_steps = unet.config.at("num_train_steps").get<int>();
  config.prompt = tokens.config.get<PromptConfig>();
  Generator g(config, 0);
  load_parameters(g.unet.parameters(), unet);
  const auto names = tokens.meta.at("added").get<std::vector<std::string>>();
  auto added = tokens.tensors.find("added");
  g.bank.table().restore(tokens.tensors.at("base"),
                         added == tokens.tensors.end() ? Tensor<float>({0, config.prompt.embed_dim}) : added->second, names);
  return g;
}

std::string generator_fingerprint(const Generator& generator) {
  return sha256_hex(fingerprint(unet_archive(generator)) + fingerprint(token_archive(generator)));
}

Archive rmp_archive(const RMP<float>& rmp, const std::string& generator_fp) {
  Archive a;
  a.kind = "rmp";
  a.config = rmp.config();
  a.meta["generator_fingerprint"] = generator_fp;
  store_parameters(rmp.parameters(), a);
  return a;
}

RMP<float> rmp_from_archive(const Archive& a) {
  if (a.kind != "rmp") throw CompatibilityError("expected an 'rmp' archive, got '" + a.kind + "'");
  Rng rng(0);
  RMP<float> rmp(a.config.get<RMPConfig>(), rng);
  load_parameters(rmp.parameters(), a);
  return rmp;
}

}  // namespace seas
