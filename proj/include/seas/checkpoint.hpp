#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "seas/rmp.hpp"

namespace seas {

inline constexpr const char* kCheckpointVersion = "seas-ckpt-1";

/// One component's tensors plus its config echo. On disk: magic, version string,
/// JSON header (kind, config, meta, tensor index), then raw float32 data.
struct Archive {
  std::string kind;
  nlohmann::json config;
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Tensor<float>> tensors;
};

std::string serialize(const Archive& archive);
Archive deserialize(const std::string& bytes, const std::string& source = "<memory>");
void save_archive(const std::filesystem::path& path, const Archive& archive);
/// Throws CompatibilityError if the stored kind differs from `expected_kind` (when given).
Archive load_archive(const std::filesystem::path& path, const std::string& expected_kind = "");

/// SHA-256 over the serialized archive.
std::string fingerprint(const Archive& archive);

// Config (de)serialization.
void to_json(nlohmann::json& j, const UNetConfig& c);
void from_json(const nlohmann::json& j, UNetConfig& c);
void to_json(nlohmann::json& j, const VAEConfig& c);
void from_json(const nlohmann::json& j, VAEConfig& c);
void to_json(nlohmann::json& j, const PromptConfig& c);
void from_json(const nlohmann::json& j, PromptConfig& c);
void to_json(nlohmann::json& j, const RMPConfig& c);
void from_json(const nlohmann::json& j, RMPConfig& c);

// Components.
Archive vae_archive(const VAE<float>& vae);
VAE<float> vae_from_archive(const Archive& archive);

Archive unet_archive(const Generator& generator);
Archive token_archive(const Generator& generator);
Generator generator_from_archives(const Archive& unet, const Archive& tokens);
/// Fingerprint of the U-Net and token archives together.
std::string generator_fingerprint(const Generator& generator);

/// The RMP archive records the fingerprint of the generator it was trained against.
Archive rmp_archive(const RMP<float>& rmp, const std::string& generator_fp);
RMP<float> rmp_from_archive(const Archive& archive);

/// Copies archive tensors into parameters by name; every parameter must be present with the same shape.
void load_parameters(const nn::ParamList<float>& params, const Archive& archive, const std::string& prefix = "");
void store_parameters(const nn::ParamList<float>& params, Archive& archive, const std::string& prefix = "");

}  // namespace seas
