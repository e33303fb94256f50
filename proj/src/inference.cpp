#include "seas/inference.hpp"

#include <fstream>
#include <random>

#include <json.hpp>

#include "seas/checkpoint.hpp"
#include "seas/image_io.hpp"

namespace seas {

namespace fs = std::filesystem;
using ad::Var;

void GenerationRequest::validate(int num_types) const {
  if (mode == GenerationMode::Abnormal && (anomaly_type < 1 || anomaly_type > num_types))
    throw RangeError("anomaly type " + std::to_string(anomaly_type) + " outside [1, " + std::to_string(num_types) + "]");
  if (count < 0) throw ConfigError("count must be nonnegative");
  if (!(noise_strength > 0.0 && noise_strength <= 1.0))
    throw RangeError("noise strength must lie in (0, 1], got " + std::to_string(noise_strength));
  if (!(mask_threshold > 0.0 && mask_threshold < 1.0)) throw RangeError("mask threshold must lie in (0, 1)");
  if (mask_average_steps < 1 || sampler_steps < mask_average_steps)
    throw ConfigError("sampler steps must be at least the number of averaged mask steps");
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  if (latent_clip < 0) throw ConfigError("latent clip must be nonnegative");
}

Tensor<float> init_noisy_latent(const Tensor<float>& normal_latent, double rho, const NoiseSchedule& schedule, Rng& rng) {
  const int t = schedule.step_for_strength(rho);
  return forward_diffuse(normal_latent, t, Tensor<float>::randn(normal_latent.shape(), rng), schedule);
}

namespace {

std::uint64_t sample_seed(std::uint64_t seed, int index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), 0x9e37u};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

Tensor<float> batch_item(const Tensor<float>& batch, int b) {
  Shape shape(batch.shape().begin() + 1, batch.shape().end());
  const auto n = numel(shape);
  return Tensor<float>(shape, batch.array().segment(b * n, n));
}

}  // namespace

std::vector<GeneratedSample> generate(const GenerationRequest& request, const GenerationModels& models,
                                      const std::vector<Tensor<float>>& normal_pool) {
  if (!models.generator || !models.vae) throw ConfigError("generation needs a generator and a VAE");
  const Generator& gen = *models.generator;
  const VAE<float>& vae = *models.vae;
  request.validate(gen.config.prompt.num_types);
  const bool abnormal = request.mode == GenerationMode::Abnormal;
  if (abnormal && !models.rmp) throw ConfigError("abnormal generation needs an RMP checkpoint");
  if (models.rmp && models.rmp_generator_fingerprint != generator_fingerprint(gen))
    throw CompatibilityError("the RMP checkpoint was trained against a different generator");
  if (normal_pool.empty()) throw DataError("generation needs at least one normal image");

  ad::NoGradGuard no_grad;
  const auto steps = sampling_steps(gen.schedule.step_for_strength(request.noise_strength), request.sampler_steps);
  if (abnormal && static_cast<int>(steps.size()) < request.mask_average_steps)
    throw ConfigError("only " + std::to_string(steps.size()) + " distinct sampling steps at this noise strength");
  const UAPrompt prompt = abnormal ? gen.bank.build_prompt(request.anomaly_type) : gen.bank.build_normal_prompt();

  std::vector<GeneratedSample> results;
  for (int begin = 0; begin < request.count; begin += request.batch_size) {
    const int b = std::min(request.batch_size, request.count - begin);
    std::vector<Var<float>> latents;
    std::vector<GeneratedSample> chunk(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) {
      auto& out = chunk[static_cast<std::size_t>(i)];
      out.seed = sample_seed(request.seed, begin + i);
      out.anomaly_type = abnormal ? request.anomaly_type : 0;
      Rng rng(out.seed);
      out.source_index = static_cast<int>(std::uniform_int_distribution<std::size_t>(0, normal_pool.size() - 1)(rng));
      Var<float> z0 = vae.encode(ad::stack<float>({Var<float>::constant(normal_pool[static_cast<std::size_t>(out.source_index)])}));
      const Tensor<float> latent = z0.value().reshaped({z0.dim(1), z0.dim(2), z0.dim(3)});
      latents.push_back(Var<float>::constant(init_noisy_latent(latent, request.noise_strength, gen.schedule, rng)));
    }
    Tensor<float> z = ad::stack(latents).value();
    const Var<float> context = gen.bank.embed_batch(std::vector<UAPrompt>(static_cast<std::size_t>(b), prompt));

    for (std::size_t k = 0; k < steps.size(); ++k) {
      const int t = steps[k];
      const int next = k + 1 < steps.size() ? steps[k + 1] : kCleanStep;
      const auto out = gen.unet.forward(Var<float>::constant(z), std::vector<int>(static_cast<std::size_t>(b), t), context);
      const Tensor<float>& eps = out.predicted_noise.value();
      if (abnormal && static_cast<int>(steps.size() - k) <= request.mask_average_steps) {
        const Var<float> x0 = Var<float>::constant(predict_clean(z, t, eps, gen.schedule, request.latent_clip));
        Var<float> decoded_image;
        if (models.rmp->config().vae_source == FeatureSource::VAEEncoder) decoded_image = vae.decode(x0, false).first;
        const auto features = rmp_vae_features(vae, x0, decoded_image, models.rmp->config().vae_source);
        const auto pred = models.rmp->forward(out.decoder_features, features, true);
        const Tensor<float> scores = anomaly_scores(pred.refined_logits);
        for (int i = 0; i < b; ++i) chunk[static_cast<std::size_t>(i)].score_history.push_back(batch_item(scores, i));
      }
      z = sample_step(z, t, next, eps, gen.schedule, request.latent_clip);
    }
    const Tensor<float> images = vae.decode(Var<float>::constant(z), false).first.value();
    for (int i = 0; i < b; ++i) {
      auto& out = chunk[static_cast<std::size_t>(i)];
      out.image = batch_item(images, i);
      if (abnormal) {
        out.scores = Tensor<float>(out.score_history.front().shape());
        for (const auto& s : out.score_history) out.scores.array() += s.array();
        out.scores.array() /= static_cast<float>(out.score_history.size());
        out.mask = binarize(out.scores, request.mask_threshold);
      }
      results.push_back(std::move(out));
    }
  }
  return results;
}

fs::path export_pairs(const std::vector<GeneratedSample>& results, const fs::path& out_dir, const ExportInfo& info,
                      bool force) {
  const fs::path manifest = out_dir / "manifest.jsonl";
  if (fs::exists(manifest) && !force)
    throw IoError(manifest.string() + " already exists; pass --force to overwrite");
  try {
    fs::create_directories(out_dir / "images");
    fs::create_directories(out_dir / "masks");
  } catch (const fs::filesystem_error& e) {
    throw IoError("cannot create " + out_dir.string() + ": " + e.what());
  }
  std::ofstream out(manifest);
  if (!out) throw IoError("cannot write " + manifest.string());
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    char name[16];
    std::snprintf(name, sizeof name, "%05zu.png", i);
    write_png_rgb(out_dir / "images" / name, r.image);
    nlohmann::json record{{"image", std::string("images/") + name},
                          {"anomaly_type", r.anomaly_type},
                          {"seed", r.seed},
                          {"tau", info.tau},
                          {"rho", info.rho},
                          {"generator_fingerprint", info.generator_fingerprint},
                          {"rmp_fingerprint", info.rmp_fingerprint},
                          {"config_hash", info.config_hash}};
    if (r.mask.size() > 0) {
      write_png_mask(out_dir / "masks" / name, r.mask);
      record["mask"] = std::string("masks/") + name;
    } else {
      record["mask"] = nullptr;
    }
    out << record.dump() << "\n";
  }
  if (!out) throw IoError("failed while writing " + manifest.string());
  return manifest;
}

std::vector<Tensor<float>> segment_images(const GenerationModels& models, const std::vector<Tensor<float>>& images,
                                          int anomaly_type, int t, std::uint64_t seed) {
  if (!models.generator || !models.vae || !models.rmp) throw ConfigError("segmentation needs generator, VAE and RMP");
  const Generator& gen = *models.generator;
  if (models.rmp_generator_fingerprint != generator_fingerprint(gen))
    throw CompatibilityError("the RMP checkpoint was trained against a different generator");
  ad::NoGradGuard no_grad;
  const UAPrompt prompt = gen.bank.build_prompt(anomaly_type);
  std::vector<Tensor<float>> out;
  for (std::size_t i = 0; i < images.size(); ++i) {
    Rng rng(sample_seed(seed, static_cast<int>(i)));
    const Var<float> image = ad::stack<float>({Var<float>::constant(images[i])});
    const Tensor<float> z0 = models.vae->encode(image).value();
    const Tensor<float> zt = forward_diffuse(z0, t, Tensor<float>::randn(z0.shape(), rng), gen.schedule);
    const auto pass = gen.unet.forward(Var<float>::constant(zt), {t}, gen.bank.embed_batch({prompt}));
    const Var<float> x0 = Var<float>::constant(predict_clean(zt, t, pass.predicted_noise.value(), gen.schedule, kLatentClip));
    const auto features = rmp_vae_features(*models.vae, x0, image, models.rmp->config().vae_source);
    out.push_back(batch_item(anomaly_scores(models.rmp->forward(pass.decoder_features, features, true).refined_logits), 0));
  }
  return out;
}

}  // namespace seas
