#include "seas/trainer.hpp"

#include <cmath>
#include <random>

namespace seas {

using ad::Var;

Var<float> stack_images(const std::vector<Tensor<float>>& images) {
  if (images.empty()) throw DataError("no images to stack");
  std::vector<Var<float>> vars;
  for (const auto& img : images) vars.push_back(Var<float>::constant(img));
  return ad::stack(vars);
}

std::vector<Tensor<float>> vae_training_pool(const Corpus& corpus, int extra_samples, std::uint64_t seed) {
  std::vector<Tensor<float>> pool;
  for (const auto& s : corpus.normal) pool.push_back(s.image);
  for (const auto& s : corpus.abnormal) pool.push_back(s.image);
  std::mt19937_64 rng(seed ^ 0x5eedULL);
  const int types = corpus.num_types();
  for (int i = 0; i < extra_samples; ++i) {
    const int type = (types > 0 && i % 2 == 1) ? 1 + (i / 2) % types : 0;
    pool.push_back(render_sample(corpus.spec, type, rng()).image);
  }
  return pool;
}

void pretrain_vae(VAE<float>& vae, const std::vector<Tensor<float>>& images, const VAETrainConfig& config,
                  const LogSink& log) {
  if (images.empty()) throw DataError("VAE pre-training needs images");
  if (config.steps < 0 || config.batch < 1) throw ConfigError("invalid VAE training schedule");
  Rng rng(config.seed);
  std::vector<Var<float>> params;
  for (auto& p : vae.parameters()) params.push_back(p.var);
  AdamW<float> opt({ParamGroup<float>{params, config.lr, 0.0}});
  std::uniform_int_distribution<std::size_t> pick(0, images.size() - 1);
  for (int step = 0; step < config.steps; ++step) {
    std::vector<Tensor<float>> batch;
    for (int b = 0; b < config.batch; ++b) batch.push_back(images[pick(rng)]);
    Var<float> x = stack_images(batch);
    VAEPosterior<float> post = vae.posterior(x);
    Tensor<float> eps = Tensor<float>::randn(post.mean.shape(), rng);
    Var<float> std_dev = ad::exp(ad::scale(post.log_variance, 0.5f));
    Var<float> z = ad::add(post.mean, ad::mul(std_dev, Var<float>::constant(eps)));
    Var<float> recon = ad::mse(vae.decode_raw(z), x);
    // KL(q || N(0, I)) per latent element: 0.5 (mu^2 + sigma^2 - 1 - log sigma^2)
    Var<float> kl = ad::scale(
        ad::mean(ad::sub(ad::add(ad::square(post.mean), ad::exp(post.log_variance)), ad::add_scalar(post.log_variance, 1.0f))),
        0.5f);
    Var<float> loss = ad::add(recon, ad::scale(kl, static_cast<float>(config.kl_weight)));
    if (!std::isfinite(loss.item())) throw DivergenceError("VAE loss became non-finite at step " + std::to_string(step));
    opt.zero_grad();
    loss.backward();
    opt.step();
    if (log && (step % 100 == 0 || step + 1 == config.steps)) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "vae step=%d recon=%.6g kl=%.6g", step, recon.item(), kl.item());
      log(buf);
    }
  }

  // Unit-variance scaling of the latent means.
  ad::NoGradGuard no_grad;
  double sum = 0, sum_sq = 0;
  long count = 0;
  for (std::size_t i = 0; i < images.size(); i += 16) {
    std::vector<Tensor<float>> chunk(images.begin() + static_cast<long>(i),
                                     images.begin() + static_cast<long>(std::min(images.size(), i + 16)));
    const VAEPosterior<float> post = vae.posterior(stack_images(chunk));
    const auto& mu = post.mean.value().array();
    sum += mu.template cast<double>().sum();
    sum_sq += mu.template cast<double>().square().sum();
    count += mu.size();
  }
  const double mean = sum / count;
  const double var = std::max(sum_sq / count - mean * mean, 1e-12);
  vae.set_latent_scale(static_cast<float>(1.0 / std::sqrt(var)));
}

double reconstruction_mae(const VAE<float>& vae, const std::vector<Tensor<float>>& images) {
  ad::NoGradGuard no_grad;
  double total = 0;
  long count = 0;
  for (std::size_t i = 0; i < images.size(); i += 16) {
    std::vector<Tensor<float>> chunk(images.begin() + static_cast<long>(i),
                                     images.begin() + static_cast<long>(std::min(images.size(), i + 16)));
    Var<float> x = stack_images(chunk);
    auto [decoded, features] = vae.decode(vae.encode(x), false);
    total += (decoded.value().array() - x.value().array()).abs().template cast<double>().sum();
    count += x.value().size();
  }
  return total / count;
}

std::string to_string(MixedStrategy strategy) {
  switch (strategy) {
    case MixedStrategy::Mixed: return "mixed";
    case MixedStrategy::AbnormalNormal: return "abnormal_normal";
    case MixedStrategy::NormalAbnormal: return "normal_abnormal";
  }
  return "unknown";
}

MixedStrategy mixed_strategy_from_string(const std::string& name) {
  if (name == "mixed") return MixedStrategy::Mixed;
  if (name == "abnormal_normal") return MixedStrategy::AbnormalNormal;
  if (name == "normal_abnormal") return MixedStrategy::NormalAbnormal;
  throw ConfigError("unknown mixed strategy '" + name + "'");
}

void TrainConfig::validate() const {
  if (steps_per_anomaly_type < 0) throw ConfigError("steps_per_anomaly_type must be nonnegative");
  if (abnormal_count < 0 || normal_count < 0 || abnormal_count + normal_count == 0)
    throw ConfigError("batch must contain at least one sample");
  if (lr_unet <= 0 || lr_embeddings <= 0) throw ConfigError("learning rates must be positive");
  if (n_anomaly_tokens < 1 || n_normal_tokens < 1) throw ConfigError("token counts must be positive");
  if (at_variant && !no_st) throw ConfigError("at_variant replaces the second DA term; set no_st as well");
  loss_config().validate();
}

LossConfig TrainConfig::loss_config() const {
  LossConfig c;
  c.alignment_layers = alignment_layers;
  c.use_st = !no_st;
  c.use_na = !no_na;
  c.at_variant = at_variant;
  return c;
}

GeneratorConfig make_generator_config(const TrainConfig& config, int num_types) {
  GeneratorConfig g;
  g.prompt.num_types = num_types;
  g.prompt.n_anomaly_tokens = config.n_anomaly_tokens;
  g.prompt.n_normal_tokens = config.n_normal_tokens;
  g.prompt.with_tp = config.with_tp;
  g.prompt.embed_dim = g.unet.context_dim;
  return g;
}

namespace {
Rng seeded(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return Rng(seq);
}
}  // namespace

Generator::Generator(const GeneratorConfig& cfg, std::uint64_t seed)
    : config(cfg), schedule(NoiseSchedule::cosine(cfg.num_train_steps)) {
  if (cfg.prompt.embed_dim != cfg.unet.context_dim) throw ConfigError("token width must equal the U-Net context width");
  Rng unet_rng = seeded(seed, 1);
  unet = UNet<float>(cfg.unet, unet_rng);
  Rng token_rng = seeded(seed, 2);
  bank = PromptBank<float>(cfg.prompt, token_rng);
}

std::vector<const TrainingSample<float>*> TrainingSet::abnormal_of_type(int type) const {
  std::vector<const TrainingSample<float>*> out;
  for (const auto& s : abnormal)
    if (s.anomaly_type == type) out.push_back(&s);
  return out;
}

TrainingSet encode_corpus(const Corpus& corpus, const VAE<float>& vae) {
  ad::NoGradGuard no_grad;
  TrainingSet set;
  set.num_types = corpus.num_types();
  auto encode = [&](const AnomalySample& s) {
    Var<float> z = vae.encode(stack_images({s.image}));
    Tensor<float> latent = z.value().reshaped({z.dim(1), z.dim(2), z.dim(3)});
    return TrainingSample<float>{std::move(latent), s.mask, s.anomaly_type, s.image};
  };
  for (const auto& s : corpus.normal) set.normal.push_back(encode(s));
  for (const auto& s : corpus.abnormal) {
    if (s.mask.size() == 0 || s.mask.array().maxCoeff() <= 0.0f)
      throw DataError("abnormal sample of type " + std::to_string(s.anomaly_type) + " has an empty mask");
    set.abnormal.push_back(encode(s));
  }
  return set;
}

std::vector<BatchItem<float>> sample_batch(const TrainingSet& data, const TrainConfig& config,
                                           const PromptBank<float>& bank, Rng& rng, long step, long total_steps) {
  int n_abnormal = config.abnormal_count, n_normal = config.normal_count;
  const bool first_half = 2 * step < total_steps;
  switch (config.mixed_strategy) {
    case MixedStrategy::Mixed: break;
    case MixedStrategy::AbnormalNormal:
      n_abnormal = first_half ? config.abnormal_count + config.normal_count : 0;
      n_normal = first_half ? 0 : config.abnormal_count + config.normal_count;
      break;
    case MixedStrategy::NormalAbnormal:
      n_abnormal = first_half ? 0 : config.abnormal_count + config.normal_count;
      n_normal = first_half ? config.abnormal_count + config.normal_count : 0;
      break;
  }

  std::vector<const TrainingSample<float>*> pool;
  if (n_abnormal > 0) {
    if (config.no_mixed) {
      if (data.num_types < 1) throw DataError("no anomaly types in the training set");
      pool = data.abnormal_of_type(1 + static_cast<int>(step % data.num_types));
    } else {
      for (const auto& s : data.abnormal) pool.push_back(&s);
    }
    if (pool.empty()) throw DataError("abnormal partition is empty");
  }
  if (n_normal > 0 && data.normal.empty()) throw DataError("normal partition is empty");

  std::vector<BatchItem<float>> batch;
  for (int i = 0; i < n_abnormal; ++i) {
    const auto* s = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
    batch.push_back({*s, bank.build_prompt(s->anomaly_type)});
  }
  const UAPrompt normal_prompt = bank.build_normal_prompt();
  for (int i = 0; i < n_normal; ++i) {
    const auto& s = data.normal[std::uniform_int_distribution<std::size_t>(0, data.normal.size() - 1)(rng)];
    batch.push_back({s, normal_prompt});
  }
  return batch;
}

namespace {

double binary_iou(const Eigen::Array<bool, Eigen::Dynamic, 1>& a, const Tensor<float>& m) {
  long inter = 0, uni = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const bool b = m[i] > 0.5f;
    inter += (a[i] && b);
    uni += (a[i] || b);
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
}

}  // namespace

AlignmentScore alignment_iou(const Generator& generator, const TrainingSet& data, const std::vector<int>& layers,
                             std::uint64_t seed) {
  ad::NoGradGuard no_grad;
  if (data.abnormal.empty()) throw DataError("alignment IoU needs abnormal samples");
  const int T = generator.schedule.num_train_steps();
  const std::vector<int> levels{T / 10, 3 * T / 10, T / 2};
  Rng rng(seed);
  AlignmentScore score;
  long count = 0;
  for (const auto& sample : data.abnormal) {
    const UAPrompt prompt = generator.bank.build_prompt(sample.anomaly_type);
    std::vector<Var<float>> noisy;
    for (int t : levels) {
      Tensor<float> eps = Tensor<float>::randn(sample.latent.shape(), rng);
      noisy.push_back(Var<float>::constant(forward_diffuse(sample.latent, t, eps, generator.schedule)));
    }
    std::vector<UAPrompt> prompts(levels.size(), prompt);
    const auto out = generator.unet.forward(ad::stack(noisy), levels, generator.bank.embed_batch(prompts));
    std::map<int, int> res;
    for (int l : layers) res[l] = out.attention.resolutions.at(l);
    const LayerMask<float> masks = downsample_mask(sample.mask, res);
    const int n_tokens = static_cast<int>(prompt.anomaly_columns.size());
    for (std::size_t b = 0; b < levels.size(); ++b) {
      for (int l : layers) {
        const Var<float> mean = ad::mean_rows(ad::token_columns(out.attention.maps.at(l), static_cast<int>(b), prompt.anomaly_columns));
        const auto& m = masks.masks.at(l);
        score.iou += binary_iou(mean.value().array() > 0.5f, m);
        score.mass_iou += binary_iou(mean.value().array() * static_cast<float>(n_tokens) > 0.5f, m);
        ++count;
      }
    }
  }
  score.iou /= count;
  score.mass_iou /= count;
  return score;
}

TrainResult train_generator(Generator& generator, const TrainingSet& data, const TrainConfig& config, const LogSink& log,
                            bool measure_alignment) {
  config.validate();
  if (data.num_types != generator.config.prompt.num_types)
    throw ConfigError("training set has " + std::to_string(data.num_types) + " anomaly types, prompts expect " +
                      std::to_string(generator.config.prompt.num_types));
  const LossConfig loss_config = config.loss_config();
  const long total = config.total_steps(data.num_types);

  std::vector<Var<float>> unet_params;
  for (auto& p : generator.unet.parameters()) unet_params.push_back(p.var);
  std::vector<ParamGroup<float>> groups{{unet_params, config.lr_unet, config.weight_decay}};
  if (generator.bank.table().added().defined())
    groups.push_back({{generator.bank.table().added()}, config.lr_embeddings, config.weight_decay});
  AdamW<float> opt(std::move(groups));

  TrainResult result;
  if (measure_alignment) result.alignment_before = alignment_iou(generator, data, config.alignment_layers);
  Rng rng(config.seed);
  for (long step = 0; step < total; ++step) {
    const auto batch = sample_batch(data, config, generator.bank, rng, step, total);
    LossResult<float> loss = seas_loss(generator.unet, generator.bank, batch, generator.schedule, rng, loss_config);
    const LossBreakdown& br = loss.breakdown;
    const std::pair<const char*, double> terms[] = {{"da_term1", br.da_term1},         {"da_term2", br.da_term2},
                                                    {"diffusion_df", br.diffusion_df}, {"diffusion_ob", br.diffusion_ob},
                                                    {"at_term", br.at_term},           {"total", br.total}};
    for (const auto& [name, value] : terms)
      if (!std::isfinite(value))
        throw DivergenceError("non-finite " + std::string(name) + " at step " + std::to_string(step));
    opt.zero_grad();
    loss.total.backward();
    opt.step();
    result.log.push_back(br);
    if (log) log(br.log_line(step));
  }
  if (measure_alignment) result.alignment_after = alignment_iou(generator, data, config.alignment_layers);
  return result;
}

}  // namespace seas
