#include "seas/pipeline.hpp"

#include <cmath>

#include "seas/checkpoint.hpp"
#include "seas/image_io.hpp"

namespace seas {

using nlohmann::json;

PipelineConfig PipelineConfig::full_toy() { return {}; }

PipelineConfig PipelineConfig::smoke() {
  PipelineConfig c;
  c.train.steps_per_anomaly_type = 100;
  c.rmp_train.steps_per_anomaly_type = 100;
  c.generate.count = 4;
  return c;
}

PipelineConfig PipelineConfig::tiny() {
  PipelineConfig c;
  c.counts = {4, 2};
  c.vae_train.steps = 10;
  c.vae_train.extra_samples = 0;
  c.vae_train.batch = 4;
  c.train.steps_per_anomaly_type = 3;
  c.rmp_train.steps_per_anomaly_type = 3;
  c.generate.count = 2;
  c.generate.sampler_steps = 5;
  return c;
}

void PipelineConfig::resolve() {
  spec.validate();
  vae.image_size = spec.image_size;
  vae_train.seed = stage_seed(1);
  train.seed = stage_seed(2);
  rmp_train.seed = stage_seed(3);
  generate.seed = stage_seed(4);
  train.validate();
  if (counts.normal < 1 || counts.abnormal_per_type < 1) throw ConfigError("corpus counts must be at least 1");
  if (vae_train.steps < 1 || vae_train.batch < 1) throw ConfigError("VAE training needs positive steps and batch");
  if (rmp_train.steps_per_anomaly_type < 1) throw ConfigError("RMP training needs at least one step");
  rmp.bind(make_generator_config(train, spec.num_types()).unet, vae);
  rmp.validate();
  generate.validate(spec.num_types());
}

namespace {

json train_to_json(const TrainConfig& c) {
  return {{"steps_per_anomaly_type", c.steps_per_anomaly_type},
          {"abnormal_count", c.abnormal_count},
          {"normal_count", c.normal_count},
          {"lr_unet", c.lr_unet},
          {"lr_embeddings", c.lr_embeddings},
          {"weight_decay", c.weight_decay},
          {"with_tp", c.with_tp},
          {"no_mixed", c.no_mixed},
          {"no_na", c.no_na},
          {"no_st", c.no_st},
          {"at_variant", c.at_variant},
          {"n_anomaly_tokens", c.n_anomaly_tokens},
          {"n_normal_tokens", c.n_normal_tokens},
          {"alignment_layers", c.alignment_layers},
          {"mixed_strategy", to_string(c.mixed_strategy)}};
}

void train_from_json(const json& j, TrainConfig& c) {
  c.steps_per_anomaly_type = j.value("steps_per_anomaly_type", c.steps_per_anomaly_type);
  c.abnormal_count = j.value("abnormal_count", c.abnormal_count);
  c.normal_count = j.value("normal_count", c.normal_count);
  c.lr_unet = j.value("lr_unet", c.lr_unet);
  c.lr_embeddings = j.value("lr_embeddings", c.lr_embeddings);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.with_tp = j.value("with_tp", c.with_tp);
  c.no_mixed = j.value("no_mixed", c.no_mixed);
  c.no_na = j.value("no_na", c.no_na);
  c.no_st = j.value("no_st", c.no_st);
  c.at_variant = j.value("at_variant", c.at_variant);
  c.n_anomaly_tokens = j.value("n_anomaly_tokens", c.n_anomaly_tokens);
  c.n_normal_tokens = j.value("n_normal_tokens", c.n_normal_tokens);
  c.alignment_layers = j.value("alignment_layers", c.alignment_layers);
  if (j.contains("mixed_strategy")) c.mixed_strategy = mixed_strategy_from_string(j.at("mixed_strategy").get<std::string>());
}

json rmp_to_json(const RMPConfig& c, const RMPTrainConfig& t) {
  return {{"unet_stages", c.unet_stages},
          {"compressed_channels", c.compressed_channels},
          {"transformer_layers", c.transformer_layers},
          {"heads", c.heads},
          {"variant", to_string(c.variant)},
          {"vae_source", to_string(c.vae_source)},
          {"steps_per_anomaly_type", t.steps_per_anomaly_type},
          {"abnormal_count", t.abnormal_count},
          {"normal_count", t.normal_count},
          {"lr", t.lr},
          {"weight_decay", t.weight_decay},
          {"focal_gamma", t.focal_gamma},
          {"focal_alpha", t.focal_alpha},
          {"normal_supervision", t.normal_supervision},
          {"noise_steps", t.noise_steps}};
}

void rmp_from_json(const json& j, RMPConfig& c, RMPTrainConfig& t) {
  c.unet_stages = j.value("unet_stages", c.unet_stages);
  c.compressed_channels = j.value("compressed_channels", c.compressed_channels);
  c.transformer_layers = j.value("transformer_layers", c.transformer_layers);
  c.heads = j.value("heads", c.heads);
  if (j.contains("variant")) c.variant = mrm_variant_from_string(j.at("variant").get<std::string>());
  if (j.contains("vae_source")) c.vae_source = feature_source_from_string(j.at("vae_source").get<std::string>());
  t.steps_per_anomaly_type = j.value("steps_per_anomaly_type", t.steps_per_anomaly_type);
  t.abnormal_count = j.value("abnormal_count", t.abnormal_count);
  t.normal_count = j.value("normal_count", t.normal_count);
  t.lr = j.value("lr", t.lr);
  t.weight_decay = j.value("weight_decay", t.weight_decay);
  t.focal_gamma = j.value("focal_gamma", t.focal_gamma);
  t.focal_alpha = j.value("focal_alpha", t.focal_alpha);
  t.normal_supervision = j.value("normal_supervision", t.normal_supervision);
  t.noise_steps = j.value("noise_steps", t.noise_steps);
}

json generate_to_json(const GenerationRequest& r) {
  return {{"mode", r.mode == GenerationMode::Abnormal ? "abnormal" : "normal"},
          {"anomaly_type", r.anomaly_type},
          {"count", r.count},
          {"noise_strength", r.noise_strength},
          {"sampler_steps", r.sampler_steps},
          {"mask_threshold", r.mask_threshold},
          {"mask_average_steps", r.mask_average_steps},
          {"batch_size", r.batch_size},
          {"latent_clip", r.latent_clip}};
}

void generate_from_json(const json& j, GenerationRequest& r) {
  if (j.contains("mode")) {
    const auto mode = j.at("mode").get<std::string>();
    if (mode == "abnormal") r.mode = GenerationMode::Abnormal;
    else if (mode == "normal") r.mode = GenerationMode::Normal;
    else throw ConfigError("unknown generation mode '" + mode + "'");
  }
  r.anomaly_type = j.value("anomaly_type", r.anomaly_type);
  r.count = j.value("count", r.count);
  r.noise_strength = j.value("noise_strength", r.noise_strength);
  r.sampler_steps = j.value("sampler_steps", r.sampler_steps);
  r.mask_threshold = j.value("mask_threshold", r.mask_threshold);
  r.mask_average_steps = j.value("mask_average_steps", r.mask_average_steps);
  r.batch_size = j.value("batch_size", r.batch_size);
  r.latent_clip = j.value("latent_clip", r.latent_clip);
}

}  // namespace

void to_json(json& j, const PipelineConfig& c) {
  j = json{{"seed", c.seed},
           {"corpus", {{"spec", c.spec}, {"normal", c.counts.normal}, {"abnormal_per_type", c.counts.abnormal_per_type}}},
           {"vae",
            {{"latent_channels", c.vae.latent_channels},
             {"widths", c.vae.widths},
             {"groups", c.vae.groups},
             {"steps", c.vae_train.steps},
             {"batch", c.vae_train.batch},
             {"lr", c.vae_train.lr},
             {"kl_weight", c.vae_train.kl_weight},
             {"extra_samples", c.vae_train.extra_samples}}},
           {"train", train_to_json(c.train)},
           {"rmp", rmp_to_json(c.rmp, c.rmp_train)},
           {"generate", generate_to_json(c.generate)}};
}

void from_json(const json& j, PipelineConfig& c) {
  try {
    static const std::vector<std::string> sections{"seed", "corpus", "vae", "train", "rmp", "generate"};
    for (const auto& [key, value] : j.items())
      if (std::find(sections.begin(), sections.end(), key) == sections.end())
        throw ConfigError("unknown config section '" + key + "'");
    c.seed = j.value("seed", c.seed);
    if (j.contains("corpus")) {
      const auto& s = j.at("corpus");
      if (s.contains("spec")) s.at("spec").get_to(c.spec);
      c.counts.normal = s.value("normal", c.counts.normal);
      c.counts.abnormal_per_type = s.value("abnormal_per_type", c.counts.abnormal_per_type);
    }
    if (j.contains("vae")) {
      const auto& s = j.at("vae");
      c.vae.latent_channels = s.value("latent_channels", c.vae.latent_channels);
      c.vae.widths = s.value("widths", c.vae.widths);
      c.vae.groups = s.value("groups", c.vae.groups);
      c.vae_train.steps = s.value("steps", c.vae_train.steps);
      c.vae_train.batch = s.value("batch", c.vae_train.batch);
      c.vae_train.lr = s.value("lr", c.vae_train.lr);
      c.vae_train.kl_weight = s.value("kl_weight", c.vae_train.kl_weight);
      c.vae_train.extra_samples = s.value("extra_samples", c.vae_train.extra_samples);
    }
    if (j.contains("train")) train_from_json(j.at("train"), c.train);
    if (j.contains("rmp")) rmp_from_json(j.at("rmp"), c.rmp, c.rmp_train);
    if (j.contains("generate")) generate_from_json(j.at("generate"), c.generate);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config schema violation: ") + e.what());
  }
}

std::string config_hash(const PipelineConfig& config) { return sha256_hex(json(config).dump()); }

void apply_override(json& document, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  std::string pointer = "/" + assignment.substr(0, eq);
  for (auto& ch : pointer)
    if (ch == '.') ch = '/';
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;  // bare strings need no quotes
  }
  document[json::json_pointer(pointer)] = value;
}

// ---------------------------------------------------------------------------

const std::vector<AblationArm>& ablation_arms() {
  static const std::vector<AblationArm> arms = [] {
    std::vector<AblationArm> a{
        {"with_tp", "prompt with the words 'product' and 'defect' instead of learnable tokens", true},
        {"no_mixed", "each batch holds a single anomaly type", true},
        {"no_na", "normal-image alignment loss disabled", true},
        {"no_st", "second DA term disabled", true},
        {"at_variant", "second DA term replaced by background alignment of the normal token", true},
    };
    for (int n : {1, 4, 8}) a.push_back({"tokens_n" + std::to_string(n), "anomaly tokens per type N=" + std::to_string(n), true});
    for (int n : {1, 4}) a.push_back({"tokens_np" + std::to_string(n), "normal tokens N'=" + std::to_string(n), true});
    a.push_back({"layers_123", "alignment on attention layers 1,2,3", true});
    a.push_back({"layers_234", "alignment on attention layers 2,3,4", true});
    a.push_back({"layers_23", "alignment on attention layers 2,3", true});
    a.push_back({"features_123", "coarse features from decoder stages 1,2,3", false});
    a.push_back({"features_234", "coarse features from decoder stages 2,3,4", false});
    a.push_back({"features_23", "coarse features from decoder stages 2,3", false});
    a.push_back({"vae_encoder", "MRM gates use VAE encoder features", false});
    a.push_back({"vae_decoder", "MRM gates use VAE decoder features", false});
    a.push_back({"mrm_a", "MRM variant a (1x1 convolution only)", false});
    a.push_back({"mrm_b", "MRM variant b (one conv block)", false});
    a.push_back({"mrm_c", "MRM variant c (two conv blocks)", false});
    for (const char* tau : {"0.1", "0.2", "0.3", "0.4", "0.5"})
      a.push_back({std::string("tau_") + tau, std::string("mask threshold ") + tau, false});
    a.push_back({"mixed", "abnormal and normal samples in every batch", true});
    a.push_back({"abnormal_normal", "abnormal-only batches, then normal-only batches", true});
    a.push_back({"normal_abnormal", "normal-only batches, then abnormal-only batches", true});
    return a;
  }();
  return arms;
}

PipelineConfig apply_arm(const PipelineConfig& base, const std::string& arm) {
  PipelineConfig c = base;
  auto& t = c.train;
  if (arm == "with_tp") t.with_tp = true;
  else if (arm == "no_mixed") t.no_mixed = true;
  else if (arm == "no_na") t.no_na = true;
  else if (arm == "no_st") t.no_st = true;
  else if (arm == "at_variant") t.at_variant = t.no_st = true;
  else if (arm.rfind("tokens_np", 0) == 0) t.n_normal_tokens = std::stoi(arm.substr(9));
  else if (arm.rfind("tokens_n", 0) == 0) t.n_anomaly_tokens = std::stoi(arm.substr(8));
  else if (arm == "layers_123") t.alignment_layers = {1, 2, 3};
  else if (arm == "layers_234") t.alignment_layers = {2, 3, 4};
  else if (arm == "layers_23") t.alignment_layers = {2, 3};
  else if (arm == "features_123") c.rmp.unet_stages = {1, 2, 3};
  else if (arm == "features_234") c.rmp.unet_stages = {2, 3, 4};
  else if (arm == "features_23") c.rmp.unet_stages = {2, 3};
  else if (arm == "vae_encoder") c.rmp.vae_source = FeatureSource::VAEEncoder;
  else if (arm == "vae_decoder") c.rmp.vae_source = FeatureSource::VAEDecoder;
  else if (arm == "mrm_a") c.rmp.variant = MRMVariant::A;
  else if (arm == "mrm_b") c.rmp.variant = MRMVariant::B;
  else if (arm == "mrm_c") c.rmp.variant = MRMVariant::C;
  else if (arm.rfind("tau_", 0) == 0) c.generate.mask_threshold = std::stod(arm.substr(4));
  else if (arm == "mixed") t.mixed_strategy = MixedStrategy::Mixed;
  else if (arm == "abnormal_normal") t.mixed_strategy = MixedStrategy::AbnormalNormal;
  else if (arm == "normal_abnormal") t.mixed_strategy = MixedStrategy::NormalAbnormal;
  else throw LookupError("unknown ablation arm '" + arm + "'");
  const auto& arms = ablation_arms();
  if (std::none_of(arms.begin(), arms.end(), [&](const AblationArm& a) { return a.name == arm; }))
    throw LookupError("unknown ablation arm '" + arm + "'");
  return c;
}

json AblationResult::to_json() const {
  return {{"arm", arm},
          {"finite", finite},
          {"generator_losses", generator_losses},
          {"rmp_losses", rmp_losses},
          {"nonempty_mask_fraction", nonempty_mask_fraction}};
}

Generator train_frozen_generator(const PipelineConfig& config, const TrainingSet& data, const LogSink& log,
                                 TrainResult* result) {
  GeneratorConfig gc = make_generator_config(config.train, config.spec.num_types());
  gc.unet.latent_channels = config.vae.latent_channels;
  gc.unet.latent_size = config.vae.latent_size();
  Generator gen(gc, config.stage_seed(5));
  TrainResult r = train_generator(gen, data, config.train, log, result != nullptr);
  if (result) *result = std::move(r);
  freeze(gen);
  return gen;
}

SharedGenerator train_shared_generator(const PipelineConfig& config, const TrainingSet& data, const LogSink& log) {
  TrainResult tr;
  SharedGenerator out{train_frozen_generator(config, data, log, &tr), {}};
  for (const auto& b : tr.log) out.losses.push_back(b.total);
  return out;
}

RMP<float> train_bound_rmp(const PipelineConfig& config, const Generator& generator, const VAE<float>& vae,
                           const TrainingSet& data, const LogSink& log, RMPTrainResult* result) {
  RMPConfig rc = config.rmp;
  rc.bind(generator.config.unet, vae.config());
  rc.validate();
  Rng rng(config.stage_seed(6));
  RMP<float> rmp(rc, rng);
  RMPTrainResult r = train_rmp(rmp, generator, vae, data, config.rmp_train, log);
  if (result) *result = std::move(r);
  return rmp;
}

AblationResult run_ablation_arm(const std::string& arm, const PipelineConfig& base, const Corpus& corpus,
                                const VAE<float>& vae, const SharedGenerator* shared, const LogSink& log) {
  PipelineConfig config = apply_arm(base, arm);
  config.resolve();
  const auto& arms = ablation_arms();
  const bool changes_generator =
      std::find_if(arms.begin(), arms.end(), [&](const AblationArm& a) { return a.name == arm; })->changes_generator;

  AblationResult out;
  out.arm = arm;
  const TrainingSet data = encode_corpus(corpus, vae);
  std::optional<SharedGenerator> own;
  if (changes_generator || !shared) {
    own.emplace(train_shared_generator(config, data, log));
    shared = &*own;
  }
  out.generator_losses = shared->losses;
  const Generator& gen = shared->generator;
  RMPTrainResult rr;
  const RMP<float> rmp = train_bound_rmp(config, gen, vae, data, log, &rr);
  out.rmp_losses = rr.losses;

  GenerationRequest request = config.generate;
  request.mode = GenerationMode::Abnormal;
  request.anomaly_type = 1;
  std::vector<Tensor<float>> pool;
  for (const auto& s : corpus.normal) pool.push_back(s.image);
  const auto samples = generate(request, {&gen, &vae, &rmp, generator_fingerprint(gen)}, pool);
  int nonempty = 0;
  for (const auto& s : samples) {
    nonempty += s.mask.array().sum() > 0;
    out.finite = out.finite && s.image.all_finite() && s.scores.all_finite();
  }
  out.nonempty_mask_fraction = samples.empty() ? 0.0 : static_cast<double>(nonempty) / samples.size();
  for (double v : out.generator_losses) out.finite = out.finite && std::isfinite(v);
  for (double v : out.rmp_losses) out.finite = out.finite && std::isfinite(v);
  return out;
}

}  // namespace seas
