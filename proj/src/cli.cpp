#include "seas/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "seas/checkpoint.hpp"
#include "seas/image_io.hpp"

namespace seas {

namespace fs = std::filesystem;
using nlohmann::json;

std::string digest_path(const fs::path& path) {
  if (fs::is_regular_file(path)) return sha256_file(path);
  if (!fs::is_directory(path)) throw IoError(path.string() + ": no such file or directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(path))
    if (entry.is_regular_file()) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::string listing;
  for (const auto& f : files) listing += fs::relative(f, path).generic_string() + " " + sha256_file(f) + "\n";
  return sha256_hex(listing);
}

namespace {

struct GeneratedRecord {
  Tensor<float> image;
  Tensor<float> mask;
  int anomaly_type = 0;
};

std::vector<GeneratedRecord> read_generated(const fs::path& dir) {
  const fs::path manifest = dir / "manifest.jsonl";
  std::ifstream in(manifest);
  if (!in) throw MissingArtifactError(manifest.string() + " not found");
  std::vector<GeneratedRecord> out;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(manifest.string() + ":" + std::to_string(number) + ": " + e.what());
    }
    GeneratedRecord r;
    r.anomaly_type = record.value("anomaly_type", 0);
    r.image = read_png_rgb(dir / record.at("image").get<std::string>());
    if (!record["mask"].is_null()) r.mask = read_png_mask(dir / record.at("mask").get<std::string>());
    out.push_back(std::move(r));
  }
  return out;
}

metrics::Matrix embeddings(const std::vector<const Tensor<float>*>& images, const metrics::ToyFeatureNet& net) {
  metrics::Matrix out;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Eigen::VectorXd e = net.embedding(*images[i]);
    if (i == 0) out.resize(static_cast<Eigen::Index>(images.size()), e.size());
    out.row(static_cast<Eigen::Index>(i)) = e.transpose();
  }
  return out;
}

}  // namespace

std::vector<EvaluationRow> evaluate_directories(const fs::path& generated, const Corpus& reference,
                                                const metrics::ToyFeatureNet& net, const GenerationModels* models,
                                                double tau, std::vector<std::string>* warnings) {
  const auto records = read_generated(generated);
  const metrics::Distance distance = [&](const Tensor<float>& a, const Tensor<float>& b) {
    return net.perceptual_distance(a, b);
  };
  std::map<int, std::vector<const GeneratedRecord*>> subsets;
  for (const auto& r : records) subsets[r.anomaly_type].push_back(&r);

  std::vector<EvaluationRow> rows;
  for (const auto& [type, members] : subsets) {
    EvaluationRow row;
    row.category = reference.spec.texture;
    row.subset = type == 0 ? "normal" : "type_" + std::to_string(type);
    row.count = static_cast<int>(members.size());

    std::vector<const Tensor<float>*> gen_images;
    for (const auto* m : members) gen_images.push_back(&m->image);
    std::vector<const AnomalySample*> refs;
    if (type == 0) {
      for (const auto& s : reference.normal) refs.push_back(&s);
    } else {
      refs = reference.abnormal_of_type(type);
    }

    metrics::Matrix probs(static_cast<Eigen::Index>(members.size()), metrics::ToyFeatureNet::kClasses);
    for (std::size_t i = 0; i < members.size(); ++i)
      probs.row(static_cast<Eigen::Index>(i)) = net.class_probabilities(*gen_images[i]).transpose();
    row.is = metrics::inception_score(probs);

    if (!refs.empty()) {
      std::vector<Tensor<float>> anchors, images;
      for (const auto* r : refs) anchors.push_back(r->image);
      for (const auto* g : gen_images) images.push_back(*g);
      const auto assignment = metrics::cluster_by_nearest(images, anchors, distance);
      std::vector<std::vector<Tensor<float>>> clusters, masks;
      for (const auto& idx : assignment) {
        clusters.emplace_back();
        masks.emplace_back();
        for (int i : idx) {
          clusters.back().push_back(images[static_cast<std::size_t>(i)]);
          masks.back().push_back(members[static_cast<std::size_t>(i)]->mask);
        }
      }
      const auto plain = metrics::ic_lpips(clusters, distance);
      if (plain.scored_clusters > 0) row.ic_lpips = plain.value;
      if (warnings)
        for (const auto& w : plain.warnings) warnings->push_back(row.subset + ": " + w);
      if (type != 0) {
        const auto masked = metrics::ic_lpips_masked(clusters, masks, distance);
        if (masked.scored_clusters > 0) row.ic_lpips_a = masked.value;
        if (warnings)
          for (const auto& w : masked.warnings) warnings->push_back(row.subset + " (masked): " + w);
      }
      std::vector<const Tensor<float>*> ref_images;
      for (const auto* r : refs) ref_images.push_back(&r->image);
      if (gen_images.size() >= 2 && ref_images.size() >= 2)
        row.kid = metrics::kid(embeddings(gen_images, net), embeddings(ref_images, net));
    }

    if (type != 0 && models && models->rmp && !refs.empty()) {
      std::vector<Tensor<float>> images;
      std::vector<const Tensor<float>*> truths;
      for (const auto* r : refs) {
        images.push_back(r->image);
        truths.push_back(&r->mask);
      }
      for (const auto& s : reference.normal) {
        images.push_back(s.image);
        truths.push_back(&s.mask);
      }
      RMPTrainConfig defaults;
      const int t = defaults.resolved_noise_steps(models->generator->schedule).back();
      const auto scores = segment_images(*models, images, type, t, 7);
      std::vector<double> flat;
      std::vector<int> labels;
      double iou_sum = 0;
      for (std::size_t i = 0; i < scores.size(); ++i) {
        for (Eigen::Index p = 0; p < scores[i].size(); ++p) {
          flat.push_back(scores[i][p]);
          labels.push_back((*truths[i])[p] > 0.5f);
        }
        if (i < refs.size()) iou_sum += metrics::iou(binarize(scores[i], tau), *truths[i]);
      }
      row.auroc = metrics::auroc(flat, labels);
      row.ap = metrics::average_precision(flat, labels);
      row.f1_max = metrics::f1_max(flat, labels);
      row.iou = iou_sum / static_cast<double>(refs.size());
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string evaluation_csv(const std::vector<EvaluationRow>& rows) {
  std::ostringstream out;
  out << "category,subset,count,IS,IC-LPIPS,KID,IC-LPIPS(a),AUROC,AP,F1-max,IoU\n";
  auto cell = [&](const std::optional<double>& v) {
    out << ',';
    if (v) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.6f", *v);
      out << buf;
    }
  };
  for (const auto& r : rows) {
    out << r.category << ',' << r.subset << ',' << r.count;
    for (const auto& v : {r.is, r.ic_lpips, r.kid, r.ic_lpips_a, r.auroc, r.ap, r.f1_max, r.iou}) cell(v);
    out << '\n';
  }
  return out.str();
}

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

fs::path cache_dir() {
  const char* env = std::getenv("SEAS_CACHE_DIR");
  return env && *env ? fs::path(env) : fs::path("seas_cache");
}

struct Paths {
  fs::path cache;
  fs::path corpus() const { return cache / "corpus"; }
  fs::path vae() const { return cache / "vae.ckpt"; }
  fs::path unet() const { return cache / "unet.ckpt"; }
  fs::path tokens() const { return cache / "tokens.ckpt"; }
  fs::path rmp() const { return cache / "rmp.ckpt"; }
  fs::path runs() const { return cache / "runs.jsonl"; }
};

void require(const fs::path& path, const std::string& producer) {
  if (!fs::exists(path)) throw MissingArtifactError(path.string() + " not found; run `" + producer + "` first");
}

struct Loaded {
  std::optional<VAE<float>> vae;
  std::optional<Generator> generator;
  std::optional<RMP<float>> rmp;
  std::string rmp_generator_fp;
  json fingerprints = json::object();
};

void load_vae(const Paths& p, Loaded& l) {
  require(p.vae(), "pretrain-vae");
  const Archive a = load_archive(p.vae(), "vae");
  l.vae.emplace(vae_from_archive(a));
  l.fingerprints["vae"] = fingerprint(a);
}

void load_generator(const Paths& p, Loaded& l) {
  require(p.unet(), "train-gen");
  require(p.tokens(), "train-gen");
  l.generator.emplace(generator_from_archives(load_archive(p.unet(), "unet"), load_archive(p.tokens(), "tokens")));
  freeze(*l.generator);
  l.fingerprints["generator"] = generator_fingerprint(*l.generator);
}

void load_rmp(const Paths& p, Loaded& l) {
  require(p.rmp(), "train-rmp");
  const Archive a = load_archive(p.rmp(), "rmp");
  l.rmp.emplace(rmp_from_archive(a));
  l.rmp_generator_fp = a.meta.at("generator_fingerprint").get<std::string>();
  l.fingerprints["rmp"] = fingerprint(a);
  if (l.generator && l.rmp_generator_fp != generator_fingerprint(*l.generator))
    throw CompatibilityError(p.rmp().string() + " was trained against a different generator");
}

void check_vae_matches(const Corpus& corpus, const VAE<float>& vae) {
  if (vae.config().image_size != corpus.spec.image_size)
    throw CompatibilityError("the VAE image size differs from the corpus image size");
}

/// Appends one run record; the content hash leaves out timestamps so reruns can be compared.
void append_manifest(const Paths& p, const std::string& command, const PipelineConfig& config, const json& fingerprints,
                     const std::vector<fs::path>& outputs, const std::string& started, const json& extra) {
  json digests = json::object();
  for (const auto& o : outputs) digests[o.filename().string()] = digest_path(o);
  json content{{"command", command},
               {"config_hash", config_hash(config)},
               {"seed", config.seed},
               {"fingerprints", fingerprints},
               {"output_digests", digests},
               {"extra", extra}};
  json record = content;
  record["content_hash"] = sha256_hex(content.dump());
  record["config"] = config;
  json paths = json::array();
  for (const auto& o : outputs) paths.push_back(o.string());
  record["outputs"] = paths;
  record["started"] = started;
  record["finished"] = utc_now();
  fs::create_directories(p.cache);
  std::ofstream out(p.runs(), std::ios::app);
  if (!out) throw IoError("cannot append to " + p.runs().string());
  out << record.dump() << "\n";
}

PipelineConfig preset(const std::string& name) {
  if (name == "full_toy") return PipelineConfig::full_toy();
  if (name == "smoke") return PipelineConfig::smoke();
  if (name == "tiny") return PipelineConfig::tiny();
  throw ConfigError("unknown preset '" + name + "'");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Anomaly image-mask pair generation on a toy latent diffusion backbone", "seas"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_path, preset_name, arm, mode, generated_dir, reference_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> anomaly_type, count;
  std::optional<double> tau;
  std::vector<std::string> overrides;
  bool force = false;
  app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--preset", preset_name, "Base preset: full_toy, smoke or tiny");
  app.add_option("--seed", seed, "Master seed");
  app.add_option("--out", out_path, "Output path");
  app.add_option("--set", overrides, "Override a config value, e.g. train.no_st=true");
  app.add_flag("--force", force, "Overwrite existing outputs");

  app.add_subcommand("gen-data", "Render the synthetic corpus");
  app.add_subcommand("pretrain-vae", "Train the VAE on the corpus");
  app.add_subcommand("train-gen", "Fine-tune U-Net and prompt tokens");
  app.add_subcommand("train-rmp", "Train the mask predictor against the frozen generator");
  auto* generate_cmd = app.add_subcommand("generate", "Generate image-mask pairs or normal images");
  generate_cmd->add_option("--mode", mode, "abnormal or normal")->check(CLI::IsMember({"abnormal", "normal"}));
  generate_cmd->add_option("--type", anomaly_type, "Anomaly type (abnormal mode)");
  generate_cmd->add_option("--count", count, "Number of samples");
  generate_cmd->add_option("--tau", tau, "Mask threshold");
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score a generated directory against a reference corpus");
  evaluate_cmd->add_option("--generated", generated_dir, "Generated directory")->required();
  evaluate_cmd->add_option("--reference", reference_dir, "Reference corpus directory (default: cached corpus)");
  evaluate_cmd->add_option("--tau", tau, "Mask threshold");
  auto* ablate = app.add_subcommand("ablate", "Run an ablation arm at the smoke preset");
  ablate->add_option("--arm", arm, "Arm name, or 'all'")->required();
  app.add_subcommand("arms", "List ablation arms");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "error: usage_error: " << e.what() << "\n";
    return 2;
  }

  const auto* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  const Paths paths{cache_dir()};
  const std::string started = utc_now();
  const LogSink log = [&](const std::string& line) { out << line << "\n" << std::flush; };

  try {
    if (command == "arms") {
      for (const auto& a : ablation_arms()) out << a.name << "\t" << a.description << "\n";
      return 0;
    }
    json document = preset(preset_name.empty() ? (command == "ablate" ? "smoke" : "full_toy") : preset_name);
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      try {
        document.merge_patch(json::parse(in));
      } catch (const json::exception& e) {
        throw ParseError(config_path + ": " + e.what());
      }
    }
    for (const auto& o : overrides) apply_override(document, o);
    if (seed) document["seed"] = *seed;
    PipelineConfig config = document.get<PipelineConfig>();
    if (!mode.empty()) config.generate.mode = mode == "normal" ? GenerationMode::Normal : GenerationMode::Abnormal;
    if (anomaly_type) config.generate.anomaly_type = *anomaly_type;
    if (count) config.generate.count = *count;
    if (tau) config.generate.mask_threshold = *tau;
    config.resolve();

    Loaded loaded;
    std::vector<fs::path> outputs;
    json extra = json::object();

    if (command == "gen-data") {
      const fs::path dir = out_path.empty() ? paths.corpus() : fs::path(out_path);
      const Corpus corpus = make_corpus(config.spec, config.counts, config.seed);
      write_corpus(corpus, dir, force);
      const auto report = consistency_check(corpus);
      extra = {{"normal_correlation", report.normal_correlation}, {"defect_correlation", report.defect_correlation}};
      out << "wrote " << corpus.normal.size() + corpus.abnormal.size() << " images to " << dir.string()
          << " (normal correlation " << report.normal_correlation << ", defect correlation "
          << report.defect_correlation << ")\n";
      outputs.push_back(dir);
    } else if (command == "pretrain-vae") {
      require(paths.corpus() / "manifest.jsonl", "gen-data");
      const fs::path target = out_path.empty() ? paths.vae() : fs::path(out_path);
      if (fs::exists(target) && !force) throw IoError(target.string() + " already exists; pass --force to overwrite");
      const Corpus corpus = read_corpus(paths.corpus());
      Rng rng(config.stage_seed(7));
      VAEConfig vc = config.vae;
      vc.image_size = corpus.spec.image_size;
      VAE<float> vae(vc, rng);
      const auto pool = vae_training_pool(corpus, config.vae_train.extra_samples, config.vae_train.seed);
      pretrain_vae(vae, pool, config.vae_train, log);
      std::vector<Tensor<float>> corpus_images;
      for (const auto& s : corpus.normal) corpus_images.push_back(s.image);
      for (const auto& s : corpus.abnormal) corpus_images.push_back(s.image);
      extra["reconstruction_mae"] = reconstruction_mae(vae, corpus_images);
      out << "reconstruction MAE " << extra["reconstruction_mae"].get<double>() << "\n";
      const Archive a = vae_archive(vae);
      save_archive(target, a);
      loaded.fingerprints["vae"] = fingerprint(a);
      outputs.push_back(target);
    } else if (command == "train-gen") {
      require(paths.corpus() / "manifest.jsonl", "gen-data");
      load_vae(paths, loaded);
      if ((fs::exists(paths.unet()) || fs::exists(paths.tokens())) && !force)
        throw IoError(paths.unet().string() + " already exists; pass --force to overwrite");
      const Corpus corpus = read_corpus(paths.corpus());
      check_vae_matches(corpus, *loaded.vae);
      const TrainingSet data = encode_corpus(corpus, *loaded.vae);
      TrainResult result;
      const Generator gen = train_frozen_generator(config, data, log, &result);
      extra = {{"alignment_iou_before", result.alignment_before.iou},
               {"alignment_iou_after", result.alignment_after.iou},
               {"alignment_mass_iou_before", result.alignment_before.mass_iou},
               {"alignment_mass_iou_after", result.alignment_after.mass_iou}};
      out << "alignment IoU " << result.alignment_before.iou << " -> " << result.alignment_after.iou
          << " (summed-attention IoU " << result.alignment_before.mass_iou << " -> " << result.alignment_after.mass_iou
          << ")\n";
      save_archive(paths.unet(), unet_archive(gen));
      save_archive(paths.tokens(), token_archive(gen));
      loaded.fingerprints["generator"] = generator_fingerprint(gen);
      outputs = {paths.unet(), paths.tokens()};
    } else if (command == "train-rmp") {
      require(paths.corpus() / "manifest.jsonl", "gen-data");
      load_vae(paths, loaded);
      load_generator(paths, loaded);
      const fs::path target = out_path.empty() ? paths.rmp() : fs::path(out_path);
      if (fs::exists(target) && !force) throw IoError(target.string() + " already exists; pass --force to overwrite");
      const Corpus corpus = read_corpus(paths.corpus());
      const TrainingSet data = encode_corpus(corpus, *loaded.vae);
      RMPTrainResult result;
      const RMP<float> rmp = train_bound_rmp(config, *loaded.generator, *loaded.vae, data, log, &result);
      extra["final_loss"] = result.losses.empty() ? 0.0 : result.losses.back();
      const Archive a = rmp_archive(rmp, generator_fingerprint(*loaded.generator));
      save_archive(target, a);
      loaded.fingerprints["rmp"] = fingerprint(a);
      outputs.push_back(target);
    } else if (command == "generate") {
      require(paths.corpus() / "manifest.jsonl", "gen-data");
      load_vae(paths, loaded);
      load_generator(paths, loaded);
      const bool abnormal = config.generate.mode == GenerationMode::Abnormal;
      if (abnormal) load_rmp(paths, loaded);
      const Corpus corpus = read_corpus(paths.corpus());
      std::vector<Tensor<float>> pool;
      for (const auto& s : corpus.normal) pool.push_back(s.image);
      const GenerationModels models{&*loaded.generator, &*loaded.vae, loaded.rmp ? &*loaded.rmp : nullptr,
                                    loaded.rmp_generator_fp};
      const auto results = generate(config.generate, models, pool);
      const fs::path dir = out_path.empty() ? paths.cache / "generated" / (abnormal ? "abnormal" : "normal")
                                            : fs::path(out_path);
      ExportInfo info{config.generate.seed,
                      config.generate.mask_threshold,
                      config.generate.noise_strength,
                      loaded.fingerprints["generator"].get<std::string>(),
                      abnormal ? loaded.fingerprints["rmp"].get<std::string>() : "",
                      config_hash(config)};
      export_pairs(results, dir, info, force);
      out << "wrote " << results.size() << (abnormal ? " image-mask pairs" : " normal images") << " to " << dir.string()
          << "\n";
      outputs.push_back(dir);
    } else if (command == "evaluate") {
      const fs::path reference = reference_dir.empty() ? paths.corpus() : fs::path(reference_dir);
      require(reference / "manifest.jsonl", "gen-data");
      const Corpus corpus = read_corpus(reference);
      std::optional<GenerationModels> models;
      if (fs::exists(paths.vae()) && fs::exists(paths.unet()) && fs::exists(paths.rmp())) {
        load_vae(paths, loaded);
        load_generator(paths, loaded);
        load_rmp(paths, loaded);
        models = GenerationModels{&*loaded.generator, &*loaded.vae, &*loaded.rmp, loaded.rmp_generator_fp};
      }
      const metrics::ToyFeatureNet net;
      std::vector<std::string> warnings;
      const auto rows = evaluate_directories(generated_dir, corpus, net, models ? &*models : nullptr,
                                             config.generate.mask_threshold, &warnings);
      for (const auto& w : warnings) err << "warning: " << w << "\n";
      const fs::path target = out_path.empty() ? paths.cache / "report.csv" : fs::path(out_path);
      if (fs::exists(target) && !force) throw IoError(target.string() + " already exists; pass --force to overwrite");
      if (target.has_parent_path()) fs::create_directories(target.parent_path());
      const std::string csv = evaluation_csv(rows);
      std::ofstream file(target);
      file << csv;
      if (!file) throw IoError("cannot write " + target.string());
      out << csv;
      loaded.fingerprints["feature_net"] = net.fingerprint();
      outputs.push_back(target);
    } else if (command == "ablate") {
      require(paths.corpus() / "manifest.jsonl", "gen-data");
      load_vae(paths, loaded);
      const Corpus corpus = read_corpus(paths.corpus());
      std::vector<std::string> names;
      if (arm == "all") {
        for (const auto& a : ablation_arms()) names.push_back(a.name);
      } else {
        names.push_back(arm);
        apply_arm(config, arm);
      }
      const fs::path dir = out_path.empty() ? paths.cache / "ablate" : fs::path(out_path);
      fs::create_directories(dir);
      std::optional<SharedGenerator> shared;
      bool all_finite = true;
      for (const auto& name : names) {
        const fs::path target = dir / (name + ".json");
        if (fs::exists(target) && !force) throw IoError(target.string() + " already exists; pass --force to overwrite");
        const auto& arms = ablation_arms();
        const bool reuses = !std::find_if(arms.begin(), arms.end(), [&](const AblationArm& a) {
                               return a.name == name;
                             })->changes_generator;
        if (reuses && !shared) shared.emplace(train_shared_generator(config, encode_corpus(corpus, *loaded.vae)));
        const AblationResult r = run_ablation_arm(name, config, corpus, *loaded.vae, reuses ? &*shared : nullptr);
        std::ofstream file(target);
        file << r.to_json().dump(2) << "\n";
        if (!file) throw IoError("cannot write " + target.string());
        out << name << ": " << (r.finite ? "finite" : "NON-FINITE") << ", final generator loss "
            << (r.generator_losses.empty() ? std::nan("") : r.generator_losses.back()) << ", final RMP loss "
            << (r.rmp_losses.empty() ? std::nan("") : r.rmp_losses.back()) << ", nonempty masks "
            << r.nonempty_mask_fraction << "\n";
        all_finite = all_finite && r.finite;
        outputs.push_back(target);
      }
      extra["arms"] = names;
      if (!all_finite) throw DivergenceError("an ablation arm produced non-finite values");
    }
    append_manifest(paths, command, config, loaded.fingerprints, outputs, started, extra);
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.kind() << ": " << e.what() << "\n";
  } catch (const std::exception& e) {
    err << "error: internal_error: " << e.what() << "\n";
  }
  return 1;
}

}  // namespace seas
