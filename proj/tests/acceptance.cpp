// Acceptance checks: one PASS/FAIL line per criterion. Pass criterion numbers to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "metric_oracles.hpp"
#include "micro.hpp"
#include "seas/checkpoint.hpp"
#include "seas/cli.hpp"
#include "seas/image_io.hpp"

namespace seas {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using VarD = ad::Var<double>;
using TensorD = Tensor<double>;

// Tolerances.
constexpr double kFiniteDifferenceStep = 1e-5;
constexpr double kGradientRelTol = 1e-4;
constexpr double kRelErrorFloor = 1e-3;  // denominators below this are treated as this
constexpr double kAlignmentZeroTol = 1e-8;
constexpr double kFocalTarget = 1e-6;
constexpr double kNormalizationTol = 1e-5;
constexpr double kFormulaTol = 1e-10;
constexpr int kAttentionTrials = 100;
constexpr int kMetricTrials = 200;
constexpr int kMaxMetricSamples = 64;
constexpr double kIoUGain = 0.2;
constexpr double kNonemptyFraction = 0.9;
constexpr double kTau = 0.2;
constexpr int kGenerations = 100;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// ---------------------------------------------------------------------------
// Shared helpers

/// Max over input elements of |analytic - numeric| / max(|analytic|, |numeric|, floor) for a scalar loss.
double max_relative_error(const std::function<VarD(const std::vector<VarD>&)>& loss, const std::vector<TensorD>& inputs) {
  std::vector<VarD> vars;
  for (const auto& t : inputs) vars.push_back(VarD::parameter(t));
  loss(vars).backward();
  double worst = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto analytic = vars[k].grad();
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      auto probe = [&](double delta) {
        std::vector<VarD> shifted;
        for (std::size_t j = 0; j < inputs.size(); ++j) {
          TensorD t = inputs[j];
          if (j == k) t[i] += delta;
          shifted.push_back(VarD::constant(t));
        }
        return loss(shifted).item();
      };
      const double numeric = (probe(kFiniteDifferenceStep) - probe(-kFiniteDifferenceStep)) / (2 * kFiniteDifferenceStep);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), kRelErrorFloor});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
  }
  return worst;
}

struct MicroModel {
  explicit MicroModel(std::uint64_t seed)
      : rng(seed), unet(testing::micro_unet_config(), rng), bank(testing::micro_prompt_config(), rng),
        schedule(NoiseSchedule::cosine(100)) {
    Rng data(seed + 1);
    abnormal = testing::micro_sample<double>(1, data);
    normal = testing::micro_sample<double>(0, data);
  }
  Rng rng;
  UNet<double> unet;
  PromptBank<double> bank;
  NoiseSchedule schedule;
  TrainingSample<double> abnormal, normal;
};

/// Runs the CLI against a cache directory; throws with the captured error on a non-zero exit.
std::string cli(const fs::path& cache, const std::vector<std::string>& args) {
  setenv("SEAS_CACHE_DIR", cache.c_str(), 1);
  std::ostringstream out, err;
  const auto start = std::chrono::steady_clock::now();
  const int code = run_cli(args, out, err);
  std::cerr << "  [" << cache.filename().string() << "] seas";
  for (const auto& a : args) std::cerr << " " << a;
  std::cerr << " (" << fmt(seconds_since(start)) << " s)\n";
  if (code != 0) throw std::runtime_error("seas " + args.front() + " exited " + std::to_string(code) + ": " + err.str());
  return out.str();
}

std::vector<json> run_records(const fs::path& cache) {
  std::vector<json> out;
  std::ifstream in(cache / "runs.jsonl");
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

json last_record(const fs::path& cache, const std::string& command) {
  const auto records = run_records(cache);
  for (auto it = records.rbegin(); it != records.rend(); ++it)
    if ((*it)["command"] == command) return *it;
  throw std::runtime_error("no " + command + " record in " + cache.string());
}

/// Corpus and VAE for the full-toy preset, built once per working directory.
void ensure_toy_corpus_and_vae(const fs::path& cache) {
  if (!fs::exists(cache / "corpus" / "manifest.jsonl")) cli(cache, {"gen-data", "--force"});
  if (!fs::exists(cache / "vae.ckpt")) cli(cache, {"pretrain-vae", "--force"});
}

struct GeneratedSet {
  std::vector<Tensor<float>> images;
  std::vector<Tensor<float>> masks;
};

GeneratedSet read_generated_dir(const fs::path& dir) {
  GeneratedSet out;
  std::ifstream in(dir / "manifest.jsonl");
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json r = json::parse(line);
    out.images.push_back(read_png_rgb(dir / r.at("image").get<std::string>()));
    if (!r["mask"].is_null()) out.masks.push_back(read_png_mask(dir / r.at("mask").get<std::string>()));
  }
  return out;
}

metrics::Matrix embed(const std::vector<Tensor<float>>& images, const metrics::ToyFeatureNet& net) {
  metrics::Matrix out;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Eigen::VectorXd e = net.embedding(images[i]);
    if (i == 0) out.resize(static_cast<Eigen::Index>(images.size()), e.size());
    out.row(static_cast<Eigen::Index>(i)) = e.transpose();
  }
  return out;
}

// ---------------------------------------------------------------------------
// 1. Gradient suite

Outcome gradient_suite() {
  std::vector<std::pair<std::string, double>> errors;
  // Token rows and one attention key projection are perturbed for the U-Net losses.
  auto seas_case = [&](const std::string& name, const std::function<LossResult<double>(MicroModel&, Rng&)>& f) {
    MicroModel m(21);
    auto& key = m.unet.encoder_attention(2).key().weight;
    errors.emplace_back(name, max_relative_error(
                                  [&](const std::vector<VarD>& v) {
                                    m.bank.table().added() = v[0];
                                    key = v[1];
                                    Rng noise(99);
                                    return f(m, noise).total;
                                  },
                                  {m.bank.table().added().value(), key.value()}));
  };
  seas_case("da_loss", [](MicroModel& m, Rng& r) {
    LossConfig c;
    c.df_weight = 0;
    return abnormal_loss(m.abnormal, m.unet, m.bank, m.bank.build_prompt(1), m.schedule, r, c);
  });
  seas_case("abnormal_loss", [](MicroModel& m, Rng& r) {
    return abnormal_loss(m.abnormal, m.unet, m.bank, m.bank.build_prompt(1), m.schedule, r, LossConfig{});
  });
  seas_case("normal_loss", [](MicroModel& m, Rng& r) {
    return normal_loss(m.normal, m.unet, m.bank, m.schedule, r, LossConfig{});
  });
  seas_case("at_variant_loss", [](MicroModel& m, Rng& r) {
    LossConfig c;
    c.use_st = false;
    c.at_variant = true;
    return abnormal_loss(m.abnormal, m.unet, m.bank, m.bank.build_prompt(1), m.schedule, r, c);
  });
  seas_case("mixed_batch", [](MicroModel& m, Rng& r) {
    std::vector<BatchItem<double>> batch{{m.abnormal, m.bank.build_prompt(1)}, {m.normal, m.bank.build_normal_prompt()}};
    return seas_loss(m.unet, m.bank, batch, m.schedule, r, LossConfig{});
  });

  {
    Rng rng(6);
    RMPConfig c;
    c.bind(testing::micro_unet_config(), testing::micro_vae_config());
    c.compressed_channels = 12;
    c.transformer_layers = 1;
    RMP<double> rmp(c, rng);
    TensorD gt({1, 16, 16});
    for (int i = 0; i < 40; ++i) gt[i] = 1;
    const TensorD u2 = TensorD::randn({1, 8, 2, 2}, rng), u3 = TensorD::randn({1, 8, 4, 4}, rng);
    const TensorD f0 = TensorD::randn({1, 8, 4, 4}, rng);
    const VarD f1 = VarD::constant(TensorD::randn({1, 8, 8, 8}, rng));
    const VarD f2 = VarD::constant(TensorD::randn({1, 8, 16, 16}, rng));
    errors.emplace_back("rmp_loss", max_relative_error(
                                        [&](const std::vector<VarD>& v) {
                                          const auto out = rmp.forward({{2, v[0]}, {3, v[1]}}, {v[2], f1, f2});
                                          const auto normal = rmp.forward({{2, v[0]}, {3, v[1]}}, {}, false);
                                          return rmp_loss(out.coarse_logits, out.refined_logits, normal.coarse_logits,
                                                          normal.refined_logits, gt, 2.0, 0.75)
                                              .total;
                                        },
                                        {u2, u3, f0}));
  }

  double worst = 0;
  std::string detail;
  for (const auto& [name, e] : errors) {
    worst = std::max(worst, e);
    detail += name + "=" + fmt(e) + " ";
  }
  return {worst < kGradientRelTol, "max relative error " + fmt(worst) + " (" + detail + "; limit " + fmt(kGradientRelTol) + ")"};
}

// ---------------------------------------------------------------------------
// 2. Loss-zero constructions

Outcome loss_zero_constructions() {
  // Attention maps whose anomaly-column mean equals the mask and whose normal column vanishes inside it.
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 1);
  double worst_da = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int r = 2 << (trial % 3), n_df = 1 + trial % 4, z = n_df + 3;
    TensorD a({1, r * r, z});
    LayerMask<double> mask;
    mask.masks[1] = TensorD({r, r});
    for (int q = 0; q < r * r; ++q) {
      const bool inside = u(rng) < 0.3;
      const double target = inside ? 1.0 : 0.0;
      mask.masks[1][q] = target;
      // Paired dyadic offsets around the target keep the column mean exact.
      for (int k = 0; k < n_df; ++k) {
        const bool unpaired = n_df % 2 == 1 && k == n_df - 1;
        a[q * z + k] = target + (unpaired ? 0.0 : k % 2 == 0 ? 0.25 : -0.25);
      }
      a[q * z + n_df] = inside ? 0.0 : u(rng);
      for (int k = n_df + 1; k < z; ++k) a[q * z + k] = u(rng);
    }
    AttentionStack<double> stack;
    stack.maps[1] = VarD::constant(a);
    stack.resolutions[1] = r;
    UAPrompt p;
    p.anomaly_type = 1;
    for (int k = 0; k < n_df; ++k) p.anomaly_columns.push_back(k);
    p.normal_columns = {n_df};
    const auto da = da_loss(stack, 0, p, mask, {1});
    worst_da = std::max({worst_da, std::abs(da.term1.item()), std::abs(da.term2.item())});
  }

  // Focal loss on one-hot targets: confident logits along a growing margin, then free logits optimized.
  TensorD gt({1, 8, 8});
  for (Eigen::Index i = 0; i < gt.size(); i += 3) gt[i] = 1;
  auto margin_loss = [&](double margin) {
    TensorD z({1, 2, 8, 8});
    for (Eigen::Index q = 0; q < gt.size(); ++q) {
      z[q] = gt[q] == 1 ? -margin : margin;
      z[gt.size() + q] = -z[q];
    }
    return ad::focal_loss(VarD::constant(z), gt, 2.0, 0.75).item();
  };
  bool monotone = true;
  double previous = std::numeric_limits<double>::infinity();
  for (int margin = 0; margin <= 12; ++margin) {
    const double l = margin_loss(margin);
    monotone = monotone && l < previous;
    previous = l;
  }
  const double confident = previous;

  VarD logits = VarD::parameter(TensorD({1, 2, 8, 8}));
  AdamW<double> opt({{{logits}, 0.5, 0.0}});
  double focal = 0;
  int steps = 0;
  for (; steps < 5000; ++steps) {
    opt.zero_grad();
    VarD loss = ad::focal_loss(logits, gt, 2.0, 0.75);
    focal = loss.item();
    if (focal < kFocalTarget) break;
    loss.backward();
    opt.step();
  }
  const bool pass = worst_da <= kAlignmentZeroTol && monotone && confident < kFocalTarget && focal < kFocalTarget;
  return {pass, "exact-alignment DA max |term| " + fmt(worst_da) + " over 50 constructions (limit " +
                    fmt(kAlignmentZeroTol) + "); one-hot focal loss " + (monotone ? "decreasing" : "NOT decreasing") +
                    " in the logit margin, " + fmt(confident) + " at margin 12, " + fmt(focal) + " after " +
                    std::to_string(steps) + " optimizer steps (target < " + fmt(kFocalTarget) + ")"};
}

// ---------------------------------------------------------------------------
// 3. Attention properties

void swap_head_columns(Tensor<double>& w) {
  const int rows = w.dim(0), cols = w.dim(1), d = cols / 2;
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < d; ++j) std::swap(w[i * cols + j], w[i * cols + d + j]);
}

void swap_head_rows(Tensor<double>& w) {
  const int rows = w.dim(0), cols = w.dim(1), d = rows / 2;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < cols; ++j) std::swap(w[i * cols + j], w[(d + i) * cols + j]);
}

Outcome attention_properties() {
  double worst_norm = 0;
  double block_diff = 0, layer1_diff = 0, deep_diff = 0;
  for (int trial = 0; trial < kAttentionTrials; ++trial) {
    const std::uint64_t seed = 1000 + static_cast<std::uint64_t>(trial);
    Rng rng(seed);
    // Normalization in the training precision.
    {
      UNet<float> unet(testing::micro_unet_config(), rng);
      PromptBank<float> bank(testing::micro_prompt_config(), rng);
      const int type = 1 + trial % 2;
      const auto ctx = bank.embed_batch({bank.build_prompt(type), bank.build_normal_prompt()});
      const auto x = ad::Var<float>::constant(Tensor<float>::randn({2, 4, 4, 4}, rng, 1.0f + trial % 3));
      const auto out = unet.forward(x, {trial % 100, (7 * trial) % 100}, ctx);
      for (const auto& [layer, map] : out.attention.maps) {
        const auto& v = map.value();
        const int rows = v.dim(0) * v.dim(1), z = v.dim(2);
        for (int r = 0; r < rows; ++r) {
          double s = 0;
          for (int k = 0; k < z; ++k) s += v[r * z + k];
          worst_norm = std::max(worst_norm, std::abs(s - 1));
        }
      }
    }
    // DA loss under a head permutation.
    MicroModel m(seed);
    const UAPrompt prompt = m.bank.build_prompt(1 + trial % 2);
    const auto ctx = m.bank.embed_batch({prompt});
    const auto latent = VarD::constant(TensorD::randn({1, 4, 4, 4}, m.rng));
    const int t = trial % 100;
    Tensor<double> mask({16, 16});
    std::uniform_int_distribution<int> corner(0, 12);
    const int y0 = corner(m.rng), x0 = corner(m.rng);
    for (int y = y0; y < y0 + 4; ++y)
      for (int x = x0; x < x0 + 4; ++x) mask[y * 16 + x] = 1;

    // Block level: each layer's map depends on q and k only; swapping their head columns reorders heads.
    const auto before = m.unet.forward(latent, {t}, ctx);
    const auto masks = downsample_mask(mask, before.attention.resolutions);
    for (int layer = 1; layer <= 3; ++layer) {
      auto& block = m.unet.encoder_attention(layer);
      const int r = before.attention.resolutions.at(layer);
      Rng feature_rng(seed + 17 * static_cast<std::uint64_t>(layer));
      const auto h = VarD::constant(TensorD::randn({1, 8, r, r}, feature_rng));
      auto da_of = [&] {
        AttentionStack<double> s;
        s.maps[layer] = block(h, ctx).second;
        s.resolutions[layer] = r;
        const auto d = da_loss(s, 0, prompt, masks, {layer});
        return std::pair{d.term1.item(), d.term2.item()};
      };
      const auto a = da_of();
      swap_head_columns(block.query().weight.mutable_value());
      swap_head_columns(block.key().weight.mutable_value());
      const auto b = da_of();
      swap_head_columns(block.query().weight.mutable_value());
      swap_head_columns(block.key().weight.mutable_value());
      block_diff = std::max({block_diff, std::abs(a.first - b.first), std::abs(a.second - b.second)});
    }

    // Model level: permute q, k, v columns and output rows in every block.
    for (int layer = 1; layer <= 3; ++layer) {
      auto& block = m.unet.encoder_attention(layer);
      swap_head_columns(block.query().weight.mutable_value());
      swap_head_columns(block.key().weight.mutable_value());
      swap_head_columns(block.value().weight.mutable_value());
      swap_head_rows(block.output().weight.mutable_value());
    }
    const auto after = m.unet.forward(latent, {t}, ctx);
    for (int layer = 1; layer <= 3; ++layer) {
      const auto d0 = da_loss(before.attention, 0, prompt, masks, {layer});
      const auto d1 = da_loss(after.attention, 0, prompt, masks, {layer});
      const double diff = std::max(std::abs(d0.term1.item() - d1.term1.item()), std::abs(d0.term2.item() - d1.term2.item()));
      (layer == 1 ? layer1_diff : deep_diff) = std::max(layer == 1 ? layer1_diff : deep_diff, diff);
    }
  }
  const bool pass = worst_norm <= kNormalizationTol && block_diff == 0.0 && layer1_diff == 0.0;
  return {pass, "max |row sum - 1| " + fmt(worst_norm) + " (limit " + fmt(kNormalizationTol) +
                    "); DA change under head permutation: block level " + fmt(block_diff) + ", whole model layer 1 " +
                    fmt(layer1_diff) + ", deeper layers " + fmt(deep_diff) + " (rounding only); " +
                    std::to_string(kAttentionTrials) + " trials"};
}

// ---------------------------------------------------------------------------
// 4. Metric oracle equivalence

Outcome metric_oracles() {
  std::mt19937_64 rng(4242);
  std::uniform_int_distribution<int> size(2, kMaxMetricSamples);
  std::uniform_int_distribution<int> levels(2, 20);
  std::uniform_real_distribution<double> u(0, 1);
  double ranking_diff = 0, iou_diff = 0, formula_diff = 0;
  bool bounds = true;
  for (int trial = 0; trial < kMetricTrials; ++trial) {
    const int n = size(rng);
    // Coarse grids on most trials so ties are common.
    const int grid = trial % 4 == 0 ? 0 : levels(rng);
    std::vector<double> s;
    std::vector<int> y;
    const double p = 0.1 + 0.8 * u(rng);
    for (int i = 0; i < n; ++i) {
      s.push_back(grid ? std::floor(u(rng) * grid) / grid : u(rng));
      y.push_back(u(rng) < p ? 1 : 0);
    }
    y[0] = 1;
    y[1] = 0;
    ranking_diff = std::max({ranking_diff, std::abs(metrics::auroc(s, y) - testing::oracle_auroc(s, y)),
                             std::abs(metrics::average_precision(s, y) - testing::oracle_ap(s, y)),
                             std::abs(metrics::f1_max(s, y) - testing::oracle_f1_max(s, y))});

    const int side = 1 + static_cast<int>(std::sqrt(n));
    Tensor<float> a({side, side}), b({side, side});
    int inter = 0, uni = 0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      a[i] = u(rng) < 0.4 ? 1.f : 0.f;
      b[i] = u(rng) < 0.4 ? 1.f : 0.f;
      inter += a[i] > 0 && b[i] > 0;
      uni += a[i] > 0 || b[i] > 0;
    }
    const double oracle_iou = uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
    iou_diff = std::max(iou_diff, std::abs(metrics::iou(a, b) - oracle_iou));

    const int k = 2 + trial % 9;
    metrics::Matrix probs(n, k);
    std::gamma_distribution<double> g(0.3 + u(rng));
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < k; ++c) probs(i, c) = g(rng) + 1e-12;
      probs.row(i) /= probs.row(i).sum();
    }
    const double is = metrics::inception_score(probs);
    formula_diff = std::max(formula_diff, std::abs(is - testing::oracle_inception_score(probs)));
    bounds = bounds && is >= 1 - 1e-12 && is <= k + 1e-12;

    const int d = 1 + trial % 16;
    metrics::Matrix fx(std::max(n, 2), d), fy(2 + trial % 30, d);
    std::normal_distribution<double> normal(0, 1);
    for (Eigen::Index i = 0; i < fx.size(); ++i) fx.data()[i] = normal(rng);
    for (Eigen::Index i = 0; i < fy.size(); ++i) fy.data()[i] = normal(rng) + 0.5 * u(rng);
    formula_diff = std::max(formula_diff, std::abs(metrics::kid(fx, fy) - testing::oracle_kid(fx, fy)));
  }
  const bool pass = ranking_diff == 0.0 && iou_diff == 0.0 && formula_diff <= kFormulaTol && bounds;
  return {pass, "AUROC/AP/F1-max max |diff| " + fmt(ranking_diff) + ", IoU " + fmt(iou_diff) + " (exact required); IS/KID " +
                    fmt(formula_diff) + " (limit " + fmt(kFormulaTol) + "); IS within [1, K]: " + (bounds ? "yes" : "no") +
                    "; " + std::to_string(kMetricTrials) + " instances"};
}

// ---------------------------------------------------------------------------
// 5. Toy end-to-end

std::vector<Outcome> toy_end_to_end(const fs::path& work) {
  const fs::path cache = work / "full_toy";
  const auto start = std::chrono::steady_clock::now();
  ensure_toy_corpus_and_vae(cache);
  cli(cache, {"train-gen", "--force"});
  cli(cache, {"train-rmp", "--force"});
  const int per_type = kGenerations / 2;
  for (int type = 1; type <= 2; ++type)
    cli(cache, {"generate", "--mode", "abnormal", "--type", std::to_string(type), "--count", std::to_string(per_type),
                "--out", (cache / "generated" / ("type_" + std::to_string(type))).string(), "--force"});
  cli(cache, {"generate", "--mode", "normal", "--count", std::to_string(kGenerations), "--force"});

  const json extra = last_record(cache, "train-gen")["extra"];
  const double before = extra["alignment_iou_before"], after = extra["alignment_iou_after"];
  const double mass_before = extra["alignment_mass_iou_before"], mass_after = extra["alignment_mass_iou_after"];
  Outcome a{after - before >= kIoUGain, "alignment IoU " + fmt(before) + " -> " + fmt(after) + " (gain " +
                                            fmt(after - before) + ", required " + fmt(kIoUGain) +
                                            "); summed-anomaly-attention IoU " + fmt(mass_before) + " -> " +
                                            fmt(mass_after)};

  GeneratedSet abnormal;
  for (int type = 1; type <= 2; ++type) {
    auto g = read_generated_dir(cache / "generated" / ("type_" + std::to_string(type)));
    abnormal.images.insert(abnormal.images.end(), g.images.begin(), g.images.end());
    abnormal.masks.insert(abnormal.masks.end(), g.masks.begin(), g.masks.end());
  }
  int nonempty = 0;
  double coverage = 0;
  for (const auto& m : abnormal.masks) {
    const double c = m.array().template cast<double>().mean();
    nonempty += c > 0;
    coverage += c / static_cast<double>(abnormal.masks.size());
  }
  const double fraction = static_cast<double>(nonempty) / static_cast<double>(abnormal.masks.size());
  Outcome b{abnormal.masks.size() == static_cast<std::size_t>(kGenerations) && fraction >= kNonemptyFraction,
            std::to_string(nonempty) + "/" + std::to_string(abnormal.masks.size()) + " masks nonempty at tau " + fmt(kTau) +
                " (required " + fmt(kNonemptyFraction) + "); mean mask coverage " + fmt(coverage)};

  const Corpus corpus = read_corpus(cache / "corpus");
  std::vector<Tensor<float>> reference;
  for (const auto& s : corpus.normal) reference.push_back(s.image);
  const metrics::ToyFeatureNet net;
  const auto ref = embed(reference, net);
  const auto normal = read_generated_dir(cache / "generated" / "normal");
  const double kid_normal = metrics::kid(embed(normal.images, net), ref);
  const double kid_abnormal = metrics::kid(embed(abnormal.images, net), ref);
  Outcome c{kid_normal < kid_abnormal, "KID vs normal corpus: normal mode " + fmt(kid_normal) + ", abnormal mode " +
                                           fmt(kid_abnormal) + "; pipeline " + fmt(seconds_since(start)) + " s"};
  return {a, b, c};
}

// ---------------------------------------------------------------------------
// 6. Ablation parity

Outcome ablation_parity(const fs::path& work) {
  const fs::path cache = work / "full_toy";
  ensure_toy_corpus_and_vae(cache);
  const auto start = std::chrono::steady_clock::now();
  const Corpus corpus = read_corpus(cache / "corpus");
  const VAE<float> vae = vae_from_archive(load_archive(cache / "vae.ckpt", "vae"));
  PipelineConfig base = PipelineConfig::smoke();
  base.resolve();
  std::optional<SharedGenerator> shared;
  std::vector<std::string> failed;
  int ran = 0;
  for (const auto& arm : ablation_arms()) {
    const auto arm_start = std::chrono::steady_clock::now();
    try {
      if (!arm.changes_generator && !shared) shared.emplace(train_shared_generator(base, encode_corpus(corpus, vae)));
      const AblationResult r = run_ablation_arm(arm.name, base, corpus, vae, arm.changes_generator ? nullptr : &*shared);
      bool finite = r.finite && !r.generator_losses.empty() && !r.rmp_losses.empty();
      for (double v : r.generator_losses) finite = finite && std::isfinite(v);
      for (double v : r.rmp_losses) finite = finite && std::isfinite(v);
      if (!finite) failed.push_back(arm.name + " (non-finite)");
      std::cerr << "  arm " << arm.name << ": " << (finite ? "finite" : "NON-FINITE") << ", generator loss "
                << (r.generator_losses.empty() ? std::nan("") : r.generator_losses.back()) << ", rmp loss "
                << (r.rmp_losses.empty() ? std::nan("") : r.rmp_losses.back()) << " ("
                << fmt(seconds_since(arm_start)) << " s)\n";
    } catch (const std::exception& e) {
      failed.push_back(arm.name + " (" + e.what() + ")");
    }
    ++ran;
  }
  std::string detail = std::to_string(ran - static_cast<int>(failed.size())) + "/" + std::to_string(ran) +
                       " arms finished with finite losses at the smoke preset (" +
                       std::to_string(base.train.total_steps(corpus.num_types())) + " generator steps) in " +
                       fmt(seconds_since(start)) + " s";
  for (const auto& f : failed) detail += "; failed: " + f;
  return {failed.empty() && ran == static_cast<int>(ablation_arms().size()), detail};
}

// ---------------------------------------------------------------------------
// 7. Determinism

std::map<std::string, std::string> png_digests(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().extension() == ".png")
      out[fs::relative(e.path(), root).string()] = sha256_file(e.path());
  return out;
}

Outcome determinism(const fs::path& work) {
  auto run = [&](const fs::path& cache) {
    const std::vector<std::string> preset{"--preset", "tiny", "--seed", "5"};
    auto with = [&](std::vector<std::string> args) {
      args.insert(args.end(), preset.begin(), preset.end());
      args.push_back("--force");
      cli(cache, args);
    };
    with({"gen-data"});
    with({"pretrain-vae"});
    with({"train-gen"});
    with({"train-rmp"});
    with({"generate", "--mode", "abnormal", "--count", "3"});
    with({"generate", "--mode", "normal", "--count", "3"});
  };
  const fs::path a = work / "determinism_a", b = work / "determinism_b";
  fs::remove_all(a);
  fs::remove_all(b);
  run(a);
  run(b);
  const auto pa = png_digests(a / "generated"), pb = png_digests(b / "generated");
  std::vector<std::string> ha, hb;
  for (const auto& r : run_records(a)) ha.push_back(r["content_hash"]);
  for (const auto& r : run_records(b)) hb.push_back(r["content_hash"]);
  const bool manifests = sha256_file(a / "generated" / "abnormal" / "manifest.jsonl") ==
                             sha256_file(b / "generated" / "abnormal" / "manifest.jsonl") &&
                         sha256_file(a / "generated" / "normal" / "manifest.jsonl") ==
                             sha256_file(b / "generated" / "normal" / "manifest.jsonl");
  const bool pass = !pa.empty() && pa == pb && ha.size() == 6 && ha == hb && manifests;
  return {pass, std::to_string(pa.size()) + " generated PNGs " + (pa == pb ? "identical" : "DIFFER") + "; " +
                    std::to_string(ha.size()) + " run-record content hashes " + (ha == hb ? "identical" : "DIFFER") +
                    "; generated manifests " + (manifests ? "identical" : "DIFFER")};
}

// ---------------------------------------------------------------------------
// 8. Structural checks

Outcome structural_checks() {
  std::vector<std::string> problems;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) problems.push_back(what);
  };
  // Full-size RMP on random features.
  Rng rng(8);
  const PipelineConfig config = [] {
    PipelineConfig c;
    c.resolve();
    return c;
  }();
  RMP<float> rmp(config.rmp, rng);
  const auto& rc = rmp.config();
  std::map<int, ad::Var<float>> unet_features;
  const UNetConfig unet = make_generator_config(config.train, 2).unet;
  for (int stage : rc.unet_stages) {
    const int r = unet.decoder_resolution(stage);
    unet_features[stage] =
        ad::Var<float>::constant(Tensor<float>::randn({1, unet.decoder_channels(stage), r, r}, rng));
  }
  std::vector<ad::Var<float>> vae_features;
  for (int i = 0; i < 3; ++i) {
    const int r = rc.coarse_resolution << (i + 1);
    vae_features.push_back(
        ad::Var<float>::constant(Tensor<float>::randn({1, rc.vae_channels[static_cast<std::size_t>(i)], r, r}, rng)));
  }
  const auto out = rmp.forward(unet_features, vae_features);
  expect(out.coarse_logits.dim(2) == rc.coarse_resolution, "coarse logits at the coarse resolution");
  expect(out.stages.size() == 3, "three refinement stages");
  int r = rc.coarse_resolution;
  for (const auto& s : out.stages) {
    expect(s.dim(2) == 2 * r && s.dim(3) == 2 * r, "each refinement stage doubles the resolution");
    r = s.dim(2);
  }
  expect(r == rc.image_size && out.refined_logits.dim(2) == rc.image_size, "refined logits at image size");

  // Exactly three VAE features, each gating the stage at its resolution.
  bool rejects_two = false;
  try {
    rmp.forward(unet_features, {vae_features[0], vae_features[1]});
  } catch (const Error&) {
    rejects_two = true;
  }
  expect(rejects_two, "two VAE features rejected");
  VAEConfig vc = config.vae;
  Rng vae_rng(9);
  VAE<float> vae(vc, vae_rng);
  const auto latent = ad::Var<float>::constant(Tensor<float>::randn({1, vc.latent_channels, vc.latent_size(), vc.latent_size()}, vae_rng));
  const auto decoded = rmp_vae_features(vae, latent, {}, FeatureSource::VAEDecoder);
  expect(decoded.size() == 3, "three VAE decoder features");
  for (std::size_t i = 0; i < decoded.size() && i < 3; ++i)
    expect(decoded[i].dim(2) == rc.coarse_resolution << (i + 1) && decoded[i].dim(1) == rc.vae_channels[i],
           "VAE feature " + std::to_string(i) + " matches refinement stage " + std::to_string(i));

  // 2:1 split of the compressed coarse channels.
  expect(rc.stream_channels() == std::vector<int>{32, 16}, "stream channels 32:16");
  std::vector<int> compressed;
  for (const auto& p : rmp.parameters())
    if (p.name.rfind("compress", 0) == 0 && p.name.find(".weight") != std::string::npos &&
        p.name.find("norm") == std::string::npos)
      compressed.push_back(p.var.dim(0));
  expect(compressed == std::vector<int>{32, 16}, "compression convolutions emit 32 and 16 channels");

  // Prompt indices 4n-3 .. 4n.
  PromptConfig pc;
  pc.num_types = 5;
  pc.embed_dim = 8;
  Rng prompt_rng(3);
  const PromptBank<float> bank(pc, prompt_rng);
  for (int n = 1; n <= pc.num_types; ++n) {
    const auto p = bank.build_prompt(n);
    std::vector<int> expected;
    for (int k = 4 * n - 3; k <= 4 * n; ++k) expected.push_back(k);
    expect(p.anomaly_global_indices == expected, "prompt indices for type " + std::to_string(n));
    for (int k = 0; k < 4; ++k)
      expect(p.anomaly_token_ids[static_cast<std::size_t>(k)] == bank.table().id("df" + std::to_string(4 * n - 3 + k)),
             "token rows for type " + std::to_string(n));
  }

  std::string detail = problems.empty() ? "MRM chain " + std::to_string(rc.coarse_resolution) + "->" +
                                              std::to_string(rc.image_size) +
                                              ", three VAE features, 32:16 coarse split, prompt indices 4n-3..4n"
                                        : "";
  for (const auto& p : problems) detail += "failed: " + p + "; ";
  return {problems.empty(), detail};
}

}  // namespace
}  // namespace seas

int main(int argc, char** argv) {
  using namespace seas;
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  auto wanted = [&](int c) { return selected.empty() || selected.count(c) > 0; };

  const char* env = std::getenv("SEAS_ACCEPTANCE_DIR");
  const fs::path work = env && *env ? fs::path(env) : fs::current_path() / "acceptance_work";
  fs::create_directories(work);

  bool all = true;
  auto report = [&](const std::string& id, const std::string& name, const std::function<Outcome()>& check) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " " << name << ": " << o.detail << " ["
              << fmt(seconds_since(start)) << " s]" << std::endl;
  };

  if (wanted(1)) report("1", "gradient suite", gradient_suite);
  if (wanted(2)) report("2", "loss-zero constructions", loss_zero_constructions);
  if (wanted(3)) report("3", "attention properties", attention_properties);
  if (wanted(4)) report("4", "metric oracle equivalence", metric_oracles);
  if (wanted(5)) {
    std::vector<Outcome> parts;
    const auto start = std::chrono::steady_clock::now();
    try {
      parts = toy_end_to_end(work);
    } catch (const std::exception& e) {
      parts.assign(3, Outcome{false, std::string("exception: ") + e.what()});
    }
    const std::string elapsed = " [" + fmt(seconds_since(start)) + " s total]";
    const char* names[] = {"attention alignment gain", "nonempty generated masks", "normal-mode KID below abnormal-mode KID"};
    for (int i = 0; i < 3; ++i) {
      all = all && parts[static_cast<std::size_t>(i)].pass;
      std::cout << (parts[static_cast<std::size_t>(i)].pass ? "PASS" : "FAIL") << " criterion 5" << char('a' + i) << " "
                << names[i] << ": " << parts[static_cast<std::size_t>(i)].detail << (i == 2 ? elapsed : "") << std::endl;
    }
  }
  if (wanted(6)) report("6", "ablation parity", [&] { return ablation_parity(work); });
  if (wanted(7)) report("7", "determinism", [&] { return determinism(work); });
  if (wanted(8)) report("8", "structural checks", structural_checks);
  return all ? 0 : 1;
}
