#include "seas/prompt.hpp"

namespace seas {

using ad::Var;

namespace {
constexpr double kEmbeddingStd = 0.5;
}

template <typename S>
TokenTable<S>::TokenTable(int embed_dim, Rng& rng) {
  if (embed_dim <= 0) throw ConfigError("embedding width must be positive");
  const auto& vocab = base_vocabulary();
  base_ = Var<S>::constant(Tensor<S>::randn({static_cast<int>(vocab.size()), embed_dim}, rng, S(kEmbeddingStd)));
  for (std::size_t i = 0; i < vocab.size(); ++i) ids_[vocab[i]] = static_cast<int>(i);
}

template <typename S>
int TokenTable<S>::insert(const std::string& placeholder, Rng& rng) {
  if (ids_.count(placeholder)) throw ValidationError("token '" + placeholder + "' already exists");
  const int d = embed_dim();
  Tensor<S> fresh = Tensor<S>::randn({1, d}, rng, S(kEmbeddingStd));
  Tensor<S> grown({added_count() + 1, d});
  if (added_.defined()) grown.array().head(added_.value().size()) = added_.value().array();
  grown.array().tail(d) = fresh.array();
  added_ = Var<S>::parameter(std::move(grown));
  const int row = rows() - 1;
  ids_[placeholder] = row;
  added_ids_[placeholder] = row;
  return row;
}

template <typename S>
int TokenTable<S>::id(const std::string& token) const {
  auto it = ids_.find(token);
  if (it == ids_.end()) throw LookupError("unknown token '" + token + "'");
  return it->second;
}

template <typename S>
std::vector<bool> TokenTable<S>::trainable_mask() const {
  std::vector<bool> mask(static_cast<std::size_t>(rows()), false);
  for (int r = base_size(); r < rows(); ++r) mask[static_cast<std::size_t>(r)] = true;
  return mask;
}

template <typename S>
Var<S> TokenTable<S>::lookup(const std::vector<int>& row_ids) const {
  for (int r : row_ids)
    if (r < 0 || r >= rows()) throw LookupError("token row " + std::to_string(r) + " not in table of " + std::to_string(rows()));
  if (!added_.defined()) return ad::gather_rows(base_, row_ids);
  return ad::gather_rows(ad::concat_batch<S>({base_, added_}), row_ids);
}

template <typename S>
Tensor<S> TokenTable<S>::row(int index) const {
  if (index < 0 || index >= rows()) throw LookupError("token row " + std::to_string(index) + " out of range");
  const int d = embed_dim();
  const bool is_base = index < base_size();
  const auto& src = is_base ? base_.value() : added_.value();
  const int local = is_base ? index : index - base_size();
  return Tensor<S>({d}, src.array().segment(static_cast<Eigen::Index>(local) * d, d));
}

template <typename S>
void TokenTable<S>::set_row(int index, const Tensor<S>& values) {
  if (index >= 0 && index < base_size()) throw ValidationError("base token rows are frozen");
  if (!trainable(index)) throw LookupError("token row " + std::to_string(index) + " out of range");
  const int d = embed_dim();
  if (values.size() != d) throw DimensionError("row width " + std::to_string(values.size()) + " != " + std::to_string(d));
  added_.mutable_value().array().segment(static_cast<Eigen::Index>(index - base_size()) * d, d) = values.array();
}

template <typename S>
void TokenTable<S>::restore(Tensor<S> base, Tensor<S> added, const std::vector<std::string>& added_names) {
  const auto& vocab = base_vocabulary();
  if (base.rank() != 2 || base.dim(0) != static_cast<int>(vocab.size()))
    throw CompatibilityError("stored base vocabulary has shape " + shape_string(base.shape()));
  if (added.rank() != 2 || added.dim(0) != static_cast<int>(added_names.size()) || added.dim(1) != base.dim(1))
    throw CompatibilityError("stored token rows do not match their names");
  base_ = Var<S>::constant(std::move(base));
  ids_.clear();
  added_ids_.clear();
  for (std::size_t i = 0; i < vocab.size(); ++i) ids_[vocab[i]] = static_cast<int>(i);
  added_ = added_names.empty() ? Var<S>() : Var<S>::parameter(std::move(added));
  for (std::size_t i = 0; i < added_names.size(); ++i) {
    const int row = base_size() + static_cast<int>(i);
    ids_[added_names[i]] = row;
    added_ids_[added_names[i]] = row;
  }
}

template <typename S>
PromptBank<S>::PromptBank(const PromptConfig& config, Rng& rng) : config_(config), table_(config.embed_dim, rng) {
  if (config.num_types < 1) throw ConfigError("at least one anomaly type is required");
  if (config.n_anomaly_tokens < 1 || config.n_normal_tokens < 1) throw ConfigError("token counts must be positive");
  if (config.padded_length < config.n_normal_tokens + config.n_anomaly_tokens + 4)
    throw ConfigError("padded length " + std::to_string(config.padded_length) + " cannot hold the prompt");
  if (config.with_tp) return;
  for (int k = 1; k <= config.n_normal_tokens; ++k) table_.insert("ob" + std::to_string(k), rng);
  for (int k = 1; k <= config.n_anomaly_tokens * config.num_types; ++k) table_.insert("df" + std::to_string(k), rng);
}

template <typename S>
UAPrompt PromptBank<S>::assemble(int anomaly_type, const std::vector<int>& normal_rows,
                                 const std::vector<int>& anomaly_rows, bool with_commas) const {
  const int pad = table_.id("<pad>");
  UAPrompt p;
  p.anomaly_type = anomaly_type;
  p.normal_token_ids = normal_rows;
  p.anomaly_token_ids = anomaly_rows;
  auto push = [&](int row) { p.slots.push_back(row); };
  push(table_.id("<sot>"));
  push(table_.id("a"));
  for (int r : normal_rows) {
    p.normal_columns.push_back(static_cast<int>(p.slots.size()));
    push(r);
  }
  if (!anomaly_rows.empty()) {
    push(table_.id("with"));
    for (std::size_t k = 0; k < anomaly_rows.size(); ++k) {
      if (k > 0 && with_commas) push(table_.id(","));
      p.anomaly_columns.push_back(static_cast<int>(p.slots.size()));
      push(anomaly_rows[k]);
    }
  }
  push(table_.id("<eot>"));
  if (static_cast<int>(p.slots.size()) > config_.padded_length) {
    if (with_commas) return assemble(anomaly_type, normal_rows, anomaly_rows, false);
    throw ConfigError("prompt of " + std::to_string(p.slots.size()) + " tokens exceeds padded length " +
                      std::to_string(config_.padded_length));
  }
  p.slots.resize(static_cast<std::size_t>(config_.padded_length), pad);
  return p;
}

template <typename S>
UAPrompt PromptBank<S>::build_prompt(int anomaly_type) const {
  if (anomaly_type < 1 || anomaly_type > config_.num_types)
    throw RangeError("anomaly type " + std::to_string(anomaly_type) + " outside [1, " +
                     std::to_string(config_.num_types) + "]");
  const int n = config_.n_anomaly_tokens;
  std::vector<int> normal_rows, anomaly_rows, global;
  for (int k = 1; k <= config_.n_normal_tokens; ++k)
    normal_rows.push_back(table_.id(config_.with_tp ? "product" : "ob" + std::to_string(k)));
  for (int g = (anomaly_type - 1) * n + 1; g <= anomaly_type * n; ++g) {
    global.push_back(g);
    anomaly_rows.push_back(table_.id(config_.with_tp ? "defect" : "df" + std::to_string(g)));
  }
  UAPrompt p = assemble(anomaly_type, normal_rows, anomaly_rows, true);
  p.anomaly_global_indices = std::move(global);
  return p;
}

template <typename S>
UAPrompt PromptBank<S>::build_normal_prompt() const {
  std::vector<int> normal_rows;
  for (int k = 1; k <= config_.n_normal_tokens; ++k)
    normal_rows.push_back(table_.id(config_.with_tp ? "product" : "ob" + std::to_string(k)));
  return assemble(0, normal_rows, {}, true);
}

template <typename S>
Var<S> PromptBank<S>::embed(const UAPrompt& prompt) const {
  if (prompt.padded_length() != config_.padded_length)
    throw DimensionError("prompt length " + std::to_string(prompt.padded_length()) + " != " +
                         std::to_string(config_.padded_length));
  return table_.lookup(prompt.slots);
}

template <typename S>
Var<S> PromptBank<S>::embed_batch(const std::vector<UAPrompt>& prompts) const {
  std::vector<int> rows;
  for (const auto& p : prompts) {
    if (p.padded_length() != config_.padded_length) throw DimensionError("prompt length mismatch in batch");
    rows.insert(rows.end(), p.slots.begin(), p.slots.end());
  }
  return ad::reshape(table_.lookup(rows), {static_cast<int>(prompts.size()), config_.padded_length, table_.embed_dim()});
}

template class TokenTable<float>;
template class TokenTable<double>;
template class PromptBank<float>;
template class PromptBank<double>;

}  // namespace seas
