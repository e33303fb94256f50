#pragma once

#include <map>
#include <string>
#include <vector>

#include "seas/nn.hpp"

namespace seas {

/// Frozen scaffold vocabulary, in row order.
inline const std::vector<std::string>& base_vocabulary() {
  static const std::vector<std::string> vocab{"<pad>", "a", "with", ",", "<sot>", "<eot>", "product", "defect"};
  return vocab;
}

/// Embedding table: frozen random base rows followed by learnable placeholder rows.
template <typename S>
class TokenTable {
 public:
  TokenTable() = default;
  TokenTable(int embed_dim, Rng& rng);

  /// Appends one learnable row for `placeholder` and returns its row index.
  int insert(const std::string& placeholder, Rng& rng);
  int id(const std::string& token) const;
  bool contains(const std::string& token) const { return ids_.count(token) > 0; }

  int base_size() const { return base_.dim(0); }
  int rows() const { return base_size() + added_count(); }
  int added_count() const { return added_.defined() ? added_.dim(0) : 0; }
  int embed_dim() const { return base_.dim(1); }
  bool trainable(int row) const { return row >= base_size() && row < rows(); }
  std::vector<bool> trainable_mask() const;
  const std::map<std::string, int>& added_ids() const { return added_ids_; }

  /// Row lookup; the result is differentiable w.r.t. added rows.
  ad::Var<S> lookup(const std::vector<int>& rows) const;
  Tensor<S> row(int index) const;
  /// Overwrites an added row; base rows are immutable.
  void set_row(int index, const Tensor<S>& values);

  const ad::Var<S>& base() const { return base_; }
  /// (added, D) learnable block; undefined until the first insert.
  const ad::Var<S>& added() const { return added_; }
  ad::Var<S>& added() { return added_; }
  /// Replaces the whole table, e.g. when restoring a checkpoint.
  void restore(Tensor<S> base, Tensor<S> added, const std::vector<std::string>& added_names);

 private:
  ad::Var<S> base_;
  ad::Var<S> added_;
  std::map<std::string, int> ids_;
  std::map<std::string, int> added_ids_;
};

struct PromptConfig {
  int num_types = 2;
  int n_anomaly_tokens = 4;
  int n_normal_tokens = 1;
  int padded_length = 16;
  int embed_dim = 64;
  /// Replace every learnable slot with the frozen "product"/"defect" embeddings.
  bool with_tp = false;
};

/// One padded token sequence plus the columns the alignment losses read.
struct UAPrompt {
  int anomaly_type = 0;  ///< 0 for the normal prompt
  std::vector<int> normal_token_ids;     ///< table rows of the <ob> slots
  std::vector<int> anomaly_token_ids;    ///< table rows of the <df> slots
  std::vector<int> anomaly_global_indices;  ///< 1-based df numbering, (n-1)N+1 .. nN
  std::vector<int> slots;                ///< table row per sequence position, length padded_length
  std::vector<int> normal_columns;
  std::vector<int> anomaly_columns;
  int padded_length() const { return static_cast<int>(slots.size()); }
};

/// Owns the token table with placeholders "ob1".."ob{N'}", "df1".."df{N*G}" and builds prompts over it.
template <typename S>
class PromptBank {
 public:
  PromptBank() = default;
  PromptBank(const PromptConfig& config, Rng& rng);

  UAPrompt build_prompt(int anomaly_type) const;
  UAPrompt build_normal_prompt() const;
  /// (Z, D) conditioning; row i is the table row of slot i.
  ad::Var<S> embed(const UAPrompt& prompt) const;
  /// (B, Z, D) conditioning for a batch of prompts.
  ad::Var<S> embed_batch(const std::vector<UAPrompt>& prompts) const;

  const PromptConfig& config() const { return config_; }
  TokenTable<S>& table() { return table_; }
  const TokenTable<S>& table() const { return table_; }

 private:
  UAPrompt assemble(int anomaly_type, const std::vector<int>& normal_rows, const std::vector<int>& anomaly_rows,
                    bool with_commas) const;

  PromptConfig config_;
  TokenTable<S> table_;
};

}  // namespace seas
