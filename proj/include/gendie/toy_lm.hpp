#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "gendie/lm.hpp"

namespace gendie {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ToyLMConfig {
  int d_model = 32;
  int n_heads = 4;
  int n_layers = 2;
  int d_ff = 64;
  int context_window = 256;
  double init_std = 0.08;
  std::uint64_t seed = 1;

  nlohmann::json to_json() const;
  static ToyLMConfig from_json(const nlohmann::json& j);
};

// Offsets of every tensor inside the flat parameter vector.
struct ParamLayout {
  struct Block {
    std::size_t norm1, wq, wk, wv, wo, norm2, w1, b1, w2, b2;
  };
  std::size_t tok_emb = 0, pos_emb = 0, norm_f = 0, head = 0, head_b = 0, total = 0;
  std::vector<Block> blocks;

  static ParamLayout make(std::size_t vocab, const ToyLMConfig& cfg);
};

// Activations kept by ToyLM::forward for the backward pass.
struct LayerCache {
  RowMatrix x_in, n1, h1, q, k, v, o, x_mid, n2, h2, u, a;
  Eigen::VectorXd r1, r2;
  std::vector<RowMatrix> attn;
};

struct ForwardCache {
  TokenSeq tokens;
  std::vector<LayerCache> layers;
  RowMatrix nf, hf;
  Eigen::VectorXd rf;
};

// Small pre-norm decoder-only transformer (RMSNorm, multi-head causal
// attention, GELU MLP, learned positions). Parameters live in one flat
// double vector so optimizers, checkpoints and gradient checks can treat
// them uniformly.
class ToyLM final : public LanguageModel {
 public:
  ToyLM(Vocabulary vocab, ToyLMConfig cfg);

  const Vocabulary& vocab() const override { return vocab_; }
  std::unique_ptr<DecodeState> start(const LMContext& ctx) const override;

  const ToyLMConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }
  std::size_t num_parameters() const { return params_.size(); }

  std::int64_t step_count() const { return step_count_; }
  void set_step_count(std::int64_t n) { step_count_ = n; }

  // Logits for every input position (T x |V|); fills `cache` for backward().
  RowMatrix forward(std::span<const TokenId> tokens, ForwardCache* cache = nullptr) const;
  // Accumulates dLoss/dparams into `grad` given dLoss/dlogits.
  void backward(const ForwardCache& cache, const RowMatrix& dlogits, std::span<double> grad) const;

  bool parameters_finite() const;
  // Fingerprint of the parameter bytes (manifest lineage).
  std::string parameter_hash() const;
  // Fingerprint of config + vocabulary.
  std::string config_hash() const;

  nlohmann::json to_json() const;
  static ToyLM from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static ToyLM load(const std::filesystem::path& path);

 private:
  friend class ToyDecodeState;

  Vocabulary vocab_;
  ToyLMConfig cfg_;
  ParamLayout layout_;
  std::vector<double> params_;
  std::int64_t step_count_ = 0;
};

// Log-softmax of each row.
RowMatrix log_softmax_rows(const RowMatrix& logits);

}  // namespace gendie
