#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "langlab/adapters.hpp"
#include "langlab/ops.hpp"
#include "langlab/tensor.hpp"

namespace langlab {

struct ModelConfig {
    size_t n_layers = 2;
    size_t n_heads = 2;
    size_t d_model = 64;
    size_t d_ffn = 256;
    size_t vocab_size = 512;
    size_t max_positions = 128;
    uint64_t seed = 0;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct LayerNormParams {
    Tensor g;  // scale, init 1
    Tensor b;  // shift, init 0
};

struct LayerParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    LayerNormParams ln1, ln2;
    Tensor ffn_win, ffn_bin, ffn_wout, ffn_bout;
};

// GPT-style decoder weights. The LM head shares storage with wte (tied);
// no separate head tensor exists anywhere.
struct ModelParams {
    Tensor wte;  // [vocab, d]
    Tensor wpe;  // [max_positions, d]
    std::vector<LayerParams> layers;
    LayerNormParams lnf;

    // Canonical order: wte, wpe, layerK.{attn.*, ln1.*, ln2.*, ffn.*}, lnf.*.
    // Initialization, checkpoints and optimizers all follow this order.
    std::vector<NamedTensor> named() const;
};

struct Model {
    ModelConfig config;
    ModelParams params;
    std::optional<AdapterBank> adapters;

    // Model tensors followed by adapter tensors (when present).
    std::vector<NamedTensor> named() const;
    std::map<std::string, Tensor> named_map() const;
};

// Deterministic init from config.seed: weights normal(0, 0.02), biases and
// layer-norm shifts zero, layer-norm scales one.
Model build_model(const ModelConfig& config);

// Adds a zero-init (identity) adapter bank. Errors if one is already present.
void inject_adapters(Model& model, const AdapterConfig& config, uint64_t seed);

struct ForwardOptions {
    // Extra bottlenecks stacked after the language adapters in each layer
    // (task adapters); size must equal n_layers when set.
    const std::vector<Bottleneck>* task_adapters = nullptr;
    // Apply the invertible adapter's inverse after the final layer norm.
    // On for the tied-head LM path; off when pooling hidden states for
    // classification (no tied head involved).
    bool invert_output = true;
};

// Final hidden states [B, T, d] after the last layer norm.
Tensor forward_hidden(const Model& model, const IdBatch& ids, const ForwardOptions& opt = {});

// Tied-head logits [B, T, vocab]: forward_hidden times wte^T.
Tensor forward_logits(const Model& model, const IdBatch& ids, const ForwardOptions& opt = {});

// Mean next-token cross-entropy: position t+1 given prefix 0..t. seq >= 2.
Tensor lm_loss(const Model& model, const IdBatch& ids, const ForwardOptions& opt = {});

struct ParamCounts {
    size_t total = 0;
    size_t trainable = 0;
    // Groups: wte, wpe, transformer, invertible_adapter, language_adapters.
    std::map<std::string, size_t> by_group;
};

// Exact enumeration over named tensors; the tied head is counted once since
// it has no tensor of its own. With a spec, `trainable` counts the union of
// all phases' trainable sets.
ParamCounts count_params(const Model& model, const StrategySpec* spec = nullptr);

}  // namespace langlab
