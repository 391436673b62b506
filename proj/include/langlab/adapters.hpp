#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "langlab/tensor.hpp"

namespace langlab {

// Capacity knobs for the adapter stack. `reduction` sets each bottleneck's
// hidden width to floor(d_model / reduction); `inv_reduction` does the same
// for the invertible adapter's coupling nets on the half-width stream.
struct AdapterConfig {
    size_t reduction = 16;
    size_t inv_reduction = 2;
    bool invertible = true;
    bool language = true;

    void validate(size_t d_model) const;
    bool operator==(const AdapterConfig&) const = default;
};

// Residual bottleneck: h + up(relu(down(h))). Up-projection weights and bias
// start at zero, so a fresh adapter is an exact identity.
struct Bottleneck {
    Tensor down;       // [d, b]
    Tensor down_bias;  // [b]
    Tensor up;         // [b, d]
    Tensor up_bias;    // [d]
};

// Two-layer ReLU net used as a coupling function (no residual).
struct CouplingNet {
    Tensor down;       // [d/2, c]
    Tensor down_bias;  // [c]
    Tensor up;         // [c, d/2]
    Tensor up_bias;    // [d/2]
};

// Additive coupling over the split embedding stream:
//   v1 = e1 + F(e2);  v2 = e2 + G(v1)
// which inverts exactly (up to f32 rounding) as
//   e2 = v2 - G(v1);  e1 = v1 - F(e2).
struct InvertibleAdapter {
    CouplingNet f;
    CouplingNet g;
};

// One bottleneck per transformer layer plus the invertible adapter at the
// embedding/output boundary. `language_tag` names the language the bank was
// adapted to; it rides along in checkpoints.
struct AdapterBank {
    AdapterConfig config;
    std::string language_tag;
    std::vector<Bottleneck> layers;
    InvertibleAdapter inv;  // tensors undefined when !config.invertible

    // Canonical serialization order: inv.F, inv.G, then layer0..layerN-1,
    // names like `inv.F.down`, `layer3.adpt.up`.
    std::vector<NamedTensor> named() const;
};

size_t bottleneck_width(size_t d_model, size_t reduction);

Bottleneck build_bottleneck(size_t d_model, size_t width, uint64_t seed);

// Zero-init ups throughout: the bank is an exact identity at injection.
AdapterBank build_adapter_bank(size_t d_model, size_t n_layers, const AdapterConfig& config,
                               uint64_t seed);

Tensor bottleneck_forward(const Bottleneck& adapter, const Tensor& h);
Tensor coupling_apply(const CouplingNet& net, const Tensor& x);
Tensor invertible_forward(const InvertibleAdapter& inv, const Tensor& e);
Tensor invertible_inverse(const InvertibleAdapter& inv, const Tensor& v);

// Adaptation strategies and what they train.
enum class Strategy { EmbOnly, EmbThenAdpt, EmbAndAdpt };
enum class EmbeddingSet { Wte, WteWpe };

Strategy parse_strategy(const std::string& name);    // emb-only / emb-then-adpt / emb-and-adpt
std::string strategy_name(Strategy s);
EmbeddingSet parse_embedding_set(const std::string& name);  // "wte" / "wte,wpe"
std::string embedding_set_name(EmbeddingSet e);

struct StrategySpec {
    Strategy strategy = Strategy::EmbOnly;
    EmbeddingSet embedding_set = EmbeddingSet::WteWpe;
    AdapterConfig adapter_config;

    bool operator==(const StrategySpec&) const = default;
};

size_t phase_count(Strategy s);  // EmbThenAdpt has 2, others 1

// Names of the tensors trained in the given phase; everything else is frozen.
// Adapter phases train the full bank (bottlenecks + invertible adapter).
std::vector<std::string> trainable_names(const StrategySpec& spec, size_t phase,
                                         size_t n_layers);

}  // namespace langlab
