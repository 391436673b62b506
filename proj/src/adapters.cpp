#include "langlab/adapters.hpp"

#include "langlab/error.hpp"
#include "langlab/ops.hpp"

namespace langlab {

void AdapterConfig::validate(size_t d_model) const {
    if (reduction == 0) throw ConfigError("adapter reduction must be >= 1");
    if (inv_reduction == 0) throw ConfigError("adapter inv_reduction must be >= 1");
    if (language && d_model / reduction < 1) {
        throw ConfigError("adapter reduction leaves no bottleneck width (floor(d/r) < 1)");
    }
    if (invertible) {
        if (d_model % 2 != 0) {
            throw ConfigError("invertible adapter requires an even d_model");
        }
        if ((d_model / 2) / inv_reduction < 1) {
            throw ConfigError("inv_reduction leaves no coupling width");
        }
    }
}

size_t bottleneck_width(size_t d_model, size_t reduction) { return d_model / reduction; }

Bottleneck build_bottleneck(size_t d_model, size_t width, uint64_t seed) {
    Bottleneck a;
    a.down = seeded_init({d_model, width}, InitSpec::normal(0.0, 0.02), seed);
    a.down_bias = Tensor::zeros({width});
    a.up = Tensor::zeros({width, d_model});
    a.up_bias = Tensor::zeros({d_model});
    return a;
}

namespace {

CouplingNet build_coupling(size_t half, size_t width, uint64_t seed) {
    CouplingNet n;
    n.down = seeded_init({half, width}, InitSpec::normal(0.0, 0.02), seed);
    n.down_bias = Tensor::zeros({width});
    n.up = Tensor::zeros({width, half});
    n.up_bias = Tensor::zeros({half});
    return n;
}

}  // namespace

AdapterBank build_adapter_bank(size_t d_model, size_t n_layers, const AdapterConfig& config,
                               uint64_t seed) {
    config.validate(d_model);
    AdapterBank bank;
    bank.config = config;
    if (config.invertible) {
        const size_t half = d_model / 2;
        const size_t c = half / config.inv_reduction;
        bank.inv.f = build_coupling(half, c, seed);
        bank.inv.g = build_coupling(half, c, seed + 1);
    }
    if (config.language) {
        const size_t b = bottleneck_width(d_model, config.reduction);
        for (size_t l = 0; l < n_layers; ++l) {
            bank.layers.push_back(build_bottleneck(d_model, b, seed + 2 + l));
        }
    }
    return bank;
}

std::vector<NamedTensor> AdapterBank::named() const {
    std::vector<NamedTensor> out;
    if (config.invertible) {
        out.emplace_back("inv.F.down", inv.f.down);
        out.emplace_back("inv.F.down_bias", inv.f.down_bias);
        out.emplace_back("inv.F.up", inv.f.up);
        out.emplace_back("inv.F.up_bias", inv.f.up_bias);
        out.emplace_back("inv.G.down", inv.g.down);
        out.emplace_back("inv.G.down_bias", inv.g.down_bias);
        out.emplace_back("inv.G.up", inv.g.up);
        out.emplace_back("inv.G.up_bias", inv.g.up_bias);
    }
    for (size_t l = 0; l < layers.size(); ++l) {
        const std::string p = "layer" + std::to_string(l) + ".adpt.";
        out.emplace_back(p + "down", layers[l].down);
        out.emplace_back(p + "down_bias", layers[l].down_bias);
        out.emplace_back(p + "up", layers[l].up);
        out.emplace_back(p + "up_bias", layers[l].up_bias);
    }
    return out;
}

Tensor bottleneck_forward(const Bottleneck& adapter, const Tensor& h) {
    Tensor t = add_bias(matmul(h, adapter.down), adapter.down_bias);
    t = relu(t);
    t = add_bias(matmul(t, adapter.up), adapter.up_bias);
    return add(h, t);
}

Tensor coupling_apply(const CouplingNet& net, const Tensor& x) {
    Tensor t = add_bias(matmul(x, net.down), net.down_bias);
    t = relu(t);
    return add_bias(matmul(t, net.up), net.up_bias);
}

Tensor invertible_forward(const InvertibleAdapter& inv, const Tensor& e) {
    if (e.shape().back() % 2 != 0) {
        throw ConfigError("invertible_forward: last dim must be even");
    }
    Tensor e1 = split_half(e, 0);
    Tensor e2 = split_half(e, 1);
    Tensor v1 = add(e1, coupling_apply(inv.f, e2));
    Tensor v2 = add(e2, coupling_apply(inv.g, v1));
    return concat_halves(v1, v2);
}

Tensor invertible_inverse(const InvertibleAdapter& inv, const Tensor& v) {
    if (v.shape().back() % 2 != 0) {
        throw ConfigError("invertible_inverse: last dim must be even");
    }
    Tensor v1 = split_half(v, 0);
    Tensor v2 = split_half(v, 1);
    Tensor e2 = sub(v2, coupling_apply(inv.g, v1));
    Tensor e1 = sub(v1, coupling_apply(inv.f, e2));
    return concat_halves(e1, e2);
}

Strategy parse_strategy(const std::string& name) {
    if (name == "emb-only") return Strategy::EmbOnly;
    if (name == "emb-then-adpt") return Strategy::EmbThenAdpt;
    if (name == "emb-and-adpt") return Strategy::EmbAndAdpt;
    throw ConfigError("unknown strategy '" + name +
                      "' (expected emb-only, emb-then-adpt, or emb-and-adpt)");
}

std::string strategy_name(Strategy s) {
    switch (s) {
        case Strategy::EmbOnly: return "emb-only";
        case Strategy::EmbThenAdpt: return "emb-then-adpt";
        case Strategy::EmbAndAdpt: return "emb-and-adpt";
    }
    throw ContractError("strategy_name: invalid enum value");
}

EmbeddingSet parse_embedding_set(const std::string& name) {
    if (name == "wte") return EmbeddingSet::Wte;
    if (name == "wte,wpe") return EmbeddingSet::WteWpe;
    throw ConfigError("unknown embedding set '" + name + "' (expected 'wte' or 'wte,wpe')");
}

std::string embedding_set_name(EmbeddingSet e) {
    return e == EmbeddingSet::Wte ? "wte" : "wte,wpe";
}

size_t phase_count(Strategy s) { return s == Strategy::EmbThenAdpt ? 2 : 1; }

std::vector<std::string> trainable_names(const StrategySpec& spec, size_t phase,
                                         size_t n_layers) {
    if (phase >= phase_count(spec.strategy)) {
        throw ContractError("trainable_names: phase " + std::to_string(phase) +
                            " invalid for strategy " + strategy_name(spec.strategy));
    }
    std::vector<std::string> names;
    auto add_embeddings = [&] {
        names.push_back("wte");
        if (spec.embedding_set == EmbeddingSet::WteWpe) names.push_back("wpe");
    };
    auto add_adapters = [&] {
        if (spec.adapter_config.invertible) {
            for (const char* net : {"F", "G"}) {
                for (const char* part : {"down", "down_bias", "up", "up_bias"}) {
                    names.push_back(std::string("inv.") + net + "." + part);
                }
            }
        }
        if (spec.adapter_config.language) {
            for (size_t l = 0; l < n_layers; ++l) {
                const std::string p = "layer" + std::to_string(l) + ".adpt.";
                for (const char* part : {"down", "down_bias", "up", "up_bias"}) {
                    names.push_back(p + part);
                }
            }
        }
    };
    switch (spec.strategy) {
        case Strategy::EmbOnly:
            add_embeddings();
            break;
        case Strategy::EmbThenAdpt:
            if (phase == 0) {
                add_embeddings();
            } else {
                add_adapters();
            }
            break;
        case Strategy::EmbAndAdpt:
            add_embeddings();
            add_adapters();
            break;
    }
    return names;
}

}  // namespace langlab
