#include "langlab/model.hpp"

#include <algorithm>
#include <unordered_set>

#include "langlab/error.hpp"

namespace langlab {

void ModelConfig::validate() const {
    if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_ffn < 1 || vocab_size < 1 ||
        max_positions < 1) {
        throw ConfigError("model config: all dimensions must be >= 1");
    }
    if (d_model % n_heads != 0) {
        throw ConfigError("model config: d_model must be divisible by n_heads");
    }
}

std::vector<NamedTensor> ModelParams::named() const {
    std::vector<NamedTensor> out;
    out.emplace_back("wte", wte);
    out.emplace_back("wpe", wpe);
    for (size_t l = 0; l < layers.size(); ++l) {
        const LayerParams& lp = layers[l];
        const std::string p = "layer" + std::to_string(l) + ".";
        out.emplace_back(p + "attn.wq", lp.wq);
        out.emplace_back(p + "attn.bq", lp.bq);
        out.emplace_back(p + "attn.wk", lp.wk);
        out.emplace_back(p + "attn.bk", lp.bk);
        out.emplace_back(p + "attn.wv", lp.wv);
        out.emplace_back(p + "attn.bv", lp.bv);
        out.emplace_back(p + "attn.wo", lp.wo);
        out.emplace_back(p + "attn.bo", lp.bo);
        out.emplace_back(p + "ln1.g", lp.ln1.g);
        out.emplace_back(p + "ln1.b", lp.ln1.b);
        out.emplace_back(p + "ln2.g", lp.ln2.g);
        out.emplace_back(p + "ln2.b", lp.ln2.b);
        out.emplace_back(p + "ffn.win", lp.ffn_win);
        out.emplace_back(p + "ffn.bin", lp.ffn_bin);
        out.emplace_back(p + "ffn.wout", lp.ffn_wout);
        out.emplace_back(p + "ffn.bout", lp.ffn_bout);
    }
    out.emplace_back("lnf.g", lnf.g);
    out.emplace_back("lnf.b", lnf.b);
    return out;
}

std::vector<NamedTensor> Model::named() const {
    std::vector<NamedTensor> out = params.named();
    if (adapters) {
        auto more = adapters->named();
        out.insert(out.end(), more.begin(), more.end());
    }
    return out;
}

std::map<std::string, Tensor> Model::named_map() const {
    std::map<std::string, Tensor> out;
    for (auto& [name, t] : named()) out.emplace(name, t);
    return out;
}

Model build_model(const ModelConfig& config) {
    config.validate();
    Model m;
    m.config = config;
    const size_t d = config.d_model;
    // One seed stream per tensor, derived in canonical order, keeps init
    // deterministic and independent of how tensors are later touched.
    uint64_t next_seed = config.seed;
    auto w = [&](std::vector<size_t> shape) {
        return seeded_init(shape, InitSpec::normal(0.0, 0.02), next_seed++);
    };
    m.params.wte = w({config.vocab_size, d});
    m.params.wpe = w({config.max_positions, d});
    for (size_t l = 0; l < config.n_layers; ++l) {
        LayerParams lp;
        lp.wq = w({d, d});
        lp.bq = Tensor::zeros({d});
        lp.wk = w({d, d});
        lp.bk = Tensor::zeros({d});
        lp.wv = w({d, d});
        lp.bv = Tensor::zeros({d});
        lp.wo = w({d, d});
        lp.bo = Tensor::zeros({d});
        lp.ln1.g = Tensor::full({d}, 1.0f);
        lp.ln1.b = Tensor::zeros({d});
        lp.ln2.g = Tensor::full({d}, 1.0f);
        lp.ln2.b = Tensor::zeros({d});
        lp.ffn_win = w({d, config.d_ffn});
        lp.ffn_bin = Tensor::zeros({config.d_ffn});
        lp.ffn_wout = w({config.d_ffn, d});
        lp.ffn_bout = Tensor::zeros({d});
        m.params.layers.push_back(std::move(lp));
    }
    m.params.lnf.g = Tensor::full({d}, 1.0f);
    m.params.lnf.b = Tensor::zeros({d});
    return m;
}

void inject_adapters(Model& model, const AdapterConfig& config, uint64_t seed) {
    if (model.adapters) {
        throw ContractError("inject_adapters: model already has an adapter bank");
    }
    model.adapters = build_adapter_bank(model.config.d_model, model.config.n_layers, config, seed);
}

namespace {

void validate_ids(const Model& model, const IdBatch& ids) {
    if (ids.batch == 0 || ids.seq == 0) throw ContractError("forward: empty batch");
    if (ids.seq > model.config.max_positions) {
        throw ContractError("forward: sequence length " + std::to_string(ids.seq) +
                            " exceeds max_positions " +
                            std::to_string(model.config.max_positions));
    }
    for (int32_t id : ids.ids) {
        if (id < 0 || static_cast<size_t>(id) >= model.config.vocab_size) {
            throw ContractError("forward: token id " + std::to_string(id) + " out of range");
        }
    }
}

}  // namespace

Tensor forward_hidden(const Model& model, const IdBatch& ids, const ForwardOptions& opt) {
    validate_ids(model, ids);
    if (opt.task_adapters && opt.task_adapters->size() != model.config.n_layers) {
        throw ContractError("forward: task adapter count must equal n_layers");
    }
    const AdapterBank* bank = model.adapters ? &*model.adapters : nullptr;

    IdBatch pos;
    pos.batch = ids.batch;
    pos.seq = ids.seq;
    pos.ids.reserve(ids.batch * ids.seq);
    for (size_t b = 0; b < ids.batch; ++b) {
        for (size_t t = 0; t < ids.seq; ++t) pos.ids.push_back(static_cast<int32_t>(t));
    }

    Tensor h = add(embedding(model.params.wte, ids), embedding(model.params.wpe, pos));
    if (bank && bank->config.invertible) {
        h = invertible_forward(bank->inv, h);
    }
    for (size_t l = 0; l < model.config.n_layers; ++l) {
        const LayerParams& lp = model.params.layers[l];
        // Pre-norm attention sublayer.
        Tensor x = layer_norm(h, lp.ln1.g, lp.ln1.b);
        Tensor q = add_bias(matmul(x, lp.wq), lp.bq);
        Tensor k = add_bias(matmul(x, lp.wk), lp.bk);
        Tensor v = add_bias(matmul(x, lp.wv), lp.bv);
        Tensor a = attention_core(q, k, v, model.config.n_heads);
        h = add(h, add_bias(matmul(a, lp.wo), lp.bo));
        // Pre-norm FFN sublayer; adapters act on the branch before the
        // residual add, language adapter first, then task adapter.
        Tensor t = layer_norm(h, lp.ln2.g, lp.ln2.b);
        t = add_bias(matmul(t, lp.ffn_win), lp.ffn_bin);
        t = gelu(t);
        t = add_bias(matmul(t, lp.ffn_wout), lp.ffn_bout);
        if (bank && bank->config.language) {
            t = bottleneck_forward(bank->layers[l], t);
        }
        if (opt.task_adapters) {
            t = bottleneck_forward((*opt.task_adapters)[l], t);
        }
        h = add(h, t);
    }
    h = layer_norm(h, model.params.lnf.g, model.params.lnf.b);
    if (opt.invert_output && bank && bank->config.invertible) {
        h = invertible_inverse(bank->inv, h);
    }
    return h;
}

Tensor forward_logits(const Model& model, const IdBatch& ids, const ForwardOptions& opt) {
    Tensor h = forward_hidden(model, ids, opt);
    return matmul_nt(h, model.params.wte);  // tied head
}

Tensor lm_loss(const Model& model, const IdBatch& ids, const ForwardOptions& opt) {
    if (ids.seq < 2) throw ContractError("lm_loss: sequence length must be >= 2");
    Tensor logits = forward_logits(model, ids, opt);
    std::vector<int32_t> targets(ids.batch * ids.seq, -1);
    for (size_t b = 0; b < ids.batch; ++b) {
        for (size_t t = 0; t + 1 < ids.seq; ++t) {
            targets[b * ids.seq + t] = ids.at(b, t + 1);
        }
    }
    return cross_entropy_rows(logits, targets);
}

ParamCounts count_params(const Model& model, const StrategySpec* spec) {
    ParamCounts c;
    std::unordered_set<std::string> trainable;
    if (spec) {
        for (size_t phase = 0; phase < phase_count(spec->strategy); ++phase) {
            for (auto& n : trainable_names(*spec, phase, model.config.n_layers)) {
                trainable.insert(n);
            }
        }
    }

    for (const auto& [name, t] : model.named()) {
        const size_t n = t.numel();
        c.total += n;
        if (spec && trainable.count(name)) c.trainable += n;
        if (name == "wte") {
            c.by_group["wte"] += n;
        } else if (name == "wpe") {
            c.by_group["wpe"] += n;
        } else if (name.rfind("inv.", 0) == 0) {
            c.by_group["invertible_adapter"] += n;
        } else if (name.find(".adpt.") != std::string::npos) {
            c.by_group["language_adapters"] += n;
        } else {
            c.by_group["transformer"] += n;
        }
    }
    if (!spec) c.trainable = c.total;
    return c;
}

}  // namespace langlab
