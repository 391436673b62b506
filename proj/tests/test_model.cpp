#include <doctest.h>

#include <cmath>
#include <vector>

#include "langlab/autograd.hpp"
#include "langlab/error.hpp"
#include "langlab/model.hpp"
#include "langlab/ops.hpp"
#include "langlab/rng.hpp"

using namespace langlab;

namespace {

// Test-side closed form, written independently of the enumeration in the
// library: embeddings + per-layer attention/layer-norm/FFN + final norm.
size_t closed_form_total(const ModelConfig& c) {
    const size_t d = c.d_model, f = c.d_ffn;
    const size_t attn = 4 * d * d + 4 * d;
    const size_t norms = 4 * d;
    const size_t ffn = d * f + f + f * d + d;
    return c.vocab_size * d + c.max_positions * d + c.n_layers * (attn + norms + ffn) + 2 * d;
}

IdBatch ids_of(std::vector<std::vector<int32_t>> rows) { return IdBatch::from_rows(rows); }

}  // namespace

TEST_CASE("desk model has exactly 141,056 parameters") {
    const Model m = build_model(ModelConfig{});
    const ParamCounts c = count_params(m);
    CHECK(c.total == 141056);
    CHECK(c.total == closed_form_total(ModelConfig{}));
    CHECK(c.by_group.at("wte") == 512 * 64);
    CHECK(c.by_group.at("wpe") == 128 * 64);
    CHECK(c.by_group.at("transformer") == 141056 - 512 * 64 - 128 * 64);
    CHECK(c.by_group.count("language_adapters") == 0);
    // no spec: everything counts as trainable
    CHECK(c.trainable == c.total);
}

TEST_CASE("closed form scales into the published-model range") {
    ModelConfig paper;
    paper.n_layers = 24;
    paper.n_heads = 16;
    paper.d_model = 2048;
    paper.d_ffn = 8192;
    paper.vocab_size = 130000;
    paper.max_positions = 1024;
    const size_t total = closed_form_total(paper);
    CHECK(total >= 1'200'000'000);
    CHECK(total <= 1'600'000'000);

    // The enumeration agrees with the closed form at an intermediate size
    // that is still cheap to materialize.
    ModelConfig mid;
    mid.n_layers = 3;
    mid.n_heads = 4;
    mid.d_model = 128;
    mid.d_ffn = 512;
    mid.vocab_size = 1000;
    mid.max_positions = 256;
    CHECK(count_params(build_model(mid)).total == closed_form_total(mid));
}

TEST_CASE("the LM head is tied: no separate head tensor exists") {
    const Model m = build_model(ModelConfig{});
    for (const auto& [name, t] : m.named()) {
        CHECK(name.find("head") == std::string::npos);
        CHECK(name.find("lm_") == std::string::npos);
    }
    // 2 embeddings + 2 layers x 16 tensors + final norm's 2
    CHECK(m.named().size() == 2 + 2 * 16 + 2);
}

TEST_CASE("build_model is deterministic in the seed") {
    ModelConfig cfg;
    cfg.seed = 41;
    const Model a = build_model(cfg);
    const Model b = build_model(cfg);
    cfg.seed = 42;
    const Model c = build_model(cfg);

    const auto an = a.named(), bn = b.named(), cn = c.named();
    bool any_diff = false;
    for (size_t i = 0; i < an.size(); ++i) {
        CHECK(tensor_checksum(an[i].second) == tensor_checksum(bn[i].second));
        if (tensor_checksum(an[i].second) != tensor_checksum(cn[i].second)) any_diff = true;
    }
    CHECK(any_diff);
}

TEST_CASE("forward shapes") {
    const Model m = build_model(ModelConfig{});
    const IdBatch ids = ids_of({{1, 2, 3, 4}, {5, 6, 7, 8}});
    const Tensor h = forward_hidden(m, ids);
    CHECK(h.shape() == std::vector<size_t>{2, 4, 64});
    const Tensor logits = forward_logits(m, ids);
    CHECK(logits.shape() == std::vector<size_t>{2, 4, 512});
}

TEST_CASE("forward rejects out-of-range ids and overlong sequences") {
    const Model m = build_model(ModelConfig{});
    CHECK_THROWS_AS(forward_logits(m, ids_of({{512}})), ContractError);
    CHECK_THROWS_AS(forward_logits(m, ids_of({{-1}})), ContractError);
    std::vector<int32_t> too_long(129, 1);
    CHECK_THROWS_AS(forward_logits(m, ids_of({too_long})), ContractError);
}

TEST_CASE("model-level causality is bitwise") {
    const Model m = build_model(ModelConfig{});
    const IdBatch a = ids_of({{10, 20, 30, 40, 50, 60}});
    const IdBatch b = ids_of({{10, 20, 30, 40, 499, 1}});  // positions 4,5 differ
    const Tensor la = forward_logits(m, a);
    const Tensor lb = forward_logits(m, b);
    for (size_t t = 0; t < 4; ++t) {
        for (size_t v = 0; v < 512; ++v) {
            CHECK(la.vec()[t * 512 + v] == lb.vec()[t * 512 + v]);
        }
    }
}

TEST_CASE("tied-head logits equal hidden times wte^T") {
    const Model m = build_model(ModelConfig{});
    const IdBatch ids = ids_of({{3, 1, 4}});
    const Tensor h = forward_hidden(m, ids);
    const Tensor logits = forward_logits(m, ids);
    // spot-check position 2 against a test-side dot product in f64
    for (size_t v = 0; v < 512; v += 37) {
        double dot = 0.0;
        for (size_t c = 0; c < 64; ++c) {
            dot += static_cast<double>(h.vec()[2 * 64 + c]) * m.params.wte.vec()[v * 64 + c];
        }
        CHECK(logits.vec()[2 * 512 + v] == doctest::Approx(dot).epsilon(1e-4));
    }
}

TEST_CASE("zeroed embeddings give the exact uniform LM loss ln(512)") {
    const Model m = build_model(ModelConfig{});
    std::fill(m.params.wte.vec().begin(), m.params.wte.vec().end(), 0.0f);
    const Tensor loss = lm_loss(m, ids_of({{1, 2, 3, 4, 5, 6, 7, 8}}));
    CHECK(loss.value() == doctest::Approx(std::log(512.0)).epsilon(1e-9));
}

TEST_CASE("lm_loss shifts targets by one position") {
    const Model m = build_model(ModelConfig{});
    const IdBatch ids = ids_of({{7, 9}});
    const Tensor logits = forward_logits(m, ids);
    // expected: cross-entropy of position 0's logits against target 9
    double logz = 0.0, mx = -1e30;
    for (size_t v = 0; v < 512; ++v) mx = std::max(mx, (double)logits.vec()[v]);
    for (size_t v = 0; v < 512; ++v) logz += std::exp((double)logits.vec()[v] - mx);
    logz = mx + std::log(logz);
    const double expected = logz - logits.vec()[9];
    CHECK(lm_loss(m, ids).value() == doctest::Approx(expected).epsilon(1e-6));

    CHECK_THROWS_AS(lm_loss(m, ids_of({{7}})), ContractError);
}

TEST_CASE("config validation") {
    ModelConfig bad;
    bad.d_model = 65;  // not divisible by n_heads=2
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = ModelConfig{};
    bad.n_layers = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK_NOTHROW(ModelConfig{}.validate());
}

TEST_CASE("full desk model passes a gradient check") {
    Model m = build_model(ModelConfig{});
    inject_adapters(m, AdapterConfig{}, 123);
    const IdBatch ids = ids_of({{1, 2, 3, 4, 5, 6, 7, 8}, {9, 10, 11, 12, 13, 14, 15, 16}});
    std::vector<NamedTensor> params = m.named();
    // Freshly injected adapters are identities with near-zero gradients
    // everywhere, which finite differences cannot resolve; randomize them so
    // every path carries a normal-scale gradient.
    Rng rng(4242);
    for (auto& [name, t] : params) {
        t.set_requires_grad(true);
        if (name.find(".adpt.") != std::string::npos || name.rfind("inv.", 0) == 0) {
            for (float& x : t.vec()) x = 0.3f * static_cast<float>(rng.uniform() - 0.5);
        }
    }
    auto loss = [&] { return lm_loss(m, ids); };
    // The f32 forward reproduces the loss only to ~2e-8, so at h=1e-3 the
    // difference quotient carries ~1e-5 absolute noise; floor 2e-2 turns the
    // 1e-3 tolerance into a 2e-5 absolute allowance at that scale while still
    // flagging any real mismatch on coordinates above ~2e-5.
    const GradCheckReport r = grad_check(loss, params, 1e-3, 1e-3, 3, 2024, /*floor=*/2e-2);
    if (!r.passed) {
        MESSAGE("worst: ", r.worst.name, "[", r.worst.index, "] analytic=", r.worst.analytic,
                " numeric=", r.worst.numeric, " rel=", r.worst.rel_err);
    }
    CHECK(r.passed);
    CHECK(r.checked > 0);
}

TEST_CASE("count_params per strategy on the desk model") {
    Model m = build_model(ModelConfig{});
    inject_adapters(m, AdapterConfig{}, 5);

    // language adapters: 2 layers x (64*4 + 4 + 4*64 + 64); invertible: two
    // coupling nets per half, width 32 -> 16
    const size_t lang = 2 * (64 * 4 + 4 + 4 * 64 + 64);
    const size_t inv = 2 * (32 * 16 + 16 + 16 * 32 + 32);
    const ParamCounts base = count_params(m);
    CHECK(base.by_group.at("language_adapters") == lang);
    CHECK(base.by_group.at("invertible_adapter") == inv);
    CHECK(base.total == 141056 + lang + inv);

    StrategySpec spec;
    spec.strategy = Strategy::EmbOnly;
    spec.embedding_set = EmbeddingSet::WteWpe;
    CHECK(count_params(m, &spec).trainable == 512 * 64 + 128 * 64);
    spec.embedding_set = EmbeddingSet::Wte;
    CHECK(count_params(m, &spec).trainable == 512 * 64);

    spec.strategy = Strategy::EmbAndAdpt;
    CHECK(count_params(m, &spec).trainable == 512 * 64 + lang + inv);
    spec.strategy = Strategy::EmbThenAdpt;  // union across both phases
    CHECK(count_params(m, &spec).trainable == 512 * 64 + lang + inv);
}
