#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "jetlab/graph.hpp"
#include "jetlab/params.hpp"
#include "jetlab/rng.hpp"

namespace jetlab {

/// Set-transformer classifier: linear embedding with ReLU, a stack of
/// post-norm encoder layers (multi-head self-attention and a ReLU feed-forward
/// block, each wrapped in a residual add followed by layer norm), masked mean
/// pooling over constituents, a ReLU reduction head, one scalar logit.
struct ModelConfig {
    int input_dim = 7;
    int d_model = 32;
    int n_layers = 2;
    int n_heads = 2;
    int ff_dim = 32;
    std::vector<int> head_dims = {16}; // reduction stages after pooling
    int n_max = 32;

    // Inventory switches kept for the parameter-count reconciliation study.
    bool embed_layer_norm = false;
    bool final_layer_norm = false;
    bool final_bias = true;

    void validate() const {
        if (input_dim < 1 || d_model < 1 || n_layers < 1 || ff_dim < 1 || n_max < 1)
            throw ConfigError("ModelConfig: dimensions must be positive");
        if (n_heads < 1 || d_model % n_heads != 0)
            throw ConfigError("ModelConfig: d_model must be divisible by n_heads");
        if (head_dims.empty()) throw ConfigError("ModelConfig: head_dims must be non-empty");
        for (int h : head_dims)
            if (h < 1) throw ConfigError("ModelConfig: head widths must be positive");
    }

    nlohmann::json to_json() const {
        return {{"input_dim", input_dim}, {"d_model", d_model},   {"n_layers", n_layers},
                {"n_heads", n_heads},     {"ff_dim", ff_dim},     {"head_dims", head_dims},
                {"n_max", n_max},         {"embed_layer_norm", embed_layer_norm},
                {"final_layer_norm", final_layer_norm}, {"final_bias", final_bias}};
    }

    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        c.input_dim = j.value("input_dim", 7);
        c.d_model = j.at("d_model").get<int>();
        c.n_layers = j.at("n_layers").get<int>();
        c.n_heads = j.at("n_heads").get<int>();
        c.ff_dim = j.at("ff_dim").get<int>();
        c.head_dims = j.at("head_dims").get<std::vector<int>>();
        c.n_max = j.value("n_max", 32);
        c.embed_layer_norm = j.value("embed_layer_norm", false);
        c.final_layer_norm = j.value("final_layer_norm", false);
        c.final_bias = j.value("final_bias", true);
        c.validate();
        return c;
    }
};

inline std::shared_ptr<const ParamLayout> make_layout(const ModelConfig& c) {
    c.validate();
    auto layout = std::make_shared<ParamLayout>();
    layout->add("embed.w", {c.input_dim, c.d_model});
    layout->add("embed.b", {c.d_model});
    if (c.embed_layer_norm) {
        layout->add("embed_ln.g", {c.d_model});
        layout->add("embed_ln.b", {c.d_model});
    }
    for (int l = 0; l < c.n_layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        for (const char* t : {"wq", "wk", "wv", "wo"}) {
            layout->add(p + "attn." + t, {c.d_model, c.d_model});
            layout->add(p + "attn.b" + std::string(1, t[1]), {c.d_model});
        }
        layout->add(p + "ln1.g", {c.d_model});
        layout->add(p + "ln1.b", {c.d_model});
        layout->add(p + "ff.w1", {c.d_model, c.ff_dim});
        layout->add(p + "ff.b1", {c.ff_dim});
        layout->add(p + "ff.w2", {c.ff_dim, c.d_model});
        layout->add(p + "ff.b2", {c.d_model});
        layout->add(p + "ln2.g", {c.d_model});
        layout->add(p + "ln2.b", {c.d_model});
    }
    if (c.final_layer_norm) {
        layout->add("final_ln.g", {c.d_model});
        layout->add("final_ln.b", {c.d_model});
    }
    int prev = c.d_model;
    for (std::size_t k = 0; k < c.head_dims.size(); ++k) {
        layout->add("head" + std::to_string(k) + ".w", {prev, c.head_dims[k]});
        layout->add("head" + std::to_string(k) + ".b", {c.head_dims[k]});
        prev = c.head_dims[k];
    }
    layout->add("out.w", {prev, 1});
    if (c.final_bias) layout->add("out.b", {1});
    return layout;
}

/// Closed-form trainable-parameter count:
///   embed:      input_dim*d + d                  (+2d with embedding norm)
///   per layer:  4(d^2 + d) + 4d + 2*d*ff + ff + d
///   final norm: +2d when enabled
///   head:       sum over stages of (prev*h + h), then prev*1 (+1 with bias).
inline long param_count(const ModelConfig& c) {
    c.validate();
    const long d = c.d_model, ff = c.ff_dim;
    long n = static_cast<long>(c.input_dim) * d + d;
    if (c.embed_layer_norm) n += 2 * d;
    n += c.n_layers * (4 * (d * d + d) + 4 * d + 2 * d * ff + ff + d);
    if (c.final_layer_norm) n += 2 * d;
    long prev = d;
    for (int h : c.head_dims) {
        n += prev * h + h;
        prev = h;
    }
    n += prev + (c.final_bias ? 1 : 0);
    return n;
}

/// Fan-in-scaled uniform init U(-1/sqrt(fan_in), +1/sqrt(fan_in)) for weights,
/// zero biases, unit layer-norm gains; deterministic in the seed.
inline ParamVector init_params(const ModelConfig& c, std::uint64_t seed) {
    auto layout = make_layout(c);
    ParamVector w(layout);
    RngStream rng(derive_seed(seed, 0x1217));
    for (const auto& e : layout->entries) {
        const bool is_weight = e.shape.size() == 2;
        const bool is_gain = e.name.ends_with(".g");
        if (is_weight) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(e.shape[0]));
            for (long i = 0; i < e.size; ++i)
                w.values[e.offset + i] = rng.uniform(-bound, bound);
        } else if (is_gain) {
            for (long i = 0; i < e.size; ++i) w.values[e.offset + i] = 1.0;
        }
        // biases and layer-norm offsets stay zero
    }
    return w;
}

/// Model input: padded feature tensor, validity mask, binary labels.
struct Batch {
    int b = 0;
    int n = 0;                        // padded slot count
    std::vector<double> features;     // [b, n, input_dim]
    std::vector<std::uint8_t> mask;   // [b, n]
    std::vector<double> labels;       // [b]

    ad::SlotMask slot_mask() const { return {b, n, mask.data()}; }

    void validate() const {
        for (int i = 0; i < b; ++i) {
            bool any = false;
            for (int j = 0; j < n; ++j) any = any || mask[static_cast<long>(i) * n + j];
            if (!any) throw DomainError("Batch: jet " + std::to_string(i) + " has no unmasked slot");
        }
    }
};

/// Build the classifier forward pass on a tape; returns the [B] logits node.
template <typename T>
typename ad::Graph<T>::Index model_forward(ad::Graph<T>& g, const ad::BoundParams<T>& bp,
                                           const ModelConfig& c, const Batch& batch) {
    using Tn = ad::Tensor<T>;
    if (batch.b < 1 || batch.n < 1 || static_cast<long>(batch.features.size()) !=
        static_cast<long>(batch.b) * batch.n * c.input_dim)
        throw ContractError("model_forward: batch/feature shape mismatch");
    if (!bp.layout->compatible_with(*make_layout(c)))
        throw ContractError("model_forward: params layout does not match config");
    batch.validate();
    const auto mask = batch.slot_mask();

    Tn x({batch.b, batch.n, c.input_dim});
    for (long i = 0; i < x.numel(); ++i) x.data[i] = T(batch.features[i]);
    auto h = g.relu(g.linear(g.input(std::move(x), false, "features"),
                             bp.at("embed.w"), bp.at("embed.b")));
    if (c.embed_layer_norm) h = g.layer_norm(h, bp.at("embed_ln.g"), bp.at("embed_ln.b"));

    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(c.d_model / c.n_heads));
    for (int l = 0; l < c.n_layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        auto q = g.split_heads(g.linear(h, bp.at(p + "attn.wq"), bp.at(p + "attn.bq")), c.n_heads);
        auto k = g.split_heads(g.linear(h, bp.at(p + "attn.wk"), bp.at(p + "attn.bk")), c.n_heads);
        auto v = g.split_heads(g.linear(h, bp.at(p + "attn.wv"), bp.at(p + "attn.bv")), c.n_heads);
        auto att = g.masked_softmax(g.scale(g.bmm(q, k, /*trans_b=*/true), inv_sqrt_dh), mask);
        auto ctx = g.merge_heads(g.bmm(att, v), c.n_heads);
        auto attn_out = g.linear(ctx, bp.at(p + "attn.wo"), bp.at(p + "attn.bo"));
        h = g.layer_norm(g.add(h, attn_out), bp.at(p + "ln1.g"), bp.at(p + "ln1.b"));
        auto ff = g.linear(g.relu(g.linear(h, bp.at(p + "ff.w1"), bp.at(p + "ff.b1"))),
                           bp.at(p + "ff.w2"), bp.at(p + "ff.b2"));
        h = g.layer_norm(g.add(h, ff), bp.at(p + "ln2.g"), bp.at(p + "ln2.b"));
    }
    if (c.final_layer_norm) h = g.layer_norm(h, bp.at("final_ln.g"), bp.at("final_ln.b"));

    auto r = g.masked_mean_pool(h, mask);
    for (std::size_t k = 0; k < c.head_dims.size(); ++k) {
        const std::string p = "head" + std::to_string(k);
        r = g.relu(g.linear(r, bp.at(p + ".w"), bp.at(p + ".b")));
    }
    typename ad::Graph<T>::Index logits;
    if (c.final_bias) {
        logits = g.linear(r, bp.at("out.w"), bp.at("out.b"));
    } else {
        logits = g.matmul(r, bp.at("out.w"));
    }
    return g.reshape(logits, {batch.b});
}

/// Plain evaluation convenience: logits for a batch, no tape kept around.
inline std::vector<double> forward_logits(const ParamVector& w, const ModelConfig& c,
                                          const Batch& batch) {
    ad::Graph<double> g;
    auto bp = ad::bind_params(g, w);
    const auto out = model_forward(g, bp, c, batch);
    return g.value(out).data;
}

} // namespace jetlab
