#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "augicl/matrix.hpp"
#include "augicl/numerics.hpp"
#include "augicl/prompt_codec.hpp"

namespace augicl {

enum class Activation : uint8_t { softmax_keys, linear, relu };

// Token-wise maps applied after each attention layer. All of them decide from
// token content alone (flags, class selector, step index), per the token-wise
// MLP contract. LinkFn::custom is the seam for substituting approximate MLPs.
enum class LinkKind : uint8_t {
    identity,
    gate_unlabeled_weights,  // keep gamma only on unlabeled tokens, refresh norm slot
    scale_mean_update,       // shrink means by the aggregated weight, arm update scale
    clear_workspace,         // zero the agg workspace on reasoning tokens
    custom,
};

// Key/query admissibility per column kind. Masked pairs contribute score -inf
// under softmax and weight 0 under linear/relu.
struct KeyMask {
    std::array<std::array<bool, 3>, 3> allow{};  // [key kind][query kind]

    static KeyMask all() {
        KeyMask m;
        for (auto& row : m.allow) row.fill(true);
        return m;
    }
    static KeyMask pair(ColumnKind key, ColumnKind query) {
        KeyMask m;
        m.allow[static_cast<size_t>(key)][static_cast<size_t>(query)] = true;
        return m;
    }
    bool operator()(ColumnKind key, ColumnKind query) const {
        return allow[static_cast<size_t>(key)][static_cast<size_t>(query)];
    }
};

using TokenMap = std::function<void(std::span<double>)>;

struct LayerParams {
    Matrix qk;  // product form, score(key a, query b) = h_a^T qk h_b
    Matrix v;
    Activation activation = Activation::linear;
    KeyMask mask = KeyMask::all();
    LinkKind link = LinkKind::identity;
    TokenMap custom_link;  // used when link == LinkKind::custom
};

struct EmConstants {
    double alpha1 = 0.0;   // alpha / M_u, update-scale numerator
    double alpha2 = 4.0;   // T', update-scale denominator offset
    double beta = 50.0;    // step-recency weight in layer-1 scores
    double w_scale = 1.0;  // scalar w of the norm slot, -(w/2)||mu||^2
    double alpha = 1.0;    // step-size numerator the schedule was built from
    int n_labeled = 0;
    int n_unlabeled = 0;
};

struct TransformerParams {
    std::array<LayerParams, 4> layers;
    TokenLayout layout;
    EmConstants constants;
};

// H + V * H * sigma(scores), scores over keys per query, residual connection.
inline Matrix attention_forward(const Matrix& H, std::span<const ColumnKind> kinds,
                                const LayerParams& layer) {
    const int D = H.rows();
    const int L = H.cols();
    if (layer.qk.rows() != D || layer.qk.cols() != D || layer.v.rows() != D || layer.v.cols() != D)
        throw layout_error("attention_forward: parameter shape does not match sequence height");
    if (static_cast<int>(kinds.size()) != L)
        throw layout_error("attention_forward: column-kind count mismatch");

    // scores(a, b) = h_a^T (QK) h_b, computed as (QK^T H)^T column dots
    const Matrix P = matmul(layer.qk, H);  // P(:, b) = QK h_b
    Matrix S(L, L);                        // key-major columns per query
    const bool use_softmax = layer.activation == Activation::softmax_keys;
    for (int b = 0; b < L; ++b) {
        auto pb = P.col(b);
        auto sb = S.col(b);
        for (int a = 0; a < L; ++a) {
            if (!layer.mask(kinds[static_cast<size_t>(a)], kinds[static_cast<size_t>(b)])) {
                sb[static_cast<size_t>(a)] = use_softmax ? kNegInf : 0.0;
                continue;
            }
            sb[static_cast<size_t>(a)] = dot(H.col(a), pb);
        }
        switch (layer.activation) {
            case Activation::softmax_keys:
                softmax_inplace(sb);
                break;
            case Activation::linear:
                break;
            case Activation::relu:
                for (double& s : sb) s = s > 0.0 ? s : 0.0;
                break;
        }
    }
    Matrix out = matmul(layer.v, matmul(H, S));
    out += H;
    return out;
}

namespace detail {

// Returns the class-selector index of a reasoning token, or -1 for data
// tokens (their selector rows are all zero).
inline int selector_index(std::span<const double> col, const TokenLayout& L) {
    for (int i = 0; i < L.C; ++i)
        if (col[static_cast<size_t>(L.class_row(i))] > 0.5) return i;
    return -1;
}

inline void link_gate_unlabeled(std::span<double> col, const TokenLayout& L, double w_scale) {
    const double gate = col[static_cast<size_t>(L.unlabeled_flag_row())];
    for (int i = 0; i < L.C; ++i) col[static_cast<size_t>(L.gamma_row(i))] *= gate;
    double nrm = 0.0;
    for (int r = 0; r < L.d; ++r) {
        const double v = col[static_cast<size_t>(L.mean_row(r))];
        nrm += v * v;
    }
    col[static_cast<size_t>(L.norm_row())] = -0.5 * w_scale * nrm;
}

inline void link_scale_mean_update(std::span<double> col, const TokenLayout& L,
                                   const EmConstants& c) {
    const int i = selector_index(col, L);
    if (i < 0) return;
    const double tau = col[static_cast<size_t>(L.step_row())];
    if (tau > 0.5) {
        const double agg_i = col[static_cast<size_t>(L.agg_row(i))];
        const double factor = 1.0 - agg_i / (tau * (tau + c.alpha2));
        for (int r = 0; r < L.d; ++r) col[static_cast<size_t>(L.mean_row(r))] *= factor;
    }
    // Arm the update-scale carrier consumed by the next layer's scores; step 0
    // stays disarmed so the aggregation layers are inert on the initial block.
    const double scale = tau > 0.5 ? c.alpha1 / (tau + c.alpha2) : 0.0;
    for (int k = 0; k < L.C; ++k)
        col[static_cast<size_t>(L.agg_row(k))] = (k == i) ? scale : 0.0;
}

inline void link_clear_workspace(std::span<double> col, const TokenLayout& L) {
    if (selector_index(col, L) < 0) return;
    for (int k = 0; k < L.C; ++k) col[static_cast<size_t>(L.agg_row(k))] = 0.0;
}

} // namespace detail

inline Matrix mlp_forward(const Matrix& H, const TokenLayout& layout, LinkKind link,
                          const EmConstants& constants, const TokenMap& custom = {}) {
    Matrix out = H;
    for (int c = 0; c < out.cols(); ++c) {
        auto col = out.col(c);
        switch (link) {
            case LinkKind::identity:
                break;
            case LinkKind::gate_unlabeled_weights:
                detail::link_gate_unlabeled(col, layout, constants.w_scale);
                break;
            case LinkKind::scale_mean_update:
                detail::link_scale_mean_update(col, layout, constants);
                break;
            case LinkKind::clear_workspace:
                detail::link_clear_workspace(col, layout);
                break;
            case LinkKind::custom:
                if (!custom) throw config_error("mlp_forward: custom link without a map");
                custom(col);
                break;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Explicit 4-layer construction.
//
// Layer 1 (softmax, unlabeled queries over reasoning keys): score =
//   norm + x^T W mu + beta*tau, i.e. the full-history class weight; the value
//   path copies each key's class selector into the query's gamma slot.
// Layers 2-3 (linear): aggregate gamma over unlabeled tokens, scale by the
//   step size alpha1/(tau+alpha2), and apply the mean update.
// Layer 4 (relu, reasoning queries over labeled keys): score =
//   (C/N)(y^T e_i - tau), positive only for same-class keys at step 0, adding
//   the labeled plug-in initialization.
// ---------------------------------------------------------------------------

inline TransformerParams build_em_transformer(const TokenLayout& layout, const Matrix& W,
                                              double beta, double alpha, double t_prime,
                                              int n_unlabeled, int n_labeled, double w_scale) {
    if (beta <= 0.0 || alpha <= 0.0 || t_prime <= 0.0)
        throw parameter_error("build_em_transformer: beta, alpha, t_prime must be positive");
    if (W.rows() != layout.d || W.cols() != layout.d)
        throw parameter_error("build_em_transformer: W must be d x d");
    if (n_unlabeled < 0 || n_labeled < 0)
        throw parameter_error("build_em_transformer: negative counts");

    const int D = layout.height();
    TransformerParams params;
    params.layout = layout;
    params.constants.alpha1 = n_unlabeled > 0 ? alpha / n_unlabeled : 0.0;
    params.constants.alpha2 = t_prime;
    params.constants.beta = beta;
    params.constants.w_scale = w_scale;
    params.constants.alpha = alpha;
    params.constants.n_labeled = n_labeled;
    params.constants.n_unlabeled = n_unlabeled;

    LayerParams& l1 = params.layers[0];
    l1.qk = Matrix(D, D);
    for (int k = 0; k < layout.d; ++k)
        for (int r = 0; r < layout.d; ++r) l1.qk(layout.mean_row(k), layout.x_row(r)) = W(r, k);
    l1.qk(layout.norm_row(), layout.unlabeled_flag_row()) = 1.0;
    l1.qk(layout.step_row(), layout.unlabeled_flag_row()) = beta;
    l1.v = Matrix(D, D);
    for (int i = 0; i < layout.C; ++i) l1.v(layout.gamma_row(i), layout.class_row(i)) = 1.0;
    l1.activation = Activation::softmax_keys;
    l1.mask = KeyMask::pair(ColumnKind::reasoning, ColumnKind::unlabeled);
    l1.link = LinkKind::gate_unlabeled_weights;

    LayerParams& l2 = params.layers[1];
    l2.qk = Matrix(D, D);
    l2.qk(layout.unlabeled_flag_row(), layout.step_row()) = params.constants.alpha1;
    l2.v = Matrix(D, D);
    for (int i = 0; i < layout.C; ++i) l2.v(layout.agg_row(i), layout.gamma_row(i)) = 1.0;
    l2.activation = Activation::linear;
    l2.mask = KeyMask::pair(ColumnKind::unlabeled, ColumnKind::reasoning);
    l2.link = LinkKind::scale_mean_update;

    LayerParams& l3 = params.layers[2];
    l3.qk = Matrix(D, D);
    for (int i = 0; i < layout.C; ++i) l3.qk(layout.gamma_row(i), layout.agg_row(i)) = 1.0;
    l3.v = Matrix(D, D);
    for (int r = 0; r < layout.d; ++r) l3.v(layout.mean_row(r), layout.x_row(r)) = 1.0;
    l3.activation = Activation::linear;
    l3.mask = KeyMask::pair(ColumnKind::unlabeled, ColumnKind::reasoning);
    l3.link = LinkKind::clear_workspace;

    LayerParams& l4 = params.layers[3];
    const double init_scale =
        n_labeled > 0 ? static_cast<double>(layout.C) / static_cast<double>(n_labeled) : 0.0;
    l4.qk = Matrix(D, D);
    for (int i = 0; i < layout.C; ++i) l4.qk(layout.y_row(i), layout.class_row(i)) = init_scale;
    l4.qk(layout.labeled_flag_row(), layout.step_row()) = -init_scale;
    l4.v = Matrix(D, D);
    for (int r = 0; r < layout.d; ++r) l4.v(layout.mean_row(r), layout.x_row(r)) = 1.0;
    l4.activation = Activation::relu;
    l4.mask = KeyMask::pair(ColumnKind::labeled, ColumnKind::reasoning);
    l4.link = LinkKind::identity;

    return params;
}

inline const char* layer_name(int index) {
    switch (index) {
        case 0: return "layer1-softmax";
        case 1: return "layer2-linear";
        case 2: return "layer3-linear";
        case 3: return "layer4-relu";
        default: return "layer?";
    }
}

inline Matrix forward_pass(const TransformerParams& params, const Matrix& H,
                           std::span<const ColumnKind> kinds) {
    Matrix cur = H;
    for (int i = 0; i < 4; ++i) {
        cur = attention_forward(cur, kinds, params.layers[static_cast<size_t>(i)]);
        if (!all_finite(cur))
            throw numerical_error(std::string("forward_pass: non-finite values after attention of ") +
                                  layer_name(i));
        cur = mlp_forward(cur, params.layout, params.layers[static_cast<size_t>(i)].link,
                          params.constants, params.layers[static_cast<size_t>(i)].custom_link);
        if (!all_finite(cur))
            throw numerical_error(std::string("forward_pass: non-finite values after mlp of ") +
                                  layer_name(i));
    }
    return cur;
}

struct MeanTrajectory {
    std::vector<Matrix> steps;  // steps[tau], tau = 0..T; steps[0] all-zero
};

// Runs T forward passes; after each, reads the last block's updated means,
// rebuilds a fresh reasoning block from them and appends it.
inline std::pair<MeanTrajectory, PromptState> cot_rollout(const TransformerParams& params,
                                                          PromptState state, int T) {
    if (T < 1) throw parameter_error("cot_rollout: T < 1");
    MeanTrajectory traj;
    traj.steps.reserve(static_cast<size_t>(T) + 1);
    traj.steps.push_back(decode_means(state, state.t));

    for (int step = 0; step < T; ++step) {
        const auto kinds = state.kinds();
        const Matrix out = forward_pass(params, state.H, kinds);
        const TokenLayout& L = state.layout;
        Matrix means(L.d, L.C);
        const int base = state.block_col(state.t);
        for (int i = 0; i < L.C; ++i)
            for (int r = 0; r < L.d; ++r) means(r, i) = out(L.mean_row(r), base + i);
        const Matrix block = make_reasoning_block(L, means, state.t + 1, params.constants.w_scale);
        state = append_reasoning(state, block);
        traj.steps.push_back(std::move(means));
    }
    return {std::move(traj), std::move(state)};
}

// ---------------------------------------------------------------------------
// JSON serialization (matrices as row-major arrays, constants inline)
// ---------------------------------------------------------------------------

inline constexpr const char* kParamsFormat = "augicl-transformer-params-v1";

namespace detail {

inline nlohmann::json matrix_to_json(const Matrix& m) {
    std::vector<double> row_major;
    row_major.reserve(static_cast<size_t>(m.rows()) * static_cast<size_t>(m.cols()));
    for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < m.cols(); ++c) row_major.push_back(m(r, c));
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", row_major}};
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
    Matrix m(j.at("rows").get<int>(), j.at("cols").get<int>());
    auto v = j.at("data").get<std::vector<double>>();
    if (v.size() != static_cast<size_t>(m.rows()) * static_cast<size_t>(m.cols()))
        throw config_error("matrix_from_json: data length mismatch");
    size_t i = 0;
    for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < m.cols(); ++c) m(r, c) = v[i++];
    return m;
}

inline const char* kind_name(ColumnKind k) {
    switch (k) {
        case ColumnKind::labeled: return "labeled";
        case ColumnKind::unlabeled: return "unlabeled";
        default: return "reasoning";
    }
}

inline ColumnKind kind_from_name(const std::string& s) {
    if (s == "labeled") return ColumnKind::labeled;
    if (s == "unlabeled") return ColumnKind::unlabeled;
    if (s == "reasoning") return ColumnKind::reasoning;
    throw config_error("unknown column kind: " + s);
}

inline const char* activation_name(Activation a) {
    switch (a) {
        case Activation::softmax_keys: return "softmax";
        case Activation::linear: return "linear";
        default: return "relu";
    }
}

inline Activation activation_from_name(const std::string& s) {
    if (s == "softmax") return Activation::softmax_keys;
    if (s == "linear") return Activation::linear;
    if (s == "relu") return Activation::relu;
    throw config_error("unknown activation: " + s);
}

inline const char* link_name(LinkKind l) {
    switch (l) {
        case LinkKind::identity: return "identity";
        case LinkKind::gate_unlabeled_weights: return "gate_unlabeled_weights";
        case LinkKind::scale_mean_update: return "scale_mean_update";
        case LinkKind::clear_workspace: return "clear_workspace";
        default: return "custom";
    }
}

inline LinkKind link_from_name(const std::string& s) {
    if (s == "identity") return LinkKind::identity;
    if (s == "gate_unlabeled_weights") return LinkKind::gate_unlabeled_weights;
    if (s == "scale_mean_update") return LinkKind::scale_mean_update;
    if (s == "clear_workspace") return LinkKind::clear_workspace;
    throw config_error("unknown link function: " + s);
}

} // namespace detail

inline nlohmann::json params_to_json(const TransformerParams& p) {
    nlohmann::json layers = nlohmann::json::array();
    static constexpr ColumnKind kKinds[3] = {ColumnKind::labeled, ColumnKind::unlabeled,
                                             ColumnKind::reasoning};
    for (const LayerParams& l : p.layers) {
        nlohmann::json mask_pairs = nlohmann::json::array();
        for (ColumnKind key : kKinds)
            for (ColumnKind query : kKinds)
                if (l.mask(key, query))
                    mask_pairs.push_back({detail::kind_name(key), detail::kind_name(query)});
        layers.push_back({{"qk", detail::matrix_to_json(l.qk)},
                          {"v", detail::matrix_to_json(l.v)},
                          {"activation", detail::activation_name(l.activation)},
                          {"link", detail::link_name(l.link)},
                          {"mask", mask_pairs}});
    }
    return {{"format", kParamsFormat},
            {"d", p.layout.d},
            {"C", p.layout.C},
            {"constants",
             {{"alpha1", p.constants.alpha1},
              {"alpha2", p.constants.alpha2},
              {"beta", p.constants.beta},
              {"w_scale", p.constants.w_scale},
              {"alpha", p.constants.alpha},
              {"n_labeled", p.constants.n_labeled},
              {"n_unlabeled", p.constants.n_unlabeled}}},
            {"layers", layers}};
}

inline TransformerParams params_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != kParamsFormat)
        throw config_error("params_from_json: unknown or missing format version");
    TransformerParams p;
    p.layout.d = j.at("d").get<int>();
    p.layout.C = j.at("C").get<int>();
    const auto& c = j.at("constants");
    p.constants.alpha1 = c.at("alpha1").get<double>();
    p.constants.alpha2 = c.at("alpha2").get<double>();
    p.constants.beta = c.at("beta").get<double>();
    p.constants.w_scale = c.at("w_scale").get<double>();
    p.constants.alpha = c.at("alpha").get<double>();
    p.constants.n_labeled = c.at("n_labeled").get<int>();
    p.constants.n_unlabeled = c.at("n_unlabeled").get<int>();
    const auto& layers = j.at("layers");
    if (layers.size() != 4) throw config_error("params_from_json: expected 4 layers");
    for (size_t i = 0; i < 4; ++i) {
        LayerParams& l = p.layers[i];
        l.qk = detail::matrix_from_json(layers[i].at("qk"));
        l.v = detail::matrix_from_json(layers[i].at("v"));
        l.activation = detail::activation_from_name(layers[i].at("activation").get<std::string>());
        l.link = detail::link_from_name(layers[i].at("link").get<std::string>());
        l.mask = KeyMask{};
        for (const auto& pr : layers[i].at("mask")) {
            const ColumnKind key = detail::kind_from_name(pr[0].get<std::string>());
            const ColumnKind query = detail::kind_from_name(pr[1].get<std::string>());
            l.mask.allow[static_cast<size_t>(key)][static_cast<size_t>(query)] = true;
        }
    }
    return p;
}

} // namespace augicl
