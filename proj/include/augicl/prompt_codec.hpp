#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "augicl/gmm_task.hpp"
#include "augicl/matrix.hpp"

namespace augicl {

enum class ColumnKind : uint8_t { labeled, unlabeled, reasoning };

// ---------------------------------------------------------------------------
// Canonical token layout. A token (column of H) is
//   rows [0, d)            x payload
//   rows [d, d+C)          label payload (one-hot for labeled columns)
//   rows [d+C, D)          auxiliary sub-vector of height d_p = 3C + d + 4:
//     class_sel   C rows   one-hot class selector (reasoning tokens)
//     mean_est    d rows   current mean estimate
//     gamma       C rows   per-class posterior workspace
//     agg         C rows   aggregation / update-scale workspace
//     norm        1 row    rescaled norm of mean_est, -(w/2)||mu||^2
//     labeled     1 row    flag
//     unlabeled   1 row    flag
//     step        1 row    CoT step index tau
// ---------------------------------------------------------------------------

struct TokenLayout {
    int d = 0;
    int C = 0;

    int aux_dim() const { return 3 * C + d + 4; }  // d_p
    int height() const { return d + C + aux_dim(); }

    int x_row(int i) const { return i; }
    int y_row(int i) const { return d + i; }
    int class_row(int i) const { return d + C + i; }
    int mean_row(int i) const { return d + 2 * C + i; }
    int gamma_row(int i) const { return 2 * d + 2 * C + i; }
    int agg_row(int i) const { return 2 * d + 3 * C + i; }
    int norm_row() const { return 2 * d + 4 * C; }
    int labeled_flag_row() const { return 2 * d + 4 * C + 1; }
    int unlabeled_flag_row() const { return 2 * d + 4 * C + 2; }
    int step_row() const { return 2 * d + 4 * C + 3; }

    bool matches(const TaskInstance& inst) const {
        return d == inst.dim() && C == inst.classes();
    }
};

// Writes -(w/2) ||mean_est||^2 into the norm slot of every column of a
// reasoning block.
inline void write_norm_slot(Matrix& block, const TokenLayout& layout, double w_scale) {
    for (int c = 0; c < block.cols(); ++c) {
        double nrm = 0.0;
        for (int r = 0; r < layout.d; ++r) {
            const double v = block(layout.mean_row(r), c);
            nrm += v * v;
        }
        block(layout.norm_row(), c) = -0.5 * w_scale * nrm;
    }
}

// Builds one reasoning block: class selectors on the identity pattern, the
// given means, norm slot filled, step index everywhere, workspaces zero.
inline Matrix make_reasoning_block(const TokenLayout& layout, const Matrix& means, int step,
                                   double w_scale) {
    if (means.rows() != layout.d || means.cols() != layout.C)
        throw layout_error("make_reasoning_block: means shape does not match layout");
    Matrix block(layout.height(), layout.C);
    for (int i = 0; i < layout.C; ++i) {
        block(layout.class_row(i), i) = 1.0;
        for (int r = 0; r < layout.d; ++r) block(layout.mean_row(r), i) = means(r, i);
        block(layout.step_row(), i) = static_cast<double>(step);
    }
    write_norm_slot(block, layout, w_scale);
    return block;
}

struct PromptState {
    Matrix H;  // height() x (N + M_u + (t+1)*C)
    TokenLayout layout;
    int n_labeled = 0;
    int n_unlabeled = 0;
    int t = 0;  // number of appended reasoning blocks beyond Q^(0)

    int cols() const { return H.cols(); }
    int block_col(int tau) const { return n_labeled + n_unlabeled + tau * layout.C; }

    ColumnKind kind(int col) const {
        if (col < n_labeled) return ColumnKind::labeled;
        if (col < n_labeled + n_unlabeled) return ColumnKind::unlabeled;
        return ColumnKind::reasoning;
    }

    std::vector<ColumnKind> kinds() const {
        std::vector<ColumnKind> ks(static_cast<size_t>(cols()));
        for (int c = 0; c < cols(); ++c) ks[static_cast<size_t>(c)] = kind(c);
        return ks;
    }
};

// Initial prompt: labeled block, unlabeled block, zero-estimate reasoning
// block Q^(0) (norm slot 0, step 0).
inline PromptState encode_instance(const TaskInstance& inst, const TokenLayout& layout) {
    if (!layout.matches(inst)) throw layout_error("encode_instance: layout does not match instance");
    PromptState state;
    state.layout = layout;
    state.n_labeled = inst.n_labeled();
    state.n_unlabeled = inst.n_unlabeled();
    state.t = 0;
    state.H = Matrix(layout.height(), state.n_labeled + state.n_unlabeled + layout.C);

    for (int j = 0; j < state.n_labeled; ++j) {
        auto x = inst.labeled_x.col(j);
        for (int r = 0; r < layout.d; ++r) state.H(layout.x_row(r), j) = x[static_cast<size_t>(r)];
        state.H(layout.y_row(inst.labeled_y[static_cast<size_t>(j)]), j) = 1.0;
        state.H(layout.labeled_flag_row(), j) = 1.0;
    }
    for (int j = 0; j < state.n_unlabeled; ++j) {
        const int col = state.n_labeled + j;
        auto x = inst.unlabeled_x.col(j);
        for (int r = 0; r < layout.d; ++r) state.H(layout.x_row(r), col) = x[static_cast<size_t>(r)];
        state.H(layout.unlabeled_flag_row(), col) = 1.0;
    }
    for (int i = 0; i < layout.C; ++i)
        state.H(layout.class_row(i), state.block_col(0) + i) = 1.0;
    return state;
}

// Appends a reasoning block; prior columns are untouched. The block must carry
// the identity class-selector pattern and step index t+1.
inline PromptState append_reasoning(const PromptState& state, const Matrix& block) {
    const TokenLayout& L = state.layout;
    if (block.rows() != L.height() || block.cols() != L.C)
        throw layout_error("append_reasoning: block shape mismatch");
    for (int i = 0; i < L.C; ++i) {
        for (int k = 0; k < L.C; ++k) {
            const double expect = (k == i) ? 1.0 : 0.0;
            if (block(L.class_row(k), i) != expect)
                throw layout_error("append_reasoning: malformed class-selector slot");
        }
        if (block(L.step_row(), i) != static_cast<double>(state.t + 1))
            throw layout_error("append_reasoning: step slot must equal t+1");
    }
    PromptState out = state;
    Matrix grown(L.height(), state.cols() + L.C);
    for (int c = 0; c < state.cols(); ++c) grown.set_col(c, state.H.col(c));
    for (int c = 0; c < L.C; ++c) grown.set_col(state.cols() + c, block.col(c));
    out.H = std::move(grown);
    out.t = state.t + 1;
    return out;
}

// Reads the mean-estimate slot of reasoning block tau.
inline Matrix decode_means(const PromptState& state, int tau) {
    if (tau < 0 || tau > state.t) throw parameter_error("decode_means: step out of range");
    const TokenLayout& L = state.layout;
    Matrix means(L.d, L.C);
    const int base = state.block_col(tau);
    for (int i = 0; i < L.C; ++i)
        for (int r = 0; r < L.d; ++r) means(r, i) = state.H(L.mean_row(r), base + i);
    return means;
}

// Debug dump: one CSV row per embedding row, first field names the slot.
inline std::string dump_csv(const PromptState& state) {
    const TokenLayout& L = state.layout;
    std::vector<std::string> names(static_cast<size_t>(L.height()));
    for (int i = 0; i < L.d; ++i) names[static_cast<size_t>(L.x_row(i))] = "x" + std::to_string(i);
    for (int i = 0; i < L.C; ++i) names[static_cast<size_t>(L.y_row(i))] = "label" + std::to_string(i);
    for (int i = 0; i < L.C; ++i)
        names[static_cast<size_t>(L.class_row(i))] = "class_sel" + std::to_string(i);
    for (int i = 0; i < L.d; ++i)
        names[static_cast<size_t>(L.mean_row(i))] = "mean_est" + std::to_string(i);
    for (int i = 0; i < L.C; ++i)
        names[static_cast<size_t>(L.gamma_row(i))] = "gamma" + std::to_string(i);
    for (int i = 0; i < L.C; ++i) names[static_cast<size_t>(L.agg_row(i))] = "agg" + std::to_string(i);
    names[static_cast<size_t>(L.norm_row())] = "norm";
    names[static_cast<size_t>(L.labeled_flag_row())] = "labeled_flag";
    names[static_cast<size_t>(L.unlabeled_flag_row())] = "unlabeled_flag";
    names[static_cast<size_t>(L.step_row())] = "step";

    std::string out = "slot";
    for (int c = 0; c < state.cols(); ++c) out += ",col" + std::to_string(c);
    out += "\n";
    char buf[32];
    for (int r = 0; r < L.height(); ++r) {
        out += names[static_cast<size_t>(r)];
        for (int c = 0; c < state.cols(); ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", state.H(r, c));
            out += ",";
            out += buf;
        }
        out += "\n";
    }
    return out;
}

} // namespace augicl
