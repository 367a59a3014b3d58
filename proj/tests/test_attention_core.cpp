#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "augicl/attention_core.hpp"
#include "augicl/em_engine.hpp"

using namespace augicl;

namespace {

std::vector<ColumnKind> uniform_kinds(int n, ColumnKind kind) {
    return std::vector<ColumnKind>(static_cast<size_t>(n), kind);
}

TransformerParams bench_scale_params(double sigma2, int m_u, int n_labeled, double beta = 50.0) {
    const TokenLayout layout{3, 3};
    const Matrix w_inv = Matrix::isotropic(3, 1.0 / sigma2);
    return build_em_transformer(layout, w_inv, beta, 13.0, 4.0, m_u, n_labeled, 1.0 / sigma2);
}

} // namespace

TEST_CASE("attention with V = 0 is the identity") {
    Rng rng(1);
    Matrix H(4, 5);
    for (double& v : H.flat()) v = rng.normal();
    LayerParams layer;
    layer.qk = Matrix(4, 4);
    for (double& v : layer.qk.flat()) v = rng.normal();
    layer.v = Matrix(4, 4);
    layer.activation = Activation::softmax_keys;
    const Matrix out = attention_forward(H, uniform_kinds(5, ColumnKind::unlabeled), layer);
    CHECK(out == H);
}

TEST_CASE("softmax attention weights sum to one per query") {
    // row 3 of H is all ones; V routes it to row 0, so the added value in row 0
    // equals the sum of the query's attention weights.
    Rng rng(2);
    Matrix H(4, 6);
    for (double& v : H.flat()) v = rng.normal();
    for (int c = 0; c < 6; ++c) H(3, c) = 1.0;
    LayerParams layer;
    layer.qk = Matrix(4, 4);
    for (double& v : layer.qk.flat()) v = 0.5 * rng.normal();
    layer.v = Matrix(4, 4);
    layer.v(0, 3) = 1.0;
    layer.activation = Activation::softmax_keys;
    const Matrix out = attention_forward(H, uniform_kinds(6, ColumnKind::unlabeled), layer);
    for (int c = 0; c < 6; ++c)
        CHECK(out(0, c) - H(0, c) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("two-token attention matches a scalar hand computation") {
    // D = 2, tokens h0 = (1, 2), h1 = (3, -1)
    Matrix H(2, 2);
    H(0, 0) = 1.0; H(1, 0) = 2.0;
    H(0, 1) = 3.0; H(1, 1) = -1.0;
    LayerParams layer;
    layer.qk = Matrix(2, 2);
    layer.qk(0, 0) = 0.5; layer.qk(0, 1) = -0.25;
    layer.qk(1, 0) = 1.0; layer.qk(1, 1) = 0.75;
    layer.v = Matrix(2, 2);
    layer.v(0, 0) = 2.0; layer.v(1, 1) = -1.0;
    layer.activation = Activation::softmax_keys;

    auto score = [&](int a, int b) {
        double s = 0.0;
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) s += H(i, a) * layer.qk(i, j) * H(j, b);
        return s;
    };
    const Matrix out = attention_forward(H, uniform_kinds(2, ColumnKind::unlabeled), layer);
    for (int b = 0; b < 2; ++b) {
        const double s0 = std::exp(score(0, b));
        const double s1 = std::exp(score(1, b));
        const double w0 = s0 / (s0 + s1), w1 = s1 / (s0 + s1);
        // out = h_b + V (w0 h0 + w1 h1)
        const double exp0 = H(0, b) + 2.0 * (w0 * H(0, 0) + w1 * H(0, 1));
        const double exp1 = H(1, b) - 1.0 * (w0 * H(1, 0) + w1 * H(1, 1));
        CHECK(out(0, b) == Catch::Approx(exp0).epsilon(1e-12));
        CHECK(out(1, b) == Catch::Approx(exp1).epsilon(1e-12));
    }
}

TEST_CASE("masked pairs contribute nothing; fully masked queries pass through") {
    Matrix H(2, 3);
    H(0, 0) = 1.0; H(0, 1) = -2.0; H(0, 2) = 0.5;
    H(1, 0) = 1.0; H(1, 1) = 1.0;  H(1, 2) = 1.0;
    LayerParams layer;
    layer.qk = Matrix::identity(2);
    layer.v = Matrix(2, 2);
    layer.v(0, 1) = 1.0;
    layer.activation = Activation::softmax_keys;
    layer.mask = KeyMask::pair(ColumnKind::reasoning, ColumnKind::unlabeled);
    const std::vector<ColumnKind> kinds{ColumnKind::reasoning, ColumnKind::unlabeled,
                                        ColumnKind::labeled};
    const Matrix out = attention_forward(H, kinds, layer);
    // only the unlabeled query (col 1) attends, and only to the reasoning key
    CHECK(out(0, 1) == Catch::Approx(H(0, 1) + 1.0).margin(1e-12));  // weight 1 on key 0
    CHECK(out.col(0)[0] == H(0, 0));  // fully masked query untouched
    CHECK(out.col(2)[0] == H(0, 2));

    layer.activation = Activation::linear;
    const Matrix lin = attention_forward(H, kinds, layer);
    CHECK(lin(0, 0) == H(0, 0));
    CHECK(lin(0, 2) == H(0, 2));
}

TEST_CASE("relu activation clamps negative scores") {
    Matrix H(1, 2);
    H(0, 0) = -1.0;
    H(0, 1) = 1.0;
    LayerParams layer;
    layer.qk = Matrix::identity(1);
    layer.v = Matrix::identity(1);
    layer.activation = Activation::relu;
    const auto kinds = uniform_kinds(2, ColumnKind::unlabeled);
    const Matrix out = attention_forward(H, kinds, layer);
    // query 0: scores (1, -1) -> relu (1, 0): adds 1 * h0 = -1
    CHECK(out(0, 0) == Catch::Approx(-2.0).margin(1e-13));
    // query 1: scores (-1, 1) -> relu (0, 1): adds h1 = 1
    CHECK(out(0, 1) == Catch::Approx(2.0).margin(1e-13));
}

TEST_CASE("identity link leaves H unchanged; unknown custom link rejected") {
    const TokenLayout layout{2, 2};
    Rng rng(4);
    Matrix H(layout.height(), 3);
    for (double& v : H.flat()) v = rng.normal();
    const EmConstants constants{};
    CHECK(mlp_forward(H, layout, LinkKind::identity, constants) == H);
    CHECK_THROWS_AS(mlp_forward(H, layout, LinkKind::custom, constants), config_error);

    // custom maps are the seam for substituting approximate token-wise MLPs
    const Matrix doubled =
        mlp_forward(H, layout, LinkKind::custom, constants, [](std::span<double> col) {
            for (double& v : col) v *= 2.0;
        });
    CHECK(doubled == 2.0 * H);
}

TEST_CASE("posterior gate keeps gamma only on unlabeled tokens") {
    const TokenLayout layout{2, 2};
    const TaskInstance inst = make_instance(5, 0, 2, 2, 0.5, 2, 2);
    PromptState state = encode_instance(inst, layout);
    // plant gamma values everywhere
    for (int c = 0; c < state.cols(); ++c)
        for (int i = 0; i < 2; ++i) state.H(layout.gamma_row(i), c) = 0.25 * (c + 1);
    EmConstants constants;
    constants.w_scale = 1.0;
    const Matrix out = mlp_forward(state.H, layout, LinkKind::gate_unlabeled_weights, constants);
    for (int c = 0; c < state.cols(); ++c) {
        const bool unlabeled = state.kind(c) == ColumnKind::unlabeled;
        for (int i = 0; i < 2; ++i)
            CHECK(out(layout.gamma_row(i), c) == (unlabeled ? 0.25 * (c + 1) : 0.0));
    }
    // norm slot refreshed from the mean estimate slot
    Matrix block = make_reasoning_block(layout, Matrix(2, 2), 1, 1.0);
    block(layout.mean_row(0), 0) = 3.0;
    const Matrix refreshed = mlp_forward(block, layout, LinkKind::gate_unlabeled_weights, constants);
    CHECK(refreshed(layout.norm_row(), 0) == -4.5);
}

TEST_CASE("aggregation layers reproduce one scalar EM half-step") {
    // d = 1, C = 1, one unlabeled sample: after layer 1 the unlabeled token
    // holds gamma = p; layers 2-3 must produce mu' = mu - c*p*(mu - x) with
    // c = alpha1/(tau + alpha2).
    const TokenLayout layout{1, 1};
    const double mu = 0.8, x = -0.4, p = 1.0, alpha = 2.0, t_prime = 3.0;
    const int tau = 1;

    TaskInstance inst;
    inst.means = Matrix(1, 1);
    inst.sigma2 = 1.0;
    inst.labeled_x = Matrix(1, 0);
    inst.unlabeled_x = Matrix(1, 1);
    inst.unlabeled_x(0, 0) = x;
    inst.hidden_labels = {0};
    PromptState state = encode_instance(inst, layout);
    Matrix means(1, 1);
    means(0, 0) = mu;
    state = append_reasoning(state, make_reasoning_block(layout, means, 1, 1.0));

    // gamma as layer 1 would leave it
    state.H(layout.gamma_row(0), 0) = p;

    const TransformerParams params =
        build_em_transformer(layout, Matrix::identity(1), 50.0, alpha, t_prime, 1, 0, 1.0);
    const auto kinds = state.kinds();
    Matrix h = attention_forward(state.H, kinds, params.layers[1]);
    h = mlp_forward(h, layout, params.layers[1].link, params.constants);
    h = attention_forward(h, kinds, params.layers[2]);
    h = mlp_forward(h, layout, params.layers[2].link, params.constants);

    const double c = (alpha / 1.0) / (tau + t_prime);
    const double expected = mu - c * p * (mu - x);
    const int block_col = state.block_col(1);
    CHECK(h(layout.mean_row(0), block_col) == Catch::Approx(expected).epsilon(1e-14));
    // workspace cleared afterwards
    CHECK(h(layout.agg_row(0), block_col) == 0.0);
}

TEST_CASE("first forward pass reproduces the labeled plug-in init exactly") {
    const TaskInstance inst = make_instance(6, 0, 3, 3, 0.7, 5, 10);
    const TokenLayout layout{3, 3};
    const TransformerParams params = bench_scale_params(0.7, 10, 5);
    auto [traj, state] = cot_rollout(params, encode_instance(inst, layout), 1);
    CHECK(traj.steps[0] == Matrix(3, 3));
    CHECK(traj.steps[1] == init_means_from_labeled(inst));
}

TEST_CASE("step-size coefficient matches the schedule") {
    // one EM step on a single unlabeled point with a separated reasoning mean:
    // posterior is 1 for that class, so mu' = (1 - eta_t) mu + eta_t x.
    const TokenLayout layout{1, 1};
    TaskInstance inst;
    inst.means = Matrix(1, 1);
    inst.sigma2 = 1.0;
    inst.labeled_x = Matrix(1, 0);
    inst.unlabeled_x = Matrix(1, 1);
    inst.unlabeled_x(0, 0) = 2.0;
    inst.hidden_labels = {0};
    const double alpha = 1.0, t_prime = 4.0;
    const TransformerParams params =
        build_em_transformer(layout, Matrix::identity(1), 50.0, alpha, t_prime, 1, 0, 1.0);
    PromptState state = encode_instance(inst, layout);
    Matrix means(1, 1);
    means(0, 0) = 1.0;
    state = append_reasoning(state, make_reasoning_block(layout, means, 1, 1.0));
    auto [traj, out_state] = cot_rollout(params, state, 1);
    // first applied update sits at block t=1: coefficient alpha/(T'+1) = 0.2
    const double eta1 = alpha / (t_prime + 1.0);
    CHECK(eta(EtaSchedule{alpha, t_prime}, 1) == 0.2);
    const double expected = (1.0 - eta1) * 1.0 + eta1 * 2.0;
    CHECK(traj.steps[1](0, 0) == Catch::Approx(expected).epsilon(1e-14));
}

TEST_CASE("single-class rollout is repeated convex averaging toward the unlabeled mean") {
    const TokenLayout layout{2, 1};
    Rng rng(12);
    Matrix means(2, 1);
    means(0, 0) = 1.0;
    means(1, 0) = -1.0;
    const TaskInstance inst = sample_instance(means, 0.4, 2, 6, Rng(13));
    const double alpha = 1.0, t_prime = 4.0;
    const TransformerParams params = build_em_transformer(layout, Matrix::identity(2), 50.0, alpha,
                                                          t_prime, 6, 2, 1.0);
    auto [traj, state] = cot_rollout(params, encode_instance(inst, layout), 4);

    // direct recursion: mu_{t+1} = (1 - eta_t) mu_t + eta_t * xbar
    std::vector<double> xbar{0.0, 0.0};
    for (int j = 0; j < 6; ++j)
        for (int r = 0; r < 2; ++r) xbar[static_cast<size_t>(r)] += inst.unlabeled_x(r, j) / 6.0;
    Matrix mu = init_means_from_labeled(inst);
    for (int t = 1; t <= 3; ++t) {
        const double e = alpha / (t_prime + t);
        for (int r = 0; r < 2; ++r) mu(r, 0) = (1.0 - e) * mu(r, 0) + e * xbar[static_cast<size_t>(r)];
        CHECK(max_abs_diff(traj.steps[static_cast<size_t>(t) + 1], mu) < 1e-12);
    }
}

TEST_CASE("rollout with no unlabeled data stays at the labeled init") {
    const TaskInstance inst = make_instance(14, 0, 3, 3, 0.7, 5, 0);
    const TokenLayout layout{3, 3};
    const TransformerParams params = bench_scale_params(0.7, 0, 5);
    auto [traj, state] = cot_rollout(params, encode_instance(inst, layout), 4);
    for (int t = 2; t <= 4; ++t)
        CHECK(traj.steps[static_cast<size_t>(t)] == traj.steps[1]);
}

TEST_CASE("forward pass leaves the data blocks' x and y rows untouched") {
    const TaskInstance inst = make_instance(15, 0, 3, 3, 0.7, 5, 10);
    const TokenLayout layout{3, 3};
    const TransformerParams params = bench_scale_params(0.7, 10, 5);
    PromptState state = encode_instance(inst, layout);
    state = append_reasoning(
        state, make_reasoning_block(layout, init_means_from_labeled(inst), 1, 1.0 / 0.7));
    const Matrix before = state.H;
    const Matrix after = forward_pass(params, state.H, state.kinds());
    for (int c = 0; c < 15; ++c) {
        for (int r = 0; r < 3; ++r) CHECK(after(layout.x_row(r), c) == before(layout.x_row(r), c));
        for (int i = 0; i < 3; ++i) CHECK(after(layout.y_row(i), c) == before(layout.y_row(i), c));
    }
}

TEST_CASE("rollout is class-permutation equivariant") {
    const int perm[3] = {2, 0, 1};  // permuted instance class i = original class perm[i]
    const TaskInstance inst = make_instance(16, 2, 3, 3, 0.7, 5, 10);
    TaskInstance permuted = inst;
    for (int i = 0; i < 3; ++i)
        for (int r = 0; r < 3; ++r) permuted.means(r, i) = inst.means(r, perm[i]);
    auto inverse_map = [&](int original) {
        for (int i = 0; i < 3; ++i)
            if (perm[i] == original) return i;
        return -1;
    };
    for (auto& y : permuted.labeled_y) y = inverse_map(y);
    for (auto& y : permuted.hidden_labels) y = inverse_map(y);

    const TokenLayout layout{3, 3};
    const TransformerParams params = bench_scale_params(0.7, 10, 5);
    auto [traj, s1] = cot_rollout(params, encode_instance(inst, layout), 3);
    auto [ptraj, s2] = cot_rollout(params, encode_instance(permuted, layout), 3);
    for (int t = 0; t <= 3; ++t)
        for (int i = 0; i < 3; ++i)
            for (int r = 0; r < 3; ++r)
                CHECK(ptraj.steps[static_cast<size_t>(t)](r, i) ==
                      Catch::Approx(traj.steps[static_cast<size_t>(t)](r, perm[i])).margin(1e-12));
}

TEST_CASE("decoded prompt state agrees with the returned trajectory") {
    const TaskInstance inst = make_instance(17, 0, 3, 3, 1.5, 5, 10);
    const TokenLayout layout{3, 3};
    const TransformerParams params = bench_scale_params(1.5, 10, 5);
    auto [traj, state] = cot_rollout(params, encode_instance(inst, layout), 5);
    CHECK(state.t == 5);
    for (int t = 0; t <= 5; ++t)
        CHECK(decode_means(state, t) == traj.steps[static_cast<size_t>(t)]);
}

TEST_CASE("rollout matches the reference engine on benchmark-scale instances") {
    const EtaSchedule sched{13.0, 4.0};
    const TokenLayout layout{3, 3};
    for (int k = 0; k < 10; ++k) {
        const TaskInstance inst = make_instance(18, static_cast<uint64_t>(k), 3, 3, 0.7, 5, 10);
        const TransformerParams params = bench_scale_params(0.7, 10, 5);
        auto [traj, state] = cot_rollout(params, encode_instance(inst, layout), 5);
        const ReferenceTrajectory ref = reference_rollout(inst, 5, sched, RefMode::empirical_em);
        for (int t = 0; t <= 5; ++t)
            CHECK(max_abs_diff(traj.steps[static_cast<size_t>(t)],
                               ref.steps[static_cast<size_t>(t)]) < 1e-6);
    }
}

TEST_CASE("parameter validation and overflow reporting") {
    const TokenLayout layout{3, 3};
    CHECK_THROWS_AS(build_em_transformer(layout, Matrix::identity(3), -1.0, 1.0, 4.0, 10, 5, 1.0),
                    parameter_error);
    CHECK_THROWS_AS(build_em_transformer(layout, Matrix::identity(2), 50.0, 1.0, 4.0, 10, 5, 1.0),
                    parameter_error);

    // a linear layer with enormous weights overflows and names itself
    const TaskInstance inst = make_instance(19, 0, 3, 3, 0.7, 2, 2);
    TransformerParams params = bench_scale_params(0.7, 2, 2);
    params.layers[1].qk(0, 0) = 1e308;
    params.layers[1].qk(1, 0) = 1e308;
    params.layers[1].mask = KeyMask::all();
    params.layers[1].v = Matrix::identity(layout.height());
    const PromptState state = encode_instance(inst, layout);
    try {
        forward_pass(params, state.H, state.kinds());
        FAIL("expected numerical_error");
    } catch (const numerical_error& e) {
        CHECK(std::string(e.what()).find("layer2") != std::string::npos);
    }
}

TEST_CASE("transformer params JSON round-trip is exact") {
    const TransformerParams params = bench_scale_params(0.7, 10, 5);
    const nlohmann::json j = params_to_json(params);
    const TransformerParams back = params_from_json(j);
    for (int i = 0; i < 4; ++i) {
        CHECK(back.layers[static_cast<size_t>(i)].qk == params.layers[static_cast<size_t>(i)].qk);
        CHECK(back.layers[static_cast<size_t>(i)].v == params.layers[static_cast<size_t>(i)].v);
        CHECK(back.layers[static_cast<size_t>(i)].activation ==
              params.layers[static_cast<size_t>(i)].activation);
        CHECK(back.layers[static_cast<size_t>(i)].link == params.layers[static_cast<size_t>(i)].link);
    }
    CHECK(back.constants.alpha1 == params.constants.alpha1);
    CHECK(back.constants.beta == params.constants.beta);

    nlohmann::json bad = j;
    bad["format"] = "something-else";
    CHECK_THROWS_AS(params_from_json(bad), config_error);
}
