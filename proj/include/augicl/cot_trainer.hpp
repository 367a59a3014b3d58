#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "augicl/attention_core.hpp"
#include "augicl/em_engine.hpp"
#include "augicl/gmm_task.hpp"

namespace augicl {

// ---------------------------------------------------------------------------
// Teacher-forcing training of the first attention layer's matrix W. The CoT
// cross-entropy loss compares, per step and per unlabeled sample, the target
// class distribution (built from the reference means with Sigma^-1) against
// the model distribution (same means, the trained W). The quadratic term of
// the model score uses a stopped copy of W, so the analytic gradient
// sum (p_hat - p) x mu_ref^T is exact; stop_quadratic=false switches to the
// fully-differentiated variant.
// ---------------------------------------------------------------------------

enum class InitKind : uint8_t { isotropic, gaussian };

struct TrainConfig {
    int d = 3;
    int C = 3;
    int n_labeled = 5;
    int n_unlabeled = 10;
    double sigma2 = 1.0;

    int batch_size = 64;
    int iters = 2000;
    double lr = 0.3;
    InitKind init = InitKind::isotropic;
    double w0 = 0.0;  // isotropic init scale; 0 selects the 0.5/sigma2 default
    double beta = 50.0;
    EtaSchedule schedule{};
    int cot_steps = 5;
    RefMode ref_mode = RefMode::empirical_em;
    uint64_t seed = 1;
    bool stop_quadratic = true;

    double w0_effective() const { return w0 > 0.0 ? w0 : 0.5 / sigma2; }
};

struct TrainRecord {
    int iter = 0;
    double loss = 0.0;
    double w_dist_sq = 0.0;   // ||W - Sigma^-1||_F^2 at this iteration
    double grad_norm = 0.0;   // Frobenius norm of the batch gradient
    double wall_ms = 0.0;
};

struct TrainState {
    Matrix W;
    int k = 0;
    std::vector<TrainRecord> history;  // one record per completed iteration
};

using Targets = std::vector<std::vector<Posterior>>;  // [t-1][j], t = 1..T

inline Targets teacher_targets(const TaskInstance& inst, const ReferenceTrajectory& ref) {
    const int T = static_cast<int>(ref.steps.size()) - 1;
    const Matrix w_inv = Matrix::isotropic(inst.dim(), 1.0 / inst.sigma2);
    Targets targets(static_cast<size_t>(T));
    for (int t = 1; t <= T; ++t) {
        auto& row = targets[static_cast<size_t>(t) - 1];
        row.reserve(static_cast<size_t>(inst.n_unlabeled()));
        for (int j = 0; j < inst.n_unlabeled(); ++j)
            row.push_back(posterior_last(inst.unlabeled_x.col(j), ref.steps[static_cast<size_t>(t)], w_inv));
    }
    return targets;
}

// (1/T) sum_t sum_j CE(target, model posterior). w_quad, when given, is the
// stopped copy used for the quadratic term (the finite-difference oracle holds
// it at the base W while perturbing the cross term).
inline double cot_loss(const Matrix& W, const TaskInstance& inst, const ReferenceTrajectory& ref,
                       const Targets& targets, const Matrix* w_quad = nullptr) {
    const int T = static_cast<int>(targets.size());
    if (T < 1 || static_cast<int>(ref.steps.size()) != T + 1)
        throw parameter_error("cot_loss: trajectory/target shapes inconsistent");
    const Matrix& wq = w_quad ? *w_quad : W;
    double total = 0.0;
    for (int t = 1; t <= T; ++t) {
        const Matrix& means = ref.steps[static_cast<size_t>(t)];
        for (int j = 0; j < inst.n_unlabeled(); ++j) {
            const Posterior p_hat = posterior_scored(inst.unlabeled_x.col(j), means, W, wq);
            const Posterior& target = targets[static_cast<size_t>(t) - 1][static_cast<size_t>(j)];
            for (int i = 0; i < inst.classes(); ++i) {
                const double q = target[static_cast<size_t>(i)];
                if (q > 0.0) total -= q * std::log(p_hat[static_cast<size_t>(i)]);
            }
        }
    }
    return total / static_cast<double>(T);
}

// (1/T) sum_t sum_j sum_i (p_hat - p)_i x_j mu_ref,i^T. With
// stop_quadratic=false the -1/2 mu mu^T term of each score is differentiated
// as well.
inline Matrix cot_loss_grad(const Matrix& W, const TaskInstance& inst,
                            const ReferenceTrajectory& ref, const Targets& targets,
                            bool stop_quadratic = true) {
    const int T = static_cast<int>(targets.size());
    const int d = inst.dim();
    Matrix grad(d, d);
    for (int t = 1; t <= T; ++t) {
        const Matrix& means = ref.steps[static_cast<size_t>(t)];
        for (int j = 0; j < inst.n_unlabeled(); ++j) {
            auto x = inst.unlabeled_x.col(j);
            const Posterior p_hat = posterior_scored(x, means, W, W);
            const Posterior& target = targets[static_cast<size_t>(t) - 1][static_cast<size_t>(j)];
            for (int i = 0; i < inst.classes(); ++i) {
                const double delta = p_hat[static_cast<size_t>(i)] - target[static_cast<size_t>(i)];
                if (delta == 0.0) continue;
                auto mu = means.col(i);
                for (int a = 0; a < d; ++a)
                    for (int b = 0; b < d; ++b) {
                        double g = x[static_cast<size_t>(a)] * mu[static_cast<size_t>(b)];
                        if (!stop_quadratic)
                            g -= 0.5 * mu[static_cast<size_t>(a)] * mu[static_cast<size_t>(b)];
                        grad(a, b) += delta * g;
                    }
            }
        }
    }
    grad *= 1.0 / static_cast<double>(T);
    return grad;
}

struct FdResult {
    Matrix grad;
    bool cancellation_warning = false;  // some central difference fell below 1e-12
};

inline FdResult finite_diff_grad(const Matrix& W, const TaskInstance& inst,
                                 const ReferenceTrajectory& ref, const Targets& targets, double h,
                                 bool stop_quadratic = true) {
    if (h <= 0.0) throw parameter_error("finite_diff_grad: h must be positive");
    const int d = W.rows();
    FdResult res{Matrix(d, d), false};
    const Matrix* base = stop_quadratic ? &W : nullptr;
    for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b) {
            Matrix wp = W, wm = W;
            wp(a, b) += h;
            wm(a, b) -= h;
            const double lp = cot_loss(wp, inst, ref, targets, base);
            const double lm = cot_loss(wm, inst, ref, targets, base);
            // sub-1e-12 differences of a nonzero loss are cancellation noise
            if (std::abs(lp - lm) < 1e-12 && !(lp == 0.0 && lm == 0.0))
                res.cancellation_warning = true;
            res.grad(a, b) = (lp - lm) / (2.0 * h);
        }
    return res;
}

struct McGradient {
    Matrix grad;      // per-entry mean over instances
    Matrix std_err;   // per-entry standard error of the mean
    int n = 0;
};

// Monte Carlo population gradient: averages cot_loss_grad over freshly
// sampled instances (means resampled per instance).
inline McGradient population_grad_mc(const Matrix& W, const TrainConfig& config, int n_instances,
                                     Rng rng) {
    if (n_instances < 1) throw parameter_error("population_grad_mc: n_instances < 1");
    const int d = config.d;
    Matrix sum(d, d), sum_sq(d, d);
    for (int k = 0; k < n_instances; ++k) {
        Rng stream = rng.substream(static_cast<uint64_t>(k));
        Rng mean_rng = stream.substream(0);
        const Matrix means = sample_means(d, config.C, mean_rng);
        const TaskInstance inst =
            sample_instance(means, config.sigma2, config.n_labeled, config.n_unlabeled, stream);
        const ReferenceTrajectory ref =
            reference_rollout(inst, config.cot_steps, config.schedule, config.ref_mode);
        const Targets targets = teacher_targets(inst, ref);
        const Matrix g = cot_loss_grad(W, inst, ref, targets, config.stop_quadratic);
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b) {
                sum(a, b) += g(a, b);
                sum_sq(a, b) += g(a, b) * g(a, b);
            }
    }
    McGradient out{Matrix(d, d), Matrix(d, d), n_instances};
    const double n = static_cast<double>(n_instances);
    for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b) {
            const double mean = sum(a, b) / n;
            out.grad(a, b) = mean;
            const double var = std::max(sum_sq(a, b) / n - mean * mean, 0.0);
            out.std_err(a, b) = std::sqrt(var / n);
        }
    return out;
}

inline Matrix init_weight(const TrainConfig& config, Rng& rng) {
    if (config.init == InitKind::isotropic)
        return Matrix::isotropic(config.d, config.w0_effective());
    Matrix W(config.d, config.d);
    for (int c = 0; c < config.d; ++c)
        for (int r = 0; r < config.d; ++r) W(r, c) = rng.normal();
    return W;
}

// Plain GD on the batch-averaged CoT loss. The observer, when given, runs
// after initialization (k = 0) and after every iteration; fixed summation
// order keeps runs bit-reproducible.
inline TrainState train(const TrainConfig& config,
                        const std::function<void(const TrainState&)>& observer = {}) {
    if (config.iters < 1 || config.batch_size < 1 || config.lr <= 0.0)
        throw parameter_error("train: need iters >= 1, batch_size >= 1, lr > 0");
    Rng base(config.seed);
    Rng init_rng = base.substream(0x1717);
    TrainState state;
    state.W = init_weight(config, init_rng);
    state.history.reserve(static_cast<size_t>(config.iters));
    if (observer) observer(state);

    const Matrix w_inv = Matrix::isotropic(config.d, 1.0 / config.sigma2);
    const Rng train_stream = base.substream(0x7e41);
    const auto t0 = std::chrono::steady_clock::now();

    for (int k = 0; k < config.iters; ++k) {
        Matrix grad(config.d, config.d);
        double loss = 0.0;
        for (int b = 0; b < config.batch_size; ++b) {
            Rng stream = train_stream.substream(static_cast<uint64_t>(k), static_cast<uint64_t>(b));
            Rng mean_rng = stream.substream(0);
            const Matrix means = sample_means(config.d, config.C, mean_rng);
            const TaskInstance inst = sample_instance(means, config.sigma2, config.n_labeled,
                                                      config.n_unlabeled, stream);
            const ReferenceTrajectory ref =
                reference_rollout(inst, config.cot_steps, config.schedule, config.ref_mode);
            const Targets targets = teacher_targets(inst, ref);
            grad += cot_loss_grad(state.W, inst, ref, targets, config.stop_quadratic);
            loss += cot_loss(state.W, inst, ref, targets);
        }
        grad *= 1.0 / static_cast<double>(config.batch_size);
        loss /= static_cast<double>(config.batch_size);
        if (!std::isfinite(loss))
            throw numerical_error("train: non-finite loss at iteration " + std::to_string(k));

        TrainRecord rec;
        rec.iter = k;
        rec.loss = loss;
        rec.w_dist_sq = frobenius_sq(state.W - w_inv);
        rec.grad_norm = std::sqrt(frobenius_sq(grad));
        rec.wall_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
        state.history.push_back(rec);

        state.W -= config.lr * grad;
        state.k = k + 1;
        if (observer) observer(state);
    }
    return state;
}

// ---------------------------------------------------------------------------
// Weight export: the trained W plus the frozen constants, enough to rebuild
// the transformer for any prompt shape via build_em_transformer.
// ---------------------------------------------------------------------------

inline constexpr const char* kWeightsFormat = "augicl-weights-v1";

inline nlohmann::json weights_to_json(const TrainState& state, const TrainConfig& config) {
    nlohmann::json j;
    j["format"] = kWeightsFormat;
    j["d"] = config.d;
    j["C"] = config.C;
    j["sigma2"] = config.sigma2;
    j["beta"] = config.beta;
    j["alpha"] = config.schedule.alpha;
    j["t_prime"] = config.schedule.t_prime;
    j["w_scale"] = 1.0 / config.sigma2;
    j["iters_trained"] = state.k;
    std::vector<double> row_major;
    for (int r = 0; r < state.W.rows(); ++r)
        for (int c = 0; c < state.W.cols(); ++c) row_major.push_back(state.W(r, c));
    j["w_matrix"] = row_major;
    return j;
}

struct ExportedWeights {
    Matrix W;
    int d = 0, C = 0;
    double sigma2 = 1.0, beta = 50.0, alpha = 1.0, t_prime = 4.0, w_scale = 1.0;
    int iters_trained = 0;
};

inline ExportedWeights weights_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != kWeightsFormat)
        throw config_error("weights_from_json: unknown or missing format version");
    ExportedWeights w;
    w.d = j.at("d").get<int>();
    w.C = j.at("C").get<int>();
    w.sigma2 = j.at("sigma2").get<double>();
    w.beta = j.at("beta").get<double>();
    w.alpha = j.at("alpha").get<double>();
    w.t_prime = j.at("t_prime").get<double>();
    w.w_scale = j.at("w_scale").get<double>();
    w.iters_trained = j.value("iters_trained", 0);
    w.W = Matrix(w.d, w.d);
    auto v = j.at("w_matrix").get<std::vector<double>>();
    if (v.size() != static_cast<size_t>(w.d) * static_cast<size_t>(w.d))
        throw config_error("weights_from_json: w_matrix length mismatch");
    size_t i = 0;
    for (int r = 0; r < w.d; ++r)
        for (int c = 0; c < w.d; ++c) w.W(r, c) = v[i++];
    return w;
}

inline void export_weights(const std::string& path, const TrainState& state,
                           const TrainConfig& config) {
    std::ofstream out(path);
    if (!out) throw io_error("export_weights: cannot open " + path);
    out << weights_to_json(state, config).dump(2) << "\n";
    if (!out) throw io_error("export_weights: write failed for " + path);
}

inline ExportedWeights import_weights(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("import_weights: cannot open " + path);
    nlohmann::json j;
    in >> j;
    return weights_from_json(j);
}

// Training log CSV: iter, loss, w_dist_sq, grad_norm, wall_ms. The wall_ms
// column is wall-clock and not reproducible across runs.
inline void write_train_log_csv(const std::string& path, const TrainState& state) {
    std::ofstream out(path);
    if (!out) throw io_error("write_train_log_csv: cannot open " + path);
    out << "iter,loss,w_dist_sq,grad_norm,wall_ms\n";
    char buf[160];
    for (const TrainRecord& r : state.history) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.3f\n", r.iter, r.loss, r.w_dist_sq,
                      r.grad_norm, r.wall_ms);
        out << buf;
    }
}

} // namespace augicl
