#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "augicl/gmm_task.hpp"
#include "augicl/matrix.hpp"
#include "augicl/numerics.hpp"

namespace augicl {

// ---------------------------------------------------------------------------
// Reference EM engine the transformer construction is tested against, and the
// teacher that generates reference trajectories for training.
// ---------------------------------------------------------------------------

struct EtaSchedule {
    double alpha = 1.0;
    double t_prime = 4.0;
};

inline double eta(const EtaSchedule& s, int t) {
    if (t < 0) throw parameter_error("eta: t < 0");
    return s.alpha / (s.t_prime + static_cast<double>(t));
}

using Posterior = std::vector<double>;  // length C, entries >= 0, sum 1

// Class scores s_i = -1/2 mu_i^T Wq mu_i + x^T Wc mu_i. For symmetric W the
// softmax of these equals the softmax of -1/2 ||mu_i - x||_W^2 (the x-only
// term is constant per query and cancels). Wq is kept separate so the trainer
// can hold the quadratic term at a stopped copy of W.
inline void class_scores(std::span<const double> x, const Matrix& means, const Matrix& w_cross,
                         const Matrix& w_quad, std::span<double> out) {
    for (int i = 0; i < means.cols(); ++i) {
        auto mu = means.col(i);
        out[static_cast<size_t>(i)] =
            -0.5 * bilinear(mu, w_quad, mu) + bilinear(x, w_cross, mu);
    }
}

inline Posterior posterior_scored(std::span<const double> x, const Matrix& means,
                                  const Matrix& w_cross, const Matrix& w_quad) {
    Posterior p(static_cast<size_t>(means.cols()));
    class_scores(x, means, w_cross, w_quad, p);
    for (double s : p)
        if (!std::isfinite(s)) throw numerical_error("posterior: non-finite class score");
    softmax_inplace(p);
    return p;
}

inline Posterior posterior_last(std::span<const double> x, const Matrix& means, const Matrix& w) {
    return posterior_scored(x, means, w, w);
}

// Full-history posterior: p_i proportional to
// sum_tau exp(score(mu_i^(tau), x) + beta*tau), jointly normalized over
// (class, step) via log-sum-exp.
inline Posterior posterior_full(std::span<const double> x, const std::vector<Matrix>& history,
                                const Matrix& w, double beta) {
    if (history.empty()) throw parameter_error("posterior_full: empty history");
    const int C = history.front().cols();
    std::vector<double> scores(history.size() * static_cast<size_t>(C));
    for (size_t tau = 0; tau < history.size(); ++tau) {
        class_scores(x, history[tau], w, w,
                     std::span<double>(scores).subspan(tau * static_cast<size_t>(C),
                                                       static_cast<size_t>(C)));
        for (int i = 0; i < C; ++i) {
            double& s = scores[tau * static_cast<size_t>(C) + static_cast<size_t>(i)];
            if (!std::isfinite(s)) throw numerical_error("posterior_full: non-finite score");
            s += beta * static_cast<double>(tau);
        }
    }
    softmax_inplace(scores);
    Posterior p(static_cast<size_t>(C), 0.0);
    for (size_t tau = 0; tau < history.size(); ++tau)
        for (int i = 0; i < C; ++i)
            p[static_cast<size_t>(i)] += scores[tau * static_cast<size_t>(C) + static_cast<size_t>(i)];
    return p;
}

// Labeled-data plug-in means: mu_i = (C/N) sum_j [y_j = i] x_j. An empty class
// (or N = 0) yields the zero column, matching the empty sum.
inline Matrix init_means_from_labeled(const Matrix& labeled_x, const std::vector<int>& labeled_y,
                                      int classes) {
    const int d = labeled_x.rows();
    const int n = labeled_x.cols();
    Matrix means(d, classes);
    if (n == 0) return means;
    const double scale = static_cast<double>(classes) / static_cast<double>(n);
    for (int j = 0; j < n; ++j) {
        const int y = labeled_y[static_cast<size_t>(j)];
        auto x = labeled_x.col(j);
        for (int r = 0; r < d; ++r) means(r, y) += scale * x[static_cast<size_t>(r)];
    }
    return means;
}

inline Matrix init_means_from_labeled(const TaskInstance& inst) {
    return init_means_from_labeled(inst.labeled_x, inst.labeled_y, inst.classes());
}

// One mean update: mu_i' = mu_i - (eta/M_u) sum_j p_ij (mu_i - x_j).
// M_u = 0 returns the means unchanged (empty sum).
inline Matrix em_step(const Matrix& means, const Matrix& unlabeled,
                      const std::vector<Posterior>& posteriors, double eta_t) {
    const int m = unlabeled.cols();
    if (static_cast<int>(posteriors.size()) != m)
        throw parameter_error("em_step: posterior count != unlabeled count");
    Matrix out = means;
    if (m == 0) return out;
    const double scale = eta_t / static_cast<double>(m);
    for (int j = 0; j < m; ++j) {
        auto x = unlabeled.col(j);
        const Posterior& p = posteriors[static_cast<size_t>(j)];
        for (int i = 0; i < means.cols(); ++i) {
            const double w = scale * p[static_cast<size_t>(i)];
            for (int r = 0; r < means.rows(); ++r)
                out(r, i) -= w * (means(r, i) - x[static_cast<size_t>(r)]);
        }
    }
    return out;
}

inline std::vector<int> predict_labels(const Matrix& unlabeled, const Matrix& means) {
    std::vector<int> out(static_cast<size_t>(unlabeled.cols()));
    for (int j = 0; j < unlabeled.cols(); ++j) {
        auto x = unlabeled.col(j);
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int c = 0; c < means.cols(); ++c) {
            double dist = 0.0;
            for (int r = 0; r < means.rows(); ++r) {
                const double diff = x[static_cast<size_t>(r)] - means(r, c);
                dist += diff * diff;
            }
            if (dist < best_d) {
                best_d = dist;
                best = c;
            }
        }
        out[static_cast<size_t>(j)] = best;
    }
    return out;
}

// Labeled-only baseline: nearest plug-in mean (gmm_task op, lives here next to
// its dependencies).
inline std::vector<int> labeled_only_predict(const TaskInstance& inst) {
    if (inst.n_labeled() < 1) throw parameter_error("labeled_only_predict: needs N >= 1");
    return predict_labels(inst.unlabeled_x, init_means_from_labeled(inst));
}

enum class RefMode { empirical_em, fixed_truth };

struct ReferenceTrajectory {
    // steps[0] is the all-zero estimate, steps[t] for t in [1, T].
    std::vector<Matrix> steps;
    // posteriors[t][j] = posterior_last(x_j, steps[t], Sigma^-1) for t in
    // [1, T]; index 0 is kept empty so indices line up with steps.
    std::vector<std::vector<Posterior>> posteriors;
};

// empirical_em: step 1 is the labeled plug-in init, later steps follow the
// beta->infinity posterior and the mean update. fixed_truth: every step equals
// the ground-truth means (the regime the training-rate analysis uses).
inline ReferenceTrajectory reference_rollout(const TaskInstance& inst, int T,
                                             const EtaSchedule& schedule, RefMode mode) {
    if (T < 1) throw parameter_error("reference_rollout: T < 1");
    const int d = inst.dim();
    const int C = inst.classes();
    const Matrix w_inv = Matrix::isotropic(d, 1.0 / inst.sigma2);

    ReferenceTrajectory traj;
    traj.steps.reserve(static_cast<size_t>(T) + 1);
    traj.steps.emplace_back(d, C);
    traj.posteriors.resize(static_cast<size_t>(T) + 1);

    auto posteriors_at = [&](const Matrix& means) {
        std::vector<Posterior> ps;
        ps.reserve(static_cast<size_t>(inst.n_unlabeled()));
        for (int j = 0; j < inst.n_unlabeled(); ++j)
            ps.push_back(posterior_last(inst.unlabeled_x.col(j), means, w_inv));
        return ps;
    };

    if (mode == RefMode::fixed_truth) {
        for (int t = 1; t <= T; ++t) {
            traj.steps.push_back(inst.means);
            traj.posteriors[static_cast<size_t>(t)] = posteriors_at(inst.means);
        }
        return traj;
    }

    traj.steps.push_back(init_means_from_labeled(inst));
    traj.posteriors[1] = posteriors_at(traj.steps[1]);
    for (int t = 1; t < T; ++t) {
        const Matrix next = em_step(traj.steps[static_cast<size_t>(t)], inst.unlabeled_x,
                                    traj.posteriors[static_cast<size_t>(t)], eta(schedule, t));
        traj.steps.push_back(next);
        traj.posteriors[static_cast<size_t>(t) + 1] = posteriors_at(next);
    }
    return traj;
}

} // namespace augicl
