#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "augicl/attention_core.hpp"
#include "augicl/cot_trainer.hpp"
#include "augicl/em_engine.hpp"
#include "augicl/gmm_task.hpp"
#include "augicl/prompt_codec.hpp"

namespace augicl {

// ---------------------------------------------------------------------------
// Experiment runner: trains W per (M_u, seed), evaluates the explicit
// transformer on a fixed per-seed instance set at every checkpoint, and writes
// metrics.csv / summary.json. All file content is deterministic given the
// config (the training log's wall_ms column is the sole documented exception,
// and it is not produced here).
// ---------------------------------------------------------------------------

struct EvalConfig {
    int n_instances = 100;
    int eval_every = 100;
    bool resample_per_checkpoint = false;
};

struct ExperimentConfig {
    int d = 3;
    int C = 3;
    int n_labeled = 5;
    double sigma2 = 0.7;
    std::vector<int> unlabeled_counts{1, 10, 20};
    int cot_steps = 5;
    double beta = 50.0;
    EtaSchedule schedule{13.0, 4.0};

    int batch_size = 64;
    int iters = 2000;
    double base_lr = 0.3;
    bool lr_per_unlabeled = true;  // per-run lr = base_lr / M_u (CoT loss sums over unlabeled)
    InitKind init = InitKind::isotropic;
    double w0 = 0.0;
    RefMode ref_mode = RefMode::empirical_em;

    std::vector<uint64_t> seeds{1, 2, 3, 4, 5};
    EvalConfig eval;
    std::string out_dir = "out";

    void validate() const {
        if (d < 1 || C < 2) throw config_error("config: need d >= 1 and C >= 2");
        if (unlabeled_counts.empty()) throw config_error("config: unlabeled list is empty");
        if (seeds.empty()) throw config_error("config: seeds list is empty");
        if (iters < 1 || batch_size < 1) throw config_error("config: iters/batch must be >= 1");
        if (eval.n_instances < 1) throw config_error("config: eval.n_instances must be >= 1");
        if (eval.eval_every < 1) throw config_error("config: eval.eval_every must be >= 1");
        if (sigma2 <= 0.0) throw config_error("config: sigma2 must be positive");
        if (base_lr <= 0.0) throw config_error("config: lr must be positive");
    }
};

struct MetricsRow {
    int gd_iter = 0;
    int m_u = 0;
    double sigma2 = 0.0;
    uint64_t seed = 0;
    double mean_est_err = 0.0;
    double accuracy = 0.0;
    double bayes_acc = 0.0;
    double labeled_only_acc = 0.0;
    double w_dist_sq = 0.0;
};

namespace detail {

inline TaskInstance eval_instance(uint64_t seed, int index, const ExperimentConfig& cfg, int m_u,
                                  int checkpoint_tag = 0) {
    // eval stream kept disjoint from the trainer's substream keys
    Rng stream = Rng(seed).substream(0xe7a1, static_cast<uint64_t>(checkpoint_tag),
                                     static_cast<uint64_t>(index));
    Rng mean_rng = stream.substream(0);
    const Matrix means = sample_means(cfg.d, cfg.C, mean_rng);
    return sample_instance(means, cfg.sigma2, cfg.n_labeled, m_u, stream,
                           SeedRecord{seed, static_cast<uint64_t>(index)});
}

inline double fraction_equal(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.empty()) return 0.0;
    size_t hits = 0;
    for (size_t i = 0; i < a.size(); ++i) hits += a[i] == b[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(a.size());
}

} // namespace detail

struct EvalResult {
    double mean_est_err = 0.0;
    double accuracy = 0.0;
    double bayes_acc = 0.0;
    double labeled_only_acc = 0.0;
};

// Rolls out the transformer built from W on every instance; all metrics come
// from the same rollout.
inline EvalResult evaluate_transformer(const Matrix& W, const std::vector<TaskInstance>& instances,
                                       const ExperimentConfig& cfg, int m_u) {
    const TokenLayout layout{cfg.d, cfg.C};
    const TransformerParams params =
        build_em_transformer(layout, W, cfg.beta, cfg.schedule.alpha, cfg.schedule.t_prime, m_u,
                             cfg.n_labeled, 1.0 / cfg.sigma2);
    EvalResult res;
    for (const TaskInstance& inst : instances) {
        PromptState prompt = encode_instance(inst, layout);
        auto [traj, final_state] = cot_rollout(params, std::move(prompt), cfg.cot_steps);
        const Matrix& est = traj.steps.back();
        res.mean_est_err += frobenius_sq(est - inst.means);
        res.accuracy +=
            detail::fraction_equal(predict_labels(inst.unlabeled_x, est), inst.hidden_labels);
        res.bayes_acc += detail::fraction_equal(predict_labels(inst.unlabeled_x, inst.means),
                                                inst.hidden_labels);
        res.labeled_only_acc +=
            detail::fraction_equal(labeled_only_predict(inst), inst.hidden_labels);
    }
    const double n = static_cast<double>(instances.size());
    res.mean_est_err /= n;
    res.accuracy /= n;
    res.bayes_acc /= n;
    res.labeled_only_acc /= n;
    return res;
}

inline TrainConfig make_train_config(const ExperimentConfig& cfg, int m_u, uint64_t seed) {
    TrainConfig tc;
    tc.d = cfg.d;
    tc.C = cfg.C;
    tc.n_labeled = cfg.n_labeled;
    tc.n_unlabeled = m_u;
    tc.sigma2 = cfg.sigma2;
    tc.batch_size = cfg.batch_size;
    tc.iters = cfg.iters;
    tc.lr = cfg.lr_per_unlabeled ? cfg.base_lr / std::max(m_u, 1) : cfg.base_lr;
    tc.init = cfg.init;
    tc.w0 = cfg.w0;
    tc.beta = cfg.beta;
    tc.schedule = cfg.schedule;
    tc.cot_steps = cfg.cot_steps;
    tc.ref_mode = cfg.ref_mode;
    tc.seed = seed;
    return tc;
}

inline std::vector<MetricsRow> collect_experiment_rows(const ExperimentConfig& cfg) {
    cfg.validate();
    std::vector<MetricsRow> rows;
    const Matrix w_inv = Matrix::isotropic(cfg.d, 1.0 / cfg.sigma2);
    for (int m_u : cfg.unlabeled_counts) {
        for (uint64_t seed : cfg.seeds) {
            std::vector<TaskInstance> eval_set;
            eval_set.reserve(static_cast<size_t>(cfg.eval.n_instances));
            for (int k = 0; k < cfg.eval.n_instances; ++k)
                eval_set.push_back(detail::eval_instance(seed, k, cfg, m_u));

            const TrainConfig tc = make_train_config(cfg, m_u, seed);
            auto checkpoint = [&](const TrainState& state) {
                if (state.k % cfg.eval.eval_every != 0 && state.k != cfg.iters) return;
                const std::vector<TaskInstance>* set = &eval_set;
                std::vector<TaskInstance> resampled;
                if (cfg.eval.resample_per_checkpoint && state.k > 0) {
                    resampled.reserve(eval_set.size());
                    for (int k = 0; k < cfg.eval.n_instances; ++k)
                        resampled.push_back(detail::eval_instance(seed, k, cfg, m_u, state.k));
                    set = &resampled;
                }
                const EvalResult r = evaluate_transformer(state.W, *set, cfg, m_u);
                MetricsRow row;
                row.gd_iter = state.k;
                row.m_u = m_u;
                row.sigma2 = cfg.sigma2;
                row.seed = seed;
                row.mean_est_err = r.mean_est_err;
                row.accuracy = r.accuracy;
                row.bayes_acc = r.bayes_acc;
                row.labeled_only_acc = r.labeled_only_acc;
                row.w_dist_sq = frobenius_sq(state.W - w_inv);
                rows.push_back(row);
            };
            train(tc, checkpoint);
        }
    }
    return rows;
}

inline void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
    std::ofstream out(path);
    if (!out) throw io_error("write_metrics_csv: cannot open " + path);
    out << "gd_iter,m_u,sigma2,seed,mean_est_err,accuracy,bayes_acc,labeled_only_acc,w_dist_sq\n";
    char buf[320];
    for (const MetricsRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%llu,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                      r.gd_iter, r.m_u, r.sigma2, static_cast<unsigned long long>(r.seed),
                      r.mean_est_err, r.accuracy, r.bayes_acc, r.labeled_only_acc, r.w_dist_sq);
        out << buf;
    }
}

inline std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("read_metrics_csv: cannot open " + path);
    std::vector<MetricsRow> rows;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        MetricsRow r;
        unsigned long long seed = 0;
        if (std::sscanf(line.c_str(), "%d,%d,%lf,%llu,%lf,%lf,%lf,%lf,%lf", &r.gd_iter, &r.m_u,
                        &r.sigma2, &seed, &r.mean_est_err, &r.accuracy, &r.bayes_acc,
                        &r.labeled_only_acc, &r.w_dist_sq) != 9)
            throw io_error("read_metrics_csv: malformed row: " + line);
        r.seed = seed;
        rows.push_back(r);
    }
    return rows;
}

struct SummaryStat {
    double mean = 0.0, stddev = 0.0, lo = 0.0, hi = 0.0;
};

inline SummaryStat summarize(const std::vector<double>& v) {
    SummaryStat s;
    if (v.empty()) return s;
    for (double x : v) s.mean += x;
    s.mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - s.mean) * (x - s.mean);
    var /= static_cast<double>(v.size());
    s.stddev = std::sqrt(var);
    s.lo = s.mean - 2.0 * s.stddev;  // the plotted band is mean +/- 2 std
    s.hi = s.mean + 2.0 * s.stddev;
    return s;
}

inline nlohmann::json config_to_json(const ExperimentConfig& cfg);

inline nlohmann::json summary_json(const ExperimentConfig& cfg, const std::vector<MetricsRow>& rows) {
    std::map<std::pair<int, int>, std::vector<const MetricsRow*>> groups;  // (m_u, gd_iter)
    for (const MetricsRow& r : rows) groups[{r.m_u, r.gd_iter}].push_back(&r);
    nlohmann::json metrics = nlohmann::json::array();
    auto stat_json = [](const SummaryStat& s) {
        return nlohmann::json{{"mean", s.mean}, {"std", s.stddev}, {"lo", s.lo}, {"hi", s.hi}};
    };
    for (const auto& [key, group] : groups) {
        auto collect = [&](auto member) {
            std::vector<double> v;
            for (const MetricsRow* r : group) v.push_back(r->*member);
            return summarize(v);
        };
        metrics.push_back({{"m_u", key.first},
                           {"gd_iter", key.second},
                           {"n_seeds", group.size()},
                           {"mean_est_err", stat_json(collect(&MetricsRow::mean_est_err))},
                           {"accuracy", stat_json(collect(&MetricsRow::accuracy))},
                           {"bayes_acc", stat_json(collect(&MetricsRow::bayes_acc))},
                           {"labeled_only_acc", stat_json(collect(&MetricsRow::labeled_only_acc))},
                           {"w_dist_sq", stat_json(collect(&MetricsRow::w_dist_sq))}});
    }
    // the echoed config drops "out": the report's location is not a result
    nlohmann::json echoed = config_to_json(cfg);
    echoed.erase("out");
    return {{"config", echoed}, {"metrics", metrics}};
}

// Long-format plot data, one panel per metric family.
inline void emit_plot_data(const std::string& report_dir) {
    namespace fs = std::filesystem;
    const std::string metrics_path = (fs::path(report_dir) / "metrics.csv").string();
    if (!fs::exists(metrics_path)) throw io_error("emit_plot_data: missing " + metrics_path);
    const std::vector<MetricsRow> rows = read_metrics_csv(metrics_path);

    std::ofstream out(fs::path(report_dir) / "plots.csv");
    if (!out) throw io_error("emit_plot_data: cannot open plots.csv");
    out << "panel,x,series,mean,lo,hi\n";
    if (rows.empty()) return;

    std::vector<int> xs, series;
    for (const MetricsRow& r : rows) {
        xs.push_back(r.gd_iter);
        series.push_back(r.m_u);
    }
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
    std::sort(series.begin(), series.end());
    series.erase(std::unique(series.begin(), series.end()), series.end());

    const char* panels[3] = {"mean_est_err", "accuracy", "accuracy_minus_labeled_only"};
    char buf[256];
    for (const char* panel : panels) {
        for (int x : xs) {
            for (int s : series) {
                std::vector<double> vals;
                for (const MetricsRow& r : rows) {
                    if (r.gd_iter != x || r.m_u != s) continue;
                    if (std::string_view(panel) == "mean_est_err")
                        vals.push_back(r.mean_est_err);
                    else if (std::string_view(panel) == "accuracy")
                        vals.push_back(r.accuracy);
                    else
                        vals.push_back(r.accuracy - r.labeled_only_acc);
                }
                if (vals.empty()) {
                    // explicit gap marker, never interpolated
                    std::snprintf(buf, sizeof(buf), "%s,%d,%d,NA,NA,NA\n", panel, x, s);
                    out << buf;
                    continue;
                }
                const SummaryStat st = summarize(vals);
                std::snprintf(buf, sizeof(buf), "%s,%d,%d,%.17g,%.17g,%.17g\n", panel, x, s,
                              st.mean, st.lo, st.hi);
                out << buf;
            }
        }
    }
}

inline void run_experiment(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    cfg.validate();
    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    if (ec) throw io_error("run_experiment: cannot create output directory " + cfg.out_dir);
    {
        std::ofstream probe(fs::path(cfg.out_dir) / "config.json");
        if (!probe) throw io_error("run_experiment: output directory is not writable");
        nlohmann::json echoed = config_to_json(cfg);
        echoed.erase("out");
        probe << echoed.dump(2) << "\n";
    }
    const std::vector<MetricsRow> rows = collect_experiment_rows(cfg);
    write_metrics_csv((fs::path(cfg.out_dir) / "metrics.csv").string(), rows);
    {
        std::ofstream out(fs::path(cfg.out_dir) / "summary.json");
        out << summary_json(cfg, rows).dump(2) << "\n";
    }
    emit_plot_data(cfg.out_dir);
}

// ---------------------------------------------------------------------------
// Config file round-trip (mirrors the CLI flags; flags override file values)
// ---------------------------------------------------------------------------

inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
    return {{"dim", cfg.d},
            {"classes", cfg.C},
            {"labeled", cfg.n_labeled},
            {"sigma2", cfg.sigma2},
            {"unlabeled", cfg.unlabeled_counts},
            {"cot_steps", cfg.cot_steps},
            {"beta", cfg.beta},
            {"alpha", cfg.schedule.alpha},
            {"t_prime", cfg.schedule.t_prime},
            {"batch", cfg.batch_size},
            {"iters", cfg.iters},
            {"lr", cfg.base_lr},
            {"lr_per_unlabeled", cfg.lr_per_unlabeled},
            {"init", cfg.init == InitKind::isotropic ? "isotropic" : "gaussian"},
            {"w0", cfg.w0},
            {"ref_mode", cfg.ref_mode == RefMode::empirical_em ? "empirical-em" : "fixed-truth"},
            {"seeds", cfg.seeds},
            {"eval_instances", cfg.eval.n_instances},
            {"eval_every", cfg.eval.eval_every},
            {"resample_eval", cfg.eval.resample_per_checkpoint},
            {"out", cfg.out_dir}};
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig cfg;
    cfg.d = j.value("dim", cfg.d);
    cfg.C = j.value("classes", cfg.C);
    cfg.n_labeled = j.value("labeled", cfg.n_labeled);
    cfg.sigma2 = j.value("sigma2", cfg.sigma2);
    cfg.unlabeled_counts = j.value("unlabeled", cfg.unlabeled_counts);
    cfg.cot_steps = j.value("cot_steps", cfg.cot_steps);
    cfg.beta = j.value("beta", cfg.beta);
    cfg.schedule.alpha = j.value("alpha", cfg.schedule.alpha);
    cfg.schedule.t_prime = j.value("t_prime", cfg.schedule.t_prime);
    cfg.batch_size = j.value("batch", cfg.batch_size);
    cfg.iters = j.value("iters", cfg.iters);
    cfg.base_lr = j.value("lr", cfg.base_lr);
    cfg.lr_per_unlabeled = j.value("lr_per_unlabeled", cfg.lr_per_unlabeled);
    const std::string init = j.value("init", std::string("isotropic"));
    if (init == "isotropic")
        cfg.init = InitKind::isotropic;
    else if (init == "gaussian")
        cfg.init = InitKind::gaussian;
    else
        throw config_error("config: unknown init '" + init + "'");
    cfg.w0 = j.value("w0", cfg.w0);
    const std::string mode = j.value("ref_mode", std::string("empirical-em"));
    if (mode == "empirical-em")
        cfg.ref_mode = RefMode::empirical_em;
    else if (mode == "fixed-truth")
        cfg.ref_mode = RefMode::fixed_truth;
    else
        throw config_error("config: unknown ref_mode '" + mode + "'");
    cfg.seeds = j.value("seeds", cfg.seeds);
    cfg.eval.n_instances = j.value("eval_instances", cfg.eval.n_instances);
    cfg.eval.eval_every = j.value("eval_every", cfg.eval.eval_every);
    cfg.eval.resample_per_checkpoint = j.value("resample_eval", cfg.eval.resample_per_checkpoint);
    cfg.out_dir = j.value("out", cfg.out_dir);
    return cfg;
}

// ---------------------------------------------------------------------------
// Verification suite: named invariants with measured values. Thresholds are
// pinned here, not configurable.
// ---------------------------------------------------------------------------

struct VerifyCheck {
    std::string name;
    bool pass = false;
    double measured = 0.0;
    double threshold = 0.0;
    std::string detail;
};

struct VerifyOptions {
    double beta = 50.0;  // layer-1 recency weight; lowering it is the negative control
    bool fast = false;   // reduced sample counts for smoke runs
    std::vector<std::string> only;
    uint64_t seed = 1;
};

inline std::vector<std::string> verify_check_names() {
    return {"rollout-oracle-equivalence", "beta-monotonicity", "gradient-check",
            "zero-grad-fixed-point",      "gibbs-bound",       "population-grad-isotropy",
            "decay-rate",                 "determinism"};
}

// max-abs trajectory deviation between the explicit transformer and the
// reference engine over a batch of instances
inline double rollout_deviation(double beta, double sigma2, int n_instances, uint64_t seed,
                                const EtaSchedule& schedule, int m_u = 10, int T = 5) {
    const int d = 3, C = 3, N = 5;
    const TokenLayout layout{d, C};
    const Matrix w_inv = Matrix::isotropic(d, 1.0 / sigma2);
    const TransformerParams params =
        build_em_transformer(layout, w_inv, beta, schedule.alpha, schedule.t_prime, m_u, N,
                             1.0 / sigma2);
    double worst = 0.0;
    for (int k = 0; k < n_instances; ++k) {
        const TaskInstance inst = make_instance(seed, static_cast<uint64_t>(k), d, C, sigma2, N, m_u);
        const ReferenceTrajectory ref = reference_rollout(inst, T, schedule, RefMode::empirical_em);
        auto [traj, state] = cot_rollout(params, encode_instance(inst, layout), T);
        for (int t = 0; t <= T; ++t)
            worst = std::max(worst,
                             max_abs_diff(traj.steps[static_cast<size_t>(t)],
                                          ref.steps[static_cast<size_t>(t)]));
    }
    return worst;
}

struct GradCheckStats {
    double max_rel_err = 0.0;
    double zero_point_max = 0.0;
    double gibbs_min_gap = 0.0;
};

inline GradCheckStats gradient_check_suite(int fixtures_per_combo, uint64_t seed) {
    GradCheckStats stats;
    stats.gibbs_min_gap = std::numeric_limits<double>::infinity();
    const int dims[3] = {1, 2, 3};
    const int classes[2] = {2, 3};
    uint64_t index = 0;
    for (int d : dims)
        for (int C : classes)
            for (int f = 0; f < fixtures_per_combo; ++f) {
                const double sigma2 = (f % 2 == 0) ? 0.7 : 1.3;
                const TaskInstance inst =
                    make_instance(seed, index++, d, C, sigma2, 2 * C, 6);
                const EtaSchedule schedule{};
                const ReferenceTrajectory ref =
                    reference_rollout(inst, 3, schedule, RefMode::empirical_em);
                const Targets targets = teacher_targets(inst, ref);
                Rng wr = Rng(seed).substream(0xabcd, index);
                Matrix W(d, d);
                for (int a = 0; a < d; ++a)
                    for (int b = 0; b < d; ++b) W(a, b) = 1.0 / sigma2 + 0.5 * wr.normal();
                const Matrix analytic = cot_loss_grad(W, inst, ref, targets);
                const FdResult fd = finite_diff_grad(W, inst, ref, targets, 1e-5);
                const double denom = std::max(std::sqrt(frobenius_sq(fd.grad)), 1e-300);
                stats.max_rel_err = std::max(
                    stats.max_rel_err, std::sqrt(frobenius_sq(analytic - fd.grad)) / denom);

                const Matrix w_inv = Matrix::isotropic(d, 1.0 / sigma2);
                stats.zero_point_max =
                    std::max(stats.zero_point_max,
                             max_abs(cot_loss_grad(w_inv, inst, ref, targets)));
                stats.gibbs_min_gap =
                    std::min(stats.gibbs_min_gap,
                             cot_loss(W, inst, ref, targets) - cot_loss(w_inv, inst, ref, targets));
            }
    return stats;
}

struct IsotropyStats {
    double max_offdiag_z = 0.0;    // |mean| / SE over off-diagonal entries
    double max_diag_pair_z = 0.0;  // |mean diff| / SE(diff) over diagonal pairs
};

// Accumulates per-instance gradients and reports the worst z-scores; pairwise
// diagonal differences get their own standard errors.
inline IsotropyStats isotropy_stats(const Matrix& W, const TrainConfig& config, int n_instances,
                                    Rng rng) {
    const int d = config.d;
    Matrix sum(d, d), sum_sq(d, d);
    std::vector<double> dsum(static_cast<size_t>(d * d), 0.0);
    std::vector<double> dsum_sq(static_cast<size_t>(d * d), 0.0);
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
        for (int a = 0; a < d; ++a)
            for (int b = a + 1; b < d; ++b) {
                const double diff = g(a, a) - g(b, b);
                dsum[static_cast<size_t>(a * d + b)] += diff;
                dsum_sq[static_cast<size_t>(a * d + b)] += diff * diff;
            }
    }
    const double n = static_cast<double>(n_instances);
    IsotropyStats st;
    for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b) {
            if (a == b) continue;
            const double mean = sum(a, b) / n;
            const double var = std::max(sum_sq(a, b) / n - mean * mean, 0.0);
            const double se = std::sqrt(var / n);
            st.max_offdiag_z = std::max(st.max_offdiag_z, std::abs(mean) / std::max(se, 1e-300));
        }
    for (int a = 0; a < d; ++a)
        for (int b = a + 1; b < d; ++b) {
            const double mean = dsum[static_cast<size_t>(a * d + b)] / n;
            const double var =
                std::max(dsum_sq[static_cast<size_t>(a * d + b)] / n - mean * mean, 0.0);
            const double se = std::sqrt(var / n);
            st.max_diag_pair_z = std::max(st.max_diag_pair_z, std::abs(mean) / std::max(se, 1e-300));
        }
    return st;
}

inline double fit_slope(const std::vector<double>& ys) {
    // least squares slope of ys against 0..n-1
    const double n = static_cast<double>(ys.size());
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (size_t i = 0; i < ys.size(); ++i) {
        const double x = static_cast<double>(i);
        sx += x;
        sy += ys[i];
        sxx += x * x;
        sxy += x * ys[i];
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

// Criterion-3 style run: fixed-truth teacher, isotropic init, GD on the MC
// population gradient; returns logged w_dist_sq per step (k = 0..steps-1) and
// per-step isotropy stats.
struct DecayRun {
    std::vector<double> dist_sq;
    std::vector<IsotropyStats> isotropy;
};

inline DecayRun decay_rate_run(int steps, int batch, double lr, double sigma2, uint64_t seed,
                               bool with_isotropy) {
    TrainConfig tc;
    tc.d = 3;
    tc.C = 3;
    tc.n_labeled = 5;
    tc.n_unlabeled = 1;  // Eq-(12) sums over unlabeled samples; one sample = the per-sample gradient
    tc.sigma2 = sigma2;
    tc.cot_steps = 1;
    tc.ref_mode = RefMode::fixed_truth;
    tc.stop_quadratic = true;
    const Matrix w_inv = Matrix::isotropic(tc.d, 1.0 / sigma2);
    Matrix W = Matrix::isotropic(tc.d, 0.5 / sigma2);
    Rng rng = Rng(seed).substream(0xdeca);
    DecayRun run;
    for (int k = 0; k < steps; ++k) {
        run.dist_sq.push_back(frobenius_sq(W - w_inv));
        if (with_isotropy) {
            run.isotropy.push_back(
                isotropy_stats(W, tc, batch, rng.substream(static_cast<uint64_t>(k))));
        }
        const McGradient mc =
            population_grad_mc(W, tc, batch, rng.substream(static_cast<uint64_t>(k)));
        W -= lr * mc.grad;
    }
    return run;
}

namespace detail {

inline bool files_identical(const std::string& a, const std::string& b) {
    std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
    if (!fa || !fb) return false;
    std::ostringstream sa, sb;
    sa << fa.rdbuf();
    sb << fb.rdbuf();
    return sa.str() == sb.str();
}

} // namespace detail

inline std::vector<VerifyCheck> run_verify(const VerifyOptions& opt) {
    std::vector<VerifyCheck> checks;
    auto wanted = [&](const std::string& name) {
        return opt.only.empty() ||
               std::find(opt.only.begin(), opt.only.end(), name) != opt.only.end();
    };
    const EtaSchedule schedule{13.0, 4.0};

    if (wanted("rollout-oracle-equivalence")) {
        const int n = opt.fast ? 20 : 100;
        double worst = 0.0;
        for (double sigma2 : {0.7, 1.5})
            worst = std::max(worst, rollout_deviation(opt.beta, sigma2, n, opt.seed, schedule));
        checks.push_back({"rollout-oracle-equivalence", worst <= 1e-6, worst, 1e-6,
                          "max-abs trajectory deviation, W = Sigma^-1"});
    }
    if (wanted("beta-monotonicity")) {
        const int n = opt.fast ? 10 : 50;
        double prev = std::numeric_limits<double>::infinity();
        bool monotone = true;
        std::string detail = "deviations:";
        double last = 0.0;
        for (double beta : {5.0, 10.0, 20.0, 50.0}) {
            const double dev = rollout_deviation(beta, 0.7, n, opt.seed, schedule);
            char buf[48];
            std::snprintf(buf, sizeof(buf), " b%.0f=%.3g", beta, dev);
            detail += buf;
            if (dev > prev) monotone = false;
            prev = dev;
            last = dev;
        }
        checks.push_back({"beta-monotonicity", monotone, last, 0.0, detail});
    }
    if (wanted("gradient-check") || wanted("zero-grad-fixed-point") || wanted("gibbs-bound")) {
        const GradCheckStats stats = gradient_check_suite(opt.fast ? 3 : 9, opt.seed);
        if (wanted("gradient-check"))
            checks.push_back({"gradient-check", stats.max_rel_err <= 1e-5, stats.max_rel_err, 1e-5,
                              "analytic vs central differences, relative Frobenius"});
        if (wanted("zero-grad-fixed-point"))
            checks.push_back({"zero-grad-fixed-point", stats.zero_point_max == 0.0,
                              stats.zero_point_max, 0.0, "gradient at W = Sigma^-1, exact"});
        if (wanted("gibbs-bound"))
            checks.push_back({"gibbs-bound", stats.gibbs_min_gap >= -1e-12, stats.gibbs_min_gap,
                              0.0, "min loss(W) - loss(Sigma^-1) over fixtures"});
    }
    if (wanted("population-grad-isotropy")) {
        TrainConfig tc;
        tc.d = 3;
        tc.C = 3;
        tc.sigma2 = 1.0;
        tc.n_unlabeled = 1;
        tc.cot_steps = 1;
        tc.ref_mode = RefMode::fixed_truth;
        const Matrix W = Matrix::isotropic(3, 0.5);
        const IsotropyStats st =
            isotropy_stats(W, tc, opt.fast ? 1024 : 4096, Rng(opt.seed).substream(0x150));
        const double z = std::max(st.max_offdiag_z, st.max_diag_pair_z);
        checks.push_back({"population-grad-isotropy", z <= 4.0, z, 4.0,
                          "worst z-score of off-diagonals and diagonal pairs"});
    }
    if (wanted("decay-rate")) {
        const int steps = opt.fast ? 12 : 30;
        const int batch = opt.fast ? 512 : 4096;
        const double lr = 0.3, sigma2 = 1.0;
        const DecayRun run = decay_rate_run(steps, batch, lr, sigma2, opt.seed, false);
        std::vector<double> logd;
        for (double v : run.dist_sq) logd.push_back(std::log(v));
        const double slope = fit_slope(logd);
        const double gamma = sigma2 * (1.0 - 1.0 / 3.0);
        const double predicted = 2.0 * std::log(1.0 - gamma * lr);
        const double rel = std::abs(slope / predicted - 1.0);
        char buf[96];
        std::snprintf(buf, sizeof(buf), "slope=%.4f predicted=%.4f", slope, predicted);
        checks.push_back({"decay-rate", rel <= 0.15, rel, 0.15, buf});
    }
    if (wanted("determinism")) {
        namespace fs = std::filesystem;
        ExperimentConfig cfg;
        cfg.sigma2 = 0.7;
        cfg.unlabeled_counts = {1, 3};
        cfg.iters = 4;
        cfg.batch_size = 4;
        cfg.seeds = {1, 2};
        cfg.eval.n_instances = 4;
        cfg.eval.eval_every = 2;
        cfg.schedule = schedule;
        const fs::path base = fs::temp_directory_path() / "augicl-verify-determinism";
        fs::remove_all(base);
        cfg.out_dir = (base / "a").string();
        run_experiment(cfg);
        cfg.out_dir = (base / "b").string();
        run_experiment(cfg);
        bool same = true;
        for (const char* f : {"metrics.csv", "summary.json", "plots.csv"})
            same = same && detail::files_identical((base / "a" / f).string(), (base / "b" / f).string());
        checks.push_back({"determinism", same, same ? 0.0 : 1.0, 0.0,
                          "byte-identical metrics.csv/summary.json/plots.csv on rerun"});
        fs::remove_all(base);
    }
    return checks;
}

} // namespace augicl
