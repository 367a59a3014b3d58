// Command-line front end: train / eval / sweep / verify / emit-plots.
// Exit codes: 0 success, 1 invariant or runtime failure, 2 configuration error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "augicl/bench.hpp"

namespace fs = std::filesystem;
using namespace augicl;

namespace {

ExperimentConfig load_base_config(int argc, char** argv) {
    for (int i = 1; i < argc - 1; ++i) {
        if (std::string(argv[i]) == "--config") {
            std::ifstream in(argv[i + 1]);
            if (!in) throw config_error(std::string("cannot open config file ") + argv[i + 1]);
            nlohmann::json j;
            try {
                in >> j;
            } catch (const nlohmann::json::exception& e) {
                throw config_error(std::string("config file parse error: ") + e.what());
            }
            return config_from_json(j);
        }
    }
    return ExperimentConfig{};
}

// Attaches the shared experiment flags; values default to the (possibly
// config-file-loaded) cfg so explicit flags override the file.
void add_experiment_flags(CLI::App* cmd, ExperimentConfig& cfg, std::string& config_path,
                          std::string& init_name, std::string& ref_mode_name) {
    cmd->add_option("--config", config_path, "JSON config file mirroring these flags");
    cmd->add_option("--classes", cfg.C, "number of classes C");
    cmd->add_option("--dim", cfg.d, "input dimension d");
    cmd->add_option("--labeled", cfg.n_labeled, "labeled examples per instance N");
    cmd->add_option("--unlabeled", cfg.unlabeled_counts, "unlabeled count M_u (repeatable)");
    cmd->add_option("--cot-steps", cfg.cot_steps, "CoT steps T");
    cmd->add_option("--sigma2", cfg.sigma2, "isotropic noise variance");
    cmd->add_option("--beta", cfg.beta, "step-recency weight in layer-1 scores");
    cmd->add_option("--alpha", cfg.schedule.alpha, "step-size schedule numerator");
    cmd->add_option("--t-prime", cfg.schedule.t_prime, "step-size schedule offset");
    cmd->add_option("--batch", cfg.batch_size, "training batch size");
    cmd->add_option("--iters", cfg.iters, "GD iterations");
    cmd->add_option("--lr", cfg.base_lr, "base learning rate");
    cmd->add_flag("--no-lr-scale{false},!--lr-scale", cfg.lr_per_unlabeled,
                  "divide lr by M_u (default on; CoT loss sums over unlabeled samples)");
    init_name = cfg.init == InitKind::isotropic ? "isotropic" : "gaussian";
    cmd->add_option("--init", init_name, "W init: isotropic|gaussian")
        ->check(CLI::IsMember({"isotropic", "gaussian"}));
    cmd->add_option("--w0", cfg.w0, "isotropic init scale (0 = 0.5/sigma2 default)");
    ref_mode_name = cfg.ref_mode == RefMode::empirical_em ? "empirical-em" : "fixed-truth";
    cmd->add_option("--ref-mode", ref_mode_name, "teacher trajectory: empirical-em|fixed-truth")
        ->check(CLI::IsMember({"empirical-em", "fixed-truth"}));
    cmd->add_option("--seeds", cfg.seeds, "run seeds (repeatable)");
    cmd->add_option("--eval-every", cfg.eval.eval_every, "checkpoint cadence in GD iterations");
    cmd->add_option("--eval-instances", cfg.eval.n_instances, "instances per evaluation");
    cmd->add_flag("--resample-eval", cfg.eval.resample_per_checkpoint,
                  "draw a fresh eval set at every checkpoint");
    cmd->add_option("--out", cfg.out_dir, "output directory");
}

void finalize_enums(ExperimentConfig& cfg, const std::string& init_name,
                    const std::string& ref_mode_name) {
    cfg.init = init_name == "gaussian" ? InitKind::gaussian : InitKind::isotropic;
    cfg.ref_mode = ref_mode_name == "fixed-truth" ? RefMode::fixed_truth : RefMode::empirical_em;
}

int cmd_train(const ExperimentConfig& cfg) {
    const int m_u = cfg.unlabeled_counts.front();
    const TrainConfig tc = make_train_config(cfg, m_u, cfg.seeds.front());
    const TrainState state = train(tc);
    fs::create_directories(cfg.out_dir);
    write_train_log_csv((fs::path(cfg.out_dir) / "trainlog.csv").string(), state);
    export_weights((fs::path(cfg.out_dir) / "weights.json").string(), state, tc);
    const Matrix w_inv = Matrix::isotropic(cfg.d, 1.0 / cfg.sigma2);
    std::printf("trained %d iters (M_u=%d, lr=%.6g): loss=%.6g  ||W-Sigma^-1||_F^2=%.6g\n",
                state.k, m_u, tc.lr, state.history.back().loss, frobenius_sq(state.W - w_inv));
    std::printf("wrote %s and %s\n", (fs::path(cfg.out_dir) / "trainlog.csv").c_str(),
                (fs::path(cfg.out_dir) / "weights.json").c_str());
    return 0;
}

int cmd_eval(const ExperimentConfig& cfg, const std::string& weights_path) {
    Matrix W;
    int gd_iter = 0;
    if (!weights_path.empty()) {
        const ExportedWeights w = import_weights(weights_path);
        if (w.d != cfg.d || w.C != cfg.C)
            throw config_error("eval: weights dimensions do not match --dim/--classes");
        W = w.W;
        gd_iter = w.iters_trained;
    } else {
        W = Matrix::isotropic(cfg.d, 1.0 / cfg.sigma2);  // explicit Sigma^-1 transformer
    }
    std::vector<MetricsRow> rows;
    for (int m_u : cfg.unlabeled_counts) {
        for (uint64_t seed : cfg.seeds) {
            std::vector<TaskInstance> set;
            for (int k = 0; k < cfg.eval.n_instances; ++k)
                set.push_back(detail::eval_instance(seed, k, cfg, m_u));
            const EvalResult r = evaluate_transformer(W, set, cfg, m_u);
            const Matrix w_inv = Matrix::isotropic(cfg.d, 1.0 / cfg.sigma2);
            rows.push_back({gd_iter, m_u, cfg.sigma2, seed, r.mean_est_err, r.accuracy,
                            r.bayes_acc, r.labeled_only_acc, frobenius_sq(W - w_inv)});
            std::printf("M_u=%-4d seed=%llu  mean_est_err=%.4f  acc=%.4f  bayes=%.4f  labeled-only=%.4f\n",
                        m_u, static_cast<unsigned long long>(seed), r.mean_est_err, r.accuracy,
                        r.bayes_acc, r.labeled_only_acc);
        }
    }
    fs::create_directories(cfg.out_dir);
    write_metrics_csv((fs::path(cfg.out_dir) / "metrics.csv").string(), rows);
    return 0;
}

int cmd_verify(const VerifyOptions& opt, bool list_only, bool as_json) {
    if (list_only) {
        for (const std::string& name : verify_check_names()) std::printf("%s\n", name.c_str());
        return 0;
    }
    const std::vector<VerifyCheck> checks = run_verify(opt);
    bool all_pass = true;
    if (as_json) {
        nlohmann::json report = nlohmann::json::array();
        for (const VerifyCheck& c : checks) {
            report.push_back({{"name", c.name},
                              {"pass", c.pass},
                              {"measured", c.measured},
                              {"threshold", c.threshold},
                              {"detail", c.detail}});
            all_pass = all_pass && c.pass;
        }
        std::printf("%s\n", report.dump(2).c_str());
    } else {
        for (const VerifyCheck& c : checks) {
            std::printf("%s %-28s measured=%.6g threshold=%.6g  %s\n", c.pass ? "PASS" : "FAIL",
                        c.name.c_str(), c.measured, c.threshold, c.detail.c_str());
            all_pass = all_pass && c.pass;
        }
    }
    return all_pass ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    try {
        ExperimentConfig cfg = load_base_config(argc, argv);
        std::string config_path, init_name, ref_mode_name, weights_path, report_dir;
        VerifyOptions vopt;
        bool verify_list = false;
        bool verify_json = false;

        CLI::App app{"augicl: EM-emulating transformer laboratory for augmented in-context learning"};
        app.require_subcommand(1);

        CLI::App* train_cmd = app.add_subcommand(
            "train", "teacher-forcing training of the first-layer matrix W");
        add_experiment_flags(train_cmd, cfg, config_path, init_name, ref_mode_name);

        CLI::App* eval_cmd = app.add_subcommand(
            "eval", "evaluate a transformer (trained weights or explicit Sigma^-1)");
        add_experiment_flags(eval_cmd, cfg, config_path, init_name, ref_mode_name);
        eval_cmd->add_option("--weights", weights_path, "weights.json from train");

        CLI::App* sweep_cmd =
            app.add_subcommand("sweep", "full experiment: train + checkpoint evaluation + reports");
        add_experiment_flags(sweep_cmd, cfg, config_path, init_name, ref_mode_name);

        CLI::App* verify_cmd =
            app.add_subcommand("verify", "run the named invariant suite, one pass/fail per line");
        verify_cmd->add_option("--beta", vopt.beta, "layer-1 recency weight under test");
        verify_cmd->add_flag("--fast", vopt.fast, "reduced sample counts");
        verify_cmd->add_flag("--list", verify_list, "print check names without running");
        verify_cmd->add_flag("--json", verify_json, "emit the report as JSON");
        verify_cmd->add_option("--only", vopt.only, "run only the named checks (repeatable)");
        verify_cmd->add_option("--seed", vopt.seed, "master seed");

        CLI::App* plots_cmd =
            app.add_subcommand("emit-plots", "write long-format plot data from a report directory");
        plots_cmd->add_option("--out", report_dir, "report directory with metrics.csv")->required();

        try {
            app.parse(argc, argv);
        } catch (const CLI::ParseError& e) {
            const int code = app.exit(e);
            return code == 0 ? 0 : 2;
        }

        finalize_enums(cfg, init_name, ref_mode_name);

        if (train_cmd->parsed()) return cmd_train(cfg);
        if (eval_cmd->parsed()) return cmd_eval(cfg, weights_path);
        if (sweep_cmd->parsed()) {
            run_experiment(cfg);
            std::printf("wrote %s/{config.json,metrics.csv,summary.json,plots.csv}\n",
                        cfg.out_dir.c_str());
            return 0;
        }
        if (verify_cmd->parsed()) return cmd_verify(vopt, verify_list, verify_json);
        if (plots_cmd->parsed()) {
            emit_plot_data(report_dir);
            std::printf("wrote %s/plots.csv\n", report_dir.c_str());
            return 0;
        }
        return 2;
    } catch (const config_error& e) {
        std::fprintf(stderr, "configuration error: %s\n", e.what());
        return 2;
    } catch (const parameter_error& e) {
        std::fprintf(stderr, "configuration error: %s\n", e.what());
        return 2;
    } catch (const io_error& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
