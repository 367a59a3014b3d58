#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include <json.hpp>

#include "augicl/matrix.hpp"
#include "augicl/rng.hpp"

namespace augicl {

// ---------------------------------------------------------------------------
// Data model: x = M y + eps with y uniform over one-hot classes and
// eps ~ N(0, sigma2 * I). Class means are the columns of a d x C matrix.
// ---------------------------------------------------------------------------

struct SeedRecord {
    uint64_t master = 0;
    uint64_t index = 0;
};

struct TaskInstance {
    Matrix means;                    // d x C, column i = mean of class i
    double sigma2 = 1.0;
    Matrix labeled_x;                // d x N
    std::vector<int> labeled_y;      // class indices, one-hot via one_hot()
    Matrix unlabeled_x;              // d x M_u
    std::vector<int> hidden_labels;  // true labels of unlabeled_x, evaluation only
    SeedRecord seed;

    int dim() const { return means.rows(); }
    int classes() const { return means.cols(); }
    int n_labeled() const { return labeled_x.cols(); }
    int n_unlabeled() const { return unlabeled_x.cols(); }
};

inline std::vector<double> one_hot(int index, int classes) {
    std::vector<double> v(static_cast<size_t>(classes), 0.0);
    v[static_cast<size_t>(index)] = 1.0;
    return v;
}

inline Matrix sample_means(int d, int C, Rng& rng) {
    if (d < 1 || C < 1) throw parameter_error("sample_means: need d >= 1 and C >= 1");
    Matrix m(d, C);
    for (int c = 0; c < C; ++c)
        for (int r = 0; r < d; ++r) m(r, c) = rng.normal();
    return m;
}

// Draws the N labeled and M_u unlabeled samples. Sample slot j (0-based over
// the concatenated labeled+unlabeled sequence) uses substream j+1 of the
// instance stream, so two instances with the same stream and different M_u
// share their means, labeled block and unlabeled prefix.
inline TaskInstance sample_instance(const Matrix& means, double sigma2, int n_labeled,
                                    int n_unlabeled, Rng instance_rng,
                                    SeedRecord seed = {}) {
    if (sigma2 < 0.0) throw parameter_error("sample_instance: sigma2 < 0");
    if (n_labeled < 0 || n_unlabeled < 0) throw parameter_error("sample_instance: negative count");
    const int d = means.rows();
    const int C = means.cols();
    const double noise = std::sqrt(sigma2);

    TaskInstance inst;
    inst.means = means;
    inst.sigma2 = sigma2;
    inst.labeled_x = Matrix(d, n_labeled);
    inst.unlabeled_x = Matrix(d, n_unlabeled);
    inst.labeled_y.resize(static_cast<size_t>(n_labeled));
    inst.hidden_labels.resize(static_cast<size_t>(n_unlabeled));
    inst.seed = seed;

    for (int j = 0; j < n_labeled + n_unlabeled; ++j) {
        Rng r = instance_rng.substream(static_cast<uint64_t>(j) + 1);
        const int y = r.uniform_int(C);
        const bool labeled = j < n_labeled;
        auto x = labeled ? inst.labeled_x.col(j) : inst.unlabeled_x.col(j - n_labeled);
        for (int k = 0; k < d; ++k) x[k] = means(k, y) + noise * r.normal();
        if (labeled)
            inst.labeled_y[static_cast<size_t>(j)] = y;
        else
            inst.hidden_labels[static_cast<size_t>(j - n_labeled)] = y;
    }
    return inst;
}

// Standard episode sampler: means from substream 0, samples from substreams
// j+1, instance stream derived from (master seed, instance index).
inline TaskInstance make_instance(uint64_t master_seed, uint64_t index, int d, int C,
                                  double sigma2, int n_labeled, int n_unlabeled) {
    Rng stream = Rng(master_seed).substream(index);
    Rng mean_rng = stream.substream(0);
    Matrix means = sample_means(d, C, mean_rng);
    return sample_instance(means, sigma2, n_labeled, n_unlabeled, stream,
                           SeedRecord{master_seed, index});
}

// Nearest-mean classification; equal priors + shared isotropic covariance make
// this the Bayes rule. Ties break to the smallest class index.
inline int bayes_predict(std::span<const double> x, const Matrix& means, double sigma2) {
    if (sigma2 <= 0.0) throw parameter_error("bayes_predict: sigma2 must be positive");
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
    return best;
}

struct RiskEstimate {
    double risk = 0.0;
    double std_err = 0.0;
};

inline RiskEstimate bayes_risk_mc(const Matrix& means, double sigma2, int n_samples, Rng rng) {
    if (n_samples < 1) throw parameter_error("bayes_risk_mc: n_samples < 1");
    const int d = means.rows();
    const int C = means.cols();
    const double noise = std::sqrt(sigma2);
    std::vector<double> x(static_cast<size_t>(d));
    long errors = 0;
    for (int i = 0; i < n_samples; ++i) {
        Rng r = rng.substream(static_cast<uint64_t>(i));
        const int y = r.uniform_int(C);
        for (int k = 0; k < d; ++k) x[static_cast<size_t>(k)] = means(k, y) + noise * r.normal();
        if (bayes_predict(x, means, sigma2) != y) ++errors;
    }
    const double p = static_cast<double>(errors) / n_samples;
    return {p, std::sqrt(std::max(p * (1.0 - p), 0.0) / n_samples)};
}

// ---------------------------------------------------------------------------
// JSON fixture layout:
// {d, C, sigma2, means (column-major), labeled [[x...],[y-index]],
//  unlabeled [[x...]], hidden_labels, seed}
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const TaskInstance& inst) {
    nlohmann::json j;
    j["d"] = inst.dim();
    j["C"] = inst.classes();
    j["sigma2"] = inst.sigma2;
    j["means"] = std::vector<double>(inst.means.flat().begin(), inst.means.flat().end());
    nlohmann::json lab = nlohmann::json::array();
    for (int c = 0; c < inst.n_labeled(); ++c) {
        auto x = inst.labeled_x.col(c);
        lab.push_back({std::vector<double>(x.begin(), x.end()),
                       inst.labeled_y[static_cast<size_t>(c)]});
    }
    j["labeled"] = lab;
    nlohmann::json unlab = nlohmann::json::array();
    for (int c = 0; c < inst.n_unlabeled(); ++c) {
        auto x = inst.unlabeled_x.col(c);
        unlab.push_back(std::vector<double>(x.begin(), x.end()));
    }
    j["unlabeled"] = unlab;
    j["hidden_labels"] = inst.hidden_labels;
    j["seed"] = {{"master", inst.seed.master}, {"index", inst.seed.index}};
    return j;
}

inline TaskInstance instance_from_json(const nlohmann::json& j) {
    TaskInstance inst;
    const int d = j.at("d").get<int>();
    const int C = j.at("C").get<int>();
    inst.sigma2 = j.at("sigma2").get<double>();
    inst.means = Matrix(d, C);
    {
        auto v = j.at("means").get<std::vector<double>>();
        if (v.size() != static_cast<size_t>(d) * static_cast<size_t>(C))
            throw parameter_error("instance_from_json: means size mismatch");
        std::copy(v.begin(), v.end(), inst.means.flat().begin());
    }
    const auto& lab = j.at("labeled");
    inst.labeled_x = Matrix(d, static_cast<int>(lab.size()));
    for (size_t c = 0; c < lab.size(); ++c) {
        auto x = lab[c][0].get<std::vector<double>>();
        inst.labeled_x.set_col(static_cast<int>(c), x);
        inst.labeled_y.push_back(lab[c][1].get<int>());
    }
    const auto& unlab = j.at("unlabeled");
    inst.unlabeled_x = Matrix(d, static_cast<int>(unlab.size()));
    for (size_t c = 0; c < unlab.size(); ++c) {
        auto x = unlab[c].get<std::vector<double>>();
        inst.unlabeled_x.set_col(static_cast<int>(c), x);
    }
    inst.hidden_labels = j.at("hidden_labels").get<std::vector<int>>();
    inst.seed.master = j.at("seed").at("master").get<uint64_t>();
    inst.seed.index = j.at("seed").at("index").get<uint64_t>();
    return inst;
}

} // namespace augicl
