#pragma once

#include "cue/embedding_store.hpp"
#include "cue/rng.hpp"
#include "cue/unlearning.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <string>
#include <unistd.h>

namespace testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("cue_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline Eigen::VectorXd gaussian(cue::SplitMix64& rng, Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        v[i] = rng.gaussian();
    }
    return v;
}

inline Eigen::VectorXd unit(cue::SplitMix64& rng, Eigen::Index n) { return gaussian(rng, n).normalized(); }

inline Eigen::MatrixXd unit_columns(cue::SplitMix64& rng, Eigen::Index d, Eigen::Index k) {
    Eigen::MatrixXd m(d, k);
    for (Eigen::Index j = 0; j < k; ++j) {
        m.col(j) = unit(rng, d);
    }
    return m;
}

inline cue::EmbeddingMatrix random_matrix(cue::SplitMix64& rng, std::size_t rows, std::size_t dim,
                                          double scale = 1.0) {
    std::vector<float> v(rows * dim);
    for (auto& x : v) {
        x = static_cast<float>(scale * rng.gaussian());
    }
    return cue::EmbeddingMatrix(rows, dim, std::move(v));
}

/// A random adapter, forget and retain batch, and head for gradient checks.
struct GradInstance {
    cue::LinearAdapter adapter;
    cue::ForgetBatch forget;
    cue::RetainBatch retain;
    Eigen::MatrixXd texts;
    cue::LossWeights weights;
};

inline GradInstance grad_instance(std::uint64_t seed, std::size_t max_dim = 8) {
    cue::SplitMix64 rng(seed);
    const auto d = static_cast<Eigen::Index>(2 + rng.below(max_dim - 1));
    const auto n_f = static_cast<Eigen::Index>(1 + rng.below(6));
    const auto n_r = static_cast<Eigen::Index>(1 + rng.below(6));
    const auto m = static_cast<Eigen::Index>(2 + rng.below(3));
    GradInstance g;
    g.adapter.weight = Eigen::MatrixXd::Identity(d, d);
    for (Eigen::Index i = 0; i < d * d; ++i) {
        g.adapter.weight.data()[i] += 0.3 * rng.gaussian();
    }
    g.forget.e.resize(n_f, d);
    g.forget.z_hat.resize(n_f, d);
    g.forget.z_tilde.resize(n_f, d);
    for (Eigen::Index i = 0; i < n_f; ++i) {
        g.forget.e.row(i) = gaussian(rng, d).transpose();
        g.forget.z_hat.row(i) = unit(rng, d).transpose();
        g.forget.z_tilde.row(i) = unit(rng, d).transpose();
    }
    g.retain.e.resize(n_r, d);
    for (Eigen::Index i = 0; i < n_r; ++i) {
        g.retain.e.row(i) = gaussian(rng, d).transpose();
        g.retain.labels.push_back(static_cast<std::uint32_t>(rng.below(static_cast<std::uint64_t>(m))));
    }
    g.texts = unit_columns(rng, d, m).transpose();
    g.weights.lambda_forget = rng.uniform(0.1, 2.0);
    g.weights.lambda_intra = rng.uniform(0.1, 2.0);
    g.weights.lambda_global = rng.uniform(0.1, 2.0);
    g.weights.tau = rng.uniform(0.05, 1.0);
    return g;
}

} // namespace testing
