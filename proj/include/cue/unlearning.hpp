#pragma once

#include "cue/alignment.hpp"
#include "cue/decomposition.hpp"
#include "cue/embedding_store.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace cue {

/// f(x) = normalize(W e(x)) over frozen embeddings e(x).
struct LinearAdapter {
    Eigen::MatrixXd weight;

    static LinearAdapter identity(std::size_t dim);
    std::size_t dim() const noexcept { return static_cast<std::size_t>(weight.rows()); }
    void validate() const;
};

/// Stored as a d x d EMB1 file (float32, so a save/load cycle rounds).
void save_adapter(const LinearAdapter& adapter, const std::filesystem::path& path);
LinearAdapter load_adapter(const std::filesystem::path& path);

struct LossWeights {
    double lambda_forget = 0.5;
    double lambda_intra = 95.0;
    double lambda_global = 0.075;
    /// Softmax temperature of the global term.
    double tau = 0.01;

    void validate() const;
};

struct TrainConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 32;
    double learning_rate = 1e-3;
    double weight_decay = 0.1;
    double grad_clip_norm = 1.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_opt = 1e-8;
    std::uint64_t seed = 7;

    /// Full-encoder settings: lr 1e-6, 5 epochs, batch 192.
    static TrainConfig published_preset();
    void validate() const;
};

struct LossBreakdown {
    double forget = 0.0;
    double intra = 0.0;
    double global_ = 0.0;
    double total = 0.0;
};

/// total = lambda_forget * forget + lambda_intra * intra + lambda_global * global.
LossBreakdown loss_total(double forget, double intra, double global, const LossWeights& weights);

Eigen::VectorXd forward(const LinearAdapter& adapter, const Eigen::VectorXd& e);

/// cos(z_hat, f - z_hat); 0 when ||f - z_hat|| <= 1e-12.
double loss_forget(const Eigen::VectorXd& f, const Eigen::VectorXd& z_hat);
/// ||f - z_tilde||^2.
double loss_intra(const Eigen::VectorXd& f, const Eigen::VectorXd& z_tilde);
/// Mean over rows of -log softmax_y(f . t_j / tau), softmax over every class text.
/// `f_batch` is n x d, `class_texts` m x d.
double loss_global(const Eigen::MatrixXd& f_batch, const std::vector<std::uint32_t>& labels,
                   const Eigen::MatrixXd& class_texts, double tau);

/// Forget mini-batch: raw embeddings plus the fixed Stage-1 targets, all n x d.
struct ForgetBatch {
    Eigen::MatrixXd e;
    Eigen::MatrixXd z_hat;
    Eigen::MatrixXd z_tilde;

    std::size_t size() const noexcept { return static_cast<std::size_t>(e.rows()); }
};

struct RetainBatch {
    Eigen::MatrixXd e;
    std::vector<std::uint32_t> labels;

    std::size_t size() const noexcept { return static_cast<std::size_t>(e.rows()); }
};

/// Forget and intra terms average over the forget batch, the global term over
/// the retain batch. An empty batch contributes 0.
LossBreakdown batch_loss(const LinearAdapter& adapter, const ForgetBatch& forget, const RetainBatch& retain,
                         const Eigen::MatrixXd& class_texts, const LossWeights& weights);

struct LossAndGrad {
    LossBreakdown loss;
    Eigen::MatrixXd grad; // d x d
};

/// Analytic gradient of batch_loss with respect to W, through the
/// normalization in forward. z_hat and z_tilde are constants.
LossAndGrad grad_total(const LinearAdapter& adapter, const ForgetBatch& forget, const RetainBatch& retain,
                       const Eigen::MatrixXd& class_texts, const LossWeights& weights);

/// Rescales `grad` in place so its Frobenius norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(Eigen::MatrixXd& grad, double max_norm);

struct AdamState {
    Eigen::MatrixXd m;
    Eigen::MatrixXd v;
    std::uint64_t step = 0;

    static AdamState zeros(std::size_t dim);
};

/// Decoupled decay W <- W (1 - lr wd), then the bias-corrected Adam update
/// W <- W - lr m_hat / (sqrt(v_hat) + eps).
void adamw_step(AdamState& state, const Eigen::MatrixXd& grad, const TrainConfig& cfg, LinearAdapter& adapter);

struct EpochLog {
    std::size_t epoch = 0;
    std::size_t steps = 0;
    /// Component means over the epoch's steps; total recombined with loss_total.
    LossBreakdown loss;
    double mean_grad_norm = 0.0;
};

struct UnlearningResult {
    LinearAdapter adapter;
    std::vector<EpochLog> log;
};

/// Stage 2. Starts from the identity adapter. Each epoch reshuffles the forget
/// split (stream(seed, epoch)) and walks it in ceil(n_f / B) steps; every step
/// also draws the next B retain rows from a cursor that reshuffles on wrap.
/// `forget_weights` (n_f x K) are the frozen Stage-1 solutions.
UnlearningResult run_unlearning(const LabeledDataset& forget, const Eigen::MatrixXd& forget_weights,
                                const ConceptMask& mask, const LabeledDataset& retain, const ConceptDictionary& dict,
                                const ModalityStats& stats, const EmbeddingMatrix& class_texts,
                                const LossWeights& weights, const TrainConfig& cfg);

} // namespace cue
