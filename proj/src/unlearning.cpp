#include "cue/unlearning.hpp"

#include "cue/error.hpp"
#include "cue/kernels.hpp"
#include "cue/rng.hpp"
#include "kernels/terms.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace cue {

namespace {

void shuffle(std::vector<std::size_t>& v, SplitMix64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = rng.below(i);
        std::swap(v[i - 1], v[j]);
    }
}

bool finite_positive(double x) { return std::isfinite(x) && x > 0.0; }

void check_batches(const LinearAdapter& adapter, const ForgetBatch& forget, const RetainBatch& retain,
                   const Eigen::MatrixXd& class_texts, const LossWeights& weights) {
    adapter.validate();
    weights.validate();
    const Eigen::Index d = adapter.weight.rows();
    if (forget.e.rows() > 0 &&
        (forget.e.cols() != d || forget.z_hat.rows() != forget.e.rows() || forget.z_hat.cols() != d ||
         forget.z_tilde.rows() != forget.e.rows() || forget.z_tilde.cols() != d)) {
        throw ValidationError("forget batch shapes do not match the adapter dim " + std::to_string(d));
    }
    if (retain.e.rows() > 0 && retain.e.cols() != d) {
        throw ValidationError("retain batch dim differs from the adapter dim " + std::to_string(d));
    }
    if (retain.labels.size() != static_cast<std::size_t>(retain.e.rows())) {
        throw ValidationError("retain batch has " + std::to_string(retain.e.rows()) + " rows but " +
                              std::to_string(retain.labels.size()) + " labels");
    }
    if (retain.e.rows() > 0 && (class_texts.rows() == 0 || class_texts.cols() != d)) {
        throw ValidationError("class texts must be m x " + std::to_string(d));
    }
}

Eigen::MatrixXd gather(const Eigen::MatrixXd& m, const std::vector<std::size_t>& idx, std::size_t begin,
                       std::size_t end) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(end - begin), m.cols());
    for (std::size_t i = begin; i < end; ++i) {
        out.row(static_cast<Eigen::Index>(i - begin)) = m.row(static_cast<Eigen::Index>(idx[i]));
    }
    return out;
}

} // namespace

LinearAdapter LinearAdapter::identity(std::size_t dim) {
    if (dim == 0) {
        throw ValidationError("adapter dim must be positive");
    }
    const auto n = static_cast<Eigen::Index>(dim);
    return LinearAdapter{Eigen::MatrixXd::Identity(n, n)};
}

void LinearAdapter::validate() const {
    if (weight.rows() == 0 || weight.rows() != weight.cols()) {
        throw ValidationError("adapter weight must be a non-empty square matrix");
    }
    if (!weight.allFinite()) {
        throw ValidationError("adapter weight has non-finite entries");
    }
}

void save_adapter(const LinearAdapter& adapter, const std::filesystem::path& path) {
    adapter.validate();
    save_embeddings(EmbeddingMatrix::from_eigen(adapter.weight), path);
}

LinearAdapter load_adapter(const std::filesystem::path& path) {
    const auto m = load_embeddings(path);
    if (m.rows() != m.dim()) {
        throw ValidationError(path.string() + ": adapter must be square, found " + std::to_string(m.rows()) + "x" +
                              std::to_string(m.dim()));
    }
    return LinearAdapter{m.to_eigen()};
}

void LossWeights::validate() const {
    if (!std::isfinite(lambda_forget) || !std::isfinite(lambda_intra) || !std::isfinite(lambda_global)) {
        throw ValidationError("loss weights must be finite");
    }
    if (!finite_positive(tau)) {
        throw ValidationError("tau must be positive");
    }
}

TrainConfig TrainConfig::published_preset() {
    TrainConfig cfg;
    cfg.learning_rate = 1e-6;
    cfg.epochs = 5;
    cfg.batch_size = 192;
    return cfg;
}

void TrainConfig::validate() const {
    if (batch_size == 0) {
        throw ValidationError("batch_size must be at least 1");
    }
    if (!finite_positive(learning_rate)) {
        throw ValidationError("learning_rate must be positive");
    }
    if (!std::isfinite(weight_decay) || weight_decay < 0.0) {
        throw ValidationError("weight_decay must be nonnegative");
    }
    if (!finite_positive(grad_clip_norm)) {
        throw ValidationError("grad_clip_norm must be positive");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ValidationError("beta1 and beta2 must lie in [0, 1)");
    }
    if (!finite_positive(eps_opt)) {
        throw ValidationError("eps_opt must be positive");
    }
}

LossBreakdown loss_total(double forget, double intra, double global, const LossWeights& weights) {
    LossBreakdown b;
    b.forget = forget;
    b.intra = intra;
    b.global_ = global;
    b.total = weights.lambda_forget * forget + weights.lambda_intra * intra + weights.lambda_global * global;
    return b;
}

Eigen::VectorXd forward(const LinearAdapter& adapter, const Eigen::VectorXd& e) {
    if (e.size() != adapter.weight.cols()) {
        throw ValidationError("embedding dim " + std::to_string(e.size()) + " differs from adapter dim " +
                              std::to_string(adapter.dim()));
    }
    return detail::forward_raw(adapter.weight, e).f;
}

double loss_forget(const Eigen::VectorXd& f, const Eigen::VectorXd& z_hat) {
    if (f.size() != z_hat.size()) {
        throw ValidationError("loss_forget: length mismatch");
    }
    return detail::forget_value(f, z_hat);
}

double loss_intra(const Eigen::VectorXd& f, const Eigen::VectorXd& z_tilde) {
    if (f.size() != z_tilde.size()) {
        throw ValidationError("loss_intra: length mismatch");
    }
    return (f - z_tilde).squaredNorm();
}

double loss_global(const Eigen::MatrixXd& f_batch, const std::vector<std::uint32_t>& labels,
                   const Eigen::MatrixXd& class_texts, double tau) {
    if (labels.size() != static_cast<std::size_t>(f_batch.rows())) {
        throw ValidationError("loss_global: one label per row required");
    }
    if (f_batch.rows() > 0 && f_batch.cols() != class_texts.cols()) {
        throw ValidationError("loss_global: embedding dim differs from class text dim");
    }
    if (!finite_positive(tau)) {
        throw ValidationError("tau must be positive");
    }
    std::vector<double> terms(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        terms[i] = detail::global_term(f_batch.row(static_cast<Eigen::Index>(i)).transpose(), labels[i], class_texts,
                                       tau, nullptr);
    }
    return detail::ordered_mean(terms);
}

LossBreakdown batch_loss(const LinearAdapter& adapter, const ForgetBatch& forget, const RetainBatch& retain,
                         const Eigen::MatrixXd& class_texts, const LossWeights& weights) {
    check_batches(adapter, forget, retain, class_texts, weights);
    std::vector<double> lf(forget.size()), li(forget.size()), lg(retain.size());
    for (std::size_t i = 0; i < forget.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        const Eigen::VectorXd f = detail::forward_raw(adapter.weight, forget.e.row(r).transpose()).f;
        lf[i] = detail::forget_value(f, forget.z_hat.row(r).transpose());
        li[i] = (f - forget.z_tilde.row(r).transpose()).squaredNorm();
    }
    for (std::size_t i = 0; i < retain.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        const Eigen::VectorXd f = detail::forward_raw(adapter.weight, retain.e.row(r).transpose()).f;
        lg[i] = detail::global_term(f, retain.labels[i], class_texts, weights.tau, nullptr);
    }
    return detail::combine(lf, li, lg, weights);
}

LossAndGrad grad_total(const LinearAdapter& adapter, const ForgetBatch& forget, const RetainBatch& retain,
                       const Eigen::MatrixXd& class_texts, const LossWeights& weights) {
    check_batches(adapter, forget, retain, class_texts, weights);
    return par::loss_and_grad(adapter.weight, forget, retain, class_texts, weights);
}

double clip_grad_norm(Eigen::MatrixXd& grad, double max_norm) {
    const double n = grad.norm();
    if (n > max_norm) {
        grad *= max_norm / n;
    }
    return n;
}

AdamState AdamState::zeros(std::size_t dim) {
    const auto n = static_cast<Eigen::Index>(dim);
    return AdamState{Eigen::MatrixXd::Zero(n, n), Eigen::MatrixXd::Zero(n, n), 0};
}

void adamw_step(AdamState& state, const Eigen::MatrixXd& grad, const TrainConfig& cfg, LinearAdapter& adapter) {
    if (grad.rows() != adapter.weight.rows() || grad.cols() != adapter.weight.cols() ||
        state.m.rows() != grad.rows() || state.m.cols() != grad.cols() || state.v.rows() != grad.rows() ||
        state.v.cols() != grad.cols()) {
        throw ValidationError("adamw_step: gradient, moments and adapter shapes differ");
    }
    adapter.weight *= 1.0 - cfg.learning_rate * cfg.weight_decay;
    state.step += 1;
    state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad;
    state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (Eigen::Index j = 0; j < grad.cols(); ++j) {
        for (Eigen::Index i = 0; i < grad.rows(); ++i) {
            const double m_hat = state.m(i, j) / c1;
            const double v_hat = state.v(i, j) / c2;
            adapter.weight(i, j) -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.eps_opt);
        }
    }
}

UnlearningResult run_unlearning(const LabeledDataset& forget, const Eigen::MatrixXd& forget_weights,
                                const ConceptMask& mask, const LabeledDataset& retain, const ConceptDictionary& dict,
                                const ModalityStats& stats, const EmbeddingMatrix& class_texts,
                                const LossWeights& weights, const TrainConfig& cfg) {
    weights.validate();
    cfg.validate();
    forget.validate();
    retain.validate();
    stats.validate();
    const std::size_t d = forget.embeddings.dim();
    if (retain.embeddings.dim() != d || stats.dim() != d || dict.dim() != d || class_texts.dim() != d) {
        throw ValidationError("forget, retain, stats, dictionary and class texts must share one dim");
    }
    if (static_cast<std::size_t>(forget_weights.rows()) != forget.size() ||
        static_cast<std::size_t>(forget_weights.cols()) != dict.size()) {
        throw ValidationError("Stage-1 weights must be " + std::to_string(forget.size()) + " x " +
                              std::to_string(dict.size()));
    }
    if (mask.size() != dict.size()) {
        throw ValidationError("mask length differs from dictionary size");
    }
    for (auto y : retain.labels) {
        if (y >= class_texts.rows()) {
            throw ValidationError("retain label " + std::to_string(y) + " has no class text");
        }
    }

    const auto n_f = forget.size();
    const auto n_r = retain.size();
    const Eigen::MatrixXd texts = class_texts.to_eigen();
    const Eigen::MatrixXd e_f = forget.embeddings.to_eigen();
    const Eigen::MatrixXd e_r = retain.embeddings.to_eigen();
    Eigen::MatrixXd z_hat(static_cast<Eigen::Index>(n_f), static_cast<Eigen::Index>(d));
    Eigen::MatrixXd z_tilde(static_cast<Eigen::Index>(n_f), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < n_f; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        const Eigen::VectorXd w = forget_weights.row(r).transpose();
        try {
            z_hat.row(r) = reconstruct(w, dict, stats).transpose();
            z_tilde.row(r) = masked_reconstruct(w, mask, dict, stats).transpose();
        } catch (const DegenerateError& e) {
            throw DegenerateError("forget sample " + std::to_string(i) + ": " + e.what());
        }
    }

    UnlearningResult result{LinearAdapter::identity(d), {}};
    AdamState state = AdamState::zeros(d);

    std::vector<std::size_t> f_order(n_f), r_order(n_r);
    std::iota(f_order.begin(), f_order.end(), 0);
    std::iota(r_order.begin(), r_order.end(), 0);
    SplitMix64 retain_rng = SplitMix64::stream(~cfg.seed, 0);
    shuffle(r_order, retain_rng);
    std::size_t r_cursor = 0;

    const std::size_t B = cfg.batch_size;
    const std::size_t steps = (n_f + B - 1) / B;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        SplitMix64 rng = SplitMix64::stream(cfg.seed, epoch);
        shuffle(f_order, rng);
        double sum_f = 0.0, sum_i = 0.0, sum_g = 0.0, sum_norm = 0.0;
        for (std::size_t s = 0; s < steps; ++s) {
            const std::size_t begin = s * B;
            const std::size_t end = std::min(n_f, begin + B);
            ForgetBatch fb{gather(e_f, f_order, begin, end), gather(z_hat, f_order, begin, end),
                           gather(z_tilde, f_order, begin, end)};

            std::vector<std::size_t> r_idx;
            for (std::size_t k = 0; k < B; ++k) {
                if (r_cursor == n_r) {
                    shuffle(r_order, retain_rng);
                    r_cursor = 0;
                }
                r_idx.push_back(r_order[r_cursor++]);
            }
            RetainBatch rb{gather(e_r, r_idx, 0, r_idx.size()), {}};
            for (auto i : r_idx) {
                rb.labels.push_back(retain.labels[i]);
            }

            auto lg = par::loss_and_grad(result.adapter.weight, fb, rb, texts, weights);
            sum_norm += clip_grad_norm(lg.grad, cfg.grad_clip_norm);
            adamw_step(state, lg.grad, cfg, result.adapter);
            sum_f += lg.loss.forget;
            sum_i += lg.loss.intra;
            sum_g += lg.loss.global_;
        }
        const double inv = 1.0 / static_cast<double>(steps);
        EpochLog entry;
        entry.epoch = epoch + 1;
        entry.steps = steps;
        entry.loss = loss_total(sum_f * inv, sum_i * inv, sum_g * inv, weights);
        entry.mean_grad_norm = sum_norm * inv;
        result.log.push_back(entry);
    }
    return result;
}

} // namespace cue
