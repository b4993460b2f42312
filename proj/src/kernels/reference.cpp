#include "cue/kernels.hpp"

#include "cue/rng.hpp"
#include "terms.hpp"

namespace cue::ref {

std::vector<ConceptWeights> decompose_columns(const Eigen::MatrixXd& Z, const Eigen::MatrixXd& atoms,
                                              const SolverConfig& cfg) {
    std::vector<ConceptWeights> out(static_cast<std::size_t>(Z.cols()));
    Eigen::VectorXd warm;
    for (Eigen::Index i = 0; i < Z.cols(); ++i) {
        try {
            out[static_cast<std::size_t>(i)] = solve_nn_lasso(Z.col(i), atoms, cfg, warm);
        } catch (...) {
            std::rethrow_exception(detail::annotate("row", static_cast<std::size_t>(i)));
        }
        if (cfg.warm_start) {
            warm = out[static_cast<std::size_t>(i)].values;
        }
    }
    return out;
}

std::vector<std::uint32_t> predict_rows(const Eigen::MatrixXd& W, const EmbeddingMatrix& x,
                                        const Eigen::MatrixXd& texts) {
    std::vector<std::uint32_t> out(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        try {
            out[i] = detail::argmax_class(detail::forward_raw(W, x.row_d(i)).f, texts);
        } catch (...) {
            std::rethrow_exception(detail::annotate("row", i));
        }
    }
    return out;
}

std::vector<double> similarity_rows(const Eigen::MatrixXd& W, const EmbeddingMatrix& x, const Eigen::VectorXd& query) {
    std::vector<double> out(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        try {
            out[i] = detail::forward_raw(W, x.row_d(i)).f.dot(query);
        } catch (...) {
            std::rethrow_exception(detail::annotate("row", i));
        }
    }
    return out;
}

LossAndGrad loss_and_grad(const Eigen::MatrixXd& W, const ForgetBatch& forget, const RetainBatch& retain,
                          const Eigen::MatrixXd& texts, const LossWeights& weights) {
    const Eigen::Index nf = forget.e.rows();
    const Eigen::Index nr = retain.e.rows();
    const Eigen::Index d = W.rows();
    const double inv_f = nf > 0 ? 1.0 / static_cast<double>(nf) : 0.0;
    const double inv_r = nr > 0 ? 1.0 / static_cast<double>(nr) : 0.0;

    Eigen::MatrixXd V(nf + nr, d);
    Eigen::MatrixXd E(nf + nr, d);
    std::vector<double> lf(static_cast<std::size_t>(nf)), li(static_cast<std::size_t>(nf)),
        lg(static_cast<std::size_t>(nr));
    for (Eigen::Index i = 0; i < nf; ++i) {
        try {
            auto t = detail::forget_sample(W, forget.e.row(i).transpose(), forget.z_hat.row(i).transpose(),
                                           forget.z_tilde.row(i).transpose(), weights, inv_f);
            lf[static_cast<std::size_t>(i)] = t.forget;
            li[static_cast<std::size_t>(i)] = t.intra;
            V.row(i) = t.v.transpose();
        } catch (...) {
            std::rethrow_exception(detail::annotate("forget sample", static_cast<std::size_t>(i)));
        }
        E.row(i) = forget.e.row(i);
    }
    for (Eigen::Index i = 0; i < nr; ++i) {
        try {
            auto t = detail::retain_sample(W, retain.e.row(i).transpose(), retain.labels[static_cast<std::size_t>(i)],
                                           texts, weights, inv_r);
            lg[static_cast<std::size_t>(i)] = t.global;
            V.row(nf + i) = t.v.transpose();
        } catch (...) {
            std::rethrow_exception(detail::annotate("retain sample", static_cast<std::size_t>(i)));
        }
        E.row(nf + i) = retain.e.row(i);
    }

    LossAndGrad out;
    out.grad.resize(d, d);
    for (Eigen::Index j = 0; j < d; ++j) {
        detail::outer_row(V, E, j, out.grad);
    }
    out.loss = detail::combine(lf, li, lg, weights);
    return out;
}

std::vector<BoundsReport> theorem_sweep(std::uint64_t seed, std::size_t count, std::size_t d, std::size_t n_target,
                                        std::size_t n_retain) {
    std::vector<BoundsReport> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        out[i] = check_instance(gen_theorem_instance(SplitMix64::stream(seed, i).next(), d, n_target, n_retain));
    }
    return out;
}

} // namespace cue::ref
