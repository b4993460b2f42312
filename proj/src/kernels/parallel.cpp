#include "cue/kernels.hpp"

#include "cue/omp.hpp"
#include "cue/rng.hpp"
#include "terms.hpp"

#include <exception>

namespace cue::par {

namespace {

/// Exceptions cannot leave an OpenMP region, so each iteration parks its own
/// and the lowest failing index is rethrown afterwards.
void rethrow_first(const std::vector<std::exception_ptr>& errors) {
    for (const auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

} // namespace

std::vector<ConceptWeights> decompose_columns(const Eigen::MatrixXd& Z, const Eigen::MatrixXd& atoms,
                                              const SolverConfig& cfg) {
    if (cfg.warm_start) {
        return ref::decompose_columns(Z, atoms, cfg);
    }
    const auto n = static_cast<std::ptrdiff_t>(Z.cols());
    std::vector<ConceptWeights> out(static_cast<std::size_t>(n));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic, 4)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        try {
            out[static_cast<std::size_t>(i)] = solve_nn_lasso(Z.col(i), atoms, cfg);
        } catch (...) {
            errors[static_cast<std::size_t>(i)] = detail::annotate("row", static_cast<std::size_t>(i));
        }
    }
    rethrow_first(errors);
    return out;
}

std::vector<std::uint32_t> predict_rows(const Eigen::MatrixXd& W, const EmbeddingMatrix& x,
                                        const Eigen::MatrixXd& texts) {
    const auto n = static_cast<std::ptrdiff_t>(x.rows());
    std::vector<std::uint32_t> out(x.rows());
    std::vector<std::exception_ptr> errors(x.rows());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto r = static_cast<std::size_t>(i);
        try {
            out[r] = detail::argmax_class(detail::forward_raw(W, x.row_d(r)).f, texts);
        } catch (...) {
            errors[r] = detail::annotate("row", r);
        }
    }
    rethrow_first(errors);
    return out;
}

std::vector<double> similarity_rows(const Eigen::MatrixXd& W, const EmbeddingMatrix& x, const Eigen::VectorXd& query) {
    const auto n = static_cast<std::ptrdiff_t>(x.rows());
    std::vector<double> out(x.rows());
    std::vector<std::exception_ptr> errors(x.rows());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto r = static_cast<std::size_t>(i);
        try {
            out[r] = detail::forward_raw(W, x.row_d(r)).f.dot(query);
        } catch (...) {
            errors[r] = detail::annotate("row", r);
        }
    }
    rethrow_first(errors);
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
    E.topRows(nf) = forget.e;
    E.bottomRows(nr) = retain.e;
    std::vector<double> lf(static_cast<std::size_t>(nf)), li(static_cast<std::size_t>(nf)),
        lg(static_cast<std::size_t>(nr));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(nf + nr));

#pragma omp parallel for schedule(static)
    for (Eigen::Index s = 0; s < nf + nr; ++s) {
        try {
            if (s < nf) {
                auto t = detail::forget_sample(W, forget.e.row(s).transpose(), forget.z_hat.row(s).transpose(),
                                               forget.z_tilde.row(s).transpose(), weights, inv_f);
                lf[static_cast<std::size_t>(s)] = t.forget;
                li[static_cast<std::size_t>(s)] = t.intra;
                V.row(s) = t.v.transpose();
            } else {
                const Eigen::Index i = s - nf;
                auto t = detail::retain_sample(W, retain.e.row(i).transpose(),
                                               retain.labels[static_cast<std::size_t>(i)], texts, weights, inv_r);
                lg[static_cast<std::size_t>(i)] = t.global;
                V.row(s) = t.v.transpose();
            }
        } catch (...) {
            errors[static_cast<std::size_t>(s)] = s < nf
                                                      ? detail::annotate("forget sample", static_cast<std::size_t>(s))
                                                      : detail::annotate("retain sample", static_cast<std::size_t>(s - nf));
        }
    }
    rethrow_first(errors);

    LossAndGrad out;
    out.grad.resize(d, d);
#pragma omp parallel for schedule(static)
    for (Eigen::Index j = 0; j < d; ++j) {
        detail::outer_row(V, E, j, out.grad);
    }
    out.loss = detail::combine(lf, li, lg, weights);
    return out;
}

std::vector<BoundsReport> theorem_sweep(std::uint64_t seed, std::size_t count, std::size_t d, std::size_t n_target,
                                        std::size_t n_retain) {
    // Surface argument errors before entering the parallel region.
    if (count > 0) {
        (void)gen_theorem_instance(seed, d, n_target, n_retain);
    }
    const auto n = static_cast<std::ptrdiff_t>(count);
    std::vector<BoundsReport> out(count);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto r = static_cast<std::size_t>(i);
        out[r] = check_instance(gen_theorem_instance(SplitMix64::stream(seed, r).next(), d, n_target, n_retain));
    }
    return out;
}

} // namespace cue::par
