#pragma once

// Per-sample pieces shared by the serial and OpenMP kernels and by the public
// loss functions. Keeping one copy is what makes the two kernel builds agree
// bit for bit.

#include "cue/alignment.hpp"
#include "cue/error.hpp"
#include "cue/unlearning.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <exception>
#include <string>
#include <vector>

namespace cue::detail {

struct Forward {
    Eigen::VectorXd f;
    double norm = 0.0;
};

inline Forward forward_raw(const Eigen::MatrixXd& W, const Eigen::VectorXd& e) {
    Eigen::VectorXd u = W * e;
    const double n = u.norm();
    if (!(n >= kDegenerateNorm)) {
        throw DegenerateError("degenerate adapter output: norm " + std::to_string(n) + " below 1e-12");
    }
    return {u / n, n};
}

inline double forget_value(const Eigen::VectorXd& f, const Eigen::VectorXd& z_hat) {
    const Eigen::VectorXd r = f - z_hat;
    const double rn = r.norm();
    if (rn <= kDegenerateNorm) {
        return 0.0;
    }
    return z_hat.dot(r) / (z_hat.norm() * rn);
}

/// d cos(z_hat, f - z_hat) / d f.
inline Eigen::VectorXd forget_grad_f(const Eigen::VectorXd& f, const Eigen::VectorXd& z_hat) {
    const Eigen::VectorXd r = f - z_hat;
    const double rn = r.norm();
    if (rn <= kDegenerateNorm) {
        return Eigen::VectorXd::Zero(f.size());
    }
    const double zn = z_hat.norm();
    return z_hat / (zn * rn) - (z_hat.dot(r) / (zn * rn * rn * rn)) * r;
}

/// -log softmax_y(T f / tau) and, when `grad` is non-null, its gradient in f:
/// T^T (p - e_y) / tau.
inline double global_term(const Eigen::VectorXd& f, std::uint32_t label, const Eigen::MatrixXd& texts, double tau,
                          Eigen::VectorXd* grad) {
    if (label >= texts.rows()) {
        throw ValidationError("label " + std::to_string(label) + " out of range for " + std::to_string(texts.rows()) +
                              " class texts");
    }
    const Eigen::VectorXd s = texts * f / tau;
    const double mx = s.maxCoeff();
    double sum = 0.0;
    for (Eigen::Index j = 0; j < s.size(); ++j) {
        sum += std::exp(s[j] - mx);
    }
    const double lse = mx + std::log(sum);
    if (grad) {
        Eigen::VectorXd p(s.size());
        for (Eigen::Index j = 0; j < s.size(); ++j) {
            p[j] = std::exp(s[j] - lse);
        }
        p[label] -= 1.0;
        *grad = texts.transpose() * p / tau;
    }
    return lse - s[label];
}

/// Pulls dL/df back through f = u / ||u||: (g - f <f, g>) / ||u||.
inline Eigen::VectorXd pullback(const Forward& fw, const Eigen::VectorXd& g_f) {
    return (g_f - fw.f * fw.f.dot(g_f)) / fw.norm;
}

struct ForgetTerm {
    double forget = 0.0;
    double intra = 0.0;
    Eigen::VectorXd v; // dL/du scaled for the batch mean
};

inline ForgetTerm forget_sample(const Eigen::MatrixXd& W, const Eigen::VectorXd& e, const Eigen::VectorXd& z_hat,
                                const Eigen::VectorXd& z_tilde, const LossWeights& lw, double inv_n) {
    const Forward fw = forward_raw(W, e);
    ForgetTerm t;
    t.forget = forget_value(fw.f, z_hat);
    t.intra = (fw.f - z_tilde).squaredNorm();
    const Eigen::VectorXd g =
        (lw.lambda_forget * inv_n) * forget_grad_f(fw.f, z_hat) + (lw.lambda_intra * inv_n * 2.0) * (fw.f - z_tilde);
    t.v = pullback(fw, g);
    return t;
}

struct RetainTerm {
    double global = 0.0;
    Eigen::VectorXd v;
};

inline RetainTerm retain_sample(const Eigen::MatrixXd& W, const Eigen::VectorXd& e, std::uint32_t label,
                                const Eigen::MatrixXd& texts, const LossWeights& lw, double inv_n) {
    const Forward fw = forward_raw(W, e);
    RetainTerm t;
    Eigen::VectorXd g;
    t.global = global_term(fw.f, label, texts, lw.tau, &g);
    t.v = pullback(fw, (lw.lambda_global * inv_n) * g);
    return t;
}

/// Row j of G = sum_i v_i e_i^T, summed in sample order.
inline void outer_row(const Eigen::MatrixXd& V, const Eigen::MatrixXd& E, Eigen::Index j, Eigen::MatrixXd& G) {
    for (Eigen::Index k = 0; k < E.cols(); ++k) {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < V.rows(); ++i) {
            acc += V(i, j) * E(i, k);
        }
        G(j, k) = acc;
    }
}

inline double ordered_mean(const std::vector<double>& v) {
    if (v.empty()) {
        return 0.0;
    }
    double acc = 0.0;
    for (double x : v) {
        acc += x;
    }
    return acc / static_cast<double>(v.size());
}

inline LossBreakdown combine(const std::vector<double>& forget, const std::vector<double>& intra,
                             const std::vector<double>& global, const LossWeights& lw) {
    return loss_total(ordered_mean(forget), ordered_mean(intra), ordered_mean(global), lw);
}

/// Lowest-index argmax of T f.
inline std::uint32_t argmax_class(const Eigen::VectorXd& f, const Eigen::MatrixXd& texts) {
    std::uint32_t best = 0;
    double best_score = texts.row(0).dot(f);
    for (Eigen::Index j = 1; j < texts.rows(); ++j) {
        const double s = texts.row(j).dot(f);
        if (s > best_score) {
            best_score = s;
            best = static_cast<std::uint32_t>(j);
        }
    }
    return best;
}

/// Call from inside a catch block: the in-flight exception, same category,
/// with "<what> <i>: " prepended.
inline std::exception_ptr annotate(const char* what, std::size_t i) {
    const auto ctx = [&](const std::exception& e) { return std::string(what) + " " + std::to_string(i) + ": " + e.what(); };
    try {
        throw;
    } catch (const DegenerateError& e) {
        return std::make_exception_ptr(DegenerateError(ctx(e)));
    } catch (const ValidationError& e) {
        return std::make_exception_ptr(ValidationError(ctx(e)));
    } catch (const std::exception& e) {
        return std::make_exception_ptr(Error(ctx(e)));
    }
}

} // namespace cue::detail
