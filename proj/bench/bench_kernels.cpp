// Serial reference vs OpenMP kernels. Prints one line per kernel with the
// best-of-N wall time for each and whether the outputs match bit for bit.
//
//   cue_bench [--reps N] [--threads T] [--scale S]

#include "cue/kernels.hpp"
#include "cue/omp.hpp"
#include "cue/rng.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <limits>

namespace {

Eigen::MatrixXd unit_columns(cue::SplitMix64& rng, Eigen::Index d, Eigen::Index k) {
    Eigen::MatrixXd C(d, k);
    for (Eigen::Index j = 0; j < k; ++j) {
        for (Eigen::Index i = 0; i < d; ++i) {
            C(i, j) = rng.gaussian();
        }
        C.col(j).normalize();
    }
    return C;
}

cue::EmbeddingMatrix random_rows(cue::SplitMix64& rng, std::size_t rows, std::size_t dim) {
    std::vector<float> v(rows * dim);
    for (auto& x : v) {
        x = static_cast<float>(rng.gaussian());
    }
    return cue::EmbeddingMatrix(rows, dim, std::move(v));
}

double best_of(int reps, const std::function<void()>& fn) {
    double best = std::numeric_limits<double>::infinity();
    for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    }
    return best;
}

void row(const char* name, double t_ref, double t_par, bool same) {
    std::printf("%-18s ref %9.3f ms   par %9.3f ms   speedup %5.2fx   %s\n", name, 1e3 * t_ref, 1e3 * t_par,
                t_ref / t_par, same ? "identical" : "MISMATCH");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"cue kernel benchmark"};
    int reps = 5;
    int threads = 0;
    std::size_t scale = 1;
    app.add_option("--reps", reps, "repetitions per kernel")->check(CLI::PositiveNumber);
    app.add_option("--threads", threads, "OpenMP threads (0 = runtime default)")->check(CLI::NonNegativeNumber);
    app.add_option("--scale", scale, "problem size multiplier")->check(CLI::PositiveNumber);
    CLI11_PARSE(app, argc, argv);
    if (threads > 0) {
        omp_set_num_threads(threads);
    }
    std::printf("threads %d, reps %d, scale %zu\n", omp_get_max_threads(), reps, scale);

    cue::SplitMix64 rng(2026);
    bool all_same = true;

    {
        const Eigen::Index d = 64, K = 128, n = static_cast<Eigen::Index>(400 * scale);
        const Eigen::MatrixXd atoms = unit_columns(rng, d, K);
        const Eigen::MatrixXd Z = unit_columns(rng, d, n);
        cue::SolverConfig cfg;
        cfg.lambda_dec = 0.1;
        std::vector<cue::ConceptWeights> a, b;
        const double tr = best_of(reps, [&] { a = cue::ref::decompose_columns(Z, atoms, cfg); });
        const double tp = best_of(reps, [&] { b = cue::par::decompose_columns(Z, atoms, cfg); });
        bool same = a.size() == b.size();
        for (std::size_t i = 0; same && i < a.size(); ++i) {
            same = a[i].values == b[i].values;
        }
        all_same = all_same && same;
        row("decompose_columns", tr, tp, same);
    }
    {
        const std::size_t d = 128, m = 100;
        const auto x = random_rows(rng, 20000 * scale, d);
        const Eigen::MatrixXd texts = unit_columns(rng, static_cast<Eigen::Index>(d), m).transpose();
        Eigen::MatrixXd W = Eigen::MatrixXd::Identity(d, d);
        W(0, 1) = 0.2;
        std::vector<std::uint32_t> a, b;
        const double tr = best_of(reps, [&] { a = cue::ref::predict_rows(W, x, texts); });
        const double tp = best_of(reps, [&] { b = cue::par::predict_rows(W, x, texts); });
        all_same = all_same && a == b;
        row("predict_rows", tr, tp, a == b);

        const Eigen::VectorXd q = unit_columns(rng, static_cast<Eigen::Index>(d), 1).col(0);
        std::vector<double> sa, sb;
        const double tr2 = best_of(reps, [&] { sa = cue::ref::similarity_rows(W, x, q); });
        const double tp2 = best_of(reps, [&] { sb = cue::par::similarity_rows(W, x, q); });
        all_same = all_same && sa == sb;
        row("similarity_rows", tr2, tp2, sa == sb);
    }
    {
        const Eigen::Index d = 128, nf = static_cast<Eigen::Index>(2000 * scale), nr = nf, m = 50;
        cue::ForgetBatch f;
        f.e = Eigen::MatrixXd::NullaryExpr(nf, d, [&] { return rng.gaussian(); });
        f.z_hat = unit_columns(rng, d, nf).transpose();
        f.z_tilde = unit_columns(rng, d, nf).transpose();
        cue::RetainBatch r;
        r.e = Eigen::MatrixXd::NullaryExpr(nr, d, [&] { return rng.gaussian(); });
        for (Eigen::Index i = 0; i < nr; ++i) {
            r.labels.push_back(static_cast<std::uint32_t>(rng.below(m)));
        }
        const Eigen::MatrixXd texts = unit_columns(rng, d, m).transpose();
        Eigen::MatrixXd W = Eigen::MatrixXd::Identity(d, d);
        W(3, 2) = -0.1;
        cue::LossWeights w;
        w.lambda_forget = 1.0;
        w.lambda_intra = 0.5;
        w.lambda_global = 1.0;
        w.tau = 0.1;
        cue::LossAndGrad a, b;
        const double tr = best_of(reps, [&] { a = cue::ref::loss_and_grad(W, f, r, texts, w); });
        const double tp = best_of(reps, [&] { b = cue::par::loss_and_grad(W, f, r, texts, w); });
        const bool same = a.grad == b.grad && a.loss.total == b.loss.total;
        all_same = all_same && same;
        row("loss_and_grad", tr, tp, same);
    }
    {
        const std::size_t count = 5000 * scale;
        std::vector<cue::BoundsReport> a, b;
        const double tr = best_of(reps, [&] { a = cue::ref::theorem_sweep(7, count, 32, 4, 12); });
        const double tp = best_of(reps, [&] { b = cue::par::theorem_sweep(7, count, 32, 4, 12); });
        bool same = a.size() == b.size();
        for (std::size_t i = 0; same && i < a.size(); ++i) {
            same = a[i].drop == b[i].drop && a[i].leakage == b[i].leakage && a[i].retain_change == b[i].retain_change;
        }
        all_same = all_same && same;
        row("theorem_sweep", tr, tp, same);
    }
    return all_same ? 0 : 1;
}
