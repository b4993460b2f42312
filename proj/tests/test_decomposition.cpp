#include "cue/decomposition.hpp"
#include "cue/error.hpp"
#include "cue/kernels.hpp"

#include "helpers.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace cue;

namespace {

ConceptVocabulary abc_vocab(std::size_t d = 3) {
    std::vector<float> rows(3 * d, 0.0f);
    for (std::size_t k = 0; k < 3; ++k) {
        rows[k * d + k] = 1.0f;
    }
    return ConceptVocabulary({{"airplane", {"plane", "jet"}}, {"cat", {}}, {"dog", {"puppy"}}},
                             EmbeddingMatrix(3, d, rows));
}

ConceptDictionary eye_dict(Eigen::Index d) {
    ConceptDictionary dict;
    dict.atoms = Eigen::MatrixXd::Identity(d, d);
    dict.vocab_index.resize(static_cast<std::size_t>(d));
    std::iota(dict.vocab_index.begin(), dict.vocab_index.end(), 0);
    return dict;
}

} // namespace

TEST_SUITE("decomposition") {

TEST_CASE("orthonormal projection with no penalty") {
    SolverConfig cfg;
    cfg.lambda_dec = 0.0;
    const auto w = solve_nn_lasso(Eigen::Vector2d(0.6, 0.8), Eigen::MatrixXd(Eigen::Matrix2d::Identity()), cfg);
    CHECK(w.values[0] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(w.values[1] == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(w.converged);
    CHECK(w.support == std::vector<std::size_t>{0, 1});
}

TEST_CASE("single atom, lambda 0.35") {
    SolverConfig cfg;
    Eigen::MatrixXd c(3, 1);
    c << 0.0, 0.6, 0.8;
    const auto w = solve_nn_lasso(Eigen::VectorXd(c.col(0)), c, cfg);
    CHECK(std::abs(w.values[0] - 0.825) <= 1e-12);
    CHECK(std::abs(w.objective - (0.175 * 0.175 + 0.35 * 0.825)) <= 1e-12);
}

TEST_CASE("three coherent atoms in 2-D agree with support enumeration") {
    SplitMix64 rng(99);
    SolverConfig cfg;
    cfg.max_sweeps = 100000;
    for (int t = 0; t < 50; ++t) {
        const Eigen::MatrixXd C = testing::unit_columns(rng, 2, 3);
        const Eigen::VectorXd z = testing::unit(rng, 2);
        const auto w = solve_nn_lasso(z, C, cfg);
        const auto best = oracle::nn_lasso_enumerate(C, z, cfg.lambda_dec);
        CHECK(std::abs(w.objective - best.objective) <= 1e-8);
    }
}

TEST_CASE("large penalty drives every weight to zero") {
    SolverConfig cfg;
    cfg.lambda_dec = 2.5; // exceeds 2 max_k c_k^T z for unit vectors
    SplitMix64 rng(3);
    const Eigen::MatrixXd C = testing::unit_columns(rng, 5, 4);
    const auto w = solve_nn_lasso(testing::unit(rng, 5), C, cfg);
    CHECK(w.values.isZero());
    CHECK(w.support.empty());
    CHECK(w.converged);
    CHECK(w.sweeps_used == 1);
}

TEST_CASE("objective never increases with more sweeps") {
    SplitMix64 rng(12);
    const Eigen::MatrixXd C = testing::unit_columns(rng, 6, 10);
    const Eigen::VectorXd z = testing::unit(rng, 6);
    SolverConfig cfg;
    cfg.kkt_tol = 1e-300;
    double prev = z.squaredNorm();
    for (std::size_t s = 1; s <= 20; ++s) {
        cfg.max_sweeps = s;
        const auto w = solve_nn_lasso(z, C, cfg);
        CHECK(w.objective <= prev + 1e-15);
        prev = w.objective;
    }
}

TEST_CASE("non-convergence is flagged, not thrown") {
    SplitMix64 rng(5);
    const Eigen::MatrixXd C = testing::unit_columns(rng, 4, 8);
    SolverConfig cfg;
    cfg.max_sweeps = 1;
    cfg.kkt_tol = 1e-14;
    const auto w = solve_nn_lasso(testing::unit(rng, 4), C, cfg);
    CHECK_FALSE(w.converged);
    CHECK(w.sweeps_used == 1);
    CHECK(w.kkt_residual > cfg.kkt_tol);
}

TEST_CASE("warm start reaches the same optimum") {
    SplitMix64 rng(21);
    const Eigen::MatrixXd C = testing::unit_columns(rng, 5, 6);
    const Eigen::VectorXd z = testing::unit(rng, 5);
    SolverConfig cfg;
    cfg.max_sweeps = 100000;
    const auto cold = solve_nn_lasso(z, C, cfg);
    const auto warm = solve_nn_lasso(z, C, cfg, Eigen::VectorXd::Constant(6, 0.3));
    CHECK(std::abs(cold.objective - warm.objective) <= 1e-9);
    CHECK_THROWS_AS(solve_nn_lasso(z, C, cfg, Eigen::VectorXd::Zero(2)), ValidationError);
}

TEST_CASE("solver validation") {
    SolverConfig cfg;
    CHECK_THROWS_AS(solve_nn_lasso(Eigen::Vector3d::Zero(), Eigen::MatrixXd::Identity(2, 2), cfg), ValidationError);
    cfg.lambda_dec = -1;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = SolverConfig{};
    cfg.max_sweeps = 0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = SolverConfig{};
    cfg.kkt_tol = 0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("kkt residual matches its definition") {
    Eigen::MatrixXd C = Eigen::MatrixXd::Identity(2, 2);
    const Eigen::Vector2d z(1.0, -1.0);
    // w = (0.5, 0): g = 2 (w - z) = (-1, 2); active coordinate |g + l|, inactive max(0, -(g + l)).
    const Eigen::Vector2d w(0.5, 0.0);
    CHECK(kkt_residual(C, w, z, 0.5) == doctest::Approx(0.5));
    CHECK(kkt_residual(C, Eigen::Vector2d(0.75, 0.0), z, 0.5) == doctest::Approx(0.0));
}

TEST_CASE("noiseless synthetic samples are recovered exactly") {
    SyntheticSpec spec;
    spec.noise_scale = 0.0;
    spec.samples_per_class = 20;
    const auto s = gen_synthetic(spec);
    const ModalityStats stats{s.mu_img, s.mu_con};
    const auto dict = build_dictionary(s.vocab, stats);
    SolverConfig cfg;
    cfg.lambda_dec = 0.0;
    const auto batch = decompose_batch(s.forget, stats, dict, cfg);
    const Eigen::MatrixXd got = weights_matrix(batch);
    CHECK((got - s.forget_truth).cwiseAbs().maxCoeff() <= 1e-5);

    // Reconstruction lands back on the sample.
    for (std::size_t i = 0; i < 10; ++i) {
        const Eigen::VectorXd w = s.forget_truth.row(static_cast<Eigen::Index>(i)).transpose();
        const Eigen::VectorXd lifted = lift_to_image_space(align_image(s.forget.embeddings.row_d(i), stats), stats);
        CHECK(reconstruct(w, dict, stats).dot(lifted) >= 0.999);
    }
}

TEST_CASE("batch decomposition") {
    SyntheticSpec spec;
    spec.samples_per_class = 10;
    const auto s = gen_synthetic(spec);
    const ModalityStats stats{s.mu_img, s.mu_con};
    const auto dict = build_dictionary(s.vocab, stats);
    SolverConfig cfg;

    SUBCASE("batch of one equals a direct solve") {
        LabeledDataset one{EmbeddingMatrix(1, spec.dim,
                                           {s.forget.embeddings.row(0).begin(), s.forget.embeddings.row(0).end()}),
                           {0},
                           s.forget.class_names,
                           Split::forget};
        const auto b = decompose_batch(one, stats, dict, cfg);
        const auto d = solve_nn_lasso(align_image(s.forget.embeddings.row_d(0), stats), dict, cfg);
        REQUIRE(b.size() == 1);
        CHECK(b[0].values == d.values);
        CHECK(b[0].objective == d.objective);
    }
    SUBCASE("two runs agree and match a per-sample loop") {
        const auto a = decompose_batch(s.retain, stats, dict, cfg);
        const auto b = decompose_batch(s.retain, stats, dict, cfg);
        REQUIRE(a.size() == s.retain.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].values == b[i].values);
        }
        for (std::size_t i = 0; i < 20; ++i) {
            const auto d = solve_nn_lasso(align_image(s.retain.embeddings.row_d(i), stats), dict, cfg);
            CHECK(std::abs(a[i].objective - d.objective) <= 1e-12);
        }
    }
    SUBCASE("degenerate row carries its index") {
        std::vector<float> rows(2 * spec.dim);
        for (std::size_t j = 0; j < spec.dim; ++j) {
            rows[j] = static_cast<float>(s.mu_img[static_cast<Eigen::Index>(j)]) + 1.0f;
            rows[spec.dim + j] = static_cast<float>(s.mu_img[static_cast<Eigen::Index>(j)]);
        }
        ModalityStats exact = stats;
        for (Eigen::Index j = 0; j < exact.mu_img.size(); ++j) {
            exact.mu_img[j] = static_cast<double>(static_cast<float>(exact.mu_img[j]));
        }
        LabeledDataset bad{EmbeddingMatrix(2, spec.dim, rows), {0, 0}, {"c"}, Split::eval};
        try {
            decompose_batch(bad, exact, dict, cfg);
            FAIL("expected DegenerateError");
        } catch (const DegenerateError& e) {
            CHECK(std::string(e.what()).find("row 1") != std::string::npos);
        }
    }
}

TEST_CASE("masking") {
    const auto vocab = abc_vocab();

    SUBCASE("name match sets exactly one bit") {
        const auto m = build_mask(vocab, {"airplane"});
        CHECK(m.bits == std::vector<std::uint8_t>{1, 0, 0});
        CHECK(m.masked_names == std::vector<std::string>{"airplane"});
    }
    SUBCASE("synonym resolves to its concept") {
        CHECK(build_mask(vocab, {"PLANE"}).bits == std::vector<std::uint8_t>{1, 0, 0});
        CHECK(build_mask(vocab, {"puppy", "jet"}).bits == std::vector<std::uint8_t>{1, 0, 1});
    }
    SUBCASE("unknown target lists near misses") {
        CHECK_THROWS_AS(build_mask(vocab, {"zeppelin"}), ValidationError);
        try {
            build_mask(vocab, {"cats"});
            FAIL("expected ValidationError");
        } catch (const ValidationError& e) {
            CHECK(std::string(e.what()).find("cat") != std::string::npos);
        }
    }
}

TEST_CASE("reconstruction") {
    const auto dict = eye_dict(2);
    const ModalityStats lifted{Eigen::Vector2d(0, 2), Eigen::Vector2d::Zero()};
    const ModalityStats zero{Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero()};

    CHECK(reconstruct(Eigen::Vector2d::Zero(), dict, lifted) == Eigen::Vector2d(0, 1));
    CHECK(reconstruct(Eigen::Vector2d(1, 0), dict, zero) == Eigen::Vector2d(1, 0));

    const Eigen::Vector2d w(0.5, 0.5);
    ConceptMask none{{0, 0}, {}};
    ConceptMask all{{1, 1}, {}};
    ConceptMask first{{1, 0}, {}};
    CHECK(masked_reconstruct(w, none, dict, zero) == reconstruct(w, dict, zero));
    CHECK(masked_reconstruct(w, all, dict, lifted) == Eigen::Vector2d(0, 1));
    CHECK((masked_reconstruct(w, first, dict, zero) - Eigen::Vector2d(0, 1)).norm() <= 1e-15);
    CHECK_THROWS_AS(masked_reconstruct(w, all, dict, zero), DegenerateError);
    CHECK_THROWS_AS(masked_reconstruct(w, ConceptMask{{1}, {}}, dict, zero), ValidationError);
}

TEST_CASE("top-k concepts") {
    const auto vocab = abc_vocab();
    const auto a = top_k_concepts(Eigen::Vector3d(0.2, 0.9, 0.0), vocab, 5);
    REQUIRE(a.size() == 2);
    CHECK(a[0] == std::pair<std::string, double>{"cat", 0.9});
    CHECK(a[1] == std::pair<std::string, double>{"airplane", 0.2});
    const auto b = top_k_concepts(Eigen::Vector3d(0.5, 0.5, 0.0), vocab, 1);
    REQUIRE(b.size() == 1);
    CHECK(b[0].first == "airplane");

    // Against a full sort over (weight desc, index asc).
    SplitMix64 rng(77);
    std::vector<float> rows(12 * 12, 0.0f);
    std::vector<Concept> cs;
    for (int k = 0; k < 12; ++k) {
        rows[static_cast<std::size_t>(k * 12 + k)] = 1.0f;
        cs.push_back({"c" + std::to_string(k), {}});
    }
    const ConceptVocabulary big(cs, EmbeddingMatrix(12, 12, rows));
    for (int t = 0; t < 30; ++t) {
        Eigen::VectorXd w(12);
        for (int k = 0; k < 12; ++k) {
            const double u = rng.uniform();
            w[k] = u < 0.3 ? 0.0 : std::round(u * 4) / 4; // coarse values force ties
        }
        std::vector<std::pair<double, int>> all;
        for (int k = 0; k < 12; ++k) {
            if (w[k] > 0) {
                all.push_back({-w[k], k});
            }
        }
        std::sort(all.begin(), all.end());
        const auto got = top_k_concepts(w, big, 3);
        REQUIRE(got.size() == std::min<std::size_t>(3, all.size()));
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].first == "c" + std::to_string(all[i].second));
            CHECK(got[i].second == -all[i].first);
        }
    }
}

TEST_CASE("serial and parallel decomposition give identical bits") {
    SplitMix64 rng(31);
    const Eigen::MatrixXd C = testing::unit_columns(rng, 8, 12);
    Eigen::MatrixXd Z(8, 200);
    for (Eigen::Index i = 0; i < Z.cols(); ++i) {
        Z.col(i) = testing::unit(rng, 8);
    }
    SolverConfig cfg;
    const auto a = ref::decompose_columns(Z, C, cfg);
    const auto b = par::decompose_columns(Z, C, cfg);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].values == b[i].values);
        CHECK(a[i].objective == b[i].objective);
        CHECK(a[i].sweeps_used == b[i].sweeps_used);
    }
    cfg.warm_start = true;
    const auto c = ref::decompose_columns(Z, C, cfg);
    const auto d = par::decompose_columns(Z, C, cfg);
    for (std::size_t i = 0; i < c.size(); ++i) {
        CHECK(c[i].values == d[i].values);
    }
}

} // TEST_SUITE
