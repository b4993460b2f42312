#include "cue/error.hpp"
#include "cue/kernels.hpp"
#include "cue/unlearning.hpp"

#include "helpers.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace cue;

namespace {

long double weighted(const oracle::LossParts& p, const LossWeights& w) {
    return w.lambda_forget * p.forget + w.lambda_intra * p.intra + w.lambda_global * p.global;
}

oracle::LossParts parts_at(const testing::GradInstance& g, const Eigen::MatrixXd& W) {
    return oracle::losses_long(W, g.forget.e, g.forget.z_hat, g.forget.z_tilde, g.retain.e, g.retain.labels, g.texts,
                               g.weights.tau);
}

} // namespace

TEST_SUITE("unlearning") {

TEST_CASE("forward normalizes") {
    const Eigen::Vector3d e = Eigen::Vector3d(1, 2, 2) / 3.0;
    CHECK((forward(LinearAdapter::identity(3), e) - e).norm() <= 1e-15);
    LinearAdapter twice{2.0 * Eigen::Matrix3d::Identity()};
    CHECK((forward(twice, e) - e).norm() <= 1e-15);

    SplitMix64 rng(4);
    for (int t = 0; t < 10; ++t) {
        LinearAdapter a{Eigen::MatrixXd::Random(5, 5)};
        a.weight = a.weight.unaryExpr([&](double) { return rng.gaussian(); });
        CHECK(std::abs(forward(a, testing::gaussian(rng, 5)).norm() - 1.0) <= 1e-9);
    }
    LinearAdapter zero{Eigen::Matrix3d::Zero()};
    CHECK_THROWS_AS(forward(zero, e), DegenerateError);
}

TEST_CASE("forget loss") {
    CHECK(loss_forget(Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 1)) ==
          doctest::Approx(-1.0 / std::numbers::sqrt2).epsilon(1e-15));
    CHECK(loss_forget(Eigen::Vector2d(0.6, 0.8), Eigen::Vector2d(0.6, 0.8)) == 0.0);

    SplitMix64 rng(6);
    for (int t = 0; t < 20; ++t) {
        const Eigen::VectorXd f = testing::unit(rng, 7), z = testing::unit(rng, 7);
        long double num = 0, rr = 0, zz = 0;
        for (int i = 0; i < 7; ++i) {
            const long double r = static_cast<long double>(f[i]) - z[i];
            num += r * z[i];
            rr += r * r;
            zz += static_cast<long double>(z[i]) * z[i];
        }
        CHECK(std::abs(loss_forget(f, z) - static_cast<double>(num / std::sqrt(rr * zz))) <= 1e-12);
    }
}

TEST_CASE("intra loss") {
    CHECK(loss_intra(Eigen::Vector2d(0.6, 0.8), Eigen::Vector2d(0.6, 0.8)) == 0.0);
    CHECK(loss_intra(Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 1)) == 2.0);
    SplitMix64 rng(9);
    for (int t = 0; t < 20; ++t) {
        const Eigen::VectorXd a = testing::unit(rng, 5), b = testing::unit(rng, 5);
        double ref = 0;
        for (int i = 0; i < 5; ++i) {
            ref += (a[i] - b[i]) * (a[i] - b[i]);
        }
        CHECK(std::abs(loss_intra(a, b) - ref) <= 1e-12);
    }
}

TEST_CASE("global loss") {
    Eigen::MatrixXd texts(2, 2);
    texts << 1, 0, 0, 1;
    Eigen::MatrixXd f(1, 2);
    f << std::numbers::sqrt2 / 2, std::numbers::sqrt2 / 2;
    CHECK(loss_global(f, {0}, texts, 0.01) == doctest::Approx(std::numbers::ln2).epsilon(1e-12));

    f << 1, 0;
    CHECK(loss_global(f, {0}, texts, 0.01) < 1e-10);
    CHECK_THROWS_AS(loss_global(f, {2}, texts, 0.01), ValidationError);
    CHECK_THROWS_AS(loss_global(f, {0, 1}, texts, 0.01), ValidationError);

    SplitMix64 rng(10);
    Eigen::MatrixXd fb(5, 4);
    for (int i = 0; i < 5; ++i) {
        fb.row(i) = testing::unit(rng, 4).transpose();
    }
    const Eigen::MatrixXd t3 = testing::unit_columns(rng, 4, 3).transpose();
    const std::vector<std::uint32_t> y{0, 2, 1, 1, 0};
    const auto ref = oracle::losses_long(Eigen::MatrixXd::Identity(4, 4), Eigen::MatrixXd(0, 4), Eigen::MatrixXd(0, 4),
                                         Eigen::MatrixXd(0, 4), fb, y, t3, 0.2);
    CHECK(std::abs(loss_global(fb, y, t3, 0.2) - static_cast<double>(ref.global)) <= 1e-12);
}

TEST_CASE("weighted total") {
    LossWeights w;
    CHECK(loss_total(0, 0, 0, w).total == 0.0);
    CHECK(loss_total(1, 1, 1, w).total == doctest::Approx(95.575).epsilon(1e-15));
    SplitMix64 rng(12);
    for (int t = 0; t < 10; ++t) {
        const double a = rng.gaussian(), b = rng.gaussian(), c = rng.gaussian();
        CHECK(loss_total(a, b, c, w).total == w.lambda_forget * a + w.lambda_intra * b + w.lambda_global * c);
    }
}

TEST_CASE("gradient special cases") {
    auto g = testing::grad_instance(1);
    LossWeights zero{0, 0, 0, 0.1};
    CHECK(grad_total(g.adapter, g.forget, g.retain, g.texts, zero).grad.isZero(0.0));

    // One intra-only sample already at its target.
    const Eigen::VectorXd e = Eigen::Vector3d(2, -1, 2) / 3.0;
    ForgetBatch fb{e.transpose(), Eigen::RowVector3d(1, 0, 0), e.transpose()};
    RetainBatch rb{Eigen::MatrixXd(0, 3), {}};
    LossWeights intra_only{0, 1, 0, 0.1};
    const auto lg = grad_total(LinearAdapter::identity(3), fb, rb, Eigen::Matrix3d::Identity(), intra_only);
    CHECK(lg.grad.cwiseAbs().maxCoeff() <= 1e-15);
    CHECK(lg.loss.intra <= 1e-30);
}

TEST_CASE("analytic gradient matches central differences") {
    for (std::uint64_t seed = 100; seed < 110; ++seed) {
        auto g = testing::grad_instance(seed);
        const auto lg = grad_total(g.adapter, g.forget, g.retain, g.texts, g.weights);
        const Eigen::MatrixXd fd = oracle::central_difference(
            [&](const Eigen::MatrixXd& W) { return weighted(parts_at(g, W), g.weights); }, g.adapter.weight, 1e-5);
        CHECK(oracle::max_relative_error(lg.grad, fd, 1e-8) <= 1e-4);

        const auto parts = parts_at(g, g.adapter.weight);
        CHECK(std::abs(lg.loss.total - static_cast<double>(weighted(parts, g.weights))) <=
              1e-12 * (1 + std::abs(lg.loss.total)));
        const auto bl = batch_loss(g.adapter, g.forget, g.retain, g.texts, g.weights);
        CHECK(std::abs(bl.total - lg.loss.total) <= 1e-12 * (1 + std::abs(bl.total)));
    }
}

TEST_CASE("batch of 8, d = 6") {
    SplitMix64 rng(2024);
    const Eigen::Index d = 6;
    testing::GradInstance g;
    g.adapter.weight = Eigen::MatrixXd::Identity(d, d);
    for (Eigen::Index i = 0; i < d * d; ++i) {
        g.adapter.weight.data()[i] += 0.2 * rng.gaussian();
    }
    g.forget.e.resize(8, d);
    g.forget.z_hat.resize(8, d);
    g.forget.z_tilde.resize(8, d);
    g.retain.e.resize(8, d);
    for (Eigen::Index i = 0; i < 8; ++i) {
        g.forget.e.row(i) = testing::gaussian(rng, d).transpose();
        g.forget.z_hat.row(i) = testing::unit(rng, d).transpose();
        g.forget.z_tilde.row(i) = testing::unit(rng, d).transpose();
        g.retain.e.row(i) = testing::gaussian(rng, d).transpose();
        g.retain.labels.push_back(static_cast<std::uint32_t>(i % 3));
    }
    g.texts = testing::unit_columns(rng, d, 3).transpose();
    g.weights = LossWeights{};
    g.weights.tau = 0.1;
    const auto lg = grad_total(g.adapter, g.forget, g.retain, g.texts, g.weights);
    const Eigen::MatrixXd fd = oracle::central_difference(
        [&](const Eigen::MatrixXd& W) { return weighted(parts_at(g, W), g.weights); }, g.adapter.weight, 1e-5);
    CHECK(oracle::max_relative_error(lg.grad, fd, 1e-8) <= 1e-4);
}

TEST_CASE("serial and parallel loss kernels give identical bits") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto g = testing::grad_instance(seed);
        const auto a = ref::loss_and_grad(g.adapter.weight, g.forget, g.retain, g.texts, g.weights);
        const auto b = par::loss_and_grad(g.adapter.weight, g.forget, g.retain, g.texts, g.weights);
        CHECK(a.grad == b.grad);
        CHECK(a.loss.total == b.loss.total);
    }
}

TEST_CASE("gradient clipping") {
    Eigen::MatrixXd g(2, 2);
    g << 3, 0, 0, 4;
    CHECK(clip_grad_norm(g, 1.0) == 5.0);
    CHECK(g.norm() == doctest::Approx(1.0).epsilon(1e-15));
    Eigen::MatrixXd small = 0.1 * Eigen::MatrixXd::Identity(2, 2);
    const Eigen::MatrixXd before = small;
    clip_grad_norm(small, 1.0);
    CHECK(small == before);
}

TEST_CASE("AdamW") {
    TrainConfig cfg;
    SUBCASE("decay only") {
        cfg.learning_rate = 0.01;
        cfg.weight_decay = 0.1;
        LinearAdapter a{Eigen::Matrix2d(Eigen::Matrix2d::Identity() * 3.0)};
        auto st = AdamState::zeros(2);
        adamw_step(st, Eigen::Matrix2d::Zero(), cfg, a);
        CHECK(a.weight(0, 0) == 3.0 * (1.0 - 0.01 * 0.1));
        CHECK(a.weight(0, 1) == 0.0);
        CHECK(st.step == 1);
    }
    SUBCASE("first step moves by about lr") {
        cfg.learning_rate = 0.01;
        cfg.weight_decay = 0.0;
        LinearAdapter a{Eigen::MatrixXd::Constant(1, 1, 1.0)};
        auto st = AdamState::zeros(1);
        adamw_step(st, Eigen::MatrixXd::Constant(1, 1, 0.5), cfg, a);
        CHECK(std::abs((a.weight(0, 0) - 1.0) + 0.01) <= 1e-9);
    }
    SUBCASE("three steps against a scalar reference") {
        cfg.learning_rate = 0.05;
        cfg.weight_decay = 0.1;
        oracle::ScalarAdamW s{cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps_opt, cfg.weight_decay};
        LinearAdapter a{Eigen::MatrixXd::Constant(1, 1, 0.7)};
        auto st = AdamState::zeros(1);
        double w = 0.7;
        for (double grad : {0.3, -1.2, 0.05}) {
            adamw_step(st, Eigen::MatrixXd::Constant(1, 1, grad), cfg, a);
            w = s.step(w, grad);
            CHECK(std::abs(a.weight(0, 0) - w) <= 1e-12);
        }
    }
}

TEST_CASE("config validation") {
    TrainConfig cfg;
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = TrainConfig{};
    cfg.beta1 = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    LossWeights w;
    w.tau = 0;
    CHECK_THROWS_AS(w.validate(), ValidationError);
    const auto p = TrainConfig::published_preset();
    CHECK(p.learning_rate == 1e-6);
    CHECK(p.epochs == 5);
    CHECK(p.batch_size == 192);
}

TEST_CASE("adapter file round trip") {
    testing::TempDir dir("adapter");
    LinearAdapter a{Eigen::MatrixXd::Identity(4, 4)};
    a.weight(1, 2) = 0.25;
    save_adapter(a, dir / "a.emb1");
    CHECK(load_adapter(dir / "a.emb1").weight == a.weight);
    save_embeddings(EmbeddingMatrix(2, 3, {1, 2, 3, 4, 5, 6}), dir / "bad.emb1");
    CHECK_THROWS_AS(load_adapter(dir / "bad.emb1"), ValidationError);
}

TEST_CASE("training loop on noiseless synthetic data") {
    SyntheticSpec spec;
    spec.noise_scale = 0.0;
    spec.samples_per_class = 40;
    const auto s = gen_synthetic(spec);
    const ModalityStats stats{s.mu_img, s.mu_con};
    const auto dict = build_dictionary(s.vocab, stats);
    const auto weights = weights_matrix(decompose_batch(s.forget, stats, dict, SolverConfig{}));
    const auto mask = build_mask(s.vocab, {s.vocab.name(0)});

    TrainConfig cfg;
    cfg.epochs = 0;
    const auto none = run_unlearning(s.forget, weights, mask, s.retain, dict, stats, s.class_texts, LossWeights{}, cfg);
    CHECK(none.log.empty());
    CHECK(none.adapter.weight == Eigen::MatrixXd::Identity(64, 64));

    cfg.epochs = 8;
    const auto a = run_unlearning(s.forget, weights, mask, s.retain, dict, stats, s.class_texts, LossWeights{}, cfg);
    const auto b = run_unlearning(s.forget, weights, mask, s.retain, dict, stats, s.class_texts, LossWeights{}, cfg);
    CHECK(a.adapter.weight == b.adapter.weight);
    REQUIRE(a.log.size() == 8);
    CHECK(a.log.back().loss.total < a.log.front().loss.total);
    CHECK(a.log.front().steps == 2); // ceil(40 / 32)
    for (const auto& e : a.log) {
        const auto re = loss_total(e.loss.forget, e.loss.intra, e.loss.global_, LossWeights{});
        CHECK(e.loss.total == re.total);
    }

    cfg.seed = 8;
    const auto c = run_unlearning(s.forget, weights, mask, s.retain, dict, stats, s.class_texts, LossWeights{}, cfg);
    CHECK(c.adapter.weight != a.adapter.weight);

    CHECK_THROWS_AS(run_unlearning(s.forget, weights.leftCols(3), mask, s.retain, dict, stats, s.class_texts,
                                   LossWeights{}, cfg),
                    ValidationError);
}

} // TEST_SUITE
