#include "cue/error.hpp"
#include "cue/kernels.hpp"
#include "cue/selectivity.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace cue;

namespace {

PartitionedDictionary eye_split(Eigen::Index d, Eigen::Index n_t, Eigen::Index n_r) {
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(d, d);
    return PartitionedDictionary{I.leftCols(n_t), I.middleCols(n_t, n_r)};
}

} // namespace

TEST_SUITE("selectivity") {

TEST_CASE("erasure") {
    SplitMix64 rng(1);
    const auto inst = gen_theorem_instance(5, 6, 2, 3);

    DecompositionWitness no_target = inst.witness;
    no_target.w_T.setZero();
    const auto a = erase_target(no_target, inst.dict);
    CHECK(a.h == a.h_tilde);

    DecompositionWitness only_target = inst.witness;
    only_target.w_R.setZero();
    only_target.residual.setZero();
    only_target.eps_dec = 0;
    CHECK(erase_target(only_target, inst.dict).h_tilde.isZero(0.0));

    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto t = gen_theorem_instance(s, 7, 3, 4);
        const auto p = erase_target(t.witness, t.dict);
        CHECK((p.h - p.h_tilde - t.dict.target_atoms * t.witness.w_T).cwiseAbs().maxCoeff() <= 1e-12);
    }
    DecompositionWitness bad = inst.witness;
    bad.w_T.resize(1);
    CHECK_THROWS_AS(erase_target(bad, inst.dict), ValidationError);
}

TEST_CASE("alignment constants") {
    SUBCASE("orthonormal, single target atom") {
        const auto dict = eye_split(4, 1, 2);
        const auto al = compute_alignment(Eigen::Vector4d(1, 0, 0, 0), Eigen::Vector4d(0, 0, 0, 1), dict);
        CHECK(al.alpha == 1.0);
        CHECK(al.beta == 0.0);
        CHECK(al.eta == 0.0);
    }
    SUBCASE("query orthogonal to the targets") {
        const auto dict = eye_split(4, 2, 1);
        const auto al = compute_alignment(Eigen::Vector4d(0, 0, 0, 1), Eigen::Vector4d(0, 0, 1, 0), dict);
        CHECK(al.alpha == 0.0);
    }
    SUBCASE("random instances against a loop over atoms") {
        for (std::uint64_t s = 0; s < 30; ++s) {
            const auto t = gen_theorem_instance(s, 6, 3, 5);
            const auto al = compute_alignment(t.p_T, t.p_R, t.dict);
            double alpha = 1e300, beta = 0, eta = 0;
            for (Eigen::Index i = 0; i < 3; ++i) {
                alpha = std::min(alpha, t.p_T.dot(t.dict.target_atoms.col(i)));
                eta = std::max(eta, std::abs(t.p_R.dot(t.dict.target_atoms.col(i))));
            }
            for (Eigen::Index j = 0; j < 5; ++j) {
                beta = std::max(beta, std::abs(t.p_T.dot(t.dict.retain_atoms.col(j))));
            }
            CHECK(al.alpha == alpha);
            CHECK(al.beta == beta);
            CHECK(al.eta == eta);
        }
    }
    SUBCASE("empty retain partition gives beta 0") {
        const auto dict = eye_split(3, 2, 0);
        CHECK(compute_alignment(Eigen::Vector3d(1, 0, 0), Eigen::Vector3d(0, 0, 1), dict).beta == 0.0);
    }
}

TEST_CASE("bounds") {
    SUBCASE("equality case with alpha = 1") {
        const auto dict = eye_split(3, 1, 1);
        DecompositionWitness w{Eigen::VectorXd::Constant(1, 0.7), Eigen::VectorXd::Constant(1, 0.2),
                               Eigen::Vector3d::Zero(), 0.0};
        const auto al = compute_alignment(Eigen::Vector3d(1, 0, 0), Eigen::Vector3d(0, 1, 0), dict);
        const auto r = check_bounds(w, dict, al);
        CHECK(r.drop == 0.7);
        CHECK(r.drop_bound == 0.7);
        CHECK(r.retain_change == 0.0);
        CHECK(r.retain_bound == 0.0);
        CHECK(r.all_hold);
    }
    SUBCASE("an understated eps_dec is reported as a leakage violation") {
        const auto dict = eye_split(3, 1, 1);
        DecompositionWitness w{Eigen::VectorXd::Constant(1, 0.7), Eigen::VectorXd::Constant(1, 0.2),
                               Eigen::Vector3d(0.5, 0, 0), 0.1};
        CHECK_THROWS_AS(w.validate(dict), ValidationError);
        const auto al = compute_alignment(Eigen::Vector3d(1, 0, 0), Eigen::Vector3d(0, 1, 0), dict);
        const auto r = check_bounds(w, dict, al);
        CHECK(r.leakage == 0.5);
        CHECK_FALSE(r.leakage_holds);
        CHECK_FALSE(r.all_hold);
    }
    SUBCASE("outside the hypothesis every bound is still reported") {
        const auto dict = eye_split(3, 1, 1);
        DecompositionWitness w{Eigen::VectorXd::Constant(1, 0.7), Eigen::VectorXd::Constant(1, 0.2),
                               Eigen::Vector3d::Zero(), 0.0};
        const auto al = compute_alignment(Eigen::Vector3d(-1, 0, 0), Eigen::Vector3d(0, 1, 0), dict);
        const auto r = check_bounds(w, dict, al);
        CHECK_FALSE(r.in_hypothesis);
        CHECK(r.drop == -0.7);
        CHECK(r.drop_holds);
    }
    SUBCASE("1000 random instances hold") {
        const auto reports = check_random_instances(20261015, 1000, 8, 3, 6);
        REQUIRE(reports.size() == 1000);
        for (const auto& r : reports) {
            CHECK(r.all_hold);
            CHECK(r.identity_error <= 1e-12);
        }
    }
    SUBCASE("equality instances are tight") {
        for (double alpha : {1.0, 0.5, 0.0}) {
            const auto inst = equality_instance(3, 6, 3, 2, alpha);
            const auto r = check_instance(inst);
            CHECK(r.all_hold);
            CHECK(std::abs(r.drop - r.drop_bound) <= 1e-12);
        }
        CHECK_THROWS_AS(equality_instance(3, 6, 3, 2, 1.5), ValidationError);
    }
    SUBCASE("orthonormal instance has zero retain change") {
        const auto r = check_instance(orthonormal_instance(4, 8, 3, 4));
        CHECK(r.retain_change == 0.0);
        CHECK(r.retain_bound == 0.0);
        CHECK(r.all_hold);
        CHECK_THROWS_AS(orthonormal_instance(4, 4, 3, 2), ValidationError);
    }
}

TEST_CASE("instance generator") {
    const auto a = gen_theorem_instance(77, 5, 2, 3);
    const auto b = gen_theorem_instance(77, 5, 2, 3);
    CHECK(a.dict.target_atoms == b.dict.target_atoms);
    CHECK(a.dict.retain_atoms == b.dict.retain_atoms);
    CHECK(a.witness.residual == b.witness.residual);
    CHECK(a.p_T == b.p_T);
    CHECK(a.p_R == b.p_R);

    CHECK_THROWS_AS(gen_theorem_instance(1, 5, 0, 3), ValidationError);
    CHECK_THROWS_AS(gen_theorem_instance(1, 1, 1, 3), ValidationError);

    for (std::uint64_t s = 0; s < 50; ++s) {
        const auto t = gen_theorem_instance(s, 4, 2, 3);
        CHECK((t.dict.target_atoms.colwise().norm().array() - 1.0).abs().maxCoeff() <= 1e-9);
        CHECK((t.dict.retain_atoms.colwise().norm().array() - 1.0).abs().maxCoeff() <= 1e-9);
        CHECK(t.witness.eps_dec >= 0.0);
        CHECK(t.witness.eps_dec <= 0.1);
        CHECK(t.witness.w_T.minCoeff() >= 0.0);
    }
}

TEST_CASE("serial and parallel sweeps agree") {
    const auto a = ref::theorem_sweep(9, 200, 6, 2, 4);
    const auto b = par::theorem_sweep(9, 200, 6, 2, 4);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].drop == b[i].drop);
        CHECK(a[i].leakage == b[i].leakage);
        CHECK(a[i].retain_change == b[i].retain_change);
    }
    const auto direct = check_instance(gen_theorem_instance(SplitMix64::stream(9, 3).next(), 6, 2, 4));
    CHECK(direct.drop == a[3].drop);
}

} // TEST_SUITE
