#include "cue/selectivity.hpp"

#include "cue/error.hpp"
#include "cue/kernels.hpp"
#include "cue/rng.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace cue {

namespace {

Eigen::VectorXd gaussian(SplitMix64& rng, Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        v[i] = rng.gaussian();
    }
    return v;
}

Eigen::VectorXd unit_gaussian(SplitMix64& rng, Eigen::Index n) {
    for (;;) {
        Eigen::VectorXd v = gaussian(rng, n);
        const double norm = v.norm();
        if (norm > 1e-12) {
            return v / norm;
        }
    }
}

void check_columns_unit(const Eigen::MatrixXd& m, const char* what) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        if (std::abs(m.col(j).norm() - 1.0) > 1e-6) {
            throw ValidationError(std::string(what) + " column " + std::to_string(j) + " is not unit-norm");
        }
    }
}

void check_sizes(std::size_t d, std::size_t n_target) {
    if (d < 2) {
        throw ValidationError("theorem instances need d >= 2");
    }
    if (n_target == 0) {
        throw ValidationError("n_target must be at least 1: the theorem needs a non-empty target set");
    }
}

} // namespace

void PartitionedDictionary::validate() const {
    if (target_atoms.cols() < 1) {
        throw ValidationError("partitioned dictionary needs at least one target atom");
    }
    if (retain_atoms.cols() > 0 && retain_atoms.rows() != target_atoms.rows()) {
        throw ValidationError("target and retain atoms differ in dim");
    }
    check_columns_unit(target_atoms, "target atom");
    check_columns_unit(retain_atoms, "retain atom");
}

void DecompositionWitness::validate(const PartitionedDictionary& dict) const {
    if (w_T.size() != dict.target_atoms.cols() || w_R.size() != dict.retain_atoms.cols() ||
        residual.size() != dict.target_atoms.rows()) {
        throw ValidationError("witness shapes do not match the dictionary");
    }
    if ((w_T.array() < 0.0).any() || (w_R.array() < 0.0).any()) {
        throw ValidationError("witness weights must be nonnegative");
    }
    if (residual.norm() > eps_dec) {
        throw ValidationError("residual norm exceeds eps_dec");
    }
}

ErasedPair erase_target(const DecompositionWitness& witness, const PartitionedDictionary& dict) {
    const Eigen::Index d = dict.target_atoms.rows();
    if (witness.w_T.size() != dict.target_atoms.cols() || witness.w_R.size() != dict.retain_atoms.cols() ||
        witness.residual.size() != d) {
        throw ValidationError("witness shapes do not match the dictionary");
    }
    ErasedPair out;
    out.h_tilde = witness.residual;
    if (dict.retain_atoms.cols() > 0) {
        out.h_tilde += dict.retain_atoms * witness.w_R;
    }
    out.h = out.h_tilde + dict.target_atoms * witness.w_T;
    return out;
}

QueryAlignment compute_alignment(const Eigen::VectorXd& p_T, const Eigen::VectorXd& p_R,
                                 const PartitionedDictionary& dict) {
    if (p_T.size() != dict.target_atoms.rows() || p_R.size() != dict.target_atoms.rows()) {
        throw ValidationError("query dim differs from dictionary dim");
    }
    QueryAlignment a{p_T, p_R, 0.0, 0.0, 0.0};
    a.alpha = (dict.target_atoms.transpose() * p_T).minCoeff();
    if (dict.retain_atoms.cols() > 0) {
        a.beta = (dict.retain_atoms.transpose() * p_T).cwiseAbs().maxCoeff();
    }
    a.eta = (dict.target_atoms.transpose() * p_R).cwiseAbs().maxCoeff();
    return a;
}

BoundsReport check_bounds(const DecompositionWitness& witness, const PartitionedDictionary& dict,
                          const QueryAlignment& align, double slack) {
    const auto [h, h_tilde] = erase_target(witness, dict);
    const Eigen::VectorXd& p_T = align.p_T;
    const Eigen::VectorXd& p_R = align.p_R;
    const double wT1 = witness.w_T.sum();
    const double wR1 = witness.w_R.sum();

    BoundsReport r;
    r.drop = p_T.dot(h) - p_T.dot(h_tilde);
    r.drop_bound = align.alpha * wT1;
    r.retain_change = std::abs(p_R.dot(h) - p_R.dot(h_tilde));
    r.retain_bound = align.eta * wT1;
    r.leakage = std::abs(p_T.dot(h_tilde));
    r.leakage_bound = align.beta * wR1 + witness.eps_dec;

    double expanded = 0.0;
    for (Eigen::Index i = 0; i < witness.w_T.size(); ++i) {
        expanded += witness.w_T[i] * p_T.dot(dict.target_atoms.col(i));
    }
    r.identity_error = std::abs(p_T.dot(h - h_tilde) - expanded);
    r.cauchy_schwarz_holds = std::abs(p_T.dot(witness.residual)) <= witness.residual.norm() + slack;

    r.drop_holds = r.drop >= r.drop_bound - slack;
    r.retain_holds = r.retain_change <= r.retain_bound + slack;
    r.leakage_holds = r.leakage <= r.leakage_bound + slack;
    r.in_hypothesis = align.alpha >= 0.0;
    r.all_hold = r.drop_holds && r.retain_holds && r.leakage_holds && r.cauchy_schwarz_holds;
    return r;
}

TheoremInstance gen_theorem_instance(std::uint64_t seed, std::size_t d, std::size_t n_target, std::size_t n_retain) {
    check_sizes(d, n_target);
    SplitMix64 rng(seed);
    const auto D = static_cast<Eigen::Index>(d);
    const auto nT = static_cast<Eigen::Index>(n_target);
    const auto nR = static_cast<Eigen::Index>(n_retain);

    TheoremInstance inst;
    inst.dict.target_atoms.resize(D, nT);
    inst.dict.retain_atoms.resize(D, nR);
    for (Eigen::Index i = 0; i < nT; ++i) {
        inst.dict.target_atoms.col(i) = unit_gaussian(rng, D);
    }
    for (Eigen::Index j = 0; j < nR; ++j) {
        inst.dict.retain_atoms.col(j) = unit_gaussian(rng, D);
    }
    inst.witness.w_T = gaussian(rng, nT).cwiseAbs();
    inst.witness.w_R = gaussian(rng, nR).cwiseAbs();
    const Eigen::VectorXd dir = unit_gaussian(rng, D);
    inst.witness.eps_dec = rng.uniform(0.0, 0.1);
    inst.witness.residual = inst.witness.eps_dec * dir;
    // Scaling a unit vector can land a hair above eps_dec; take the exact norm.
    inst.witness.eps_dec = inst.witness.residual.norm();

    Eigen::VectorXd lean = inst.dict.target_atoms.rowwise().sum() + gaussian(rng, D) / std::sqrt(static_cast<double>(d));
    if (lean.norm() < 1e-12) {
        lean = unit_gaussian(rng, D);
    }
    inst.p_T = lean.normalized();
    inst.p_R = unit_gaussian(rng, D);
    return inst;
}

TheoremInstance equality_instance(std::uint64_t seed, std::size_t d, std::size_t n_target, std::size_t n_retain,
                                  double alpha) {
    check_sizes(d, n_target);
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw ValidationError("equality instance needs alpha in [0, 1]");
    }
    SplitMix64 rng(seed);
    const auto D = static_cast<Eigen::Index>(d);
    TheoremInstance inst;
    inst.p_T = Eigen::VectorXd::Unit(D, 0);
    inst.dict.target_atoms.resize(D, static_cast<Eigen::Index>(n_target));
    for (Eigen::Index i = 0; i < inst.dict.target_atoms.cols(); ++i) {
        Eigen::VectorXd u = gaussian(rng, D);
        u[0] = 0.0;
        u.normalize();
        inst.dict.target_atoms.col(i) = alpha * inst.p_T + std::sqrt(1.0 - alpha * alpha) * u;
    }
    inst.dict.retain_atoms.resize(D, static_cast<Eigen::Index>(n_retain));
    for (Eigen::Index j = 0; j < inst.dict.retain_atoms.cols(); ++j) {
        inst.dict.retain_atoms.col(j) = unit_gaussian(rng, D);
    }
    inst.witness.w_T = gaussian(rng, static_cast<Eigen::Index>(n_target)).cwiseAbs();
    inst.witness.w_R = gaussian(rng, static_cast<Eigen::Index>(n_retain)).cwiseAbs();
    inst.witness.residual = Eigen::VectorXd::Zero(D);
    inst.witness.eps_dec = 0.0;
    inst.p_R = unit_gaussian(rng, D);
    return inst;
}

TheoremInstance orthonormal_instance(std::uint64_t seed, std::size_t d, std::size_t n_target, std::size_t n_retain) {
    check_sizes(d, n_target);
    if (n_retain == 0 || n_target + n_retain > d) {
        throw ValidationError("orthonormal instance needs 1 <= n_retain and n_target + n_retain <= d");
    }
    SplitMix64 rng(seed);
    const auto D = static_cast<Eigen::Index>(d);
    const auto nT = static_cast<Eigen::Index>(n_target);
    const auto nR = static_cast<Eigen::Index>(n_retain);
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(D, D);
    TheoremInstance inst;
    inst.dict.target_atoms = I.leftCols(nT);
    inst.dict.retain_atoms = I.middleCols(nT, nR);
    inst.witness.w_T = gaussian(rng, nT).cwiseAbs();
    inst.witness.w_R = gaussian(rng, nR).cwiseAbs();
    inst.witness.residual = Eigen::VectorXd::Zero(D);
    inst.witness.eps_dec = 0.0;
    inst.p_T = I.col(0);
    inst.p_R = I.col(nT);
    return inst;
}

BoundsReport check_instance(const TheoremInstance& inst, double slack) {
    return check_bounds(inst.witness, inst.dict, compute_alignment(inst.p_T, inst.p_R, inst.dict), slack);
}

std::vector<BoundsReport> check_random_instances(std::uint64_t seed, std::size_t count, std::size_t d,
                                                 std::size_t n_target, std::size_t n_retain) {
    check_sizes(d, n_target);
    return par::theorem_sweep(seed, count, d, n_target, n_retain);
}

} // namespace cue
