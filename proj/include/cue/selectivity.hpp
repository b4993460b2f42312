#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace cue {

/// C = [C_T, C_R], unit columns. C_R may be empty (d x 0).
struct PartitionedDictionary {
    Eigen::MatrixXd target_atoms;
    Eigen::MatrixXd retain_atoms;

    std::size_t dim() const noexcept { return static_cast<std::size_t>(target_atoms.rows()); }
    void validate() const;
};

/// h = C_T w_T + C_R w_R + r with ||r|| <= eps_dec.
struct DecompositionWitness {
    Eigen::VectorXd w_T;
    Eigen::VectorXd w_R;
    Eigen::VectorXd residual;
    double eps_dec = 0.0;

    void validate(const PartitionedDictionary& dict) const;
};

struct QueryAlignment {
    Eigen::VectorXd p_T;
    Eigen::VectorXd p_R;
    /// min_i <p_T, c_i> over C_T.
    double alpha = 0.0;
    /// max_j |<p_T, c_j>| over C_R (0 when C_R is empty).
    double beta = 0.0;
    /// max_i |<p_R, c_i>| over C_T.
    double eta = 0.0;
};

struct ErasedPair {
    Eigen::VectorXd h;
    Eigen::VectorXd h_tilde;
};

/// h and h_tilde = C_R w_R + r.
ErasedPair erase_target(const DecompositionWitness& witness, const PartitionedDictionary& dict);

QueryAlignment compute_alignment(const Eigen::VectorXd& p_T, const Eigen::VectorXd& p_R,
                                 const PartitionedDictionary& dict);

inline constexpr double kBoundSlack = 1e-9;

struct BoundsReport {
    /// <p_T, h> - <p_T, h_tilde> against alpha ||w_T||_1.
    double drop = 0.0;
    double drop_bound = 0.0;
    /// |<p_R, h> - <p_R, h_tilde>| against eta ||w_T||_1.
    double retain_change = 0.0;
    double retain_bound = 0.0;
    /// |<p_T, h_tilde>| against beta ||w_R||_1 + eps_dec.
    double leakage = 0.0;
    double leakage_bound = 0.0;
    /// |<p_T, h - h_tilde> - sum_i w_T,i <p_T, c_i>|.
    double identity_error = 0.0;
    /// |<p_T, r>| <= ||r|| (Cauchy-Schwarz with a unit query).
    bool cauchy_schwarz_holds = true;
    bool drop_holds = true;
    bool retain_holds = true;
    bool leakage_holds = true;
    /// alpha >= 0. All three bounds are checked either way; the drop bound
    /// carries information only inside the hypothesis.
    bool in_hypothesis = true;
    bool all_hold = true;
};

BoundsReport check_bounds(const DecompositionWitness& witness, const PartitionedDictionary& dict,
                          const QueryAlignment& align, double slack = kBoundSlack);

struct TheoremInstance {
    PartitionedDictionary dict;
    DecompositionWitness witness;
    Eigen::VectorXd p_T;
    Eigen::VectorXd p_R;
};

/// Atoms uniform on the sphere, weights |N(0,1)|, residual of norm
/// eps_dec ~ U[0, 0.1]. p_T leans toward the target atoms
/// (normalize(sum of C_T + N(0, I/d))), p_R is uniform on the sphere.
TheoremInstance gen_theorem_instance(std::uint64_t seed, std::size_t d, std::size_t n_target, std::size_t n_retain);

/// Every target atom has <p_T, c_i> = alpha exactly (p_T = e_1,
/// c_i = alpha e_1 + sqrt(1 - alpha^2) u_i with u_i orthogonal to e_1), so the
/// drop bound holds with equality.
TheoremInstance equality_instance(std::uint64_t seed, std::size_t d, std::size_t n_target, std::size_t n_retain,
                                  double alpha);

/// Standard basis atoms, p_T = first target atom, p_R = first retain atom
/// (eta = 0), zero residual. Needs n_target + n_retain <= d and n_retain >= 1.
TheoremInstance orthonormal_instance(std::uint64_t seed, std::size_t d, std::size_t n_target, std::size_t n_retain);

BoundsReport check_instance(const TheoremInstance& inst, double slack = kBoundSlack);

/// Instance i of a sweep is gen_theorem_instance(stream(seed, i)).
std::vector<BoundsReport> check_random_instances(std::uint64_t seed, std::size_t count, std::size_t d,
                                                 std::size_t n_target, std::size_t n_retain);

} // namespace cue
