#pragma once

#include "cue/alignment.hpp"
#include "cue/embedding_store.hpp"

#include <Eigen/Core>

#include <string>
#include <utility>
#include <vector>

namespace cue {

struct SolverConfig {
    /// Weight of the l1 penalty.
    double lambda_dec = 0.35;
    std::size_t max_sweeps = 1000;
    double kkt_tol = 1e-6;
    /// A sweep that lowers the objective by less than objective_tol * (1 + |f|)
    /// ends the solve early; the result is still flagged by the KKT test.
    double objective_tol = 1e-14;
    /// Seed each sample of a batch with the previous sample's solution.
    bool warm_start = false;

    void validate() const;
};

/// Solution of min_{w >= 0} ||C w - z||^2 + lambda_dec * ||w||_1.
struct ConceptWeights {
    Eigen::VectorXd values;
    std::vector<std::size_t> support;
    double objective = 0.0;
    double kkt_residual = 0.0;
    std::size_t sweeps_used = 0;
    bool converged = false;
};

double lasso_objective(const Eigen::MatrixXd& atoms, const Eigen::VectorXd& w, const Eigen::VectorXd& z,
                       double lambda_dec);

/// Largest violation of the optimality conditions, with g = 2 C^T (C w - z):
/// |g_k + lambda| where w_k > 0, max(0, -(g_k + lambda)) where w_k = 0.
double kkt_residual(const Eigen::MatrixXd& atoms, const Eigen::VectorXd& w, const Eigen::VectorXd& z,
                    double lambda_dec);

/// Cyclic coordinate descent in vocabulary order, starting from `w0` (zero
/// when empty). Columns are unit-norm, so the coordinate update is
///   w_k <- max(0, c_k^T r_k - lambda_dec / 2),  r_k = z - sum_{j != k} c_j w_j.
/// Non-convergence within max_sweeps is reported through `converged`.
ConceptWeights solve_nn_lasso(const Eigen::VectorXd& z, const ConceptDictionary& dict, const SolverConfig& cfg,
                              const Eigen::VectorXd& w0 = Eigen::VectorXd());

/// Same solver against a bare dim x K atom matrix.
ConceptWeights solve_nn_lasso(const Eigen::VectorXd& z, const Eigen::MatrixXd& atoms, const SolverConfig& cfg,
                              const Eigen::VectorXd& w0 = Eigen::VectorXd());

/// Aligns every row of `set` with `stats` and decomposes it. Output order
/// matches row order irrespective of the thread schedule.
std::vector<ConceptWeights> decompose_batch(const LabeledDataset& set, const ModalityStats& stats,
                                            const ConceptDictionary& dict, const SolverConfig& cfg);

/// d x n matrix whose column i is align_image(row i); errors carry the row index.
Eigen::MatrixXd align_rows(const EmbeddingMatrix& x, const ModalityStats& stats);

/// lift_to_image_space(C w, stats).
Eigen::VectorXd reconstruct(const Eigen::VectorXd& w, const ConceptDictionary& dict, const ModalityStats& stats);

struct ConceptMask {
    std::vector<std::uint8_t> bits;
    std::vector<std::string> masked_names;

    std::size_t size() const noexcept { return bits.size(); }
};

/// Sets the bit of every concept whose name or synonym equals a target after
/// case folding. Unknown targets raise ValidationError listing near misses.
ConceptMask build_mask(const ConceptVocabulary& vocab, const std::vector<std::string>& targets);

/// Reconstruction from the unmasked coefficients only.
Eigen::VectorXd masked_reconstruct(const Eigen::VectorXd& w, const ConceptMask& mask, const ConceptDictionary& dict,
                                   const ModalityStats& stats);

/// Up to k nonzero concepts by descending weight, ties by ascending index.
std::vector<std::pair<std::string, double>> top_k_concepts(const Eigen::VectorXd& w, const ConceptVocabulary& vocab,
                                                           std::size_t k);

/// Packs a batch of weights into an n x K matrix.
Eigen::MatrixXd weights_matrix(const std::vector<ConceptWeights>& batch);

} // namespace cue
