#pragma once

// Hot loops in two builds with identical arithmetic: `ref` runs serially and
// is the oracle for tests, `par` splits the outer loop with OpenMP. Every
// reduction runs in a fixed order so both return the same bits.

#include "cue/decomposition.hpp"
#include "cue/embedding_store.hpp"
#include "cue/selectivity.hpp"
#include "cue/unlearning.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace cue {

namespace ref {

// One NN-lasso solve per column of Z (d x n). Warm starts chain samples, so
// they always run serially.
std::vector<ConceptWeights> decompose_columns(const Eigen::MatrixXd& Z, const Eigen::MatrixXd& atoms,
                                              const SolverConfig& cfg);
// Zero-shot argmax per row of x against the m x d texts; ties to the lowest index.
std::vector<std::uint32_t> predict_rows(const Eigen::MatrixXd& W, const EmbeddingMatrix& x,
                                        const Eigen::MatrixXd& texts);
// <normalize(W x_i), query> per row.
std::vector<double> similarity_rows(const Eigen::MatrixXd& W, const EmbeddingMatrix& x, const Eigen::VectorXd& query);
LossAndGrad loss_and_grad(const Eigen::MatrixXd& W, const ForgetBatch& forget, const RetainBatch& retain,
                          const Eigen::MatrixXd& texts, const LossWeights& weights);
std::vector<BoundsReport> theorem_sweep(std::uint64_t seed, std::size_t count, std::size_t d, std::size_t n_target,
                                        std::size_t n_retain);

} // namespace ref

namespace par {

// One NN-lasso solve per column of Z (d x n). Warm starts chain samples, so
// they always run serially.
std::vector<ConceptWeights> decompose_columns(const Eigen::MatrixXd& Z, const Eigen::MatrixXd& atoms,
                                              const SolverConfig& cfg);
// Zero-shot argmax per row of x against the m x d texts; ties to the lowest index.
std::vector<std::uint32_t> predict_rows(const Eigen::MatrixXd& W, const EmbeddingMatrix& x,
                                        const Eigen::MatrixXd& texts);
// <normalize(W x_i), query> per row.
std::vector<double> similarity_rows(const Eigen::MatrixXd& W, const EmbeddingMatrix& x, const Eigen::VectorXd& query);
LossAndGrad loss_and_grad(const Eigen::MatrixXd& W, const ForgetBatch& forget, const RetainBatch& retain,
                          const Eigen::MatrixXd& texts, const LossWeights& weights);
std::vector<BoundsReport> theorem_sweep(std::uint64_t seed, std::size_t count, std::size_t d, std::size_t n_target,
                                        std::size_t n_retain);

} // namespace par

} // namespace cue
