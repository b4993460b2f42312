#pragma once

#include "cue/embedding_store.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <vector>

namespace cue {

/// Norms below this are treated as degenerate by every normalization.
inline constexpr double kDegenerateNorm = 1e-12;

/// Per-modality centers: mu_img for image embeddings, mu_con for concept
/// (text) embeddings.
struct ModalityStats {
    Eigen::VectorXd mu_img;
    Eigen::VectorXd mu_con;

    std::size_t dim() const noexcept { return static_cast<std::size_t>(mu_img.size()); }
    void validate() const;
};

/// Row means of each matrix, accumulated in double.
ModalityStats estimate_means(const EmbeddingMatrix& image_set, const EmbeddingMatrix& concept_set);

/// (v - mu) / ||v - mu||. Throws DegenerateError when the difference has norm < 1e-12.
Eigen::VectorXd center_and_normalize(const Eigen::VectorXd& v, const Eigen::VectorXd& mu);

/// Unit-norm copy of v; throws DegenerateError below the same threshold.
Eigen::VectorXd l2_normalize(const Eigen::VectorXd& v);

/// The matrix C: column k is concept k's embedding, centered by mu_con and
/// normalized. Kept in double precision.
struct ConceptDictionary {
    Eigen::MatrixXd atoms; // dim x K
    std::vector<std::size_t> vocab_index;

    std::size_t size() const noexcept { return static_cast<std::size_t>(atoms.cols()); }
    std::size_t dim() const noexcept { return static_cast<std::size_t>(atoms.rows()); }
};

ConceptDictionary build_dictionary(const ConceptVocabulary& vocab, const ModalityStats& stats);

/// Maps a raw image embedding into the aligned space: center_and_normalize(x, mu_img).
Eigen::VectorXd align_image(const Eigen::VectorXd& x, const ModalityStats& stats);

/// Back to the image cone: normalize(z + mu_img).
Eigen::VectorXd lift_to_image_space(const Eigen::VectorXd& z_centered, const ModalityStats& stats);

/// Persisted as a 2-row EMB1 file: row 0 = mu_img, row 1 = mu_con.
EmbeddingMatrix stats_to_matrix(const ModalityStats& stats);
ModalityStats stats_from_matrix(const EmbeddingMatrix& m);
void save_stats(const ModalityStats& stats, const std::filesystem::path& path);
ModalityStats load_stats(const std::filesystem::path& path);

} // namespace cue
