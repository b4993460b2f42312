#include "cue/alignment.hpp"

#include "cue/error.hpp"

#include <cmath>
#include <string>

namespace cue {

namespace {

Eigen::VectorXd row_mean(const EmbeddingMatrix& m) {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.dim()));
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const auto r = m.row(i);
        for (std::size_t j = 0; j < m.dim(); ++j) {
            sum[static_cast<Eigen::Index>(j)] += r[j];
        }
    }
    return sum / static_cast<double>(m.rows());
}

} // namespace

void ModalityStats::validate() const {
    if (mu_img.size() == 0 || mu_img.size() != mu_con.size()) {
        throw ValidationError("modality means must be non-empty and of equal length");
    }
    if (!mu_img.allFinite() || !mu_con.allFinite()) {
        throw ValidationError("modality means must be finite");
    }
}

ModalityStats estimate_means(const EmbeddingMatrix& image_set, const EmbeddingMatrix& concept_set) {
    if (image_set.dim() != concept_set.dim()) {
        throw ValidationError("image dim " + std::to_string(image_set.dim()) + " differs from concept dim " +
                              std::to_string(concept_set.dim()));
    }
    return ModalityStats{row_mean(image_set), row_mean(concept_set)};
}

Eigen::VectorXd l2_normalize(const Eigen::VectorXd& v) {
    const double n = v.norm();
    if (!(n >= kDegenerateNorm)) {
        throw DegenerateError("degenerate embedding: norm " + std::to_string(n) + " below 1e-12");
    }
    return v / n;
}

Eigen::VectorXd center_and_normalize(const Eigen::VectorXd& v, const Eigen::VectorXd& mu) {
    if (v.size() != mu.size()) {
        throw ValidationError("vector length " + std::to_string(v.size()) + " differs from mean length " +
                              std::to_string(mu.size()));
    }
    return l2_normalize(v - mu);
}

ConceptDictionary build_dictionary(const ConceptVocabulary& vocab, const ModalityStats& stats) {
    const auto& emb = vocab.embeddings();
    if (emb.dim() != stats.dim()) {
        throw ValidationError("vocabulary dim " + std::to_string(emb.dim()) + " differs from stats dim " +
                              std::to_string(stats.dim()));
    }
    ConceptDictionary dict;
    dict.atoms.resize(static_cast<Eigen::Index>(emb.dim()), static_cast<Eigen::Index>(vocab.size()));
    for (std::size_t k = 0; k < vocab.size(); ++k) {
        try {
            dict.atoms.col(static_cast<Eigen::Index>(k)) = center_and_normalize(emb.row_d(k), stats.mu_con);
        } catch (const DegenerateError&) {
            throw DegenerateError("concept \"" + vocab.name(k) + "\" coincides with the concept-space mean");
        }
        dict.vocab_index.push_back(k);
    }
    return dict;
}

Eigen::VectorXd align_image(const Eigen::VectorXd& x, const ModalityStats& stats) {
    return center_and_normalize(x, stats.mu_img);
}

Eigen::VectorXd lift_to_image_space(const Eigen::VectorXd& z_centered, const ModalityStats& stats) {
    if (z_centered.size() != stats.mu_img.size()) {
        throw ValidationError("reconstruction length differs from stats dim");
    }
    return l2_normalize(z_centered + stats.mu_img);
}

EmbeddingMatrix stats_to_matrix(const ModalityStats& stats) {
    Eigen::MatrixXd m(2, stats.mu_img.size());
    m.row(0) = stats.mu_img.transpose();
    m.row(1) = stats.mu_con.transpose();
    return EmbeddingMatrix::from_eigen(m);
}

ModalityStats stats_from_matrix(const EmbeddingMatrix& m) {
    if (m.rows() != 2) {
        throw ValidationError("modality stats file must have exactly 2 rows, found " + std::to_string(m.rows()));
    }
    return ModalityStats{m.row_d(0), m.row_d(1)};
}

void save_stats(const ModalityStats& stats, const std::filesystem::path& path) {
    save_embeddings(stats_to_matrix(stats), path);
}

ModalityStats load_stats(const std::filesystem::path& path) { return stats_from_matrix(load_embeddings(path)); }

} // namespace cue
