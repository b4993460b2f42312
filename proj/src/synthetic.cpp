#include "cue/embedding_store.hpp"

#include "cue/error.hpp"
#include "cue/rng.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <string>

namespace cue {

namespace {

constexpr double kOffsetNorm = 1.0;

std::string padded_index(std::size_t i, std::size_t width) {
    auto s = std::to_string(i);
    if (s.size() < width) {
        s.insert(0, width - s.size(), '0');
    }
    return s;
}

Eigen::VectorXd gaussian_vector(SplitMix64& rng, std::size_t dim) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        v[i] = rng.gaussian();
    }
    return v;
}

/// `count` orthonormal vectors (columns) via two-pass modified Gram-Schmidt on
/// Gaussian draws.
Eigen::MatrixXd orthonormal_columns(SplitMix64& rng, std::size_t dim, std::size_t count) {
    Eigen::MatrixXd q(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(count));
    for (Eigen::Index k = 0; k < q.cols(); ++k) {
        for (;;) {
            Eigen::VectorXd v = gaussian_vector(rng, dim);
            for (int pass = 0; pass < 2; ++pass) {
                for (Eigen::Index j = 0; j < k; ++j) {
                    v -= q.col(j).dot(v) * q.col(j);
                }
            }
            const double n = v.norm();
            if (n > 1e-6) {
                q.col(k) = v / n;
                break;
            }
        }
    }
    return q;
}

} // namespace

void SyntheticSpec::validate() const {
    if (dim < 2) {
        throw ValidationError("synthetic dim must be at least 2");
    }
    if (n_concepts == 0) {
        throw ValidationError("synthetic n_concepts must be positive");
    }
    if (n_classes < 2) {
        throw ValidationError("synthetic n_classes must be at least 2 (one forget class plus retained classes)");
    }
    if (n_classes > n_concepts) {
        throw ValidationError("synthetic n_classes exceeds n_concepts; every class needs its own target concept");
    }
    if (samples_per_class == 0) {
        throw ValidationError("synthetic samples_per_class must be positive");
    }
    if (!std::isfinite(noise_scale) || noise_scale < 0.0) {
        throw ValidationError("synthetic noise_scale must be a finite nonnegative number");
    }
    if (mode == AtomMode::orthogonal && n_concepts > dim) {
        throw ValidationError("orthogonal mode needs n_concepts <= dim (" + std::to_string(n_concepts) + " > " +
                              std::to_string(dim) + ")");
    }
    if (mode == AtomMode::coherent) {
        if (!(max_pairwise_cosine >= 0.0 && max_pairwise_cosine < 1.0)) {
            throw ValidationError("max_pairwise_cosine must lie in [0, 1)");
        }
        if (n_concepts + 1 > dim) {
            throw ValidationError("coherent mode needs n_concepts < dim (one shared direction)");
        }
    }
}

SyntheticData gen_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    SplitMix64 rng(spec.seed);

    const std::size_t d = spec.dim;
    const std::size_t K = spec.n_concepts;
    const std::size_t shared = spec.mode == AtomMode::coherent ? 1 : 0;
    // Modality offsets get their own directions orthogonal to every atom when
    // there is room; otherwise both modalities are centered at the origin.
    const bool room_for_offsets = K + shared + 2 <= d;
    const Eigen::MatrixXd basis = orthonormal_columns(rng, d, K + shared + (room_for_offsets ? 2 : 0));

    Eigen::MatrixXd atoms(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(K));
    if (spec.mode == AtomMode::orthogonal) {
        atoms = basis.leftCols(static_cast<Eigen::Index>(K));
    } else {
        // Equicorrelated atoms: every pair has cosine exactly rho.
        const double rho = spec.max_pairwise_cosine;
        const Eigen::VectorXd s = basis.col(static_cast<Eigen::Index>(K));
        for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(K); ++k) {
            atoms.col(k) = std::sqrt(rho) * s + std::sqrt(1.0 - rho) * basis.col(k);
        }
    }

    Eigen::VectorXd mu_img = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
    Eigen::VectorXd mu_con = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
    if (room_for_offsets) {
        mu_img = kOffsetNorm * basis.col(static_cast<Eigen::Index>(K + shared));
        mu_con = kOffsetNorm * basis.col(static_cast<Eigen::Index>(K + shared + 1));
    }

    // Raw concept embeddings: a shared center plus a positively scaled atom.
    const std::size_t width = std::to_string(K - 1).size() < 2 ? 2 : std::to_string(K - 1).size();
    std::vector<Concept> concepts;
    Eigen::MatrixXd concept_rows(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(d));
    for (std::size_t k = 0; k < K; ++k) {
        const double scale = rng.uniform(0.5, 1.5);
        concept_rows.row(static_cast<Eigen::Index>(k)) = (mu_con + scale * atoms.col(static_cast<Eigen::Index>(k))).transpose();
        Concept c{"concept_" + padded_index(k, width), {}};
        if (k < spec.n_classes) {
            c.synonyms.push_back("class_" + std::to_string(k));
        }
        concepts.push_back(std::move(c));
    }

    std::vector<std::string> class_names;
    for (std::size_t y = 0; y < spec.n_classes; ++y) {
        class_names.push_back("class_" + std::to_string(y));
    }

    const std::size_t n_context = K - spec.n_classes;
    auto sample_class = [&](std::size_t y, Eigen::MatrixXd& images, Eigen::MatrixXd& truth, Eigen::Index row) {
        Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(K));
        w[static_cast<Eigen::Index>(y)] = rng.uniform(0.7, 1.0);
        // A co-occurring class concept, so an image stripped of its target
        // still carries evidence for some other class.
        w[static_cast<Eigen::Index>((y + 1) % spec.n_classes)] = rng.uniform(0.3, 0.5);
        if (n_context > 0) {
            const std::size_t first = rng.below(n_context);
            w[static_cast<Eigen::Index>(spec.n_classes + first)] = rng.uniform(0.2, 0.5);
            if (n_context > 1) {
                const std::size_t second = (first + 1 + rng.below(n_context - 1)) % n_context;
                w[static_cast<Eigen::Index>(spec.n_classes + second)] = rng.uniform(0.2, 0.5);
            }
        }
        const Eigen::VectorXd mixture = atoms * w;
        const double norm = mixture.norm();
        truth.row(row) = (w / norm).transpose();
        Eigen::VectorXd x = mu_img + mixture / norm;
        for (Eigen::Index j = 0; j < x.size(); ++j) {
            x[j] += spec.noise_scale * rng.gaussian();
        }
        images.row(row) = x.transpose();
    };

    const auto n_per = static_cast<Eigen::Index>(spec.samples_per_class);
    const auto n_retain = n_per * static_cast<Eigen::Index>(spec.n_classes - 1);
    Eigen::MatrixXd forget_x(n_per, static_cast<Eigen::Index>(d));
    Eigen::MatrixXd forget_w(n_per, static_cast<Eigen::Index>(K));
    Eigen::MatrixXd retain_x(n_retain, static_cast<Eigen::Index>(d));
    Eigen::MatrixXd retain_w(n_retain, static_cast<Eigen::Index>(K));
    std::vector<std::uint32_t> forget_labels(spec.samples_per_class, 0);
    std::vector<std::uint32_t> retain_labels;
    for (Eigen::Index i = 0; i < n_per; ++i) {
        sample_class(0, forget_x, forget_w, i);
    }
    Eigen::Index row = 0;
    for (std::size_t y = 1; y < spec.n_classes; ++y) {
        for (Eigen::Index i = 0; i < n_per; ++i, ++row) {
            sample_class(y, retain_x, retain_w, row);
            retain_labels.push_back(static_cast<std::uint32_t>(y));
        }
    }

    Eigen::MatrixXd texts(static_cast<Eigen::Index>(spec.n_classes), static_cast<Eigen::Index>(d));
    for (Eigen::Index y = 0; y < texts.rows(); ++y) {
        texts.row(y) = atoms.col(y).normalized().transpose();
    }

    return SyntheticData{
        ConceptVocabulary(std::move(concepts), EmbeddingMatrix::from_eigen(concept_rows)),
        LabeledDataset{EmbeddingMatrix::from_eigen(forget_x), std::move(forget_labels), class_names, Split::forget},
        LabeledDataset{EmbeddingMatrix::from_eigen(retain_x), std::move(retain_labels), class_names, Split::retain},
        EmbeddingMatrix::from_eigen(texts),
        atoms,
        mu_img,
        mu_con,
        forget_w,
        retain_w,
    };
}

} // namespace cue
