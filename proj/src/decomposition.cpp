#include "cue/decomposition.hpp"

#include "cue/error.hpp"
#include "cue/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace cue {

namespace {

std::size_t edit_distance(const std::string& a, const std::string& b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    std::iota(prev.begin(), prev.end(), 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

void check_dims(const Eigen::VectorXd& z, const Eigen::MatrixXd& atoms) {
    if (z.size() != atoms.rows()) {
        throw ValidationError("embedding dim " + std::to_string(z.size()) + " differs from dictionary dim " +
                              std::to_string(atoms.rows()));
    }
}

} // namespace

void SolverConfig::validate() const {
    if (!std::isfinite(lambda_dec) || lambda_dec < 0.0) {
        throw ValidationError("lambda_dec must be a finite nonnegative number");
    }
    if (max_sweeps < 1) {
        throw ValidationError("max_sweeps must be at least 1");
    }
    if (!(kkt_tol > 0.0)) {
        throw ValidationError("kkt_tol must be positive");
    }
    if (!(objective_tol > 0.0)) {
        throw ValidationError("objective_tol must be positive");
    }
}

double lasso_objective(const Eigen::MatrixXd& atoms, const Eigen::VectorXd& w, const Eigen::VectorXd& z,
                       double lambda_dec) {
    return (atoms * w - z).squaredNorm() + lambda_dec * w.sum();
}

double kkt_residual(const Eigen::MatrixXd& atoms, const Eigen::VectorXd& w, const Eigen::VectorXd& z,
                    double lambda_dec) {
    const Eigen::VectorXd g = 2.0 * atoms.transpose() * (atoms * w - z);
    double worst = 0.0;
    for (Eigen::Index k = 0; k < w.size(); ++k) {
        const double s = g[k] + lambda_dec;
        worst = std::max(worst, w[k] > 0.0 ? std::abs(s) : std::max(0.0, -s));
    }
    return worst;
}

ConceptWeights solve_nn_lasso(const Eigen::VectorXd& z, const Eigen::MatrixXd& atoms, const SolverConfig& cfg,
                              const Eigen::VectorXd& w0) {
    cfg.validate();
    check_dims(z, atoms);
    const Eigen::Index K = atoms.cols();
    if (w0.size() != 0 && w0.size() != K) {
        throw ValidationError("warm start has " + std::to_string(w0.size()) + " entries, dictionary has " +
                              std::to_string(K));
    }

    ConceptWeights out;
    if (w0.size() == 0) {
        out.values = Eigen::VectorXd::Zero(K);
    } else {
        out.values = w0.cwiseMax(0.0);
    }
    Eigen::VectorXd& w = out.values;
    // Squared column norms: 1 up to rounding for a proper dictionary, kept
    // exact so the update is the true coordinate minimizer.
    const Eigen::VectorXd sq = atoms.colwise().squaredNorm().transpose();
    const double half_lambda = 0.5 * cfg.lambda_dec;

    Eigen::VectorXd r = z - atoms * w;
    double f = r.squaredNorm() + cfg.lambda_dec * w.sum();
    for (std::size_t sweep = 0; sweep < cfg.max_sweeps; ++sweep) {
        for (Eigen::Index k = 0; k < K; ++k) {
            if (!(sq[k] > 0.0)) {
                w[k] = 0.0;
                continue;
            }
            const double rho = atoms.col(k).dot(r) + sq[k] * w[k];
            const double next = std::max(0.0, (rho - half_lambda) / sq[k]);
            const double delta = next - w[k];
            if (delta != 0.0) {
                r.noalias() -= delta * atoms.col(k);
                w[k] = next;
            }
        }
        out.sweeps_used = sweep + 1;
        // Refresh the residual so incremental drift never accumulates.
        r = z - atoms * w;
        const double f_next = r.squaredNorm() + cfg.lambda_dec * w.sum();
        const double kkt = kkt_residual(atoms, w, z, cfg.lambda_dec);
        const bool stalled = f - f_next <= cfg.objective_tol * (1.0 + std::abs(f_next));
        f = f_next;
        if (kkt <= cfg.kkt_tol || stalled) {
            break;
        }
    }

    out.objective = f;
    out.kkt_residual = kkt_residual(atoms, w, z, cfg.lambda_dec);
    out.converged = out.kkt_residual <= cfg.kkt_tol;
    for (Eigen::Index k = 0; k < K; ++k) {
        if (w[k] > 0.0) {
            out.support.push_back(static_cast<std::size_t>(k));
        }
    }
    return out;
}

ConceptWeights solve_nn_lasso(const Eigen::VectorXd& z, const ConceptDictionary& dict, const SolverConfig& cfg,
                              const Eigen::VectorXd& w0) {
    return solve_nn_lasso(z, dict.atoms, cfg, w0);
}

std::vector<ConceptWeights> decompose_batch(const LabeledDataset& set, const ModalityStats& stats,
                                            const ConceptDictionary& dict, const SolverConfig& cfg) {
    cfg.validate();
    stats.validate();
    if (set.embeddings.dim() != stats.dim() || stats.dim() != dict.dim()) {
        throw ValidationError("dataset dim " + std::to_string(set.embeddings.dim()) + ", stats dim " +
                              std::to_string(stats.dim()) + " and dictionary dim " + std::to_string(dict.dim()) +
                              " must agree");
    }
    const Eigen::MatrixXd aligned = align_rows(set.embeddings, stats);
    return par::decompose_columns(aligned, dict.atoms, cfg);
}

Eigen::MatrixXd align_rows(const EmbeddingMatrix& x, const ModalityStats& stats) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(x.dim()), static_cast<Eigen::Index>(x.rows()));
    for (std::size_t i = 0; i < x.rows(); ++i) {
        try {
            out.col(static_cast<Eigen::Index>(i)) = align_image(x.row_d(i), stats);
        } catch (const DegenerateError& e) {
            throw DegenerateError("row " + std::to_string(i) + ": " + e.what());
        }
    }
    return out;
}

Eigen::VectorXd reconstruct(const Eigen::VectorXd& w, const ConceptDictionary& dict, const ModalityStats& stats) {
    if (w.size() != dict.atoms.cols()) {
        throw ValidationError("weight vector has " + std::to_string(w.size()) + " entries, dictionary has " +
                              std::to_string(dict.size()));
    }
    return lift_to_image_space(dict.atoms * w, stats);
}

ConceptMask build_mask(const ConceptVocabulary& vocab, const std::vector<std::string>& targets) {
    ConceptMask mask;
    mask.bits.assign(vocab.size(), 0);
    for (const auto& target : targets) {
        const auto key = case_fold(target);
        bool found = false;
        for (std::size_t k = 0; k < vocab.size(); ++k) {
            const auto& c = vocab.concepts()[k];
            bool hit = case_fold(c.name) == key;
            for (const auto& s : c.synonyms) {
                hit = hit || case_fold(s) == key;
            }
            if (hit) {
                found = true;
                if (!mask.bits[k]) {
                    mask.bits[k] = 1;
                    mask.masked_names.push_back(c.name);
                }
            }
        }
        if (!found) {
            // Near misses: names or synonyms within edit distance 2, or sharing a prefix.
            std::vector<std::string> near;
            for (const auto& c : vocab.concepts()) {
                std::vector<std::string> labels{c.name};
                labels.insert(labels.end(), c.synonyms.begin(), c.synonyms.end());
                for (const auto& l : labels) {
                    const auto folded = case_fold(l);
                    const bool prefix = !key.empty() && (folded.starts_with(key) || key.starts_with(folded));
                    if (edit_distance(folded, key) <= 2 || prefix) {
                        near.push_back(l);
                        break;
                    }
                }
            }
            std::string msg = "unknown target concept \"" + target + "\"";
            if (near.empty()) {
                msg += " (no near matches in the vocabulary)";
            } else {
                msg += "; did you mean:";
                for (std::size_t i = 0; i < near.size() && i < 5; ++i) {
                    msg += (i ? ", " : " ") + near[i];
                }
            }
            throw ValidationError(msg);
        }
    }
    return mask;
}

Eigen::VectorXd masked_reconstruct(const Eigen::VectorXd& w, const ConceptMask& mask, const ConceptDictionary& dict,
                                   const ModalityStats& stats) {
    if (mask.size() != static_cast<std::size_t>(w.size())) {
        throw ValidationError("mask length " + std::to_string(mask.size()) + " differs from weight length " +
                              std::to_string(w.size()));
    }
    Eigen::VectorXd kept = w;
    for (Eigen::Index k = 0; k < kept.size(); ++k) {
        if (mask.bits[static_cast<std::size_t>(k)]) {
            kept[k] = 0.0;
        }
    }
    return reconstruct(kept, dict, stats);
}

std::vector<std::pair<std::string, double>> top_k_concepts(const Eigen::VectorXd& w, const ConceptVocabulary& vocab,
                                                           std::size_t k) {
    if (static_cast<std::size_t>(w.size()) != vocab.size()) {
        throw ValidationError("weight vector length differs from vocabulary size");
    }
    std::vector<std::size_t> idx;
    for (Eigen::Index j = 0; j < w.size(); ++j) {
        if (w[j] > 0.0) {
            idx.push_back(static_cast<std::size_t>(j));
        }
    }
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return w[static_cast<Eigen::Index>(a)] > w[static_cast<Eigen::Index>(b)];
    });
    std::vector<std::pair<std::string, double>> out;
    for (std::size_t i = 0; i < idx.size() && i < k; ++i) {
        out.emplace_back(vocab.name(idx[i]), w[static_cast<Eigen::Index>(idx[i])]);
    }
    return out;
}

Eigen::MatrixXd weights_matrix(const std::vector<ConceptWeights>& batch) {
    if (batch.empty()) {
        return {};
    }
    Eigen::MatrixXd m(static_cast<Eigen::Index>(batch.size()), batch.front().values.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        m.row(static_cast<Eigen::Index>(i)) = batch[i].values.transpose();
    }
    return m;
}

} // namespace cue
