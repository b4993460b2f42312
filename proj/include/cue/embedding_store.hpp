#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cue {

/// Dense rows x dim matrix of 32-bit floats, row-major, one embedding per row.
/// Always non-empty and finite; the constructor enforces both.
class EmbeddingMatrix {
public:
    EmbeddingMatrix(std::size_t rows, std::size_t dim, std::vector<float> data);

    /// Rounds each entry to float. `m` is rows x dim.
    static EmbeddingMatrix from_eigen(const Eigen::MatrixXd& m);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t dim() const noexcept { return dim_; }
    std::span<const float> data() const noexcept { return data_; }

    std::span<const float> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
    float operator()(std::size_t i, std::size_t j) const { return data_[i * dim_ + j]; }

    Eigen::VectorXd row_d(std::size_t i) const;
    /// rows x dim in double precision.
    Eigen::MatrixXd to_eigen() const;

    /// Bitwise equality of shape and payload (distinguishes -0.0 from 0.0).
    bool bit_equal(const EmbeddingMatrix& other) const noexcept;

private:
    std::size_t rows_;
    std::size_t dim_;
    std::vector<float> data_;
};

/// Stacks the rows of `a` on top of the rows of `b`; dims must agree.
EmbeddingMatrix concat_rows(const EmbeddingMatrix& a, const EmbeddingMatrix& b);

/// EMB1 layout (little-endian): "EMB1", u32 version = 1, u64 rows, u64 dim,
/// then rows*dim IEEE-754 binary32 values row-major. No padding, no trailer.
inline constexpr std::size_t kEmb1HeaderBytes = 24;

std::vector<std::uint8_t> encode_emb1(const EmbeddingMatrix& matrix);
EmbeddingMatrix decode_emb1(std::span<const std::uint8_t> bytes);

EmbeddingMatrix load_embeddings(const std::filesystem::path& path);
void save_embeddings(const EmbeddingMatrix& matrix, const std::filesystem::path& path);

enum class Split { forget, retain, eval };

std::string_view to_string(Split split) noexcept;
Split parse_split(std::string_view text);

struct LabeledDataset {
    EmbeddingMatrix embeddings;
    std::vector<std::uint32_t> labels;
    std::vector<std::string> class_names;
    Split split = Split::eval;

    /// Throws ValidationError unless labels line up with rows and class names.
    void validate() const;
    std::size_t size() const noexcept { return embeddings.rows(); }
};

/// Label sidecar: {"labels":[...],"class_names":[...],"split":"forget|retain|eval"}.
std::string encode_labels_json(const LabeledDataset& set);
LabeledDataset load_dataset(const std::filesystem::path& emb_path, const std::filesystem::path& labels_path);
void save_dataset(const LabeledDataset& set, const std::filesystem::path& emb_path,
                  const std::filesystem::path& labels_path);

struct Concept {
    std::string name;
    std::vector<std::string> synonyms;
};

/// ASCII case folding. Bytes outside A-Z (including UTF-8 continuation bytes)
/// pass through unchanged.
std::string case_fold(std::string_view text);

/// Named concepts, index-aligned with one embedding row per concept.
class ConceptVocabulary {
public:
    ConceptVocabulary(std::vector<Concept> concepts, EmbeddingMatrix embeddings);

    std::size_t size() const noexcept { return concepts_.size(); }
    const std::vector<Concept>& concepts() const noexcept { return concepts_; }
    const EmbeddingMatrix& embeddings() const noexcept { return embeddings_; }
    const std::string& name(std::size_t k) const { return concepts_.at(k).name; }

    /// Index of the concept whose name or synonym matches `text` after case folding.
    std::optional<std::size_t> resolve(std::string_view text) const;

    /// First `n` concepts (and embedding rows).
    ConceptVocabulary prefix(std::size_t n) const;

private:
    std::vector<Concept> concepts_;
    EmbeddingMatrix embeddings_;
};

/// Metadata document: {"concepts":[{"name":"...","synonyms":["..."]}, ...]}.
std::string encode_vocabulary_json(const ConceptVocabulary& vocab);
ConceptVocabulary load_vocabulary(const std::filesystem::path& meta_path, const std::filesystem::path& emb_path);
void save_vocabulary(const ConceptVocabulary& vocab, const std::filesystem::path& meta_path,
                     const std::filesystem::path& emb_path);

// ---------------------------------------------------------------------------
// Synthetic data

enum class AtomMode { orthogonal, coherent };

struct SyntheticSpec {
    std::uint64_t seed = 7;
    std::size_t dim = 64;
    std::size_t n_concepts = 20;
    std::size_t n_classes = 5;
    std::size_t samples_per_class = 200;
    AtomMode mode = AtomMode::orthogonal;
    /// Pairwise cosine between atoms in coherent mode.
    double max_pairwise_cosine = 0.0;
    double noise_scale = 0.05;

    void validate() const;
};

/// Everything gen_synthetic produces. Class y's designated target atom is
/// concept y; the forget split holds class 0, the retain split every other class.
struct SyntheticData {
    ConceptVocabulary vocab;
    LabeledDataset forget;
    LabeledDataset retain;
    /// n_classes x dim, row y = atom y.
    EmbeddingMatrix class_texts;

    /// Designed aligned-space atoms, dim x n_concepts, unit columns.
    Eigen::MatrixXd atoms;
    /// Modality centers the raw embeddings were built around.
    Eigen::VectorXd mu_img;
    Eigen::VectorXd mu_con;
    /// Ground-truth aligned weights (rows x n_concepts): for a noiseless sample,
    /// (x - mu_img) normalized equals atoms * w exactly.
    Eigen::MatrixXd forget_truth;
    Eigen::MatrixXd retain_truth;
};

SyntheticData gen_synthetic(const SyntheticSpec& spec);

} // namespace cue
