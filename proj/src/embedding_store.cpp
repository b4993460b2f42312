#include "cue/embedding_store.hpp"

#include "cue/error.hpp"
#include "cue/io_util.hpp"

#include <json.hpp>

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <set>

namespace cue {

namespace {

using nlohmann::json;

constexpr std::array<char, 4> kMagic = {'E', 'M', 'B', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) {
        v = (v << 8) | b[at + i];
    }
    return v;
}

std::uint64_t get_u64(std::span<const std::uint8_t> b, std::size_t at) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) {
        v = (v << 8) | b[at + i];
    }
    return v;
}

json parse_json(const std::filesystem::path& path) {
    const auto text = read_file_text(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError("malformed JSON in " + path.string() + ": " + e.what(), e.byte);
    }
}

std::vector<std::string> string_array(const json& j, const char* key, const std::filesystem::path& path) {
    if (!j.contains(key) || !j[key].is_array()) {
        throw FormatError(path.string() + ": missing array \"" + key + "\"", 0);
    }
    std::vector<std::string> out;
    for (const auto& item : j[key]) {
        if (!item.is_string()) {
            throw FormatError(path.string() + ": \"" + key + "\" must hold strings", 0);
        }
        out.push_back(item.get<std::string>());
    }
    return out;
}

} // namespace

// ---------------------------------------------------------------------------

EmbeddingMatrix::EmbeddingMatrix(std::size_t rows, std::size_t dim, std::vector<float> data)
    : rows_(rows), dim_(dim), data_(std::move(data)) {
    if (rows_ == 0 || dim_ == 0) {
        throw ValidationError("embedding matrix needs at least one row and one column");
    }
    if (data_.size() != rows_ * dim_) {
        throw ValidationError("embedding payload has " + std::to_string(data_.size()) + " values, expected " +
                              std::to_string(rows_ * dim_));
    }
    for (std::size_t i = 0; i < data_.size(); ++i) {
        if (!std::isfinite(data_[i])) {
            throw ValidationError("non-finite embedding entry at row " + std::to_string(i / dim_) + ", column " +
                                  std::to_string(i % dim_));
        }
    }
}

EmbeddingMatrix EmbeddingMatrix::from_eigen(const Eigen::MatrixXd& m) {
    std::vector<float> data(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            data[static_cast<std::size_t>(i * m.cols() + j)] = static_cast<float>(m(i, j));
        }
    }
    return EmbeddingMatrix(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()), std::move(data));
}

Eigen::VectorXd EmbeddingMatrix::row_d(std::size_t i) const {
    Eigen::VectorXd v(static_cast<Eigen::Index>(dim_));
    const auto r = row(i);
    for (std::size_t j = 0; j < dim_; ++j) {
        v[static_cast<Eigen::Index>(j)] = r[j];
    }
    return v;
}

Eigen::MatrixXd EmbeddingMatrix::to_eigen() const {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(dim_));
    for (std::size_t i = 0; i < rows_; ++i) {
        for (std::size_t j = 0; j < dim_; ++j) {
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = data_[i * dim_ + j];
        }
    }
    return m;
}

bool EmbeddingMatrix::bit_equal(const EmbeddingMatrix& other) const noexcept {
    return rows_ == other.rows_ && dim_ == other.dim_ &&
           std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0;
}

EmbeddingMatrix concat_rows(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
    if (a.dim() != b.dim()) {
        throw ValidationError("cannot stack matrices of dim " + std::to_string(a.dim()) + " and " +
                              std::to_string(b.dim()));
    }
    std::vector<float> data(a.data().begin(), a.data().end());
    data.insert(data.end(), b.data().begin(), b.data().end());
    return EmbeddingMatrix(a.rows() + b.rows(), a.dim(), std::move(data));
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_emb1(const EmbeddingMatrix& matrix) {
    std::vector<std::uint8_t> out;
    out.reserve(kEmb1HeaderBytes + 4 * matrix.data().size());
    out.insert(out.end(), kMagic.begin(), kMagic.end());
    put_u32(out, kVersion);
    put_u64(out, matrix.rows());
    put_u64(out, matrix.dim());
    for (float v : matrix.data()) {
        put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
    return out;
}

EmbeddingMatrix decode_emb1(std::span<const std::uint8_t> bytes) {
    for (std::size_t i = 0; i < kMagic.size(); ++i) {
        if (i >= bytes.size() || bytes[i] != static_cast<std::uint8_t>(kMagic[i])) {
            throw FormatError("bad magic", 0);
        }
    }
    if (bytes.size() < kEmb1HeaderBytes) {
        throw FormatError("truncated header", bytes.size());
    }
    const auto version = get_u32(bytes, 4);
    if (version != kVersion) {
        throw FormatError("unsupported version " + std::to_string(version), 4);
    }
    const auto rows = get_u64(bytes, 8);
    const auto dim = get_u64(bytes, 16);
    if (rows == 0) {
        throw FormatError("zero rows", 8);
    }
    if (dim == 0) {
        throw FormatError("zero dim", 16);
    }
    const std::uint64_t max_values = (std::numeric_limits<std::uint64_t>::max() - kEmb1HeaderBytes) / 4;
    if (rows > max_values / dim) {
        throw FormatError("rows*dim overflows", 8);
    }
    const std::uint64_t count = rows * dim;
    const std::uint64_t expected = kEmb1HeaderBytes + 4 * count;
    if (bytes.size() < expected) {
        throw FormatError("truncated payload (expected " + std::to_string(expected) + " bytes)", bytes.size());
    }
    if (bytes.size() > expected) {
        throw FormatError("trailing bytes after payload", expected);
    }
    std::vector<float> data(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::size_t at = kEmb1HeaderBytes + 4 * i;
        const float v = std::bit_cast<float>(get_u32(bytes, at));
        if (!std::isfinite(v)) {
            throw FormatError("non-finite entry", at);
        }
        data[i] = v;
    }
    return EmbeddingMatrix(rows, dim, std::move(data));
}

EmbeddingMatrix load_embeddings(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    try {
        return decode_emb1(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.detail(), e.offset());
    }
}

void save_embeddings(const EmbeddingMatrix& matrix, const std::filesystem::path& path) {
    write_file_atomic(path, encode_emb1(matrix));
}

// ---------------------------------------------------------------------------

std::string_view to_string(Split split) noexcept {
    switch (split) {
    case Split::forget:
        return "forget";
    case Split::retain:
        return "retain";
    case Split::eval:
        return "eval";
    }
    return "eval";
}

Split parse_split(std::string_view text) {
    if (text == "forget") {
        return Split::forget;
    }
    if (text == "retain") {
        return Split::retain;
    }
    if (text == "eval") {
        return Split::eval;
    }
    throw ValidationError("unknown split \"" + std::string(text) + "\" (expected forget, retain or eval)");
}

void LabeledDataset::validate() const {
    if (labels.size() != embeddings.rows()) {
        throw ValidationError("dataset has " + std::to_string(labels.size()) + " labels for " +
                              std::to_string(embeddings.rows()) + " rows");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= class_names.size()) {
            throw ValidationError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                                  " is out of range for " + std::to_string(class_names.size()) + " classes");
        }
    }
}

std::string encode_labels_json(const LabeledDataset& set) {
    json j;
    j["labels"] = set.labels;
    j["class_names"] = set.class_names;
    j["split"] = std::string(to_string(set.split));
    return j.dump() + "\n";
}

LabeledDataset load_dataset(const std::filesystem::path& emb_path, const std::filesystem::path& labels_path) {
    auto embeddings = load_embeddings(emb_path);
    const auto j = parse_json(labels_path);
    if (!j.is_object() || !j.contains("labels") || !j["labels"].is_array()) {
        throw FormatError(labels_path.string() + ": missing array \"labels\"", 0);
    }
    std::vector<std::uint32_t> labels;
    for (const auto& l : j["labels"]) {
        if (!l.is_number_unsigned()) {
            throw FormatError(labels_path.string() + ": labels must be non-negative integers", 0);
        }
        labels.push_back(l.get<std::uint32_t>());
    }
    auto class_names = string_array(j, "class_names", labels_path);
    if (!j.contains("split") || !j["split"].is_string()) {
        throw FormatError(labels_path.string() + ": missing string \"split\"", 0);
    }
    LabeledDataset set{std::move(embeddings), std::move(labels), std::move(class_names),
                       parse_split(j["split"].get<std::string>())};
    set.validate();
    return set;
}

void save_dataset(const LabeledDataset& set, const std::filesystem::path& emb_path,
                  const std::filesystem::path& labels_path) {
    set.validate();
    save_embeddings(set.embeddings, emb_path);
    write_file_atomic(labels_path, encode_labels_json(set));
}

// ---------------------------------------------------------------------------

std::string case_fold(std::string_view text) {
    std::string out(text);
    for (char& c : out) {
        if (c >= 'A' && c <= 'Z') {
            c = static_cast<char>(c - 'A' + 'a');
        }
    }
    return out;
}

ConceptVocabulary::ConceptVocabulary(std::vector<Concept> concepts, EmbeddingMatrix embeddings)
    : concepts_(std::move(concepts)), embeddings_(std::move(embeddings)) {
    if (embeddings_.rows() != concepts_.size()) {
        throw ValidationError("vocabulary count mismatch: " + std::to_string(concepts_.size()) + " concepts, " +
                              std::to_string(embeddings_.rows()) + " embedding rows");
    }
    std::set<std::string> names;
    for (const auto& c : concepts_) {
        if (c.name.empty()) {
            throw ValidationError("concept with empty name");
        }
        if (!names.insert(case_fold(c.name)).second) {
            throw ValidationError("duplicate concept name \"" + c.name + "\"");
        }
    }
    for (const auto& c : concepts_) {
        const auto own = case_fold(c.name);
        for (const auto& s : c.synonyms) {
            const auto folded = case_fold(s);
            if (folded != own && names.contains(folded)) {
                throw ValidationError("synonym \"" + s + "\" of \"" + c.name + "\" is another concept's name");
            }
        }
    }
}

std::optional<std::size_t> ConceptVocabulary::resolve(std::string_view text) const {
    const auto key = case_fold(text);
    for (std::size_t k = 0; k < concepts_.size(); ++k) {
        if (case_fold(concepts_[k].name) == key) {
            return k;
        }
    }
    for (std::size_t k = 0; k < concepts_.size(); ++k) {
        for (const auto& s : concepts_[k].synonyms) {
            if (case_fold(s) == key) {
                return k;
            }
        }
    }
    return std::nullopt;
}

ConceptVocabulary ConceptVocabulary::prefix(std::size_t n) const {
    if (n == 0 || n > size()) {
        throw ValidationError("vocabulary prefix " + std::to_string(n) + " outside [1, " + std::to_string(size()) + "]");
    }
    std::vector<Concept> head(concepts_.begin(), concepts_.begin() + static_cast<std::ptrdiff_t>(n));
    const auto all = embeddings_.data();
    std::vector<float> data(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n * embeddings_.dim()));
    return ConceptVocabulary(std::move(head), EmbeddingMatrix(n, embeddings_.dim(), std::move(data)));
}

std::string encode_vocabulary_json(const ConceptVocabulary& vocab) {
    json list = json::array();
    for (const auto& c : vocab.concepts()) {
        list.push_back({{"name", c.name}, {"synonyms", c.synonyms}});
    }
    return json{{"concepts", list}}.dump() + "\n";
}

ConceptVocabulary load_vocabulary(const std::filesystem::path& meta_path, const std::filesystem::path& emb_path) {
    if (!std::filesystem::exists(meta_path)) {
        throw IoError("vocabulary metadata not found: " + meta_path.string());
    }
    if (!std::filesystem::exists(emb_path)) {
        throw IoError("concept embeddings not found: " + emb_path.string());
    }
    const auto j = parse_json(meta_path);
    if (!j.is_object() || !j.contains("concepts") || !j["concepts"].is_array()) {
        throw FormatError(meta_path.string() + ": missing array \"concepts\"", 0);
    }
    std::vector<Concept> concepts;
    for (const auto& item : j["concepts"]) {
        if (!item.is_object() || !item.contains("name") || !item["name"].is_string()) {
            throw FormatError(meta_path.string() + ": every concept needs a string \"name\"", 0);
        }
        Concept c{item["name"].get<std::string>(), {}};
        if (item.contains("synonyms")) {
            c.synonyms = string_array(item, "synonyms", meta_path);
        }
        concepts.push_back(std::move(c));
    }
    return ConceptVocabulary(std::move(concepts), load_embeddings(emb_path));
}

void save_vocabulary(const ConceptVocabulary& vocab, const std::filesystem::path& meta_path,
                     const std::filesystem::path& emb_path) {
    write_file_atomic(meta_path, encode_vocabulary_json(vocab));
    save_embeddings(vocab.embeddings(), emb_path);
}

} // namespace cue
