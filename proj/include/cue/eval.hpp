#pragma once

#include "cue/embedding_store.hpp"
#include "cue/unlearning.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace cue {

struct ZeroShotHead {
    Eigen::MatrixXd class_texts; // m x d, unit rows
    std::vector<std::string> class_names;

    /// Unit rows within 1e-6, one name per row, names unique.
    void validate() const;
    std::size_t size() const noexcept { return class_names.size(); }
};

ZeroShotHead make_head(const EmbeddingMatrix& texts, std::vector<std::string> names);

/// argmax_j <f(x_i), t_j> per row, ties to the lowest class index.
std::vector<std::uint32_t> predict(const LinearAdapter& adapter, const EmbeddingMatrix& x, const ZeroShotHead& head);

/// Percent of rows whose prediction equals the label.
double zero_shot_accuracy(const LinearAdapter& adapter, const LabeledDataset& set, const ZeroShotHead& head);

/// 100 min(acc_unlearn / acc_original, 1). Throws when acc_original is 0.
double normalized_score(double acc_unlearn, double acc_original);

struct ReportEntry {
    std::string name;
    double acc_unlearn = 0.0;
    double acc_original = 0.0;
    double normalized = 0.0;
    bool is_target = false;
};

/// Mean of (100 - target normalized) and every other entry's normalized score.
/// Exactly one entry must be the target.
double avg_score(const std::vector<ReportEntry>& entries);

struct MetricsReport {
    std::vector<ReportEntry> per_dataset;
    std::size_t target_entry_index = 0;
    double avg_score = 0.0;

    std::string to_json() const;
    /// Fixed-width table, accuracies as "acc_norm" with two decimals.
    std::string to_table() const;
};

/// Top-k gallery rows by <f(x), query>, descending, ties by ascending row.
std::vector<std::pair<std::size_t, double>> retrieval_topk(const LinearAdapter& adapter, const Eigen::VectorXd& query,
                                                           const EmbeddingMatrix& gallery, std::size_t k);

struct EvalDataset {
    std::string name;
    const LabeledDataset* set = nullptr;
    const ZeroShotHead* head = nullptr;
    bool is_target = false;
};

/// Evaluates both adapters on every dataset. Needs exactly one target and at
/// least one other dataset.
MetricsReport build_report(const std::vector<EvalDataset>& datasets, const LinearAdapter& original,
                           const LinearAdapter& unlearned);

// ---------------------------------------------------------------------------
// Published table arithmetic

struct FixtureCell {
    std::string column;
    double acc = 0.0;
    std::optional<double> printed_norm;
};

struct FixtureRow {
    std::string table;
    std::string backbone;
    std::string method;
    /// First cell is the target column.
    std::vector<FixtureCell> cells;
    std::optional<double> printed_avg;
};

/// Wide CSV: table, backbone, method, then <name>_acc / <name>_norm pairs, then
/// avg_score. The first pair is the target column. Rows named "Original" hold
/// the reference accuracies and leave norm/avg empty.
std::vector<FixtureRow> parse_table_fixture(std::string_view csv_text);

struct FixtureCheck {
    std::string table;
    std::string backbone;
    std::string method;
    std::string column; // dataset name or "avg_score"
    double recomputed = 0.0;
    double printed = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

/// Recomputes every printed subscript (tolerance norm_tol) and Avg. Score
/// (avg_tol) against the Original row of the same table and backbone.
std::vector<FixtureCheck> check_table_fixture(const std::vector<FixtureRow>& rows, double norm_tol = 0.01,
                                              double avg_tol = 0.02);

} // namespace cue
