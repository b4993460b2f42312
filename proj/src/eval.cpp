#include "cue/eval.hpp"

#include "cue/error.hpp"
#include "cue/io_util.hpp"
#include "cue/kernels.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>

namespace cue {

using json = nlohmann::ordered_json;

namespace {

std::string fixed2(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", x);
    return buf;
}

double parse_number(const std::string& s, const std::string& where) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size() || !std::isfinite(v)) {
            throw std::invalid_argument(s);
        }
        return v;
    } catch (const std::logic_error&) {
        throw ValidationError("fixture " + where + ": \"" + s + "\" is not a number");
    }
}

} // namespace

void ZeroShotHead::validate() const {
    if (class_texts.rows() == 0 || static_cast<std::size_t>(class_texts.rows()) != class_names.size()) {
        throw ValidationError("zero-shot head needs one name per class text");
    }
    for (Eigen::Index j = 0; j < class_texts.rows(); ++j) {
        if (std::abs(class_texts.row(j).norm() - 1.0) > 1e-6) {
            throw ValidationError("class text " + std::to_string(j) + " is not unit-norm");
        }
    }
    std::set<std::string> seen(class_names.begin(), class_names.end());
    if (seen.size() != class_names.size()) {
        throw ValidationError("class names must be unique");
    }
}

ZeroShotHead make_head(const EmbeddingMatrix& texts, std::vector<std::string> names) {
    ZeroShotHead head{texts.to_eigen(), std::move(names)};
    head.validate();
    return head;
}

std::vector<std::uint32_t> predict(const LinearAdapter& adapter, const EmbeddingMatrix& x, const ZeroShotHead& head) {
    adapter.validate();
    if (x.dim() != adapter.dim() || static_cast<std::size_t>(head.class_texts.cols()) != adapter.dim()) {
        throw ValidationError("adapter, embeddings and class texts must share one dim");
    }
    return par::predict_rows(adapter.weight, x, head.class_texts);
}

double zero_shot_accuracy(const LinearAdapter& adapter, const LabeledDataset& set, const ZeroShotHead& head) {
    for (std::size_t i = 0; i < set.labels.size(); ++i) {
        if (set.labels[i] >= head.size()) {
            throw ValidationError("row " + std::to_string(i) + ": label " + std::to_string(set.labels[i]) +
                                  " outside the " + std::to_string(head.size()) + "-class head");
        }
    }
    const auto pred = predict(adapter, set.embeddings, head);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        correct += pred[i] == set.labels[i] ? 1 : 0;
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(pred.size());
}

double normalized_score(double acc_unlearn, double acc_original) {
    if (!(acc_original > 0.0)) {
        throw ValidationError("normalized score undefined: original accuracy is " + format_double(acc_original));
    }
    return 100.0 * std::min(acc_unlearn / acc_original, 1.0);
}

double avg_score(const std::vector<ReportEntry>& entries) {
    const auto targets = std::count_if(entries.begin(), entries.end(), [](const ReportEntry& e) { return e.is_target; });
    if (targets != 1) {
        throw ValidationError("avg score needs exactly one target entry, found " + std::to_string(targets));
    }
    double sum = 0.0;
    for (const auto& e : entries) {
        sum += e.is_target ? 100.0 - e.normalized : e.normalized;
    }
    return sum / static_cast<double>(entries.size());
}

std::string MetricsReport::to_json() const {
    json doc;
    json rows = json::array();
    for (const auto& e : per_dataset) {
        rows.push_back({{"name", e.name},
                        {"is_target", e.is_target},
                        {"acc_unlearn", e.acc_unlearn},
                        {"acc_original", e.acc_original},
                        {"normalized", e.normalized}});
    }
    doc["per_dataset"] = rows;
    doc["target_entry_index"] = target_entry_index;
    doc["avg_score"] = avg_score;
    return doc.dump(2) + "\n";
}

std::string MetricsReport::to_table() const {
    std::size_t width = 7;
    for (const auto& e : per_dataset) {
        width = std::max(width, e.name.size());
    }
    std::string out;
    auto pad = [](std::string s, std::size_t w) {
        s.resize(std::max(s.size(), w), ' ');
        return s;
    };
    out += pad("dataset", width) + "  " + pad("original", 10) + "  " + pad("unlearned", 10) + "  normalized\n";
    for (const auto& e : per_dataset) {
        out += pad(e.name + (e.is_target ? "*" : ""), width) + "  " + pad(fixed2(e.acc_original), 10) + "  " +
               pad(fixed2(e.acc_unlearn) + "_" + fixed2(e.normalized), 10) + "  " + fixed2(e.normalized) + "\n";
    }
    out += "avg score " + fixed2(avg_score) + "   (* target: contributes 100 - normalized)\n";
    return out;
}

std::vector<std::pair<std::size_t, double>> retrieval_topk(const LinearAdapter& adapter, const Eigen::VectorXd& query,
                                                           const EmbeddingMatrix& gallery, std::size_t k) {
    adapter.validate();
    if (k == 0) {
        throw ValidationError("retrieval k must be at least 1");
    }
    if (gallery.dim() != adapter.dim() || static_cast<std::size_t>(query.size()) != adapter.dim()) {
        throw ValidationError("query, gallery and adapter must share one dim");
    }
    const auto sims = par::similarity_rows(adapter.weight, gallery, query);
    std::vector<std::size_t> idx(sims.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return sims[a] > sims[b]; });
    std::vector<std::pair<std::size_t, double>> out;
    for (std::size_t i = 0; i < idx.size() && i < k; ++i) {
        out.emplace_back(idx[i], sims[idx[i]]);
    }
    return out;
}

MetricsReport build_report(const std::vector<EvalDataset>& datasets, const LinearAdapter& original,
                           const LinearAdapter& unlearned) {
    MetricsReport report;
    std::size_t targets = 0;
    for (std::size_t i = 0; i < datasets.size(); ++i) {
        const auto& ds = datasets[i];
        if (!ds.set || !ds.head) {
            throw ValidationError("dataset \"" + ds.name + "\" is missing its samples or head");
        }
        ReportEntry e;
        e.name = ds.name;
        e.is_target = ds.is_target;
        e.acc_original = zero_shot_accuracy(original, *ds.set, *ds.head);
        e.acc_unlearn = zero_shot_accuracy(unlearned, *ds.set, *ds.head);
        try {
            e.normalized = normalized_score(e.acc_unlearn, e.acc_original);
        } catch (const ValidationError& err) {
            throw ValidationError("dataset \"" + ds.name + "\": " + err.what());
        }
        if (e.is_target) {
            report.target_entry_index = i;
            ++targets;
        }
        report.per_dataset.push_back(e);
    }
    if (targets != 1 || datasets.size() < 2) {
        throw ValidationError("report needs exactly one target dataset and at least one retained dataset");
    }
    report.avg_score = avg_score(report.per_dataset);
    return report;
}

std::vector<FixtureRow> parse_table_fixture(std::string_view csv_text) {
    const auto table = parse_csv(csv_text);
    if (table.empty()) {
        throw ValidationError("fixture is empty");
    }
    const auto& header = table.front();
    if (header.size() < 6 || header[0] != "table" || header[1] != "backbone" || header[2] != "method" ||
        header.back() != "avg_score" || (header.size() - 4) % 2 != 0) {
        throw ValidationError("fixture header must be table,backbone,method,<x>_acc,<x>_norm,...,avg_score");
    }
    std::vector<std::string> names;
    for (std::size_t c = 3; c + 1 < header.size(); c += 2) {
        const auto& a = header[c];
        const auto& n = header[c + 1];
        if (!a.ends_with("_acc") || !n.ends_with("_norm") || a.substr(0, a.size() - 4) != n.substr(0, n.size() - 5)) {
            throw ValidationError("fixture columns " + a + "/" + n + " are not an <x>_acc/<x>_norm pair");
        }
        names.push_back(a.substr(0, a.size() - 4));
    }

    std::vector<FixtureRow> rows;
    for (std::size_t r = 1; r < table.size(); ++r) {
        const auto& line = table[r];
        if (line.size() == 1 && line[0].empty()) {
            continue;
        }
        if (line.size() != header.size()) {
            throw ValidationError("fixture line " + std::to_string(r + 1) + " has " + std::to_string(line.size()) +
                                  " fields, expected " + std::to_string(header.size()));
        }
        FixtureRow row{line[0], line[1], line[2], {}, std::nullopt};
        const std::string where = "line " + std::to_string(r + 1);
        for (std::size_t k = 0; k < names.size(); ++k) {
            FixtureCell cell{names[k], parse_number(line[3 + 2 * k], where), std::nullopt};
            if (!line[4 + 2 * k].empty()) {
                cell.printed_norm = parse_number(line[4 + 2 * k], where);
            }
            row.cells.push_back(cell);
        }
        if (!line.back().empty()) {
            row.printed_avg = parse_number(line.back(), where);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<FixtureCheck> check_table_fixture(const std::vector<FixtureRow>& rows, double norm_tol, double avg_tol) {
    // Printed values carry two decimals; the tiny extra margin only absorbs
    // binary representation error of the tolerance itself.
    constexpr double kRepr = 1e-9;
    std::map<std::pair<std::string, std::string>, const FixtureRow*> originals;
    for (const auto& r : rows) {
        if (r.method == "Original") {
            originals[{r.table, r.backbone}] = &r;
        }
    }
    std::vector<FixtureCheck> out;
    for (const auto& r : rows) {
        if (r.method == "Original") {
            continue;
        }
        const auto it = originals.find({r.table, r.backbone});
        if (it == originals.end()) {
            throw ValidationError("fixture has no Original row for " + r.table + "/" + r.backbone);
        }
        const auto& ref = *it->second;
        std::vector<ReportEntry> entries;
        for (std::size_t k = 0; k < r.cells.size(); ++k) {
            ReportEntry e{r.cells[k].column, r.cells[k].acc, ref.cells[k].acc, 0.0, k == 0};
            e.normalized = normalized_score(e.acc_unlearn, e.acc_original);
            entries.push_back(e);
            if (r.cells[k].printed_norm) {
                const double printed = *r.cells[k].printed_norm;
                out.push_back({r.table, r.backbone, r.method, e.name, e.normalized, printed, norm_tol,
                               std::abs(e.normalized - printed) <= norm_tol + kRepr});
            }
        }
        if (r.printed_avg) {
            const double avg = avg_score(entries);
            out.push_back({r.table, r.backbone, r.method, "avg_score", avg, *r.printed_avg, avg_tol,
                           std::abs(avg - *r.printed_avg) <= avg_tol + kRepr});
        }
    }
    return out;
}

} // namespace cue
