#include "commands.hpp"

#include "cue/alignment.hpp"
#include "cue/decomposition.hpp"
#include "cue/embedding_store.hpp"
#include "cue/error.hpp"
#include "cue/eval.hpp"
#include "cue/io_util.hpp"
#include "cue/omp.hpp"
#include "cue/selectivity.hpp"
#include "cue/unlearning.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <ctime>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

namespace cue::cli {

namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Option tables

enum class Kind { u64, f64, str, flag, f64_list, str_list };

struct OptSpec {
    std::string key;
    Kind kind;
    json def;
    std::string help;
};

std::string flag_name(const std::string& key) {
    std::string s = "--" + key;
    for (auto& c : s) {
        if (c == '_') {
            c = '-';
        }
    }
    return s;
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(text);
    while (std::getline(in, cur, ',')) {
        const auto b = cur.find_first_not_of(" \t");
        const auto e = cur.find_last_not_of(" \t");
        out.push_back(b == std::string::npos ? "" : cur.substr(b, e - b + 1));
    }
    return out;
}

double parse_f64(const std::string& key, const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::logic_error&) {
        used = 0;
    }
    if (s.empty() || used != s.size() || !std::isfinite(v)) {
        throw ValidationError(key + ": \"" + s + "\" is not a finite number");
    }
    return v;
}

json parse_raw(const OptSpec& spec, const std::string& s) {
    switch (spec.kind) {
    case Kind::u64: {
        if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
            throw ValidationError(spec.key + ": \"" + s + "\" is not a nonnegative integer");
        }
        try {
            return json(static_cast<std::uint64_t>(std::stoull(s)));
        } catch (const std::out_of_range&) {
            throw ValidationError(spec.key + ": \"" + s + "\" is out of range");
        }
    }
    case Kind::f64:
        return json(parse_f64(spec.key, s));
    case Kind::str:
        return json(s);
    case Kind::flag:
        return json(true);
    case Kind::f64_list: {
        json a = json::array();
        for (const auto& item : split_list(s)) {
            a.push_back(parse_f64(spec.key, item));
        }
        return a;
    }
    case Kind::str_list: {
        json a = json::array();
        for (const auto& item : split_list(s)) {
            if (!item.empty()) {
                a.push_back(item);
            }
        }
        return a;
    }
    }
    return {};
}

void check_config_type(const OptSpec& spec, const json& v) {
    bool ok = false;
    switch (spec.kind) {
    case Kind::u64:
        ok = v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
        break;
    case Kind::f64:
        ok = v.is_number();
        break;
    case Kind::str:
        ok = v.is_string();
        break;
    case Kind::flag:
        ok = v.is_boolean();
        break;
    case Kind::f64_list:
        ok = v.is_array() && std::all_of(v.begin(), v.end(), [](const json& x) { return x.is_number(); });
        break;
    case Kind::str_list:
        ok = v.is_array() && std::all_of(v.begin(), v.end(), [](const json& x) { return x.is_string(); });
        break;
    }
    if (!ok) {
        throw ValidationError("config key \"" + spec.key + "\" has the wrong type");
    }
}

const std::vector<OptSpec>& global_specs() {
    static const std::vector<OptSpec> specs{
        {"config", Kind::str, "", "JSON config file; keys mirror the long option names with underscores"},
        {"seed", Kind::u64, 7, "random seed"},
        {"out", Kind::str, "out", "output directory"},
        {"threads", Kind::u64, 0, "worker threads (0 = OpenMP default)"},
        {"quiet", Kind::flag, false, "suppress progress output"},
    };
    return specs;
}

const std::vector<OptSpec> kSolverSpecs{
    {"lambda_dec", Kind::f64, 0.35, "l1 weight of the decomposition"},
    {"max_sweeps", Kind::u64, 1000, "coordinate descent sweep cap"},
    {"kkt_tol", Kind::f64, 1e-6, "KKT residual that counts as converged"},
    {"objective_tol", Kind::f64, 1e-14, "relative per-sweep decrease below which the solver stops"},
    {"warm_start", Kind::flag, false, "seed each sample with the previous solution"},
};

const std::vector<OptSpec> kStatsSpecs{
    {"data", Kind::str, "data", "directory written by `cue gen` (or the same layout)"},
    {"stats", Kind::str, "",
     "2-row EMB1 with mu_img and mu_con; empty = estimate over forget+retain images and vocabulary concepts"},
};

const std::vector<OptSpec> kTrainSpecs{
    {"targets", Kind::str_list, json::array(), "concepts to forget; empty = the forget split's class names"},
    {"lambda_forget", Kind::f64, 0.5, "weight of the forget term"},
    {"lambda_intra", Kind::f64, 95.0, "weight of the intra-instance term"},
    {"lambda_global", Kind::f64, 0.075, "weight of the global term"},
    {"tau", Kind::f64, 0.01, "softmax temperature"},
    {"preset", Kind::str, "desk", "training defaults: desk (lr 1e-3, 50 epochs, batch 32) or published (1e-6, 5, 192)"},
    {"epochs", Kind::u64, 50, "training epochs"},
    {"batch_size", Kind::u64, 32, "mini-batch size per split"},
    {"learning_rate", Kind::f64, 1e-3, "AdamW learning rate"},
    {"weight_decay", Kind::f64, 0.1, "decoupled weight decay"},
    {"grad_clip_norm", Kind::f64, 1.0, "global gradient norm cap"},
    {"beta1", Kind::f64, 0.9, "first-moment decay"},
    {"beta2", Kind::f64, 0.999, "second-moment decay"},
    {"eps_opt", Kind::f64, 1e-8, "AdamW epsilon"},
};

std::vector<OptSpec> concat(std::initializer_list<std::vector<OptSpec>> parts) {
    std::vector<OptSpec> out;
    for (const auto& p : parts) {
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Run context

struct Run {
    std::string command;
    json cfg;
    std::set<std::string> given;
    fs::path out;
    bool quiet = false;
    std::ostream& log;
    json inputs = json::object();
    std::vector<std::pair<std::string, std::vector<std::uint8_t>>> staged;
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

    Run(std::string cmd, std::ostream& o) : command(std::move(cmd)), log(o) {}

    double f64(const std::string& k) const { return cfg.at(k).get<double>(); }
    std::uint64_t u64(const std::string& k) const { return cfg.at(k).get<std::uint64_t>(); }
    std::string str(const std::string& k) const { return cfg.at(k).get<std::string>(); }
    bool flag(const std::string& k) const { return cfg.at(k).get<bool>(); }

    void input(const fs::path& p) { inputs[p.string()] = sha256_file(p); }

    void stage(const std::string& name, std::vector<std::uint8_t> bytes) { staged.emplace_back(name, std::move(bytes)); }
    void stage(const std::string& name, const std::string& text) {
        staged.emplace_back(name, std::vector<std::uint8_t>(text.begin(), text.end()));
    }

    void say(const std::string& line) const {
        if (!quiet) {
            log << line << "\n";
        }
    }

    /// Writes every staged output, then the manifest. Nothing touches the
    /// output directory before this point.
    void commit(json extra = json::object()) {
        std::error_code ec;
        fs::create_directories(out, ec);
        if (ec) {
            throw IoError("cannot create output directory " + out.string() + ": " + ec.message());
        }
        json outputs = json::object();
        std::string digest_input;
        for (const auto& [name, bytes] : staged) {
            write_file_atomic(out / name, bytes);
            outputs[name] = sha256_hex(bytes);
            digest_input += name + " " + outputs[name].get<std::string>() + "\n";
        }
        const std::string digest = sha256_hex(std::span<const std::uint8_t>(
            reinterpret_cast<const std::uint8_t*>(digest_input.data()), digest_input.size()));

        json manifest;
        manifest["tool"] = "cue";
        manifest["version"] = kVersion;
        manifest["command"] = command;
        manifest["config"] = cfg;
        manifest["inputs"] = inputs;
        manifest["outputs"] = outputs;
        manifest["outputs_digest"] = digest;
        for (auto& [k, v] : extra.items()) {
            manifest[k] = v;
        }
        const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        char stamp[32];
        std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
        manifest["wall_clock"] = {
            {"finished_at", stamp},
            {"seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}};
        write_file_atomic(out / "manifest.json", manifest.dump(2) + "\n");
        say("outputs sha256 " + digest);
    }
};

// ---------------------------------------------------------------------------
// Shared loading

struct DataDir {
    fs::path root;
    fs::path file(const char* name) const { return root / name; }
};

ConceptVocabulary load_vocab(Run& run, const DataDir& dd) {
    const auto meta = dd.file("vocab.json");
    const auto emb = dd.file("concepts.emb1");
    auto v = load_vocabulary(meta, emb);
    run.input(meta);
    run.input(emb);
    return v;
}

LabeledDataset load_split(Run& run, const DataDir& dd, const std::string& split) {
    const auto emb = dd.root / (split + ".emb1");
    const auto labels = dd.root / (split + ".labels.json");
    auto set = load_dataset(emb, labels);
    run.input(emb);
    run.input(labels);
    return set;
}

EmbeddingMatrix load_tracked(Run& run, const fs::path& p) {
    auto m = load_embeddings(p);
    run.input(p);
    return m;
}

struct Corpus {
    ConceptVocabulary vocab;
    LabeledDataset forget;
    LabeledDataset retain;
    EmbeddingMatrix class_texts;
};

Corpus load_corpus(Run& run) {
    const DataDir dd{run.str("data")};
    auto vocab = load_vocab(run, dd);
    auto forget = load_split(run, dd, "forget");
    auto retain = load_split(run, dd, "retain");
    auto texts = load_tracked(run, dd.file("class_texts.emb1"));
    return Corpus{std::move(vocab), std::move(forget), std::move(retain), std::move(texts)};
}

/// Stats from --stats, or estimated over every image and concept in the corpus.
std::pair<ModalityStats, std::string> resolve_stats(Run& run, const Corpus& c, const ConceptVocabulary& vocab) {
    const auto path = run.str("stats");
    if (!path.empty()) {
        auto s = load_stats(path);
        run.input(path);
        return {s, "file"};
    }
    return {estimate_means(concat_rows(c.forget.embeddings, c.retain.embeddings), vocab.embeddings()),
            "estimated: forget+retain images, vocabulary concepts"};
}

SolverConfig solver_config(const Run& run) {
    SolverConfig cfg;
    cfg.lambda_dec = run.f64("lambda_dec");
    cfg.max_sweeps = run.u64("max_sweeps");
    cfg.kkt_tol = run.f64("kkt_tol");
    cfg.objective_tol = run.f64("objective_tol");
    cfg.warm_start = run.flag("warm_start");
    cfg.validate();
    return cfg;
}

LossWeights loss_weights(const Run& run) {
    LossWeights w;
    w.lambda_forget = run.f64("lambda_forget");
    w.lambda_intra = run.f64("lambda_intra");
    w.lambda_global = run.f64("lambda_global");
    w.tau = run.f64("tau");
    w.validate();
    return w;
}

TrainConfig train_config(Run& run) {
    const auto preset = run.str("preset");
    if (preset != "desk" && preset != "published") {
        throw ValidationError("preset must be desk or published, got \"" + preset + "\"");
    }
    TrainConfig cfg = preset == "published" ? TrainConfig::published_preset() : TrainConfig{};
    // Preset values stand unless the key was set explicitly.
    auto pick_u = [&](const char* k, std::size_t& slot) {
        if (preset == "desk" || run.given.count(k)) {
            slot = run.u64(k);
        } else {
            run.cfg[k] = slot;
        }
    };
    auto pick_f = [&](const char* k, double& slot) {
        if (preset == "desk" || run.given.count(k)) {
            slot = run.f64(k);
        } else {
            run.cfg[k] = slot;
        }
    };
    pick_u("epochs", cfg.epochs);
    pick_u("batch_size", cfg.batch_size);
    pick_f("learning_rate", cfg.learning_rate);
    cfg.weight_decay = run.f64("weight_decay");
    cfg.grad_clip_norm = run.f64("grad_clip_norm");
    cfg.beta1 = run.f64("beta1");
    cfg.beta2 = run.f64("beta2");
    cfg.eps_opt = run.f64("eps_opt");
    cfg.seed = run.u64("seed");
    cfg.validate();
    return cfg;
}

std::vector<std::string> resolve_targets(const Run& run, const LabeledDataset& forget) {
    auto targets = run.cfg.at("targets").get<std::vector<std::string>>();
    if (targets.empty()) {
        std::set<std::uint32_t> seen;
        for (auto y : forget.labels) {
            if (seen.insert(y).second) {
                targets.push_back(forget.class_names[y]);
            }
        }
    }
    return targets;
}

std::vector<std::string> names_of(const ConceptMask& mask) { return mask.masked_names; }

json weights_json(const LossWeights& w) {
    return {{"lambda_forget", w.lambda_forget}, {"lambda_intra", w.lambda_intra},
            {"lambda_global", w.lambda_global}, {"tau", w.tau}};
}

std::string loss_log_csv(const std::vector<EpochLog>& log) {
    CsvWriter csv({"epoch", "steps", "forget", "intra", "global", "total", "mean_grad_norm"});
    for (const auto& e : log) {
        csv.field(static_cast<std::uint64_t>(e.epoch))
            .field(static_cast<std::uint64_t>(e.steps))
            .field(e.loss.forget)
            .field(e.loss.intra)
            .field(e.loss.global_)
            .field(e.loss.total)
            .field(e.mean_grad_norm);
        csv.end_row();
    }
    return csv.str();
}

json log_json(const std::vector<EpochLog>& log) {
    json a = json::array();
    for (const auto& e : log) {
        a.push_back({{"epoch", e.epoch},
                     {"forget", e.loss.forget},
                     {"intra", e.loss.intra},
                     {"global", e.loss.global_},
                     {"total", e.loss.total}});
    }
    return a;
}

MetricsReport evaluate(const Corpus& c, const LinearAdapter& original, const LinearAdapter& unlearned) {
    const ZeroShotHead head = make_head(c.class_texts, c.forget.class_names);
    return build_report({{"target", &c.forget, &head, true}, {"retain", &c.retain, &head, false}}, original,
                        unlearned);
}

// ---------------------------------------------------------------------------
// Commands

const std::vector<OptSpec> kGenSpecs{
    {"dim", Kind::u64, 64, "embedding dimension"},
    {"n_concepts", Kind::u64, 20, "vocabulary size"},
    {"n_classes", Kind::u64, 5, "classes; class 0 is the forget split"},
    {"samples_per_class", Kind::u64, 200, "images per class"},
    {"mode", Kind::str, "orthogonal", "atom layout: orthogonal or coherent"},
    {"max_pairwise_cosine", Kind::f64, 0.0, "pairwise atom cosine in coherent mode"},
    {"noise_scale", Kind::f64, 0.05, "isotropic noise standard deviation"},
};

int cmd_gen(Run& run) {
    SyntheticSpec spec;
    spec.seed = run.u64("seed");
    spec.dim = run.u64("dim");
    spec.n_concepts = run.u64("n_concepts");
    spec.n_classes = run.u64("n_classes");
    spec.samples_per_class = run.u64("samples_per_class");
    const auto mode = run.str("mode");
    if (mode == "orthogonal") {
        spec.mode = AtomMode::orthogonal;
    } else if (mode == "coherent") {
        spec.mode = AtomMode::coherent;
    } else {
        throw ValidationError("mode must be orthogonal or coherent, got \"" + mode + "\"");
    }
    spec.max_pairwise_cosine = run.f64("max_pairwise_cosine");
    spec.noise_scale = run.f64("noise_scale");
    spec.validate();

    const auto data = gen_synthetic(spec);
    run.stage("vocab.json", encode_vocabulary_json(data.vocab));
    run.stage("concepts.emb1", encode_emb1(data.vocab.embeddings()));
    run.stage("forget.emb1", encode_emb1(data.forget.embeddings));
    run.stage("forget.labels.json", encode_labels_json(data.forget));
    run.stage("retain.emb1", encode_emb1(data.retain.embeddings));
    run.stage("retain.labels.json", encode_labels_json(data.retain));
    run.stage("class_texts.emb1", encode_emb1(data.class_texts));
    run.stage("forget_truth.emb1", encode_emb1(EmbeddingMatrix::from_eigen(data.forget_truth)));
    run.stage("retain_truth.emb1", encode_emb1(EmbeddingMatrix::from_eigen(data.retain_truth)));
    run.stage("stats.emb1", encode_emb1(stats_to_matrix(ModalityStats{data.mu_img, data.mu_con})));
    run.say("gen: " + std::to_string(data.forget.size()) + " forget rows, " + std::to_string(data.retain.size()) +
            " retain rows, " + std::to_string(data.vocab.size()) + " concepts, dim " + std::to_string(spec.dim));
    run.commit();
    return 0;
}

const std::vector<OptSpec> kDecomposeSpecs = concat({
    kStatsSpecs,
    kSolverSpecs,
    {{"top_k", Kind::u64, 0, "also write the top-k concepts of every sample (0 = off)"}},
});

int cmd_decompose(Run& run) {
    const auto cfg = solver_config(run);
    const auto corpus = load_corpus(run);
    const auto [stats, stats_source] = resolve_stats(run, corpus, corpus.vocab);
    const auto dict = build_dictionary(corpus.vocab, stats);

    CsvWriter solver({"split", "row", "objective", "kkt_residual", "sweeps", "converged", "support_size"});
    CsvWriter topk({"split", "row", "rank", "concept", "weight"});
    const std::size_t k = run.u64("top_k");
    std::size_t converged = 0, total = 0, support = 0;
    json per_split = json::object();
    for (const auto* set : {&corpus.forget, &corpus.retain}) {
        const std::string split(to_string(set->split));
        const auto batch = decompose_batch(*set, stats, dict, cfg);
        std::size_t split_converged = 0;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const auto& w = batch[i];
            solver.field(split)
                .field(static_cast<std::uint64_t>(i))
                .field(w.objective)
                .field(w.kkt_residual)
                .field(static_cast<std::uint64_t>(w.sweeps_used))
                .field(w.converged)
                .field(static_cast<std::uint64_t>(w.support.size()));
            solver.end_row();
            split_converged += w.converged ? 1 : 0;
            support += w.support.size();
            if (k > 0) {
                const auto top = top_k_concepts(w.values, corpus.vocab, k);
                for (std::size_t r = 0; r < top.size(); ++r) {
                    topk.field(split)
                        .field(static_cast<std::uint64_t>(i))
                        .field(static_cast<std::uint64_t>(r + 1))
                        .field(top[r].first)
                        .field(top[r].second);
                    topk.end_row();
                }
            }
        }
        converged += split_converged;
        total += batch.size();
        per_split[split] = {{"rows", batch.size()}, {"converged", split_converged}};
        run.stage(split + "_weights.emb1", encode_emb1(EmbeddingMatrix::from_eigen(weights_matrix(batch))));
    }
    run.stage("stats.emb1", encode_emb1(stats_to_matrix(stats)));
    run.stage("solver.csv", solver.str());
    if (k > 0) {
        run.stage("topk.csv", topk.str());
    }
    const double mean_support = static_cast<double>(support) / static_cast<double>(total);
    run.say("decompose: " + std::to_string(converged) + "/" + std::to_string(total) + " converged, mean support " +
            format_double(mean_support));
    if (converged < total) {
        run.say("decompose: warning: " + std::to_string(total - converged) +
                " samples hit max_sweeps before the KKT tolerance (see solver.csv)");
    }
    run.commit({{"stats_source", stats_source}, {"splits", per_split}, {"mean_support", mean_support}});
    return 0;
}

const std::vector<OptSpec> kUnlearnSpecs = concat({
    {{"data", Kind::str, "data", "directory written by `cue gen` (or the same layout)"},
     {"decomposition", Kind::str, "", "directory holding forget_weights.emb1 and stats.emb1 (default: --out)"}},
    kTrainSpecs,
});

int cmd_unlearn(Run& run) {
    const auto weights = loss_weights(run);
    const auto train = train_config(run);
    const DataDir dd{run.str("data")};
    auto vocab = load_vocab(run, dd);
    auto forget = load_split(run, dd, "forget");
    auto retain = load_split(run, dd, "retain");
    auto texts = load_tracked(run, dd.file("class_texts.emb1"));
    const fs::path dec = run.str("decomposition").empty() ? run.out : fs::path(run.str("decomposition"));
    const auto stats = stats_from_matrix(load_tracked(run, dec / "stats.emb1"));
    const auto w = load_tracked(run, dec / "forget_weights.emb1").to_eigen();

    const auto targets = resolve_targets(run, forget);
    run.cfg["targets"] = targets;
    const auto mask = build_mask(vocab, targets);
    const auto dict = build_dictionary(vocab, stats);
    const auto result = run_unlearning(forget, w, mask, retain, dict, stats, texts, weights, train);

    run.stage("adapter.emb1", encode_emb1(EmbeddingMatrix::from_eigen(result.adapter.weight)));
    run.stage("loss_log.csv", loss_log_csv(result.log));
    if (!result.log.empty()) {
        run.say("unlearn: total loss " + format_double(result.log.front().loss.total) + " (epoch 1) -> " +
                format_double(result.log.back().loss.total) + " (epoch " + std::to_string(result.log.size()) + ")");
    } else {
        run.say("unlearn: 0 epochs, identity adapter");
    }
    run.commit({{"masked_concepts", names_of(mask)}, {"loss_weights", weights_json(weights)},
                {"epochs", log_json(result.log)}});
    return 0;
}

const std::vector<OptSpec> kEvalSpecs{
    {"data", Kind::str, "data", "directory written by `cue gen` (or the same layout)"},
    {"adapter", Kind::str, "", "unlearned adapter (default: <out>/adapter.emb1)"},
    {"original", Kind::str, "", "original adapter (default: identity)"},
    {"retrieval_k", Kind::u64, 10, "rank-list length per class query"},
    {"fixture", Kind::str, "", "check published table arithmetic from this CSV instead of evaluating adapters"},
};

int eval_fixture(Run& run, const fs::path& path) {
    const auto rows = parse_table_fixture(read_file_text(path));
    run.input(path);
    const auto checks = check_table_fixture(rows);
    CsvWriter csv({"table", "backbone", "method", "column", "recomputed", "printed", "tolerance", "pass"});
    std::size_t failed = 0;
    for (const auto& c : checks) {
        csv.field(c.table)
            .field(c.backbone)
            .field(c.method)
            .field(c.column)
            .field(c.recomputed)
            .field(c.printed)
            .field(c.tolerance)
            .field(c.pass);
        csv.end_row();
        if (!c.pass) {
            ++failed;
            char buf[256];
            std::snprintf(buf, sizeof buf, "  mismatch %s/%s/%s %s: recomputed %.4f printed %.2f", c.table.c_str(),
                          c.backbone.c_str(), c.method.c_str(), c.column.c_str(), c.recomputed, c.printed);
            run.say(buf);
        }
    }
    run.stage("fixture_check.csv", csv.str());
    run.say("eval: fixture " + std::to_string(checks.size()) + " checks, " + std::to_string(failed) + " mismatches");
    run.commit({{"fixture_checks", checks.size()}, {"fixture_mismatches", failed}});
    return 0;
}

int cmd_eval(Run& run) {
    if (!run.str("fixture").empty()) {
        return eval_fixture(run, run.str("fixture"));
    }
    const std::size_t k = run.u64("retrieval_k");
    if (k == 0) {
        throw ValidationError("retrieval_k must be at least 1");
    }
    const auto corpus = load_corpus(run);
    const fs::path adapter_path = run.str("adapter").empty() ? run.out / "adapter.emb1" : fs::path(run.str("adapter"));
    const auto unlearned = load_adapter(adapter_path);
    run.input(adapter_path);
    LinearAdapter original = LinearAdapter::identity(corpus.forget.embeddings.dim());
    if (!run.str("original").empty()) {
        original = load_adapter(run.str("original"));
        run.input(run.str("original"));
    }
    const auto report = evaluate(corpus, original, unlearned);

    const auto gallery = concat_rows(corpus.forget.embeddings, corpus.retain.embeddings);
    CsvWriter csv({"model", "query_class", "rank", "row", "split", "label", "similarity"});
    const auto texts = corpus.class_texts.to_eigen();
    for (const auto& [model, adapter] : {std::pair<const char*, const LinearAdapter*>{"original", &original},
                                      std::pair<const char*, const LinearAdapter*>{"unlearned", &unlearned}}) {
        for (Eigen::Index y = 0; y < texts.rows(); ++y) {
            const auto ranked = retrieval_topk(*adapter, texts.row(y).transpose(), gallery, k);
            for (std::size_t r = 0; r < ranked.size(); ++r) {
                const auto row = ranked[r].first;
                const bool in_forget = row < corpus.forget.size();
                const auto label = in_forget ? corpus.forget.labels[row] : corpus.retain.labels[row - corpus.forget.size()];
                csv.field(std::string_view(model))
                    .field(corpus.forget.class_names[static_cast<std::size_t>(y)])
                    .field(static_cast<std::uint64_t>(r + 1))
                    .field(static_cast<std::uint64_t>(row))
                    .field(std::string_view(in_forget ? "forget" : "retain"))
                    .field(corpus.forget.class_names[label])
                    .field(ranked[r].second);
                csv.end_row();
            }
        }
    }
    run.stage("report.json", report.to_json());
    run.stage("report.txt", report.to_table());
    run.stage("retrieval.csv", csv.str());
    if (!run.quiet) {
        run.log << report.to_table();
    }
    run.commit();
    return 0;
}

const std::vector<OptSpec> kTheoremSpecs{
    {"instances", Kind::u64, 1000, "random instances"},
    {"dim", Kind::u64, 16, "ambient dimension"},
    {"n_target", Kind::u64, 3, "target atoms per instance"},
    {"n_retain", Kind::u64, 8, "retained atoms per instance"},
};

int cmd_verify_theorem(Run& run) {
    const std::size_t n = run.u64("instances");
    const std::size_t d = run.u64("dim");
    const std::size_t nT = run.u64("n_target");
    const std::size_t nR = run.u64("n_retain");
    if (nT == 0) {
        throw ValidationError("n_target must be at least 1");
    }
    if (d < 2) {
        throw ValidationError("dim must be at least 2");
    }
    const std::uint64_t seed = run.u64("seed");

    struct Row {
        std::string kind;
        std::size_t index;
        BoundsReport r;
    };
    std::vector<Row> rows;
    const auto random = check_random_instances(seed, n, d, nT, nR);
    for (std::size_t i = 0; i < random.size(); ++i) {
        rows.push_back({"random", i, random[i]});
    }
    std::size_t idx = 0;
    for (double alpha : {1.0, 0.5, 0.0}) {
        rows.push_back({"equality", idx, check_instance(equality_instance(seed + idx, d, nT, nR, alpha))});
        ++idx;
    }
    if (nR >= 1 && nT + nR <= d) {
        rows.push_back({"orthonormal", 0, check_instance(orthonormal_instance(seed, d, nT, nR))});
    }

    CsvWriter csv({"kind", "index", "in_hypothesis", "drop", "drop_bound", "retain_change", "retain_bound", "leakage",
                   "leakage_bound", "identity_error", "equality_gap", "all_hold"});
    std::size_t violations = 0, outside = 0;
    double max_identity = 0.0, max_gap = 0.0;
    for (const auto& row : rows) {
        const auto& r = row.r;
        csv.field(row.kind)
            .field(static_cast<std::uint64_t>(row.index))
            .field(r.in_hypothesis)
            .field(r.drop)
            .field(r.drop_bound)
            .field(r.retain_change)
            .field(r.retain_bound)
            .field(r.leakage)
            .field(r.leakage_bound)
            .field(r.identity_error)
            .field(r.drop - r.drop_bound)
            .field(r.all_hold);
        csv.end_row();
        violations += r.all_hold && r.identity_error <= 1e-12 ? 0 : 1;
        outside += r.in_hypothesis ? 0 : 1;
        max_identity = std::max(max_identity, r.identity_error);
        if (row.kind == "equality") {
            max_gap = std::max(max_gap, std::abs(r.drop - r.drop_bound));
        }
    }
    run.stage("theorem.csv", csv.str());
    char summary[256];
    std::snprintf(summary, sizeof summary,
                  "verify-theorem: %zu instances, %zu violations, %zu outside alpha >= 0, max identity error %.3g, "
                  "max equality gap %.3g",
                  rows.size(), violations, outside, max_identity, max_gap);
    run.log << summary << "\n";
    run.commit({{"instances", rows.size()}, {"violations", violations}, {"max_identity_error", max_identity}});
    return violations == 0 ? 0 : 1;
}

const std::vector<OptSpec> kSweepSpecs = concat({
    {{"param", Kind::str, "lambda_dec",
      "swept parameter: lambda_dec, lambda_forget, lambda_intra, lambda_global or vocab_size"},
     {"values", Kind::f64_list, json::array({0.1, 0.35, 0.7, 1.4}), "comma-separated grid"}},
    kStatsSpecs,
    kSolverSpecs,
    kTrainSpecs,
});

int cmd_sweep(Run& run) {
    const auto param = run.str("param");
    const std::set<std::string> known{"lambda_dec", "lambda_forget", "lambda_intra", "lambda_global", "vocab_size"};
    if (!known.count(param)) {
        throw ValidationError("unknown sweep parameter \"" + param + "\"");
    }
    const auto values = run.cfg.at("values").get<std::vector<double>>();
    if (values.empty()) {
        throw ValidationError("sweep needs at least one value");
    }
    const auto base_solver = solver_config(run);
    const auto base_weights = loss_weights(run);
    const auto train = train_config(run);
    const auto corpus = load_corpus(run);
    const auto targets = resolve_targets(run, corpus.forget);
    run.cfg["targets"] = targets;

    CsvWriter csv({"param", "value", "mean_support", "converged_fraction", "target_acc_original",
                   "target_acc_unlearn", "target_normalized", "retain_acc_original", "retain_acc_unlearn",
                   "retain_normalized", "avg_score"});
    for (double value : values) {
        SolverConfig solver = base_solver;
        LossWeights weights = base_weights;
        std::optional<ConceptVocabulary> vocab;
        if (param == "vocab_size") {
            if (value < 1.0 || value != std::floor(value)) {
                throw ValidationError("vocab_size values must be positive integers");
            }
            vocab = corpus.vocab.prefix(static_cast<std::size_t>(value));
        } else {
            vocab = corpus.vocab;
            if (param == "lambda_dec") solver.lambda_dec = value;
            if (param == "lambda_forget") weights.lambda_forget = value;
            if (param == "lambda_intra") weights.lambda_intra = value;
            if (param == "lambda_global") weights.lambda_global = value;
        }
        solver.validate();
        weights.validate();
        const auto stats = resolve_stats(run, corpus, *vocab).first;
        const auto dict = build_dictionary(*vocab, stats);
        const auto batch = decompose_batch(corpus.forget, stats, dict, solver);
        std::size_t support = 0, converged = 0;
        for (const auto& w : batch) {
            support += w.support.size();
            converged += w.converged ? 1 : 0;
        }
        const auto mask = build_mask(*vocab, targets);
        const auto result = run_unlearning(corpus.forget, weights_matrix(batch), mask, corpus.retain, dict, stats,
                                           corpus.class_texts, weights, train);
        const auto report = evaluate(corpus, LinearAdapter::identity(stats.dim()), result.adapter);
        const auto& t = report.per_dataset[0];
        const auto& r = report.per_dataset[1];
        csv.field(param)
            .field(value)
            .field(static_cast<double>(support) / static_cast<double>(batch.size()))
            .field(static_cast<double>(converged) / static_cast<double>(batch.size()))
            .field(t.acc_original)
            .field(t.acc_unlearn)
            .field(t.normalized)
            .field(r.acc_original)
            .field(r.acc_unlearn)
            .field(r.normalized)
            .field(report.avg_score);
        csv.end_row();
        run.say("sweep: " + param + " = " + format_double(value) + " done");
    }
    run.stage("sweep.csv", csv.str());
    run.commit();
    return 0;
}

struct CommandDef {
    const char* name;
    const char* help;
    const std::vector<OptSpec>* specs;
    int (*fn)(Run&);
};

const std::vector<CommandDef>& commands() {
    static const std::vector<CommandDef> defs{
        {"gen", "write a synthetic corpus with ground truth", &kGenSpecs, cmd_gen},
        {"decompose", "sparse nonnegative concept decomposition of every image", &kDecomposeSpecs, cmd_decompose},
        {"unlearn", "train the linear adapter to forget the target concepts", &kUnlearnSpecs, cmd_unlearn},
        {"eval", "zero-shot report, retrieval lists, or table-fixture arithmetic", &kEvalSpecs, cmd_eval},
        {"verify-theorem", "check the selectivity bounds on random and constructed instances", &kTheoremSpecs,
         cmd_verify_theorem},
        {"sweep", "ablation grid over one hyperparameter", &kSweepSpecs, cmd_sweep},
    };
    return defs;
}

json resolve(const std::vector<OptSpec>& specs, const std::map<std::string, CLI::Option*>& opts,
             const std::map<std::string, std::string>& raw, std::set<std::string>& given) {
    json cfg = json::object();
    std::map<std::string, const OptSpec*> by_key;
    for (const auto& s : specs) {
        cfg[s.key] = s.def;
        by_key[s.key] = &s;
    }
    const auto config_opt = opts.at("config");
    if (config_opt->count() > 0) {
        const auto path = raw.at("config");
        json file;
        try {
            file = json::parse(read_file_text(path));
        } catch (const json::parse_error& e) {
            throw ValidationError(path + ": malformed JSON: " + e.what());
        }
        if (!file.is_object()) {
            throw ValidationError(path + ": config must be a JSON object");
        }
        for (auto& [k, v] : file.items()) {
            const auto it = by_key.find(k);
            if (it == by_key.end() || k == "config") {
                throw ValidationError(path + ": unknown config key \"" + k + "\"");
            }
            check_config_type(*it->second, v);
            cfg[k] = v;
            given.insert(k);
        }
    }
    for (const auto& s : specs) {
        const auto* o = opts.at(s.key);
        if (o->count() > 0) {
            cfg[s.key] = parse_raw(s, s.kind == Kind::flag ? "" : raw.at(s.key));
            given.insert(s.key);
        }
    }
    return cfg;
}

} // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"cue: concept-level unlearning over frozen embeddings"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    std::map<std::string, std::string> raw;
    std::map<std::string, CLI::Option*> global_opts;
    auto add = [&](CLI::App* target, const OptSpec& s, std::map<std::string, CLI::Option*>& into) {
        std::string help = s.help;
        if (s.kind != Kind::flag && !(s.def.is_string() && s.def.get<std::string>().empty())) {
            help += " [" + (s.def.is_string() ? s.def.get<std::string>() : s.def.dump()) + "]";
        }
        into[s.key] = s.kind == Kind::flag ? target->add_flag(flag_name(s.key))->description(help)
                                           : target->add_option(flag_name(s.key), raw[s.key], help);
    };
    for (const auto& s : global_specs()) {
        add(&app, s, global_opts);
    }

    struct Sub {
        const CommandDef* def;
        CLI::App* app;
        std::map<std::string, CLI::Option*> opts;
    };
    std::vector<Sub> subs;
    subs.reserve(commands().size());
    for (const auto& def : commands()) {
        Sub sub{&def, app.add_subcommand(def.name, def.help), {}};
        sub.app->fallthrough();
        for (const auto& s : *def.specs) {
            add(sub.app, s, sub.opts);
        }
        subs.push_back(std::move(sub));
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::CallForVersion&) {
        out << kVersion << "\n";
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }

    for (auto& sub : subs) {
        if (!sub.app->parsed()) {
            continue;
        }
        Run ctx(sub.def->name, out);
        try {
            auto specs = global_specs();
            specs.insert(specs.end(), sub.def->specs->begin(), sub.def->specs->end());
            auto opts = global_opts;
            opts.insert(sub.opts.begin(), sub.opts.end());
            ctx.cfg = resolve(specs, opts, raw, ctx.given);
            ctx.cfg.erase("config");
            ctx.out = ctx.str("out");
            ctx.quiet = ctx.flag("quiet");
            if (const auto threads = ctx.u64("threads"); threads > 0) {
                omp_set_num_threads(static_cast<int>(threads));
            }
            return sub.def->fn(ctx);
        } catch (const ValidationError& e) {
            err << "error: " << e.what() << "\n";
            return 2;
        } catch (const std::exception& e) {
            err << "error: " << e.what() << "\n";
            return 1;
        }
    }
    return 2;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    std::vector<const char*> argv{"cue"};
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

} // namespace cue::cli
