#include "tfdl/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "tfdl/analysis.hpp"
#include "tfdl/code_store.hpp"
#include "tfdl/dictionary_learner.hpp"
#include "tfdl/embedding_store.hpp"
#include "tfdl/error.hpp"
#include "tfdl/lime_saliency.hpp"
#include "tfdl/perturbation_protocol.hpp"
#include "tfdl/report_emitter.hpp"
#include "tfdl/sparse_coder.hpp"
#include "tfdl/synthetic.hpp"

namespace tfdl::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path sidecar_path(const fs::path& artifact) {
    return fs::path(artifact.string() + ".json");
}

void write_sidecar(const fs::path& artifact, const json& config) {
    std::ofstream out(sidecar_path(artifact), std::ios::trunc);
    if (!out) {
        throw FormatError("cannot write " + sidecar_path(artifact).string());
    }
    out << config.dump(2) << '\n';
}

json read_sidecar(const fs::path& artifact) {
    std::ifstream in(sidecar_path(artifact));
    if (!in) {
        return json::object();
    }
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError("malformed sidecar " + sidecar_path(artifact).string() + ": " + e.what());
    }
}

/// Dictionary file plus the lambda recorded in its sidecar (0 if absent).
LearnerState load_dictionary(const fs::path& path) {
    LearnerState state = read_dictionary(path);
    const json side = read_sidecar(path);
    state.dict.lambda = side.value("lambda", 0.0);
    state.dict.validate();
    return state;
}

double resolve_lambda(double flag, const Dictionary& dict) {
    if (flag > 0.0) {
        return flag;
    }
    return dict.lambda > 0.0 ? dict.lambda : kDefaultLambda;
}

std::string replace_all(std::string text, const std::string& from, const std::string& to) {
    for (std::size_t pos = 0; (pos = text.find(from, pos)) != std::string::npos; pos += to.size()) {
        text.replace(pos, from.size(), to);
    }
    return text;
}

std::string shell_quote(const std::string& s) {
    return "'" + replace_all(s, "'", "'\\''") + "'";
}

struct Common {
    std::uint64_t seed = 0;
    unsigned threads = 1;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--seed", c.seed, "Seed for all randomness in this invocation")->capture_default_str();
    app->add_option("--threads", c.threads, "Worker threads (1 = deterministic single-threaded mode)")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
    Common common;
    SyntheticConfig cfg;
    std::string out;
    std::string truth;
};

void cmd_synth(SynthArgs& a, std::ostream& out) {
    a.cfg.seed = a.common.seed;
    const Eigen::MatrixXd truth = write_synthetic_store(a.out, a.cfg);
    if (!a.truth.empty()) {
        LearnerState st;
        st.dict.phi = truth;
        st.h_accum = Eigen::VectorXd::Zero(truth.cols());
        write_dictionary(a.truth, st);
        write_sidecar(a.truth, {{"kind", "ground_truth_dictionary"}, {"seed", a.cfg.seed}});
    }
    out << "wrote synthetic store " << a.out << " (" << a.cfg.num_occurrences << " occurrences, d=" << a.cfg.d
        << ", layers=" << a.cfg.num_layers << ")\n";
}

// ---------------------------------------------------------------- learn

struct LearnArgs {
    Common common;
    TrainConfig cfg;
    std::string store;
    std::string out;
    std::string resume;
    std::string trace;
    std::string checkpoint;
};

void cmd_learn(LearnArgs& a, std::ostream& out) {
    const EmbeddingStore store = EmbeddingStore::open(a.store);
    a.cfg.seed = a.common.seed;
    a.cfg.threads = a.common.threads;
    a.cfg.checkpoint_path = a.checkpoint;
    std::optional<LearnerState> resume;
    if (!a.resume.empty()) {
        resume = read_checkpoint(a.resume);
    }
    const TrainResult result = train(store, a.cfg, std::move(resume));
    write_dictionary(a.out, result.state);
    json side = {{"kind", "dictionary"},
                 {"lambda", a.cfg.lambda},
                 {"seed", a.cfg.seed},
                 {"m", a.cfg.m},
                 {"batch_size", a.cfg.batch_size},
                 {"total_steps", a.cfg.total_steps},
                 {"delta", a.cfg.delta},
                 {"dead_factor_steps", a.cfg.dead_factor_steps},
                 {"fista_max_iter", a.cfg.fista_max_iter},
                 {"fista_tol", a.cfg.fista_tol},
                 {"source_store", a.store},
                 {"source_store_hash", io::hex64(store.content_hash())},
                 {"dictionary_hash", io::hex64(result.state.dict.content_hash())},
                 {"reinitialized_factors", result.reinitialized_factors}};
    write_sidecar(a.out, side);
    if (!a.trace.empty()) {
        std::ofstream t(a.trace, std::ios::trunc);
        if (!t) {
            throw FormatError("cannot write " + a.trace);
        }
        t << "step,objective\n";
        const std::uint64_t first = result.state.step - result.objective_trace.size();
        for (std::size_t i = 0; i < result.objective_trace.size(); ++i) {
            char buf[40];
            std::snprintf(buf, sizeof buf, "%.17g", result.objective_trace[i]);
            t << first + i << ',' << buf << '\n';
        }
    }
    out << "trained " << result.state.step << " steps, dictionary " << io::hex64(result.state.dict.content_hash())
        << " -> " << a.out << '\n';
}

// ---------------------------------------------------------------- encode

struct EncodeArgs {
    Common common;
    EncodeOptions opts;
    std::string store;
    std::string dict;
    std::string out;
    std::string extend;
};

void cmd_encode(EncodeArgs& a, std::ostream& out) {
    const EmbeddingStore store = EmbeddingStore::open(a.store);
    LearnerState state = load_dictionary(a.dict);
    a.opts.lambda = resolve_lambda(a.opts.lambda, state.dict);
    a.opts.threads = a.common.threads;
    const std::uint64_t dict_hash = state.dict.content_hash();

    CodeStore codes;
    if (!a.extend.empty()) {
        codes = CodeStore::read(a.extend);
        if (codes.info().dict_hash != dict_hash) {
            throw FormatError("hash mismatch: code store " + a.extend + " was built with dictionary " +
                              io::hex64(codes.info().dict_hash) + ", given dictionary is " + io::hex64(dict_hash));
        }
        if (codes.num_layers() != store.num_layers() || codes.num_rows() > store.num_rows()) {
            throw FormatError("code store " + a.extend + " does not fit store " + a.store);
        }
        if (codes.info().lambda != a.opts.lambda || codes.info().drop_threshold != a.opts.drop_threshold) {
            throw UsageError("--extend requires the lambda and drop threshold the code store was built with");
        }
        a.opts.first_row = codes.num_rows();
        codes.append(encode_rows(store, state.dict, a.opts));
        codes.set_store_hash(store.content_hash());
    } else {
        codes = encode_store(store, state.dict, a.opts);
    }
    codes.write(a.out);
    write_sidecar(a.out, {{"kind", "code_store"},
                          {"lambda", a.opts.lambda},
                          {"max_iter", a.opts.max_iter},
                          {"tol", a.opts.tol},
                          {"drop_threshold", a.opts.drop_threshold},
                          {"seed", a.common.seed},
                          {"store", a.store},
                          {"store_hash", io::hex64(store.content_hash())},
                          {"dictionary", a.dict},
                          {"dictionary_hash", io::hex64(dict_hash)}});
    out << "encoded " << codes.num_rows() << " rows, " << codes.num_triplets() << " nonzeros -> " << a.out << '\n';
}

// ---------------------------------------------------------------- importance / top / classify

struct ImportanceArgs {
    Common common;
    std::string codes;
    std::string out;
    std::size_t cap = kImportanceCap;
};

void cmd_importance(ImportanceArgs& a, std::ostream& out) {
    const CodeStore codes = CodeStore::read(a.codes);
    const auto curves = importance_scores(codes, a.cap);
    write_curves_csv(a.out, curves);
    write_sidecar(a.out, {{"kind", "importance_curves"},
                          {"codes", a.codes},
                          {"cap", a.cap},
                          {"seed", a.common.seed},
                          {"dictionary_hash", io::hex64(codes.info().dict_hash)}});
    out << "wrote " << curves.size() << " importance curves -> " << a.out << '\n';
}

void check_codes_match_store(const CodeStore& codes, const EmbeddingStore& store) {
    if (codes.info().store_hash != store.content_hash()) {
        throw FormatError("hash mismatch: code store was built from store " + io::hex64(codes.info().store_hash) +
                          ", given store is " + io::hex64(store.content_hash()));
    }
}

struct TopArgs {
    Common common;
    std::string codes;
    std::string store;
    std::string out;
    std::uint32_t factor = 0;
    int layer = -1;
    std::size_t top_k = kImportanceCap;
};

void cmd_top(TopArgs& a, std::ostream& out) {
    const CodeStore codes = CodeStore::read(a.codes);
    const EmbeddingStore store = EmbeddingStore::open(a.store);
    check_codes_match_store(codes, store);
    std::vector<ActivationHit> hits;
    if (a.layer >= 0) {
        hits = top_activations(codes, store, a.factor, static_cast<std::uint32_t>(a.layer), a.top_k);
    } else {
        for (std::uint32_t l = 0; l < codes.num_layers(); ++l) {
            auto h = top_activations(codes, store, a.factor, l, a.top_k);
            hits.insert(hits.end(), h.begin(), h.end());
        }
    }
    write_hits_csv(a.out, hits);
    write_sidecar(a.out, {{"kind", "top_activations"},
                          {"codes", a.codes},
                          {"store", a.store},
                          {"factor", a.factor},
                          {"layer", a.layer},
                          {"top_k", a.top_k},
                          {"seed", a.common.seed}});
    out << "wrote " << hits.size() << " hits -> " << a.out << '\n';
}

struct ClassifyArgs {
    Common common;
    std::string curves;
    std::string out;
    int split_layer = -1;
};

void cmd_classify(ClassifyArgs& a, std::ostream& out) {
    const auto curves = read_curves_csv(a.curves);
    if (curves.empty()) {
        throw FormatError("no curves in " + a.curves);
    }
    const std::uint32_t split = a.split_layer >= 0 ? static_cast<std::uint32_t>(a.split_layer)
                                                   : default_split_layer(curves.front().values.size());
    std::vector<LevelLabel> labels;
    std::size_t low = 0;
    for (const auto& c : curves) {
        labels.push_back(classify_factor_level(c, split));
        low += labels.back().level == FactorLevel::Low ? 1 : 0;
    }
    write_labels_csv(a.out, curves, labels);
    write_sidecar(a.out, {{"kind", "factor_levels"}, {"curves", a.curves}, {"split_layer", split},
                          {"seed", a.common.seed}});
    out << "classified " << curves.size() << " factors (" << low << " Low, " << curves.size() - low
        << " MidHigh) -> " << a.out << '\n';
}

// ---------------------------------------------------------------- lime

struct LimeArgs {
    Common common;
    SaliencyOptions opts;
    std::string store;
    std::string dict;
    std::string out;
    std::uint64_t occ = 0;
    std::uint32_t layer = 0;
    std::uint32_t factor = 0;
    double lambda = 0.0;
    std::string provider_cmd;
    std::string request_out;
    std::string response;
    std::string work_dir = "lime_work";
};

void cmd_lime(LimeArgs& a, std::ostream& out) {
    const EmbeddingStore store = EmbeddingStore::open(a.store);
    const OccurrenceMeta& meta = store.occurrence(a.occ);
    if (a.layer >= store.num_layers()) {
        throw UsageError("layer out of range");
    }
    const auto& tokens = store.sequence(meta.seq_id);
    a.opts.seed = a.common.seed;

    PerturbationSet set = build_perturbations(tokens, meta.position, a.opts);
    const std::string query_id = "occ" + std::to_string(a.occ) + "-l" + std::to_string(a.layer);
    const auto requests = make_requests(set, query_id);
    if (!a.request_out.empty()) {
        write_requests(a.request_out, requests);
        out << "wrote " << requests.size() << " perturbation requests -> " << a.request_out << '\n';
        return;
    }

    LearnerState state = load_dictionary(a.dict);
    if (state.dict.d() != static_cast<Eigen::Index>(store.d())) {
        throw FormatError("dictionary dimension does not match store");
    }
    if (a.factor >= state.dict.m()) {
        throw UsageError("factor out of range");
    }
    const double lambda = resolve_lambda(a.lambda, state.dict);
    const SparseCoder coder(state.dict);

    fs::path response = a.response;
    if (response.empty()) {
        if (a.provider_cmd.empty()) {
            throw UsageError("lime needs --provider-cmd, --response or --request-out");
        }
        fs::create_directories(a.work_dir);
        const fs::path request = fs::path(a.work_dir) / "request.jsonl";
        response = fs::path(a.work_dir) / "response";
        write_requests(request, requests);
        std::string cmd = replace_all(a.provider_cmd, "{request}", shell_quote(request.string()));
        cmd = replace_all(cmd, "{response}", shell_quote(response.string()));
        if (std::system(cmd.c_str()) != 0) {
            throw FormatError("activation provider failed: " + cmd);
        }
    }
    const Eigen::MatrixXd vectors = read_response(response, requests);
    if (vectors.cols() != state.dict.d()) {
        throw FormatError("response dimension does not match dictionary");
    }
    evaluate_perturbations(set, [&](const std::vector<std::vector<std::string>>& seqs) {
        std::vector<double> values(seqs.size());
        parallel_for(seqs.size(), a.common.threads, [&](std::size_t i) {
            const FistaResult r = coder.solve(vectors.row(static_cast<Eigen::Index>(i)).transpose(), lambda);
            values[i] = r.alpha(a.factor);
        });
        return values;
    });

    SaliencyRecord rec;
    rec.occ_index = a.occ;
    rec.seq_id = meta.seq_id;
    rec.position = meta.position;
    rec.layer = a.layer;
    rec.factor = a.factor;
    rec.tokens = tokens;
    rec.map = fit_saliency(set, a.opts.k, a.opts.sigma);
    rec.options = a.opts;
    rec.lambda = lambda;
    write_saliency_records(a.out, std::span(&rec, 1), true);
    out << "saliency for occurrence " << a.occ << " (factor " << a.factor << ", layer " << a.layer
        << ", activation " << set.values.front() << ") appended to " << a.out << '\n';
}

// ---------------------------------------------------------------- report

struct ReportArgs {
    Common common;
    std::string store;
    std::string codes;
    std::string curves;
    std::string saliency;
    std::string out;
    std::vector<std::uint32_t> factors;
    std::size_t num_factors = 20;
    std::size_t top_k = 5;
    int split_layer = -1;
    std::size_t window = kDefaultContextWindow;
};

void cmd_report(ReportArgs& a, std::ostream& out) {
    const EmbeddingStore store = EmbeddingStore::open(a.store);
    const CodeStore codes = CodeStore::read(a.codes);
    check_codes_match_store(codes, store);
    const std::vector<ImportanceCurve> curves = a.curves.empty() ? importance_scores(codes) : read_curves_csv(a.curves);
    std::map<std::uint32_t, const ImportanceCurve*> by_factor;
    for (const auto& c : curves) {
        if (c.values.size() != codes.num_layers()) {
            throw FormatError("curve for factor " + std::to_string(c.factor) + " has wrong layer count");
        }
        by_factor[c.factor] = &c;
    }
    std::vector<std::uint32_t> chosen = a.factors;
    if (chosen.empty()) {
        std::vector<std::pair<double, std::uint32_t>> ranked;
        for (const auto& c : curves) {
            double peak = 0.0;
            for (double v : c.values) {
                peak = std::max(peak, v);
            }
            if (peak > 0.0) {
                ranked.emplace_back(-peak, c.factor);
            }
        }
        std::sort(ranked.begin(), ranked.end());
        for (std::size_t i = 0; i < std::min(a.num_factors, ranked.size()); ++i) {
            chosen.push_back(ranked[i].second);
        }
        std::sort(chosen.begin(), chosen.end());
    }
    std::vector<SaliencyRecord> saliency;
    if (!a.saliency.empty()) {
        saliency = read_saliency_records(a.saliency);
    }
    const std::uint32_t split =
        a.split_layer >= 0 ? static_cast<std::uint32_t>(a.split_layer) : default_split_layer(codes.num_layers());
    std::vector<FactorReport> reports;
    for (std::uint32_t f : chosen) {
        auto it = by_factor.find(f);
        if (it == by_factor.end()) {
            throw UsageError("no importance curve for factor " + std::to_string(f));
        }
        reports.push_back(build_factor_report(codes, store, *it->second, split, a.top_k, saliency, a.window));
    }
    if (reports.empty()) {
        throw FormatError("no active factors to report");
    }
    const json config = {{"store", a.store},   {"codes", a.codes},      {"curves", a.curves},
                         {"saliency", a.saliency}, {"top_k", a.top_k},  {"split_layer", split},
                         {"window", a.window}, {"seed", a.common.seed}, {"dictionary_hash", io::hex64(codes.info().dict_hash)}};
    emit_report_tree(a.out, reports, config.dump(2));
    out << "wrote report for " << reports.size() << " factors -> " << a.out << '\n';
}

// ---------------------------------------------------------------- posclf

struct PosclfArgs {
    Common common;
    std::string input;
    std::string out;
};

void cmd_posclf(PosclfArgs& a, std::ostream& out) {
    std::vector<double> act;
    std::vector<int> labels;
    read_activation_labels(a.input, act, labels);
    const auto model = fit_single_activation_classifier(act, labels);
    const json j = {{"intercept", model.intercept},
                    {"slope", model.slope},
                    {"decision_activation", model.decision_activation},
                    {"converged", model.converged},
                    {"iterations", model.iterations},
                    {"precision", model.precision},
                    {"recall", model.recall},
                    {"f1", model.f1},
                    {"accuracy", model.accuracy},
                    {"confusion", {{"tp", model.true_positive}, {"fp", model.false_positive},
                                   {"tn", model.true_negative}, {"fn", model.false_negative}}},
                    {"input", a.input},
                    {"seed", a.common.seed}};
    if (a.out.empty()) {
        out << j.dump(2) << '\n';
    } else {
        std::ofstream o(a.out, std::ios::trunc);
        if (!o) {
            throw FormatError("cannot write " + a.out);
        }
        o << j.dump(2) << '\n';
        out << "F1 " << model.f1 << " -> " << a.out << '\n';
    }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Transformer-factor dictionary learning and analysis", "tfdl"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Write a synthetic store with a known generating dictionary");
    add_common(s, synth.common);
    s->add_option("--out", synth.out, "Output store directory")->required();
    s->add_option("--truth", synth.truth, "Also write the generating dictionary here");
    s->add_option("--d", synth.cfg.d, "Embedding dimension")->capture_default_str();
    s->add_option("--m", synth.cfg.m, "Generating factor count")->capture_default_str();
    s->add_option("--active", synth.cfg.active, "Active factors per vector")->capture_default_str();
    s->add_option("--occurrences", synth.cfg.num_occurrences, "Occurrence count")->capture_default_str();
    s->add_option("--layers", synth.cfg.num_layers, "Layer slots")->capture_default_str();
    s->add_option("--seq-len", synth.cfg.seq_len, "Tokens per sequence")->capture_default_str();
    s->add_option("--vocab", synth.cfg.vocab_size, "Vocabulary size (0 = unique tokens)")->capture_default_str();

    LearnArgs learn;
    auto* l = app.add_subcommand("learn", "Learn a dictionary from an embedding store");
    add_common(l, learn.common);
    l->add_option("--store", learn.store, "Embedding store directory")->required();
    l->add_option("--out", learn.out, "Output dictionary file")->required();
    l->add_option("--m", learn.cfg.m, "Factor count")->capture_default_str();
    l->add_option("--lambda", learn.cfg.lambda, "Sparsity penalty")->capture_default_str();
    l->add_option("--steps", learn.cfg.total_steps, "Total training steps")->capture_default_str();
    l->add_option("--batch-size", learn.cfg.batch_size, "Minibatch size")->capture_default_str();
    l->add_option("--delta", learn.cfg.delta, "Preconditioner floor")->capture_default_str();
    l->add_option("--dead-factor-steps", learn.cfg.dead_factor_steps, "Re-init never-active factors after N steps (0 = off)")
        ->capture_default_str();
    l->add_option("--max-iter", learn.cfg.fista_max_iter, "FISTA iterations per code")->capture_default_str();
    l->add_option("--tol", learn.cfg.fista_tol, "FISTA relative-change tolerance")->capture_default_str();
    l->add_option("--checkpoint", learn.checkpoint, "Checkpoint file");
    l->add_option("--checkpoint-every", learn.cfg.checkpoint_every, "Checkpoint period in steps (0 = off)")
        ->capture_default_str();
    l->add_option("--resume", learn.resume, "Resume from a checkpoint");
    l->add_option("--trace", learn.trace, "Write the per-step minibatch objective as CSV");

    EncodeArgs encode;
    encode.opts.lambda = 0.0;
    auto* e = app.add_subcommand("encode", "Sparse-code every row of a store");
    add_common(e, encode.common);
    e->add_option("--store", encode.store, "Embedding store directory")->required();
    e->add_option("--dict", encode.dict, "Dictionary file")->required();
    e->add_option("--out", encode.out, "Output code store")->required();
    e->add_option("--lambda", encode.opts.lambda, "Sparsity penalty (default: the dictionary's)");
    e->add_option("--max-iter", encode.opts.max_iter, "FISTA iterations")->capture_default_str();
    e->add_option("--tol", encode.opts.tol, "FISTA relative-change tolerance")->capture_default_str();
    e->add_option("--drop-threshold", encode.opts.drop_threshold, "Coefficients at or below are stored as zero")
        ->capture_default_str();
    e->add_option("--extend", encode.extend, "Existing code store to extend with new rows");

    ImportanceArgs imp;
    auto* i = app.add_subcommand("importance", "Importance-score curves for every factor");
    add_common(i, imp.common);
    i->add_option("--codes", imp.codes, "Code store")->required();
    i->add_option("--out", imp.out, "Output CSV")->required();
    i->add_option("--cap", imp.cap, "Top activations averaged per layer")->capture_default_str();

    TopArgs top;
    auto* t = app.add_subcommand("top", "Top activations of one factor");
    add_common(t, top.common);
    t->add_option("--codes", top.codes, "Code store")->required();
    t->add_option("--store", top.store, "Embedding store directory")->required();
    t->add_option("--out", top.out, "Output CSV")->required();
    t->add_option("--factor", top.factor, "Factor index")->required();
    t->add_option("--layer", top.layer, "Layer (default: every layer)");
    t->add_option("--top-k", top.top_k, "Hits per layer")->capture_default_str();

    ClassifyArgs cls;
    auto* c = app.add_subcommand("classify", "Label factors Low / MidHigh from their curves");
    add_common(c, cls.common);
    c->add_option("--curves", cls.curves, "Importance curves CSV")->required();
    c->add_option("--out", cls.out, "Output CSV")->required();
    c->add_option("--split-layer", cls.split_layer, "Peak layers above this are MidHigh (default: layers/2)");

    LimeArgs lime;
    auto* li = app.add_subcommand("lime", "Token saliency for one factor activation");
    add_common(li, lime.common);
    li->add_option("--store", lime.store, "Embedding store directory")->required();
    li->add_option("--dict", lime.dict, "Dictionary file");
    li->add_option("--out", lime.out, "Saliency records (appended)");
    li->add_option("--occ", lime.occ, "Queried occurrence")->required();
    li->add_option("--layer", lime.layer, "Layer")->required();
    li->add_option("--factor", lime.factor, "Factor index");
    li->add_option("--lambda", lime.lambda, "Sparsity penalty (default: the dictionary's)");
    li->add_option("--n-samples", lime.opts.n_samples, "Perturbed sequences")->capture_default_str();
    li->add_option("--k", lime.opts.k, "Positions kept after the first pass (default min(10, T))");
    li->add_option("--sigma", lime.opts.sigma, "Ridge penalty")->capture_default_str();
    li->add_option("--mask-prob", lime.opts.mask_prob, "Per-token masking probability")->capture_default_str();
    li->add_option("--unk", lime.opts.unknown, "Unknown token")->capture_default_str();
    li->add_option("--provider-cmd", lime.provider_cmd,
                   "Command answering a request; {request} and {response} are substituted");
    li->add_option("--request-out", lime.request_out, "Only write the perturbation request here");
    li->add_option("--response", lime.response, "Use an existing response directory");
    li->add_option("--work-dir", lime.work_dir, "Scratch directory for provider exchange")->capture_default_str();

    ReportArgs rep;
    auto* r = app.add_subcommand("report", "Emit the static HTML/SVG report tree");
    add_common(r, rep.common);
    r->add_option("--store", rep.store, "Embedding store directory")->required();
    r->add_option("--codes", rep.codes, "Code store")->required();
    r->add_option("--out", rep.out, "Output directory")->required();
    r->add_option("--curves", rep.curves, "Importance curves CSV (default: computed)");
    r->add_option("--saliency", rep.saliency, "Saliency records");
    r->add_option("--factors", rep.factors, "Factors to report (default: strongest by peak importance)");
    r->add_option("--num-factors", rep.num_factors, "Factors when --factors is absent")->capture_default_str();
    r->add_option("--top-k", rep.top_k, "Contexts per layer")->capture_default_str();
    r->add_option("--split-layer", rep.split_layer, "Level split layer (default: layers/2)");
    r->add_option("--window", rep.window, "Context window in tokens")->capture_default_str();

    PosclfArgs pos;
    auto* p = app.add_subcommand("posclf", "Single-activation logistic classifier over activation,label rows");
    add_common(p, pos.common);
    p->add_option("--input", pos.input, "CSV of activation,label")->required();
    p->add_option("--out", pos.out, "Output JSON (default: stdout)");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& pe) {
        const int code = app.exit(pe, out, err);
        return code == 0 ? 0 : 1;
    }

    std::string stage = "tfdl";
    try {
        if (s->parsed()) {
            stage = "synth";
            cmd_synth(synth, out);
        } else if (l->parsed()) {
            stage = "learn";
            cmd_learn(learn, out);
        } else if (e->parsed()) {
            stage = "encode";
            cmd_encode(encode, out);
        } else if (i->parsed()) {
            stage = "importance";
            cmd_importance(imp, out);
        } else if (t->parsed()) {
            stage = "top";
            cmd_top(top, out);
        } else if (c->parsed()) {
            stage = "classify";
            cmd_classify(cls, out);
        } else if (li->parsed()) {
            stage = "lime";
            if (lime.request_out.empty() && (lime.dict.empty() || lime.out.empty())) {
                throw UsageError("lime needs --dict and --out unless --request-out is given");
            }
            cmd_lime(lime, out);
        } else if (r->parsed()) {
            stage = "report";
            cmd_report(rep, out);
        } else if (p->parsed()) {
            stage = "posclf";
            cmd_posclf(pos, out);
        }
    } catch (const Error& ex) {
        err << "tfdl " << stage << ": error: " << ex.what() << '\n';
        return static_cast<int>(ex.kind());
    } catch (const std::exception& ex) {
        err << "tfdl " << stage << ": error: " << ex.what() << '\n';
        return static_cast<int>(ErrorKind::Format);
    }
    return 0;
}

int run(int argc, char** argv) {
    std::vector<std::string> args;
    for (int k = 1; k < argc; ++k) {
        args.emplace_back(argv[k]);
    }
    return run(args, std::cout, std::cerr);
}

}  // namespace tfdl::cli
