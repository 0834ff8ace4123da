// ciea: data generation, training, encoding, retrieval, evaluation and
// ablation for the complementary-information retriever.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ciea/ablation.hpp"
#include "ciea/pipeline.hpp"

namespace fs = std::filesystem;
using namespace ciea;

namespace {

struct ConfigFlags {
    std::string config_path;
    bool force = false;
    std::map<std::string, std::string> values;

    void attach(CLI::App* app) {
        app->add_option("--config", config_path, "JSON run configuration; flags override it");
        app->add_flag("--force", force, "write into an existing output directory");
        for (const auto& f : RunConfig::fields()) {
            app->add_option("--" + RunConfig::kebab(f.key), values[f.key], f.help);
        }
    }

    RunConfig resolve() const {
        RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::from_file(config_path);
        for (const auto& [key, text] : values)
            if (!text.empty()) cfg.set(key, text);
        cfg.validate();
        return cfg;
    }
};

void require_file(const std::string& path, const std::string& producer) {
    if (!fs::exists(path)) throw IoError(path + " not found; produce it with `" + producer + "`");
}

void prepare_output(const std::string& dir, bool force) {
    if (fs::exists(dir) && !fs::is_empty(dir) && !force) {
        throw ContractError("output directory " + dir + " already exists; pass --force to overwrite");
    }
    fs::create_directories(dir);
}

class JsonlWriter {
public:
    explicit JsonlWriter(const std::string& path) : os_(path, std::ios::binary) {
        if (!os_) throw IoError("cannot write " + path);
    }
    LogSink sink() {
        return [this](const nlohmann::json& j) { os_ << j.dump() << '\n'; };
    }

private:
    std::ofstream os_;
};

struct LoadedData {
    std::vector<Document> corpus;
    std::vector<QueryRecord> queries;
};

LoadedData load_data(const std::string& dir) {
    const std::string producer = "ciea gen-data --output-dir " + dir;
    require_file(dir + "/corpus.jsonl", producer);
    require_file(dir + "/queries.jsonl", producer);
    LoadedData d{load_corpus(dir + "/corpus.jsonl"), load_queries(dir + "/queries.jsonl")};
    validate_references(d.queries, d.corpus);
    return d;
}

void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path);
    os << j.dump(2) << '\n';
}

int cmd_gen_data(const RunConfig& cfg, bool force) {
    prepare_output(cfg.output_dir, force);
    auto ds = gen_synthetic(cfg.synthetic(), cfg.seed);
    save_corpus(ds.corpus, cfg.output_dir + "/corpus.jsonl");
    save_queries(ds.queries, cfg.output_dir + "/queries.jsonl");
    save_qrels(ds.qrels, cfg.output_dir + "/qrels.tsv");
    std::size_t complementary = 0;
    for (bool c : ds.complementary) complementary += c ? 1 : 0;
    const auto spec = cfg.synthetic();
    write_json(cfg.output_dir + "/manifest.json",
               {{"seed", cfg.seed},
                {"n_docs", spec.n_docs},
                {"group_size", spec.group_size},
                {"object_words", spec.object_words},
                {"detail_words", spec.detail_words},
                {"patches_per_doc", spec.patches_per_doc},
                {"raw_patch_dim", spec.raw_patch_dim},
                {"complementary_fraction", spec.complementary_fraction},
                {"text_only_fraction", spec.text_only_fraction},
                {"patch_noise", spec.patch_noise},
                {"queries", ds.queries.size()},
                {"complementary_queries", complementary}});
    cfg.save(cfg.output_dir + "/config.json");
    std::cout << "wrote " << ds.corpus.size() << " documents and " << ds.queries.size() << " queries to "
              << cfg.output_dir << "\n";
    return 0;
}

int cmd_train(const RunConfig& cfg, bool force) {
    auto data = load_data(cfg.data_dir);
    prepare_output(cfg.output_dir, force);
    cfg.save(cfg.output_dir + "/config.json");
    Vocabulary vocab = prepare_text(data.corpus, data.queries, cfg);
    JsonlWriter log(cfg.output_dir + "/train_log.jsonl");
    auto trained = train_from_config(cfg, vocab.size(), data.corpus, data.queries, log.sink());
    const auto& r = trained.train;
    nlohmann::json summary = {{"best_dev_mrr@10", r.best_dev_mrr10}, {"steps", r.steps},
                              {"evaluations", r.evaluations},      {"early_stopped", r.early_stopped},
                              {"diverged", r.diverged},            {"divergence", r.divergence},
                              {"hard_negatives_clamped", r.hard_negatives.clamped}};
    save_checkpoint(cfg.output_dir, trained.model, vocab, summary);
    write_json(cfg.output_dir + "/train_summary.json", summary);
    if (!r.hard_negatives.qids.empty()) save_hard_negatives(r.hard_negatives, cfg.output_dir + "/hard_negatives.jsonl");
    if (r.hard_negatives.clamped) std::cerr << "warning: hard_neg_pool exceeds the available negatives; pools were clamped\n";
    if (r.diverged) std::cerr << "warning: training stopped early: " << r.divergence << "\n";
    std::cout << "steps " << r.steps << ", best dev mrr@10 " << format_fixed(r.best_dev_mrr10, 4) << ", checkpoint in "
              << cfg.output_dir << "\n";
    return 0;
}

LoadedCheckpoint open_checkpoint(const std::string& dir) {
    require_file(dir + "/checkpoint.json", "ciea train --output-dir " + dir);
    return load_checkpoint(dir);
}

int cmd_encode(const std::string& checkpoint, const std::string& corpus_path, std::string out) {
    auto ck = open_checkpoint(checkpoint);
    require_file(corpus_path, "ciea gen-data");
    auto corpus = load_corpus(corpus_path);
    tokenize_corpus(corpus, ck.vocab, ck.model.config.encoder.max_len);
    if (out.empty()) out = checkpoint + "/corpus_vectors";
    save_encoded_corpus(encode_corpus(corpus, ck.model), out);
    std::cout << "encoded " << corpus.size() << " documents to " << out << ".{json,bin}\n";
    return 0;
}

int cmd_search(const std::string& checkpoint, std::string encoded, const std::string& queries_path, std::size_t k,
               std::string out) {
    auto ck = open_checkpoint(checkpoint);
    if (encoded.empty()) encoded = checkpoint + "/corpus_vectors";
    require_file(encoded + ".json", "ciea encode --checkpoint " + checkpoint);
    require_file(queries_path, "ciea gen-data");
    auto index = EmbeddingIndex::build(load_encoded_corpus(encoded));
    auto queries = load_queries(queries_path);
    tokenize_queries(queries, ck.vocab, ck.model.config.encoder.max_len);
    auto runs = search_queries(index, queries, ck.model, k);
    if (out.empty()) out = checkpoint + "/run.trec";
    write_run_file(runs, out);
    std::cout << "wrote " << runs.size() << " rankings to " << out << "\n";
    return 0;
}

int cmd_eval(const std::string& run_path, const std::string& qrels_path, const std::string& out) {
    require_file(run_path, "ciea search");
    require_file(qrels_path, "ciea gen-data");
    auto m = evaluate_runs(read_run_file(run_path), load_qrels(qrels_path));
    for (const auto& q : m.skipped) std::cerr << "warning: query " << q << " has no qrels entry; skipped\n";
    const std::string csv = std::string(MetricSet::kCsvHeader) + "\n" + m.csv_row() + "\n";
    std::cout << csv;
    if (!out.empty()) {
        std::ofstream os(out, std::ios::binary);
        if (!os) throw IoError("cannot write " + out);
        os << csv;
    }
    return 0;
}

int cmd_ablate(const RunConfig& cfg, bool force) {
    if (cfg.ablation_seeds < 2) std::cerr << "warning: ablation_seeds < 2 leaves the standard deviation undefined\n";
    auto data = load_data(cfg.data_dir);
    prepare_output(cfg.output_dir, force);
    fs::create_directories(cfg.output_dir + "/logs");
    cfg.save(cfg.output_dir + "/config.json");
    Vocabulary vocab = prepare_text(data.corpus, data.queries, cfg);
    std::unique_ptr<JsonlWriter> current;
    auto logs = [&](const AblationVariant& v, std::size_t seed) -> LogSink {
        current = std::make_unique<JsonlWriter>(cfg.output_dir + "/logs/" + v.slug + "-seed" + std::to_string(seed) + ".jsonl");
        return current->sink();
    };
    auto rows = run_ablation(cfg, data.corpus, data.queries, vocab.size(),
                             [](const std::string& line) { std::cerr << line << "\n"; }, logs);
    current.reset();
    write_seed_csv(rows, cfg.output_dir + "/per_seed.csv");
    auto checks = write_ablation_report(read_seed_csv(cfg.output_dir + "/per_seed.csv"), cfg.output_dir);
    std::ifstream md(cfg.output_dir + "/report.md");
    std::cout << md.rdbuf();
    (void)checks;
    return 0;
}

void write_probe(const std::string& checkpoint, const std::string& corpus_path, std::size_t docs, std::size_t top_n,
                 const std::string& path) {
    auto ck = open_checkpoint(checkpoint);
    require_file(corpus_path, "ciea gen-data");
    auto corpus = load_corpus(corpus_path);
    tokenize_corpus(corpus, ck.vocab, ck.model.config.encoder.max_len);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path);
    os << "# Nearest vocabulary tokens to image embeddings\n\n| doc | caption | projected | re-weighted |\n|---|---|---|---|\n";
    auto join = [](const std::vector<TokenId>& ids, const Vocabulary& v) {
        std::string s;
        for (auto t : ids) s += (s.empty() ? "" : " ") + v.token(t);
        return s;
    };
    std::size_t shown = 0;
    for (const auto& d : corpus) {
        if (shown >= docs) break;
        if (!d.multimodal()) continue;
        Tape tape = Tape::inference();
        auto img = encode_image_patches(tape, d, ck.model);
        auto a = nearest_vocab_tokens(img.projected, ck.model.encoder.token_embedding, top_n);
        auto b = nearest_vocab_tokens(img.reweighted, ck.model.encoder.token_embedding, top_n);
        os << "| " << d.id << " | " << d.raw_text << " | " << join(a.unique, ck.vocab) << " | " << join(b.unique, ck.vocab)
           << " |\n";
        ++shown;
    }
}

int cmd_report(const std::string& ablation_dir, std::string out, const std::string& checkpoint,
               const std::string& corpus_path, std::size_t probe_docs, std::size_t top_n) {
    if (out.empty()) out = ablation_dir;
    const std::string seeds = ablation_dir + "/per_seed.csv";
    require_file(seeds, "ciea ablate --output-dir " + ablation_dir);
    fs::create_directories(out);
    auto checks = write_ablation_report(read_seed_csv(seeds), out);
    if (!checkpoint.empty()) write_probe(checkpoint, corpus_path, probe_docs, top_n, out + "/probe.md");
    std::ifstream md(out + "/report.md");
    std::cout << md.rdbuf();
    (void)checks;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Complementary-information multimodal dense retrieval"};
    app.require_subcommand(1);

    ConfigFlags gen_flags, train_flags, ablate_flags;
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus, queries and qrels into --output-dir");
    gen_flags.attach(gen);
    auto* tr = app.add_subcommand("train", "train a model on --data-dir, checkpoint into --output-dir");
    train_flags.attach(tr);
    auto* ab = app.add_subcommand("ablate", "train every ablation variant over several seeds and report");
    ablate_flags.attach(ab);

    std::string checkpoint, corpus, encoded, queries, run, qrels, out, ablation_dir;
    std::size_t k = 100, probe_docs = 5, top_n = 3;
    auto* enc = app.add_subcommand("encode", "encode a corpus with a trained checkpoint");
    enc->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
    enc->add_option("--corpus", corpus, "corpus.jsonl")->required();
    enc->add_option("--out", out, "output prefix (default <checkpoint>/corpus_vectors)");
    auto* se = app.add_subcommand("search", "rank an encoded corpus for each query");
    se->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
    se->add_option("--encoded", encoded, "encoded corpus prefix (default <checkpoint>/corpus_vectors)");
    se->add_option("--queries", queries, "queries.jsonl")->required();
    se->add_option("--k", k, "documents per query");
    se->add_option("--out", out, "run file (default <checkpoint>/run.trec)");
    auto* ev = app.add_subcommand("eval", "score a run file against qrels");
    ev->add_option("--run", run, "TREC run file")->required();
    ev->add_option("--qrels", qrels, "qrels.tsv")->required();
    ev->add_option("--out", out, "CSV output");
    auto* rep = app.add_subcommand("report", "rebuild the ablation summary, optionally with a nearest-token probe");
    rep->add_option("--ablation", ablation_dir, "directory written by ablate")->required();
    rep->add_option("--out", out, "output directory (default: the ablation directory)");
    rep->add_option("--checkpoint", checkpoint, "checkpoint for the nearest-token probe");
    rep->add_option("--corpus", corpus, "corpus.jsonl for the probe");
    rep->add_option("--probe-docs", probe_docs, "documents shown in the probe");
    rep->add_option("--top-n", top_n, "tokens per patch in the probe");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (*gen) return cmd_gen_data(gen_flags.resolve(), gen_flags.force);
        if (*tr) return cmd_train(train_flags.resolve(), train_flags.force);
        if (*ab) return cmd_ablate(ablate_flags.resolve(), ablate_flags.force);
        if (*enc) return cmd_encode(checkpoint, corpus, out);
        if (*se) return cmd_search(checkpoint, encoded, queries, k, out);
        if (*ev) return cmd_eval(run, qrels, out);
        if (*rep) {
            if (!checkpoint.empty() && corpus.empty()) throw ContractError("--checkpoint needs --corpus for the probe");
            return cmd_report(ablation_dir, out, checkpoint, corpus, probe_docs, top_n);
        }
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
