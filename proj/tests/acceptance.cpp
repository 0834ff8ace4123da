// Acceptance run: one PASS/FAIL line per criterion. Property criteria run the
// matching test cases as subprocesses; the ordering, training and determinism
// criteria run here. Artifacts go to the directory given as argv[1]; further
// arguments select criteria by number.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ciea/ablation.hpp"
#include "ciea/pipeline.hpp"

namespace fs = std::filesystem;
using namespace ciea;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

int shell(const std::string& cmd) {
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome run_cases(const std::string& binary, const std::string& filter, const fs::path& log) {
    const auto t0 = Clock::now();
    const int code = shell(binary + " --gtest_filter='" + filter + "' >" + log.string() + " 2>&1");
    char buf[128];
    std::snprintf(buf, sizeof buf, "%.1f s, log %s", seconds_since(t0), log.filename().c_str());
    return {code == 0, buf};
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::map<std::string, std::string> tree(const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = slurp(e.path());
    return files;
}

RunConfig desk_config() {
    RunConfig cfg;
    cfg.n_docs = 2000;
    cfg.complementary_fraction = 0.6;
    cfg.ablation_seeds = 5;
    return cfg;
}

Outcome ablation(const fs::path& out, std::vector<OrderingCheck>& checks) {
    const auto t0 = Clock::now();
    const RunConfig cfg = desk_config();
    auto ds = gen_synthetic(cfg.synthetic(), cfg.seed);
    auto vocab = prepare_text(ds.corpus, ds.queries, cfg);
    auto rows = run_ablation(cfg, ds.corpus, ds.queries, vocab.size(),
                             [](const std::string& line) { std::cerr << "  " << line << "\n"; });
    fs::create_directories(out);
    write_seed_csv(rows, (out / "per_seed.csv").string());
    checks = write_ablation_report(rows, out.string());
    const double secs = seconds_since(t0);
    bool holds = true;
    std::string detail;
    for (std::size_t i = 0; i < 4; ++i) {
        holds = holds && checks[i].holds;
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s%s > %s gap %.4f se %.4f", detail.empty() ? "" : "; ", checks[i].higher.c_str(),
                      checks[i].lower.c_str(), checks[i].gap, checks[i].pooled_se);
        detail += buf;
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "; %.0f s (limit 900 s)", secs);
    return {holds && secs < 900.0, detail + buf};
}

Outcome training_sanity() {
    RunConfig cfg;
    cfg.n_docs = 200;
    cfg.complementary_fraction = 0.0;
    cfg.epochs = 1000;
    cfg.max_steps = 200;
    cfg.eval_every_steps = 25;
    auto ds = gen_synthetic(cfg.synthetic(), cfg.seed);
    auto vocab = prepare_text(ds.corpus, ds.queries, cfg);
    std::vector<double> losses;
    auto trained = train_from_config(cfg, vocab.size(), ds.corpus, ds.queries, [&](const nlohmann::json& j) {
        if (j.contains("step")) losses.push_back(j.at("loss").get<double>());
    });
    if (losses.empty()) return {false, "no training steps"};
    const double first = losses.front(), last = losses.back(), best = trained.train.best_dev_mrr10;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%zu steps, loss %.4f -> %.4f (%.1f%%), best dev mrr@10 %.4f", losses.size(), first, last,
                  100.0 * last / first, best);
    return {losses.size() <= 200 && last < 0.1 * first && best > 0.9 && !trained.train.diverged, buf};
}

Outcome determinism(const fs::path& out) {
    const std::string small =
        " --n-docs 120 --group-size 10 --hidden-dim 16 --heads 2 --ffn-dim 32 --clip-dim 24 --batch-size 8"
        " --eval-every-steps 5 --align-steps 50 --hard-epochs 1 --hard-neg-pool 5 --ablation-seeds 2";
    const std::vector<std::string> steps{
        "gen-data" + small + " --output-dir data",
        "train" + small + " --epochs 2 --data-dir data --output-dir model",
        "encode --checkpoint model --corpus data/corpus.jsonl",
        "search --checkpoint model --queries data/queries.jsonl --k 50",
        "eval --run model/run.trec --qrels data/qrels.tsv --out model/metrics.csv",
        "ablate" + small + " --epochs 1 --data-dir data --output-dir ablation",
        "report --ablation ablation --out report --checkpoint model --corpus data/corpus.jsonl --probe-docs 3",
    };
    std::vector<std::map<std::string, std::string>> runs;
    for (const char* name : {"run_a", "run_b"}) {
        const fs::path dir = out / name;
        fs::remove_all(dir);
        fs::create_directories(dir);
        for (const auto& s : steps) {
            const std::string cmd = "cd " + dir.string() + " && " + CIEA_BIN + " " + s + " >>cli.log 2>&1";
            if (shell(cmd) != 0) return {false, std::string(name) + " failed at: " + s};
        }
        fs::remove(dir / "cli.log");
        runs.push_back(tree(dir));
    }
    std::size_t differing = 0;
    std::string first_diff;
    for (const auto& [path, bytes] : runs[0]) {
        auto it = runs[1].find(path);
        if (it == runs[1].end() || it->second != bytes) {
            ++differing;
            if (first_diff.empty()) first_diff = path;
        }
    }
    if (runs[0].size() != runs[1].size()) ++differing;
    const bool covered = runs[0].count("model/checkpoint.bin") && runs[0].count("model/run.trec") &&
                         runs[0].count("report/report.md") && runs[0].count("report/probe.md");
    std::string detail = std::to_string(runs[0].size()) + " files compared, " + std::to_string(differing) + " differ";
    if (!first_diff.empty()) detail += " (first: " + first_diff + ")";
    if (!covered) detail += "; expected checkpoint, run file or report missing";
    return {differing == 0 && covered, detail};
}

std::set<int> selected;

bool wanted(int id) { return selected.empty() || selected.count(id); }

void report(int id, const std::string& name, const Outcome& o, bool& all) {
    std::cout << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << "  " << name << ": " << o.detail << std::endl;
    all = all && o.pass;
}

}  // namespace

int main(int argc, char** argv) {
    const fs::path out = fs::absolute(argc > 1 ? argv[1] : "acceptance_out");
    fs::create_directories(out);
    for (int i = 2; i < argc; ++i) selected.insert(std::atoi(argv[i]));
    bool all = true;

    if (wanted(1)) {
        report(1, "gradient suite",
               run_cases(TEST_GRADIENTS_BIN, "Gradients.FullObjectiveMatchesFiniteDifferences", out / "gradients.log"),
               all);
    }
    if (wanted(2)) {
        report(2, "extractor invariants",
               run_cases(TEST_EXTRACTOR_BIN, "PatchWeights.*:ReweightedAttention.UnitWeightsReduceToStandardAttention",
                         out / "extractor.log"),
               all);
    }
    if (wanted(3)) {
        report(3, "loss anchors",
               run_cases(TEST_LOSSES_BIN,
                         "ContrastiveLoss.EqualCosinesGiveLogOnePlusN:ContrastiveLoss.ExtremeCosinesAtLowTemperatureStayFinite",
                         out / "losses.log"),
               all);
    }
    if (wanted(4)) {
        report(4, "metrics oracle",
               run_cases(TEST_RETRIEVAL_BIN, "Metrics.MatchBruteForceOnRandomRankings:Metrics.CsvHeaderIsTheReportedMetricSet",
                         out / "metrics.log"),
               all);
    }
    if (wanted(5) || wanted(6)) {
        std::vector<OrderingCheck> checks;
        report(5, "ablation ordering", ablation(out / "ablation", checks), all);
        char buf[96];
        std::snprintf(buf, sizeof buf, "dissimilar - similar mean mrr@10 gap %.4f", checks[4].gap);
        report(6, "weighting-mode ordering", {checks[4].holds, buf}, all);
    }
    if (wanted(7)) report(7, "training sanity", training_sanity(), all);
    if (wanted(8)) report(8, "determinism", determinism(out / "determinism"), all);
    if (wanted(9)) {
        report(9, "hard-negative mining equivalence",
               run_cases(TEST_TRAINER_BIN, "HardNegatives.MatchBruteForceOnHundredDocuments", out / "mining.log"), all);
    }
    return all ? 0 : 1;
}
