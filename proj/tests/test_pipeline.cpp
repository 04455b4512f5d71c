#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "tgls/checkpoint.hpp"
#include "tgls/generator.hpp"
#include "tgls/pipeline.hpp"
#include "tgls/synthetic.hpp"

using namespace tgls;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

// One tiny paraphrase workspace shared by every test case: corpus files on
// disk, resolved config, task data, and trained scorers.
struct Workspace {
    fs::path dir;
    PipelineConfig cfg;
    TaskData data;
    Scorers scorers;

    Workspace() {
        dir = fs::temp_directory_path() / "tgls_test_pipeline";
        fs::remove_all(dir);
        SyntheticSpec spec;
        spec.task = Task::kParaphrase;
        spec.train_size = 16;
        spec.valid_size = 6;
        spec.test_size = 6;
        spec.seed = 5;
        write_synthetic(make_synthetic(spec), spec.task, dir.string());
        std::string extra =
            "steps=8\ntop_k=8\nwidth=16\nlayers=1\nheads=2\nffw=32\nmax_seq=48\nbeam=2\n"
            "dropout=0\nlr=0.002\nbatch=8\nce_epochs=2\nepochs_s2=1\nemb_dim=16\n"
            "threads=1\nseed=3\n";
        std::ofstream(dir / "run.cfg") << slurp((dir / "task.cfg").string()) << extra;
        cfg = make_pipeline_config(KeyValueConfig::load((dir / "run.cfg").string()),
                                   dir.string());
        data = load_task_data(cfg);
        scorers = train_task_scorers(data, cfg);
    }
    ~Workspace() { fs::remove_all(dir); }

    SearchEngine engine() const { return make_engine(scorers, data, cfg); }

    PipelineConfig run_config(const std::string& out_name) const {
        PipelineConfig c = cfg;
        c.out_dir = (dir / out_name).string();
        return c;
    }
};

Workspace& ws() {
    static Workspace instance;
    return instance;
}

std::vector<std::string> stages_of(const std::vector<std::string>& report_lines) {
    std::vector<std::string> stages;
    for (const auto& line : report_lines) {
        stages.push_back(nlohmann::json::parse(line)["stage"].get<std::string>());
    }
    return stages;
}

}  // namespace

TEST_CASE("stage-1 search never loses to its own start sentence") {
    const Workspace& w = ws();
    SearchEngine eng = w.engine();

    Corpus frozen = w.data.train;
    PipelineConfig no_steps = w.cfg;
    no_steps.schedule_s1.max_steps = 0;
    stage1_search(frozen, eng, no_steps);
    for (const auto& s : frozen.samples) {
        REQUIRE(s.pseudo_reference.has_value());
        CHECK(*s.pseudo_reference == s.input);
    }

    Corpus searched = w.data.train;
    stage1_search(searched, eng, w.cfg);
    for (const auto& s : searched.samples) {
        REQUIRE(s.pseudo_reference.has_value());
        double start = eng.score(s.input, s.input).total;
        double found = eng.score(*s.pseudo_reference, s.input).total;
        CHECK(found >= start - 1e-12);
    }

    Corpus again = w.data.train;
    stage1_search(again, eng, w.cfg);
    for (size_t i = 0; i < again.size(); ++i) {
        CHECK(*again.samples[i].pseudo_reference == *searched.samples[i].pseudo_reference);
    }
}

TEST_CASE("stage-1 learning memorizes a repeated pair") {
    const Workspace& w = ws();
    Corpus pair;
    pair.samples.resize(4);
    for (auto& s : pair.samples) {
        s.input = w.data.train.samples[0].input;
        s.pseudo_reference = w.data.train.samples[1].input;
    }
    PipelineConfig cfg = w.cfg;
    cfg.gen.width = 32;
    cfg.gen.ffw = 64;
    cfg.train.ce_epochs = 120;
    cfg.train.lr = 5e-3;
    cfg.valid_fraction = 0.0;

    LearnCurves curves;
    GeneratorModel model = stage1_learn(pair, w.data, cfg, &curves);
    CHECK(curves.train_loss.size() == 120);
    CHECK(curves.valid_loss.size() == 120);
    CHECK(curves.best_epoch >= 0);
    CHECK(curves.train_loss.back() < curves.train_loss.front());
    CHECK(greedy_decode(model, pair.samples[0].input) == *pair.samples[0].pseudo_reference);
}

TEST_CASE("stage-1 learning rejects corpora it cannot use") {
    const Workspace& w = ws();
    Corpus empty;
    CHECK_THROWS_WITH(stage1_learn(empty, w.data, w.cfg),
                      "stage-1 learning needs a non-empty corpus");

    Corpus no_pairs = w.data.train;
    for (auto& s : no_pairs.samples) s.pseudo_reference = Sentence{};
    CHECK_THROWS_WITH(stage1_learn(no_pairs, w.data, w.cfg),
                      "stage-1 learning found no usable (input, search output) pairs");
}

TEST_CASE("zero epochs return the seeded initialization unchanged") {
    const Workspace& w = ws();
    Corpus corpus = w.data.train;
    for (auto& s : corpus.samples) s.pseudo_reference = s.input;
    PipelineConfig cfg = w.cfg;
    cfg.train.ce_epochs = 0;

    GeneratorModel a = stage1_learn(corpus, w.data, cfg);
    GeneratorModel b = stage1_learn(corpus, w.data, cfg);
    fs::path pa = w.dir / "init_a.ckpt";
    fs::path pb = w.dir / "init_b.ckpt";
    save_generator(a, nullptr, pa.string());
    save_generator(b, nullptr, pb.string());
    CHECK(slurp(pa.string()) == slurp(pb.string()));

    cfg.train.ce_epochs = 1;
    GeneratorModel c = stage1_learn(corpus, w.data, cfg);
    save_generator(c, nullptr, pb.string());
    CHECK(slurp(pa.string()) != slurp(pb.string()));
}

TEST_CASE("a stage-2 epoch is deterministic given the same starting point") {
    const Workspace& w = ws();
    SearchEngine eng = w.engine();
    Corpus corpus = w.data.train;
    stage1_search(corpus, eng, w.cfg);
    PipelineConfig cfg = w.cfg;
    cfg.train.ce_epochs = 2;
    GeneratorModel start = stage1_learn(corpus, w.data, cfg);
    fs::path seed_path = w.dir / "s2_start.ckpt";
    save_generator(start, nullptr, seed_path.string());

    auto run_one = [&](Ablation ablation, Stage2Stats* stats_out) {
        PipelineConfig c = cfg;
        c.ablation = ablation;
        GeneratorModel m = load_generator(seed_path.string());
        AdamState opt;
        Stage2Stats st = stage2_epoch(m, opt, corpus, eng, c, 1);
        if (stats_out) *stats_out = st;
        fs::path out = w.dir / "s2_out.ckpt";
        save_generator(m, &opt, out.string());
        return slurp(out.string());
    };

    Stage2Stats st1, st2;
    std::string bytes1 = run_one(Ablation::kFull, &st1);
    std::string bytes2 = run_one(Ablation::kFull, &st2);
    CHECK(bytes1 == bytes2);
    CHECK(st1.skipped == st2.skipped);
    CHECK(st1.search_wins == st2.search_wins);
    CHECK(st1.mean_positive_total == doctest::Approx(st2.mean_positive_total));
    CHECK(st1.skipped >= 0);
    CHECK(st1.skipped <= static_cast<int>(corpus.size()));
    CHECK(st1.search_wins <= static_cast<int>(corpus.size()) - st1.skipped);
    CHECK(st1.mean_positive_total >= 0.0);

    // The hinge update and the literal-sign variant move the weights apart.
    PipelineConfig printed = cfg;
    printed.mm_as_printed = true;
    GeneratorModel m = load_generator(seed_path.string());
    AdamState opt;
    stage2_epoch(m, opt, corpus, eng, printed, 1);
    fs::path out = w.dir / "s2_printed.ckpt";
    save_generator(m, &opt, out.string());
    if (st1.skipped < static_cast<int>(corpus.size())) {
        CHECK(slurp(out.string()) != bytes1);
    }
}

TEST_CASE("decoding follows the ablation contract") {
    const Workspace& w = ws();
    SearchEngine eng = w.engine();
    CHECK_THROWS_WITH(decode_corpus(nullptr, w.data.test, eng, w.cfg, Ablation::kSaCe, 0),
                      "decoding needs a trained model");

    auto sa_a = decode_corpus(nullptr, w.data.test, eng, w.cfg, Ablation::kSa, 42);
    auto sa_b = decode_corpus(nullptr, w.data.test, eng, w.cfg, Ablation::kSa, 42);
    CHECK(sa_a == sa_b);
    REQUIRE(sa_a.size() == w.data.test.size());

    Corpus corpus = w.data.train;
    for (auto& s : corpus.samples) s.pseudo_reference = s.input;
    PipelineConfig cfg = w.cfg;
    cfg.train.ce_epochs = 2;
    GeneratorModel model = stage1_learn(corpus, w.data, cfg);

    auto greedy = decode_corpus(&model, w.data.test, eng, cfg, Ablation::kSaCe, 0);
    for (size_t i = 0; i < w.data.test.size(); ++i) {
        CHECK(greedy[i] == greedy_decode(model, w.data.test.samples[i].input));
    }
    auto beam = decode_corpus(&model, w.data.test, eng, cfg, Ablation::kFull, 0);
    for (size_t i = 0; i < w.data.test.size(); ++i) {
        auto hyps = beam_search(model, w.data.test.samples[i].input, cfg.gen.beam);
        REQUIRE_FALSE(hyps.empty());
        CHECK(beam[i] == hyps.front().y);
    }
}

TEST_CASE("evaluation mirrors the corpus, references, and score means") {
    const Workspace& w = ws();
    SearchEngine eng = w.engine();

    std::vector<Sentence> outs;
    for (const auto& s : w.data.valid.samples) outs.push_back(s.input);
    CHECK_THROWS_WITH(evaluate_outputs(outs, w.data.train, eng, w.scorers, w.cfg),
                      "evaluation outputs do not match the corpus size");

    StageEval with_refs = evaluate_outputs(outs, w.data.valid, eng, w.scorers, w.cfg);
    CHECK(with_refs.with_references);
    CHECK(with_refs.sample_count == w.data.valid.size());
    double mean_total = 0.0;
    for (size_t i = 0; i < outs.size(); ++i) {
        mean_total += eng.score(outs[i], w.data.valid.samples[i].input).total;
    }
    mean_total /= static_cast<double>(outs.size());
    CHECK(with_refs.mean_breakdown.total == doctest::Approx(mean_total).epsilon(1e-12));
    // Copying the input scores BLEU-vs-self at 1, so iBLEU is dragged down.
    CHECK(with_refs.metrics.self_bleu == doctest::Approx(1.0));
    CHECK(with_refs.metrics.ibleu == doctest::Approx(0.9 * with_refs.metrics.bleu - 0.1));

    auto ordered = nlohmann::ordered_json::parse(report_to_json("probe", with_refs));
    std::vector<std::string> keys;
    for (auto it = ordered.begin(); it != ordered.end(); ++it) keys.push_back(it.key());
    std::vector<std::string> expect = {"stage",      "task",      "samples",   "with_references",
                                       "mean_total", "mean_s_lm", "mean_s_word", "mean_s_sent",
                                       "mean_s_task", "perplexity", "bleu",     "self_bleu",
                                       "ibleu",      "h_mean",    "g_mean"};
    CHECK(keys == expect);
    CHECK(ordered["stage"] == "probe");
    CHECK(ordered["samples"] == w.data.valid.size());

    std::vector<Sentence> train_outs;
    for (const auto& s : w.data.train.samples) train_outs.push_back(s.input);
    StageEval no_refs = evaluate_outputs(train_outs, w.data.train, eng, w.scorers, w.cfg);
    CHECK_FALSE(no_refs.with_references);
    auto bare = nlohmann::ordered_json::parse(report_to_json("probe", no_refs));
    CHECK_FALSE(bare.contains("bleu"));
    CHECK(bare.contains("perplexity"));

    std::vector<Sentence> silent(w.data.valid.size());
    StageEval empty_eval = evaluate_outputs(silent, w.data.valid, eng, w.scorers, w.cfg);
    CHECK(empty_eval.mean_breakdown.total == doctest::Approx(0.0));
    CHECK(empty_eval.metrics.perplexity == doctest::Approx(1.0));
}

TEST_CASE("full runs reproduce byte for byte and resume from checkpoints") {
    const Workspace& w = ws();
    PipelineConfig cfg_a = w.run_config("out_a");
    PipelineConfig cfg_b = w.run_config("out_b");

    PipelineResult res_a = run_all(cfg_a);
    PipelineResult res_b = run_all(cfg_b);
    std::string reports_a = slurp(res_a.reports_path);
    CHECK(reports_a == slurp(res_b.reports_path));
    CHECK_FALSE(reports_a.empty());

    std::string joined;
    for (const auto& line : res_a.report_lines) joined += line + "\n";
    CHECK(joined == reports_a);

    CHECK(stages_of(res_a.report_lines) ==
          std::vector<std::string>{"stage1-search", "stage1-learn", "stage2-epoch1",
                                   "ablation-sa", "ablation-sa-ce", "final"});
    for (const char* name :
         {"vocab.txt", "scorers.ckpt", "stage1-search.txt", "stage1.ckpt", "stage2-epoch1.ckpt",
          "outputs-test-sa.txt", "outputs-test-sa-ce.txt", "outputs-test-final.txt",
          "reports.jsonl", "timings.jsonl"}) {
        CHECK(fs::exists(fs::path(cfg_a.out_dir) / name));
    }

    // Resuming after losing the newest checkpoint recomputes identical bytes.
    std::string ckpt = cfg_a.out_dir + "/stage2-epoch1.ckpt";
    std::string ckpt_bytes = slurp(ckpt);
    fs::remove(ckpt);
    fs::remove(cfg_a.out_dir + "/reports.jsonl");
    fs::remove(cfg_a.out_dir + "/outputs-test-final.txt");
    PipelineResult res_resumed = run_all(cfg_a);
    CHECK(slurp(res_resumed.reports_path) == reports_a);
    CHECK(slurp(ckpt) == ckpt_bytes);
}

TEST_CASE("the search-only ablation runs without a generator") {
    const Workspace& w = ws();
    PipelineConfig cfg = w.run_config("out_sa");
    cfg.ablation = Ablation::kSa;
    PipelineResult res = run_all(cfg);
    CHECK(stages_of(res.report_lines) ==
          std::vector<std::string>{"stage1-search", "final"});
    CHECK_FALSE(fs::exists(fs::path(cfg.out_dir) / "stage1.ckpt"));
    CHECK_FALSE(fs::exists(fs::path(cfg.out_dir) / "outputs-test-sa.txt"));
    CHECK(fs::exists(fs::path(cfg.out_dir) / "outputs-test-final.txt"));
}

TEST_CASE("a cold start skips cross-entropy rows but keeps the hinge stage") {
    const Workspace& w = ws();
    PipelineConfig cfg = w.run_config("out_cold");
    cfg.mm_cold_start = true;
    PipelineResult res = run_all(cfg);
    CHECK(stages_of(res.report_lines) ==
          std::vector<std::string>{"stage1-search", "stage2-epoch1", "ablation-sa", "final"});
    CHECK(fs::exists(fs::path(cfg.out_dir) / "stage1.ckpt"));
    CHECK_FALSE(fs::exists(fs::path(cfg.out_dir) / "outputs-test-sa-ce.txt"));
}

TEST_CASE("the formalize pipeline reports formality and loads its extras") {
    fs::path dir = fs::temp_directory_path() / "tgls_test_pipeline_form";
    fs::remove_all(dir);
    SyntheticSpec spec;
    spec.task = Task::kFormalize;
    spec.train_size = 16;
    spec.valid_size = 6;
    spec.test_size = 6;
    spec.seed = 9;
    write_synthetic(make_synthetic(spec), spec.task, dir.string());
    std::string extra =
        "steps=8\ntop_k=8\nwidth=16\nlayers=1\nheads=2\nffw=32\nmax_seq=48\nbeam=2\n"
        "dropout=0\nbatch=8\nce_epochs=1\nepochs_s2=1\nemb_dim=16\nthreads=1\nseed=3\n"
        "out=runout\n";
    std::ofstream(dir / "run.cfg") << slurp((dir / "task.cfg").string()) << extra;
    PipelineConfig cfg =
        make_pipeline_config(KeyValueConfig::load((dir / "run.cfg").string()), dir.string());
    CHECK(cfg.task == Task::kFormalize);

    PipelineResult res = run_all(cfg);
    CHECK(stages_of(res.report_lines) ==
          std::vector<std::string>{"stage1-search", "stage1-learn", "stage2-epoch1",
                                   "ablation-sa", "ablation-sa-ce", "final"});
    auto final_row = nlohmann::ordered_json::parse(res.report_lines.back());
    REQUIRE(final_row.contains("formality_accuracy"));
    CHECK(final_row["task"] == "formalize");
    CHECK(final_row["with_references"] == true);
    double acc = final_row["formality_accuracy"].get<double>();
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
    fs::remove_all(dir);
}
