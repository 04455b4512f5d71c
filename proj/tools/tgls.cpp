#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "tgls/annealing.hpp"
#include "tgls/checkpoint.hpp"
#include "tgls/config.hpp"
#include "tgls/log.hpp"
#include "tgls/pipeline.hpp"
#include "tgls/synthetic.hpp"
#include "tgls/text.hpp"

namespace fs = std::filesystem;
using tgls::Ablation;
using tgls::PipelineConfig;

namespace {

std::string dstr(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// One shared flag set per subcommand; every flag maps onto a config key and
// overwrites the file's value when present.
struct SharedFlags {
    std::string config;
    std::string task;
    std::string rules;
    std::string out;
    std::string ablation;
    uint64_t seed = 0;
    int threads = 0;
    int steps = 0;
    double t_init = 0.0;
    double cooling = 0.0;
    double alpha = 0.0, beta = 0.0, gamma = 0.0, delta = 0.0;
    int top_k = 0;
    int beam = 0;
    double margin = 0.0;
    int epochs_s2 = 0;
    bool mm_as_printed = false;
    bool mm_cold_start = false;
    bool print_config = false;
    std::map<std::string, CLI::Option*> opts;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--config", config, "key=value config file");
        opts["task"] = cmd->add_option("--task", task, "paraphrase or formalize");
        opts["seed"] = cmd->add_option("--seed", seed, "base random seed");
        opts["threads"] = cmd->add_option("--threads", threads, "worker threads");
        opts["steps"] = cmd->add_option("--steps", steps, "annealing steps (both stages)");
        opts["t_init"] = cmd->add_option("--t-init", t_init, "initial temperature");
        opts["cooling"] = cmd->add_option("--cooling", cooling, "temperature decrement per step");
        opts["alpha"] = cmd->add_option("--alpha", alpha, "fluency exponent");
        opts["beta"] = cmd->add_option("--beta", beta, "keyword exponent");
        opts["gamma"] = cmd->add_option("--gamma", gamma, "sentence-similarity exponent");
        opts["delta"] = cmd->add_option("--delta", delta, "task exponent");
        opts["top_k"] = cmd->add_option("--top-k", top_k, "proposal candidates per slot");
        opts["beam"] = cmd->add_option("--beam", beam, "beam size");
        opts["margin"] = cmd->add_option("--margin", margin, "max-margin hinge margin");
        opts["epochs_s2"] = cmd->add_option("--epochs-s2", epochs_s2, "stage-2 epochs");
        opts["mm_as_printed"] =
            cmd->add_flag("--mm-as-printed", mm_as_printed, "literal hinge sign variant");
        opts["mm_cold_start"] =
            cmd->add_flag("--mm-cold-start", mm_cold_start, "skip stage-1 learning");
        opts["rules"] = cmd->add_option("--rules", rules, "phrase rewrite rules (tsv)");
        opts["out"] = cmd->add_option("--out", out, "artifact directory");
        opts["ablation"] =
            cmd->add_option("--ablation", ablation, "sa | sa-ce | sa-ce-sa | sa-ce-sa-ce | full");
        cmd->add_flag("--print-config", print_config, "print the resolved config and exit");
    }

    PipelineConfig resolve() const {
        tgls::KeyValueConfig kv;
        std::string config_dir;
        if (!config.empty()) {
            kv = tgls::KeyValueConfig::load(config);
            config_dir = fs::path(config).parent_path().string();
        }
        auto present = [&](const char* key) { return opts.at(key)->count() > 0; };
        if (present("task")) kv.set("task", task);
        if (present("seed")) kv.set("seed", std::to_string(seed));
        if (present("threads")) kv.set("threads", std::to_string(threads));
        if (present("steps")) kv.set("steps", std::to_string(steps));
        if (present("t_init")) kv.set("t_init", dstr(t_init));
        if (present("cooling")) kv.set("cooling", dstr(cooling));
        if (present("alpha")) kv.set("alpha", dstr(alpha));
        if (present("beta")) kv.set("beta", dstr(beta));
        if (present("gamma")) kv.set("gamma", dstr(gamma));
        if (present("delta")) kv.set("delta", dstr(delta));
        if (present("top_k")) kv.set("top_k", std::to_string(top_k));
        if (present("beam")) kv.set("beam", std::to_string(beam));
        if (present("margin")) kv.set("margin", dstr(margin));
        if (present("epochs_s2")) kv.set("epochs_s2", std::to_string(epochs_s2));
        if (present("mm_as_printed")) kv.set("mm_as_printed", "true");
        if (present("mm_cold_start")) kv.set("mm_cold_start", "true");
        if (present("ablation")) kv.set("ablation", ablation);
        // Command-line paths are relative to the working directory, not the
        // config file, so they are absolutized before the merge.
        if (present("rules")) kv.set("rules", fs::absolute(rules).lexically_normal().string());
        if (present("out")) kv.set("out", fs::absolute(out).lexically_normal().string());
        return tgls::make_pipeline_config(kv, config_dir);
    }
};

void print_resolved(const PipelineConfig& cfg) {
    std::printf("task=%s\n", cfg.task == tgls::Task::kFormalize ? "formalize" : "paraphrase");
    std::printf("out=%s\n", cfg.out_dir.c_str());
    std::printf("train=%s\n", cfg.train_path.c_str());
    std::printf("valid=%s\n", cfg.valid_path.c_str());
    std::printf("test=%s\n", cfg.test_path.c_str());
    std::printf("refs_valid=%s\n", cfg.refs_valid_path.c_str());
    std::printf("refs_test=%s\n", cfg.refs_test_path.c_str());
    std::printf("lm=%s\n", cfg.lm_path.c_str());
    std::printf("emb=%s\n", cfg.emb_path.c_str());
    std::printf("labeled=%s\n", cfg.labeled_path.c_str());
    std::printf("rules=%s\n", cfg.rules_path.c_str());
    std::printf("seed=%llu\n", static_cast<unsigned long long>(cfg.seed));
    std::printf("threads=%d\n", cfg.threads);
    std::printf("steps=%d\n", cfg.schedule_s1.max_steps);
    std::printf("t_init=%s\n", dstr(cfg.schedule_s1.t_init).c_str());
    std::printf("cooling=%s\n", dstr(cfg.schedule_s1.c).c_str());
    std::printf("s2_steps=%d\n", cfg.schedule_s2.max_steps);
    std::printf("s2_t_init=%s\n", dstr(cfg.schedule_s2.t_init).c_str());
    std::printf("s2_cooling=%s\n", dstr(cfg.schedule_s2.c).c_str());
    std::printf("alpha=%s\n", dstr(cfg.weights.alpha).c_str());
    std::printf("beta=%s\n", dstr(cfg.weights.beta).c_str());
    std::printf("gamma=%s\n", dstr(cfg.weights.gamma).c_str());
    std::printf("delta=%s\n", dstr(cfg.weights.delta).c_str());
    std::printf("top_k=%d\n", cfg.proposal.top_k);
    std::printf("argmax_selection=%s\n", cfg.proposal.argmax_selection ? "true" : "false");
    std::printf("max_len=%d\n", cfg.proposal.max_len);
    std::printf("width=%d\n", cfg.gen.width);
    std::printf("layers=%d\n", cfg.gen.layers);
    std::printf("heads=%d\n", cfg.gen.heads);
    std::printf("ffw=%d\n", cfg.gen.ffw);
    std::printf("max_seq=%d\n", cfg.gen.max_seq);
    std::printf("beam=%d\n", cfg.gen.beam);
    std::printf("dropout=%s\n", dstr(cfg.gen.dropout).c_str());
    std::printf("lr=%s\n", dstr(cfg.train.lr).c_str());
    std::printf("batch=%d\n", cfg.train.batch_size);
    std::printf("ce_epochs=%d\n", cfg.train.ce_epochs);
    std::printf("margin=%s\n", dstr(cfg.train.margin).c_str());
    std::printf("epochs_s2=%d\n", cfg.stage2_epochs);
    std::printf("lm_order=%d\n", cfg.lm_order);
    std::printf("emb_dim=%d\n", cfg.emb_dim);
    std::printf("ablation=%s\n", tgls::ablation_name(cfg.ablation));
    std::printf("mm_as_printed=%s\n", cfg.mm_as_printed ? "true" : "false");
    std::printf("mm_cold_start=%s\n", cfg.mm_cold_start ? "true" : "false");
    std::printf("valid_fraction=%s\n", dstr(cfg.valid_fraction).c_str());
    std::printf("save_traces=%s\n", cfg.save_traces ? "true" : "false");
}

tgls::Scorers ensure_scorers(const PipelineConfig& cfg, const tgls::TaskData& data) {
    fs::create_directories(cfg.out_dir);
    std::string path = cfg.out_dir + "/scorers.ckpt";
    if (fs::exists(path)) return tgls::load_scorers(path);
    tgls::log_info("training scorers");
    tgls::Scorers scorers = tgls::train_task_scorers(data, cfg);
    tgls::save_scorers(scorers, path);
    return tgls::load_scorers(path);
}

// Newest stage-2 checkpoint by epoch number, else the stage-1 checkpoint,
// else empty.
std::string latest_checkpoint(const PipelineConfig& cfg) {
    int best = -1;
    if (fs::is_directory(cfg.out_dir)) {
        for (const auto& entry : fs::directory_iterator(cfg.out_dir)) {
            std::string name = entry.path().filename().string();
            const std::string prefix = "stage2-epoch";
            const std::string suffix = ".ckpt";
            if (name.size() <= prefix.size() + suffix.size()) continue;
            if (name.compare(0, prefix.size(), prefix) != 0) continue;
            if (name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) continue;
            std::string mid = name.substr(prefix.size(), name.size() - prefix.size() - suffix.size());
            try {
                int k = std::stoi(mid);
                if (std::to_string(k) == mid && k > best) best = k;
            } catch (const std::exception&) {
                continue;
            }
        }
    }
    if (best >= 0) return cfg.out_dir + "/stage2-epoch" + std::to_string(best) + ".ckpt";
    std::string s1 = cfg.out_dir + "/stage1.ckpt";
    if (fs::exists(s1)) return s1;
    return "";
}

int cmd_make_synthetic(const std::string& task_name, const std::string& out_dir, size_t vocab,
                       size_t train, size_t valid, size_t test, uint64_t seed) {
    tgls::SyntheticSpec spec;
    if (task_name == "paraphrase") {
        spec.task = tgls::Task::kParaphrase;
    } else if (task_name == "formalize") {
        spec.task = tgls::Task::kFormalize;
    } else {
        throw std::runtime_error("unknown task '" + task_name +
                                 "' (expected paraphrase or formalize)");
    }
    spec.vocab_size = vocab;
    spec.train_size = train;
    spec.valid_size = valid;
    spec.test_size = test;
    spec.seed = seed;
    tgls::SyntheticData data = tgls::make_synthetic(spec);
    tgls::write_synthetic(data, spec.task, out_dir);
    std::printf("%s/task.cfg\n", out_dir.c_str());
    return 0;
}

int cmd_train_scorers(const SharedFlags& flags) {
    PipelineConfig cfg = flags.resolve();
    if (flags.print_config) {
        print_resolved(cfg);
        return 0;
    }
    tgls::TaskData data = tgls::load_task_data(cfg);
    fs::create_directories(cfg.out_dir);
    data.vocab.save(cfg.out_dir + "/vocab.txt");
    tgls::Scorers scorers = tgls::train_task_scorers(data, cfg);
    tgls::save_scorers(scorers, cfg.out_dir + "/scorers.ckpt");
    std::printf("%s/scorers.ckpt\n", cfg.out_dir.c_str());
    return 0;
}

int cmd_search(const SharedFlags& flags, const std::string& text, const std::string& trace_path) {
    PipelineConfig cfg = flags.resolve();
    if (flags.print_config) {
        print_resolved(cfg);
        return 0;
    }
    if (text.empty()) throw std::runtime_error("search needs --text");
    tgls::TaskData data = tgls::load_task_data(cfg);
    tgls::Scorers scorers = ensure_scorers(cfg, data);
    tgls::SearchEngine eng = tgls::make_engine(scorers, data, cfg);
    tgls::Sentence x = tgls::tokenize(text, data.vocab, cfg.proposal.max_len);
    if (x.empty()) throw std::runtime_error("the input tokenized to an empty sentence");
    tgls::Rng rng(tgls::derive_seed(cfg.seed, 0));
    tgls::SearchResult res = tgls::sa_search(x, x, eng.keywords(x), eng.context(), cfg.schedule_s1,
                                             cfg.proposal, rng);
    std::printf("%s\n", tgls::detokenize(res.best, data.vocab).c_str());
    std::printf("total=%.6g s_lm=%.6g s_word=%.6g s_sent=%.6g s_task=%.6g\n", res.best_score.total,
                res.best_score.s_lm, res.best_score.s_word, res.best_score.s_sent,
                res.best_score.s_task);
    if (!trace_path.empty()) {
        tgls::atomic_write_file(trace_path, tgls::trace_to_json_lines(res.trace, data.vocab));
        tgls::log_info("trace written to %s", trace_path.c_str());
    }
    return 0;
}

int run_pipeline(PipelineConfig cfg, bool print_only) {
    if (print_only) {
        print_resolved(cfg);
        return 0;
    }
    tgls::run_all(cfg);
    std::printf("%s/reports.jsonl\n", cfg.out_dir.c_str());
    return 0;
}

int cmd_generate(const SharedFlags& flags, const std::string& text) {
    PipelineConfig cfg = flags.resolve();
    if (flags.print_config) {
        print_resolved(cfg);
        return 0;
    }
    std::string ckpt = latest_checkpoint(cfg);
    if (ckpt.empty()) {
        throw std::runtime_error("no generator checkpoint under " + cfg.out_dir +
                                 " (run stage1 or run-all first)");
    }
    tgls::TaskData data = tgls::load_task_data(cfg);
    tgls::GeneratorModel model = tgls::load_generator(ckpt);
    tgls::log_info("decoding with %s", ckpt.c_str());
    auto decode_one = [&](const tgls::Sentence& x) {
        if (x.empty() || x.size() + 2 > static_cast<size_t>(model.config().max_seq)) {
            return std::string();
        }
        if (cfg.gen.beam <= 1) return tgls::detokenize(tgls::greedy_decode(model, x), data.vocab);
        auto beam = tgls::beam_search(model, x, cfg.gen.beam);
        if (beam.empty()) return std::string();
        return tgls::detokenize(beam.front().y, data.vocab);
    };
    if (!text.empty()) {
        tgls::Sentence x = tgls::tokenize(text, data.vocab, cfg.proposal.max_len);
        std::printf("%s\n", decode_one(x).c_str());
        return 0;
    }
    if (data.test.empty()) {
        throw std::runtime_error("generate needs --text or a test corpus in the config");
    }
    for (const auto& sample : data.test.samples) {
        std::printf("%s\n", decode_one(sample.input).c_str());
    }
    return 0;
}

int cmd_eval(const SharedFlags& flags) {
    PipelineConfig cfg = flags.resolve();
    if (flags.print_config) {
        print_resolved(cfg);
        return 0;
    }
    tgls::TaskData data = tgls::load_task_data(cfg);
    if (data.test.empty()) throw std::runtime_error("eval needs a test corpus in the config");
    tgls::Scorers scorers = ensure_scorers(cfg, data);
    tgls::SearchEngine eng = tgls::make_engine(scorers, data, cfg);

    std::string ckpt = latest_checkpoint(cfg);
    tgls::GeneratorModel model;
    Ablation mode = Ablation::kSa;
    if (!ckpt.empty()) {
        model = tgls::load_generator(ckpt);
        bool stage2 = ckpt.find("stage2-epoch") != std::string::npos;
        mode = stage2 ? Ablation::kFull : Ablation::kSaCe;
        tgls::log_info("decoding with %s", ckpt.c_str());
    } else {
        tgls::log_info("no generator checkpoint; evaluating annealing outputs");
    }
    double per = 0.0;
    auto outs = tgls::decode_corpus(ckpt.empty() ? nullptr : &model, data.test, eng, cfg, mode,
                                    tgls::derive_seed(0, 0), &per);
    tgls::StageEval eval = tgls::evaluate_outputs(outs, data.test, eng, scorers, cfg);
    if (!eval.with_references) {
        tgls::log_info("warning: no gold references; BLEU columns omitted");
    }
    std::printf("%s\n", tgls::report_to_json("eval", eval).c_str());
    tgls::log_info("decode: %.4g sec/sample", per);
    return 0;
}

int cmd_inspect_trace(const std::string& path) {
    auto lines = tgls::read_lines(path);
    for (const auto& line : lines) {
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception&) {
            std::printf("%s\n", line.c_str());
            continue;
        }
        std::string kind = j.value("kind", "");
        if (kind == "header") {
            std::printf("input:      %s\n", j.value("input", "").c_str());
            std::printf("start:      %s (total %.6g)\n", j.value("start", "").c_str(),
                        j.contains("start_score") ? j["start_score"].value("total", 0.0) : 0.0);
            std::printf("steps: %d  best_step: %d\n", j.value("steps", 0), j.value("best_step", 0));
        } else if (kind == "step") {
            double cur = j.contains("current") ? j["current"].value("total", 0.0) : 0.0;
            double prop = j.contains("proposed") ? j["proposed"].value("total", 0.0) : 0.0;
            std::printf("%4d T=%.2e %-8s pos=%-2d %-8s p=%.3f %.6g -> %.6g  %s\n",
                        j.value("step", 0), j.value("temperature", 0.0),
                        j.value("op", "").c_str(), j.value("position", 0),
                        j.value("accepted", false) ? "accept" : "reject",
                        j.value("accept_prob", 0.0), cur, prop, j.value("proposal", "").c_str());
        } else {
            std::printf("%s\n", line.c_str());
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"search-and-learn text rewriting toolkit"};
    app.require_subcommand(1);

    SharedFlags f_scorers, f_search, f_stage1, f_stage2, f_runall, f_generate, f_eval;

    CLI::App* c_scorers = app.add_subcommand("train-scorers", "train and save the frozen scorers");
    f_scorers.add_to(c_scorers);

    CLI::App* c_search = app.add_subcommand("search", "anneal a single input sentence");
    f_search.add_to(c_search);
    std::string search_text, search_trace;
    c_search->add_option("--text", search_text, "input sentence")->required();
    c_search->add_option("--trace", search_trace, "write the step trace to this file");

    CLI::App* c_stage1 = app.add_subcommand("stage1", "search + cross-entropy learning");
    f_stage1.add_to(c_stage1);

    CLI::App* c_stage2 = app.add_subcommand("stage2", "alternating search and margin learning");
    f_stage2.add_to(c_stage2);

    CLI::App* c_runall = app.add_subcommand("run-all", "full pipeline with evaluation");
    f_runall.add_to(c_runall);

    CLI::App* c_generate = app.add_subcommand("generate", "decode with the newest checkpoint");
    f_generate.add_to(c_generate);
    std::string generate_text;
    c_generate->add_option("--text", generate_text, "single input (default: the test corpus)");

    CLI::App* c_eval = app.add_subcommand("eval", "decode the test corpus and report metrics");
    f_eval.add_to(c_eval);

    CLI::App* c_inspect = app.add_subcommand("inspect-trace", "pretty-print a search trace");
    std::string trace_file;
    c_inspect->add_option("trace", trace_file, "trace file (JSON lines)")->required();

    CLI::App* c_synth = app.add_subcommand("make-synthetic", "generate a synthetic corpus");
    std::string synth_task = "paraphrase", synth_out;
    size_t synth_vocab = 200, synth_train = 2000, synth_valid = 200, synth_test = 200;
    uint64_t synth_seed = 0;
    c_synth->add_option("--task", synth_task, "paraphrase or formalize");
    c_synth->add_option("--out", synth_out, "output directory")->required();
    c_synth->add_option("--vocab", synth_vocab, "vocabulary budget");
    c_synth->add_option("--train", synth_train, "training inputs");
    c_synth->add_option("--valid", synth_valid, "validation inputs");
    c_synth->add_option("--test", synth_test, "test inputs");
    c_synth->add_option("--seed", synth_seed, "corpus seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (c_scorers->parsed()) return cmd_train_scorers(f_scorers);
        if (c_search->parsed()) return cmd_search(f_search, search_text, search_trace);
        if (c_stage1->parsed()) {
            PipelineConfig cfg = f_stage1.resolve();
            if (static_cast<int>(cfg.ablation) > static_cast<int>(Ablation::kSaCe)) {
                cfg.ablation = Ablation::kSaCe;
            }
            return run_pipeline(std::move(cfg), f_stage1.print_config);
        }
        if (c_stage2->parsed()) {
            PipelineConfig cfg = f_stage2.resolve();
            if (static_cast<int>(cfg.ablation) < static_cast<int>(Ablation::kSaCeSaCe)) {
                cfg.ablation = Ablation::kFull;
            }
            return run_pipeline(std::move(cfg), f_stage2.print_config);
        }
        if (c_runall->parsed()) return run_pipeline(f_runall.resolve(), f_runall.print_config);
        if (c_generate->parsed()) return cmd_generate(f_generate, generate_text);
        if (c_eval->parsed()) return cmd_eval(f_eval);
        if (c_inspect->parsed()) return cmd_inspect_trace(trace_file);
        if (c_synth->parsed()) {
            return cmd_make_synthetic(synth_task, synth_out, synth_vocab, synth_train, synth_valid,
                                      synth_test, synth_seed);
        }
    } catch (const std::runtime_error& e) {
        tgls::log_error("%s", e.what());
        return 1;
    } catch (const std::exception& e) {
        tgls::log_error("internal error: %s", e.what());
        return 2;
    }
    return 0;
}
