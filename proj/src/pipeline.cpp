#include "tgls/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tgls/log.hpp"
#include "tgls/parallel.hpp"
#include "tgls/rng.hpp"

namespace tgls {
namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

constexpr double kIbleuAlpha = 0.9;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

// Random-stream phases. A loop's phase is kSeed* * 1000 + epoch and the
// sample's corpus index is the stream index, so seeds never depend on the
// thread count or the batch partition.
enum SeedPhase : uint64_t {
    kSeedClassifier = 1,
    kSeedModelInit = 2,
    kSeedStage1Search = 3,
    kSeedValidSplit = 4,
    kSeedCeShuffle = 5,
    kSeedCeDropout = 6,
    kSeedStage2 = 7,
    kSeedStage2Shuffle = 8,
    kSeedStage2Dropout = 9,
    kSeedEvalSearch = 10,
};

uint64_t phase_of(SeedPhase phase, uint64_t sub = 0) {
    return static_cast<uint64_t>(phase) * 1000 + sub;
}

int ablation_rank(Ablation a) { return static_cast<int>(a); }

std::string resolve_path(const std::string& dir, const std::string& p) {
    if (p.empty()) return p;
    fs::path path(p);
    if (path.is_absolute() || dir.empty()) return p;
    return (fs::path(dir) / path).lexically_normal().string();
}

// Forward-only cross-entropy, for validation scoring.
double ce_loss_eval(const GeneratorModel& model, const Sentence& x, const Sentence& y) {
    LogitSequence logits = forward_logits(model, x, y);
    double loss = 0.0;
    for (size_t r = 0; r < logits.size(); ++r) {
        TokenId target = r < y.size() ? y.ids[r] : Vocabulary::kEos;
        const std::vector<double>& z = logits[r];
        double mx = *std::max_element(z.begin(), z.end());
        double denom = 0.0;
        for (double v : z) denom += std::exp(v - mx);
        loss += mx + std::log(denom) - z[static_cast<size_t>(target)];
    }
    return loss;
}

bool fits_generator(const GeneratorConfig& cfg, const Sentence& x, const Sentence& y) {
    return x.size() + y.size() + 2 <= static_cast<size_t>(cfg.max_seq);
}

std::vector<std::string> tsv_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::istringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    return fields;
}

std::string join_lines(const std::vector<std::string>& lines) {
    std::string out;
    for (const auto& l : lines) {
        out += l;
        out += '\n';
    }
    return out;
}

}  // namespace

const char* ablation_name(Ablation a) {
    switch (a) {
        case Ablation::kSa: return "sa";
        case Ablation::kSaCe: return "sa-ce";
        case Ablation::kSaCeSa: return "sa-ce-sa";
        case Ablation::kSaCeSaCe: return "sa-ce-sa-ce";
        case Ablation::kFull: return "full";
    }
    return "full";
}

Ablation parse_ablation(const std::string& name) {
    if (name == "sa") return Ablation::kSa;
    if (name == "sa-ce") return Ablation::kSaCe;
    if (name == "sa-ce-sa") return Ablation::kSaCeSa;
    if (name == "sa-ce-sa-ce") return Ablation::kSaCeSaCe;
    if (name == "full") return Ablation::kFull;
    throw std::runtime_error("unknown ablation '" + name +
                             "' (expected sa, sa-ce, sa-ce-sa, sa-ce-sa-ce, or full)");
}

PipelineConfig make_pipeline_config(const KeyValueConfig& file, const std::string& config_dir) {
    static const std::set<std::string> known = {
        "task",         "out",          "seed",          "threads",
        "train",        "valid",        "test",          "refs_valid",
        "refs_test",    "lm",           "emb",           "labeled",
        "rules",        "steps",        "t_init",        "cooling",
        "s2_steps",     "s2_t_init",    "s2_cooling",    "alpha",
        "beta",         "gamma",        "delta",         "top_k",
        "argmax_selection",             "max_len",       "width",
        "layers",       "heads",        "ffw",           "max_seq",
        "beam",         "dropout",      "lr",            "batch",
        "ce_epochs",    "margin",       "epochs_s2",     "lm_order",
        "emb_dim",      "ablation",     "mm_as_printed", "mm_cold_start",
        "valid_fraction",               "save_traces",
    };
    for (const auto& [key, value] : file.entries()) {
        (void)value;
        if (!known.count(key)) throw std::runtime_error("unknown config key '" + key + "'");
    }

    PipelineConfig cfg;
    std::string task = file.get_string("task", "paraphrase");
    if (task == "paraphrase") {
        cfg.task = Task::kParaphrase;
    } else if (task == "formalize") {
        cfg.task = Task::kFormalize;
        cfg.weights = ScorerWeights::formalize_defaults();
        cfg.schedule_s1 = AnnealingSchedule::formalize_defaults();
        cfg.schedule_s2 = AnnealingSchedule::formalize_defaults();
    } else {
        throw std::runtime_error("unknown task '" + task + "' (expected paraphrase or formalize)");
    }

    cfg.out_dir = resolve_path(config_dir, file.get_string("out", "tgls-out"));
    cfg.train_path = resolve_path(config_dir, file.get_string("train", ""));
    cfg.valid_path = resolve_path(config_dir, file.get_string("valid", ""));
    cfg.test_path = resolve_path(config_dir, file.get_string("test", ""));
    cfg.refs_valid_path = resolve_path(config_dir, file.get_string("refs_valid", ""));
    cfg.refs_test_path = resolve_path(config_dir, file.get_string("refs_test", ""));
    cfg.lm_path = resolve_path(config_dir, file.get_string("lm", ""));
    cfg.emb_path = resolve_path(config_dir, file.get_string("emb", ""));
    cfg.labeled_path = resolve_path(config_dir, file.get_string("labeled", ""));
    cfg.rules_path = resolve_path(config_dir, file.get_string("rules", ""));

    cfg.seed = static_cast<uint64_t>(file.get_int("seed", 0));
    cfg.threads = static_cast<int>(file.get_int("threads", default_threads()));
    if (cfg.threads < 1) throw std::runtime_error("config key 'threads' must be at least 1");

    // steps / t_init / cooling set both stages; s2_* then override stage 2.
    cfg.schedule_s1.max_steps = static_cast<int>(file.get_int("steps", cfg.schedule_s1.max_steps));
    cfg.schedule_s1.t_init = file.get_double("t_init", cfg.schedule_s1.t_init);
    cfg.schedule_s1.c = file.get_double("cooling", cfg.schedule_s1.c);
    cfg.schedule_s2 = cfg.schedule_s1;
    cfg.schedule_s2.max_steps = static_cast<int>(file.get_int("s2_steps", cfg.schedule_s2.max_steps));
    cfg.schedule_s2.t_init = file.get_double("s2_t_init", cfg.schedule_s2.t_init);
    cfg.schedule_s2.c = file.get_double("s2_cooling", cfg.schedule_s2.c);
    if (cfg.schedule_s1.max_steps < 0 || cfg.schedule_s2.max_steps < 0) {
        throw std::runtime_error("config key 'steps' must be non-negative");
    }

    cfg.weights.alpha = file.get_double("alpha", cfg.weights.alpha);
    cfg.weights.beta = file.get_double("beta", cfg.weights.beta);
    cfg.weights.gamma = file.get_double("gamma", cfg.weights.gamma);
    cfg.weights.delta = file.get_double("delta", cfg.weights.delta);

    cfg.proposal.top_k = static_cast<int>(file.get_int("top_k", cfg.proposal.top_k));
    cfg.proposal.argmax_selection = file.get_bool("argmax_selection", cfg.proposal.argmax_selection);
    cfg.proposal.max_len = static_cast<int>(file.get_int("max_len", cfg.proposal.max_len));
    if (cfg.proposal.top_k < 1) throw std::runtime_error("config key 'top_k' must be at least 1");
    if (cfg.proposal.max_len < 1) throw std::runtime_error("config key 'max_len' must be at least 1");

    cfg.gen.width = static_cast<int>(file.get_int("width", cfg.gen.width));
    cfg.gen.layers = static_cast<int>(file.get_int("layers", cfg.gen.layers));
    cfg.gen.heads = static_cast<int>(file.get_int("heads", cfg.gen.heads));
    cfg.gen.ffw = static_cast<int>(file.get_int("ffw", cfg.gen.ffw));
    cfg.gen.max_seq = static_cast<int>(file.get_int("max_seq", cfg.gen.max_seq));
    cfg.gen.beam = static_cast<int>(file.get_int("beam", cfg.gen.beam));
    cfg.gen.dropout = file.get_double("dropout", cfg.gen.dropout);
    if (cfg.gen.beam < 1) throw std::runtime_error("config key 'beam' must be at least 1");

    cfg.train.lr = file.get_double("lr", cfg.train.lr);
    cfg.train.batch_size = static_cast<int>(file.get_int("batch", cfg.train.batch_size));
    cfg.train.ce_epochs = static_cast<int>(file.get_int("ce_epochs", cfg.train.ce_epochs));
    cfg.train.margin = file.get_double("margin", cfg.train.margin);
    if (cfg.train.batch_size < 1) throw std::runtime_error("config key 'batch' must be at least 1");
    if (cfg.train.ce_epochs < 0) throw std::runtime_error("config key 'ce_epochs' must be non-negative");

    cfg.stage2_epochs = static_cast<int>(file.get_int("epochs_s2", cfg.stage2_epochs));
    if (cfg.stage2_epochs < 0) throw std::runtime_error("config key 'epochs_s2' must be non-negative");
    cfg.lm_order = static_cast<int>(file.get_int("lm_order", cfg.lm_order));
    cfg.emb_dim = static_cast<int>(file.get_int("emb_dim", cfg.emb_dim));

    cfg.ablation = parse_ablation(file.get_string("ablation", "full"));
    cfg.mm_as_printed = file.get_bool("mm_as_printed", false);
    cfg.mm_cold_start = file.get_bool("mm_cold_start", false);
    cfg.valid_fraction = file.get_double("valid_fraction", cfg.valid_fraction);
    if (cfg.valid_fraction < 0.0 || cfg.valid_fraction >= 1.0) {
        throw std::runtime_error("config key 'valid_fraction' must lie in [0, 1)");
    }
    cfg.save_traces = file.get_bool("save_traces", false);
    return cfg;
}

TaskData load_task_data(const PipelineConfig& cfg) {
    if (cfg.train_path.empty()) {
        throw std::runtime_error("config is missing the training corpus path ('train')");
    }

    std::vector<std::string> vocab_lines;
    auto add_plain = [&](const std::string& path) {
        if (path.empty()) return;
        for (auto& line : read_lines(path)) {
            if (!line.empty()) vocab_lines.push_back(line);
        }
    };
    auto add_tsv = [&](const std::string& path, size_t first_field) {
        if (path.empty()) return;
        for (auto& line : read_lines(path)) {
            if (line.empty()) continue;
            auto fields = tsv_fields(line);
            for (size_t f = first_field; f < fields.size(); ++f) {
                if (!fields[f].empty()) vocab_lines.push_back(fields[f]);
            }
        }
    };
    add_plain(cfg.train_path);
    add_plain(cfg.valid_path);
    add_plain(cfg.test_path);
    add_tsv(cfg.refs_valid_path, 0);
    add_tsv(cfg.refs_test_path, 0);
    add_plain(cfg.lm_path);
    add_plain(cfg.emb_path);
    add_tsv(cfg.labeled_path, 1);  // field 0 is the style label
    add_tsv(cfg.rules_path, 0);

    TaskData data;
    data.vocab = Vocabulary::build(vocab_lines, 1);

    int max_len = cfg.proposal.max_len;
    data.train = load_plain_corpus(cfg.train_path, data.vocab, cfg.task, max_len);
    if (data.train.empty()) {
        throw std::runtime_error("training corpus is empty: " + cfg.train_path);
    }
    if (!cfg.valid_path.empty()) {
        data.valid = load_plain_corpus(cfg.valid_path, data.vocab, cfg.task, max_len);
        if (!cfg.refs_valid_path.empty()) {
            attach_references(data.valid, cfg.refs_valid_path, data.vocab, max_len);
        }
    }
    data.valid.task = cfg.task;
    if (!cfg.test_path.empty()) {
        data.test = load_plain_corpus(cfg.test_path, data.vocab, cfg.task, max_len);
        if (!cfg.refs_test_path.empty()) {
            attach_references(data.test, cfg.refs_test_path, data.vocab, max_len);
        }
    }
    data.test.task = cfg.task;

    auto to_sentences = [&](const std::string& path) {
        std::vector<Sentence> out;
        for (auto& line : read_lines(path)) {
            if (line.empty()) continue;
            Sentence s = tokenize(line, data.vocab, max_len);
            if (!s.empty()) out.push_back(std::move(s));
        }
        return out;
    };
    auto train_inputs = [&] {
        std::vector<Sentence> out;
        out.reserve(data.train.size());
        for (const auto& sample : data.train.samples) out.push_back(sample.input);
        return out;
    };
    data.lm_lines = cfg.lm_path.empty() ? train_inputs() : to_sentences(cfg.lm_path);
    data.emb_lines = cfg.emb_path.empty() ? train_inputs() : to_sentences(cfg.emb_path);
    if (data.lm_lines.empty()) throw std::runtime_error("fluency corpus is empty");
    if (data.emb_lines.empty()) throw std::runtime_error("embedding corpus is empty");

    if (!cfg.labeled_path.empty()) {
        data.labeled = load_labeled_corpus(cfg.labeled_path, data.vocab, max_len);
    }
    if (!cfg.rules_path.empty()) {
        data.rules = RuleTable::load(cfg.rules_path, data.vocab, max_len);
    }
    return data;
}

Scorers train_task_scorers(const TaskData& data, const PipelineConfig& cfg) {
    Scorers scorers;
    scorers.fwd = NGramModel::train(data.lm_lines, cfg.lm_order, NGramModel::Direction::kForward,
                                    data.vocab.size());
    scorers.bwd = NGramModel::train(data.lm_lines, cfg.lm_order, NGramModel::Direction::kBackward,
                                    data.vocab.size());
    scorers.emb = EmbeddingTable::train(data.emb_lines, data.vocab.size(), cfg.emb_dim);
    if (cfg.task == Task::kFormalize) {
        if (!data.labeled) {
            throw std::runtime_error(
                "the formalize task needs a labeled corpus ('labeled') for the style classifier");
        }
        scorers.clf = StyleClassifier::train(*data.labeled, data.vocab, 1e-4, 10, 0.1,
                                             derive_seed(cfg.seed, phase_of(kSeedClassifier)));
    }
    return scorers;
}

SearchEngine make_engine(const Scorers& scorers, const TaskData& data, const PipelineConfig& cfg) {
    SearchEngine eng;
    eng.fwd = &scorers.fwd;
    eng.bwd = &scorers.bwd;
    eng.rake = default_rake_config();
    eng.vocab = &data.vocab;
    if (data.rules) eng.rules = &*data.rules;
    if (cfg.task == Task::kFormalize) {
        if (!scorers.clf) {
            throw std::runtime_error("formalize scorers are missing the style classifier");
        }
        eng.clf = &*scorers.clf;
        eng.objective =
            Objective::formalize(&scorers.fwd, &scorers.emb, eng.clf, &data.vocab, cfg.weights);
    } else {
        eng.objective = Objective::paraphrase(&scorers.fwd, &scorers.emb, cfg.weights);
    }
    return eng;
}

double stage1_search(Corpus& corpus, const SearchEngine& eng, const PipelineConfig& cfg) {
    size_t n = corpus.size();
    if (n == 0) return 0.0;
    std::vector<Sentence> best(n);
    std::vector<std::string> traces(cfg.save_traces ? n : 0);
    auto start = Clock::now();
    parallel_for(n, cfg.threads, [&](size_t i) {
        const Sentence& x = corpus.samples[i].input;
        Rng rng(derive_seed(cfg.seed, phase_of(kSeedStage1Search), i));
        SearchResult res =
            sa_search(x, x, eng.keywords(x), eng.context(), cfg.schedule_s1, cfg.proposal, rng);
        best[i] = std::move(res.best);
        if (cfg.save_traces) traces[i] = trace_to_json_lines(res.trace, *eng.vocab);
    });
    double per_sample = seconds_since(start) / static_cast<double>(n);
    for (size_t i = 0; i < n; ++i) corpus.samples[i].pseudo_reference = std::move(best[i]);
    if (cfg.save_traces) {
        std::string all;
        for (const auto& t : traces) {
            all += t;
            if (!t.empty() && t.back() != '\n') all += '\n';
        }
        fs::create_directories(cfg.out_dir);
        atomic_write_file(cfg.out_dir + "/stage1-traces.jsonl", all);
    }
    return per_sample;
}

GeneratorModel stage1_learn(const Corpus& corpus, const TaskData& data, const PipelineConfig& cfg,
                            LearnCurves* curves) {
    if (corpus.empty()) throw std::runtime_error("stage-1 learning needs a non-empty corpus");

    struct Pair {
        const Sentence* x;
        const Sentence* y;
        size_t index;
    };
    std::vector<Pair> pairs;
    for (size_t i = 0; i < corpus.size(); ++i) {
        const DataSample& s = corpus.samples[i];
        if (!s.pseudo_reference || s.pseudo_reference->empty() || s.input.empty()) continue;
        if (!fits_generator(cfg.gen, s.input, *s.pseudo_reference)) continue;
        pairs.push_back({&s.input, &*s.pseudo_reference, i});
    }
    if (pairs.empty()) {
        throw std::runtime_error("stage-1 learning found no usable (input, search output) pairs");
    }

    GeneratorModel model =
        GeneratorModel::init(cfg.gen, data.vocab.size(), derive_seed(cfg.seed, phase_of(kSeedModelInit)));
    if (cfg.train.ce_epochs == 0) return model;

    std::vector<size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    Rng split_rng(derive_seed(cfg.seed, phase_of(kSeedValidSplit)));
    std::shuffle(order.begin(), order.end(), split_rng);
    size_t n_val = static_cast<size_t>(cfg.valid_fraction * static_cast<double>(pairs.size()));
    if (cfg.valid_fraction > 0.0 && n_val == 0 && pairs.size() >= 2) n_val = 1;
    if (n_val >= pairs.size()) n_val = pairs.size() - 1;
    std::vector<size_t> val_idx(order.begin(), order.begin() + static_cast<ptrdiff_t>(n_val));
    std::vector<size_t> train_idx(order.begin() + static_cast<ptrdiff_t>(n_val), order.end());
    // Without a held-out slice, early stopping scores the training pairs.
    const std::vector<size_t>& eval_idx = val_idx.empty() ? train_idx : val_idx;

    AdamState opt;
    std::vector<double> grad(model.param_count());
    std::vector<double> best_params = model.params();
    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = -1;
    size_t batch = static_cast<size_t>(cfg.train.batch_size);

    for (int epoch = 0; epoch < cfg.train.ce_epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.seed, phase_of(kSeedCeShuffle, static_cast<uint64_t>(epoch))));
        std::shuffle(train_idx.begin(), train_idx.end(), shuffle_rng);
        double train_loss = 0.0;
        for (size_t b = 0; b < train_idx.size(); b += batch) {
            size_t end = std::min(train_idx.size(), b + batch);
            std::fill(grad.begin(), grad.end(), 0.0);
            for (size_t k = b; k < end; ++k) {
                const Pair& p = pairs[train_idx[k]];
                Rng drop(derive_seed(cfg.seed, phase_of(kSeedCeDropout, static_cast<uint64_t>(epoch)),
                                     p.index));
                Rng* drop_ptr = cfg.gen.dropout > 0.0 ? &drop : nullptr;
                train_loss += ce_loss_and_grad(model, *p.x, *p.y, grad, drop_ptr);
            }
            double scale = 1.0 / static_cast<double>(end - b);
            for (double& g : grad) g *= scale;
            optimizer_step(model, grad, cfg.train, opt);
        }
        train_loss /= static_cast<double>(train_idx.size());

        std::vector<double> losses(eval_idx.size());
        parallel_for(eval_idx.size(), cfg.threads, [&](size_t k) {
            const Pair& p = pairs[eval_idx[k]];
            losses[k] = ce_loss_eval(model, *p.x, *p.y);
        });
        double val_loss =
            std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
        log_debug("ce epoch %d: train %.4f valid %.4f", epoch + 1, train_loss, val_loss);
        if (curves) {
            curves->train_loss.push_back(train_loss);
            curves->valid_loss.push_back(val_loss);
        }
        if (val_loss < best_val) {
            best_val = val_loss;
            best_params = model.params();
            best_epoch = epoch;
        }
    }
    if (curves) curves->best_epoch = best_epoch;
    model.params() = std::move(best_params);
    return model;
}

Stage2Stats stage2_epoch(GeneratorModel& model, AdamState& opt, const Corpus& corpus,
                         const SearchEngine& eng, const PipelineConfig& cfg, int epoch) {
    Stage2Stats stats;
    size_t n = corpus.size();
    if (n == 0) return stats;

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(cfg.seed, phase_of(kSeedStage2Shuffle, static_cast<uint64_t>(epoch))));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    struct SampleOut {
        bool usable = false;
        Sentence y_plus;
        std::vector<Sentence> negatives;
        Sentence sa_best;
        bool search_win = false;
        double positive_total = 0.0;
        double decode_s = 0.0;
        double sa_s = 0.0;
    };

    std::vector<double> grad(model.param_count());
    double positive_sum = 0.0;
    int contributing = 0;
    double sa_sec = 0.0;
    double decode_sec = 0.0;
    size_t batch = static_cast<size_t>(cfg.train.batch_size);

    for (size_t b = 0; b < n; b += batch) {
        size_t end = std::min(n, b + batch);
        std::vector<SampleOut> outs(end - b);
        parallel_for(end - b, cfg.threads, [&](size_t k) {
            size_t idx = order[b + k];
            const Sentence& x = corpus.samples[idx].input;
            SampleOut& out = outs[k];
            if (x.empty() || x.size() + 2 > static_cast<size_t>(cfg.gen.max_seq)) return;

            auto t0 = Clock::now();
            std::vector<BeamHypothesis> beam = beam_search(model, x, cfg.gen.beam);
            out.decode_s = seconds_since(t0);
            // Hypotheses longer than the search length cap cannot seed the
            // annealer and are dropped with the empty ones.
            std::vector<Sentence> pool;
            for (auto& h : beam) {
                if (h.y.empty() || h.y.size() > static_cast<size_t>(cfg.proposal.max_len)) continue;
                if (!fits_generator(cfg.gen, x, h.y)) continue;
                pool.push_back(std::move(h.y));
            }
            if (pool.empty()) return;

            Rng rng(derive_seed(cfg.seed, phase_of(kSeedStage2, static_cast<uint64_t>(epoch)), idx));
            const Sentence& y0 = pool[uniform_index(rng, pool.size())];
            KeywordSet kw = eng.keywords(x);
            auto t1 = Clock::now();
            SearchResult res =
                sa_search(x, y0, kw, eng.context(), cfg.schedule_s2, cfg.proposal, rng);
            out.sa_s = seconds_since(t1);
            out.sa_best = res.best;

            // Candidate pool: beam rows in order, the search output appended
            // last, duplicates removed, so the search result is preferred
            // only when it strictly out-scores every hypothesis.
            std::vector<Sentence> unique;
            auto seen = [&](const Sentence& y) {
                for (const auto& u : unique) {
                    if (u.ids == y.ids) return true;
                }
                return false;
            };
            for (auto& y : pool) {
                if (!seen(y)) unique.push_back(std::move(y));
            }
            bool sa_added = false;
            if (fits_generator(cfg.gen, x, res.best) && !seen(res.best)) {
                unique.push_back(res.best);
                sa_added = true;
            }

            size_t best_i = 0;
            double best_total = -std::numeric_limits<double>::infinity();
            for (size_t i = 0; i < unique.size(); ++i) {
                double total = eng.objective.score(unique[i], x, kw).total;
                if (total > best_total) {
                    best_total = total;
                    best_i = i;
                }
            }
            out.y_plus = unique[best_i];
            out.positive_total = best_total;
            out.search_win = sa_added && best_i == unique.size() - 1;
            for (size_t i = 0; i < unique.size(); ++i) {
                if (i != best_i) out.negatives.push_back(unique[i]);
            }
            out.usable = true;
        });

        std::fill(grad.begin(), grad.end(), 0.0);
        int batch_n = 0;
        for (size_t k = 0; k < outs.size(); ++k) {
            SampleOut& out = outs[k];
            decode_sec += out.decode_s;
            sa_sec += out.sa_s;
            if (!out.usable) {
                ++stats.skipped;
                continue;
            }
            positive_sum += out.positive_total;
            ++contributing;
            if (out.search_win) ++stats.search_wins;
            size_t idx = order[b + k];
            const Sentence& x = corpus.samples[idx].input;
            if (cfg.ablation == Ablation::kSaCeSaCe) {
                if (out.sa_best.empty() || !fits_generator(cfg.gen, x, out.sa_best)) {
                    ++stats.skipped;
                    continue;
                }
                Rng drop(derive_seed(cfg.seed, phase_of(kSeedStage2Dropout, static_cast<uint64_t>(epoch)),
                                     idx));
                Rng* drop_ptr = cfg.gen.dropout > 0.0 ? &drop : nullptr;
                ce_loss_and_grad(model, x, out.sa_best, grad, drop_ptr);
                ++batch_n;
            } else {
                if (out.negatives.empty()) {
                    ++stats.skipped;
                    continue;
                }
                mm_loss_and_grad(model, x, out.y_plus, out.negatives, cfg.train.margin, grad,
                                 cfg.mm_as_printed);
                ++batch_n;
            }
        }
        if (batch_n > 0) {
            double scale = 1.0 / static_cast<double>(batch_n);
            for (double& g : grad) g *= scale;
            optimizer_step(model, grad, cfg.train, opt);
        }
    }
    stats.mean_positive_total = contributing > 0 ? positive_sum / contributing : 0.0;
    stats.sa_sec_per_sample = sa_sec / static_cast<double>(n);
    stats.decode_sec_per_sample = decode_sec / static_cast<double>(n);
    return stats;
}

std::vector<Sentence> decode_corpus(const GeneratorModel* model, const Corpus& corpus,
                                    const SearchEngine& eng, const PipelineConfig& cfg,
                                    Ablation ablation, uint64_t phase_seed,
                                    double* sec_per_sample) {
    if (ablation != Ablation::kSa && model == nullptr) {
        throw std::runtime_error("decoding needs a trained model");
    }
    size_t n = corpus.size();
    std::vector<Sentence> out(n);
    auto start = Clock::now();
    parallel_for(n, cfg.threads, [&](size_t i) {
        const Sentence& x = corpus.samples[i].input;
        if (x.empty()) return;
        if (ablation != Ablation::kSa && x.size() + 2 > static_cast<size_t>(cfg.gen.max_seq)) {
            out[i] = x;
            return;
        }
        switch (ablation) {
            case Ablation::kSa: {
                Rng rng(derive_seed(cfg.seed, phase_seed, i));
                out[i] = sa_search(x, x, eng.keywords(x), eng.context(), cfg.schedule_s1,
                                   cfg.proposal, rng)
                             .best;
                break;
            }
            case Ablation::kSaCe:
                out[i] = greedy_decode(*model, x);
                break;
            case Ablation::kSaCeSa: {
                Sentence y0 = greedy_decode(*model, x);
                if (y0.empty() || y0.size() > static_cast<size_t>(cfg.proposal.max_len)) y0 = x;
                Rng rng(derive_seed(cfg.seed, phase_seed, i));
                out[i] = sa_search(x, y0, eng.keywords(x), eng.context(), cfg.schedule_s2,
                                   cfg.proposal, rng)
                             .best;
                break;
            }
            case Ablation::kSaCeSaCe:
            case Ablation::kFull: {
                auto beam = beam_search(*model, x, cfg.gen.beam);
                if (!beam.empty()) out[i] = std::move(beam.front().y);
                break;
            }
        }
    });
    if (sec_per_sample) {
        *sec_per_sample = n == 0 ? 0.0 : seconds_since(start) / static_cast<double>(n);
    }
    return out;
}

StageEval evaluate_outputs(const std::vector<Sentence>& outputs, const Corpus& corpus,
                           const SearchEngine& eng, const Scorers& scorers,
                           const PipelineConfig& cfg) {
    if (outputs.size() != corpus.size()) {
        throw std::runtime_error("evaluation outputs do not match the corpus size");
    }
    StageEval eval;
    eval.sample_count = corpus.size();
    eval.metrics.task = cfg.task == Task::kFormalize ? "formalize" : "paraphrase";
    size_t n = corpus.size();
    if (n == 0) return eval;

    bool with_refs = true;
    for (const auto& s : corpus.samples) {
        if (s.gold_references.empty()) {
            with_refs = false;
            break;
        }
    }
    eval.with_references = with_refs;
    bool formality = cfg.task == Task::kFormalize && eng.clf != nullptr;

    std::vector<SampleMetrics> rows(n);
    std::vector<ScoreBreakdown> breakdowns(n);
    parallel_for(n, cfg.threads, [&](size_t i) {
        const Sentence& x = corpus.samples[i].input;
        const Sentence& y = outputs[i];
        breakdowns[i] = eng.score(y, x);
        SampleMetrics& row = rows[i];
        row.index = static_cast<int>(i);
        row.output = detokenize(y, *eng.vocab);
        row.total_score = breakdowns[i].total;
        if (with_refs) {
            row.bleu = bleu(y, corpus.samples[i].gold_references);
            row.self_bleu = bleu(y, {x});
            row.ibleu = ibleu(y, corpus.samples[i].gold_references, x, kIbleuAlpha);
        }
        if (formality) row.formality = eng.clf->prob_formal(y, *eng.vocab);
    });

    ScoreBreakdown mean;
    for (const auto& b : breakdowns) {
        mean.s_lm += b.s_lm;
        mean.s_word += b.s_word;
        mean.s_sent += b.s_sent;
        mean.s_task += b.s_task;
        mean.total += b.total;
    }
    mean.s_lm /= static_cast<double>(n);
    mean.s_word /= static_cast<double>(n);
    mean.s_sent /= static_cast<double>(n);
    mean.s_task /= static_cast<double>(n);
    mean.total /= static_cast<double>(n);
    eval.mean_breakdown = mean;

    MetricReport& rep = eval.metrics;
    rep.mean_total_score = mean.total;
    if (with_refs) {
        std::vector<std::vector<Sentence>> refs(n);
        std::vector<std::vector<Sentence>> self_refs(n);
        for (size_t i = 0; i < n; ++i) {
            refs[i] = corpus.samples[i].gold_references;
            self_refs[i] = {corpus.samples[i].input};
        }
        rep.bleu = corpus_bleu(outputs, refs);
        rep.self_bleu = corpus_bleu(outputs, self_refs);
        rep.ibleu = kIbleuAlpha * rep.bleu - (1.0 - kIbleuAlpha) * rep.self_bleu;
    }
    if (formality) {
        size_t formal = 0;
        for (const auto& row : rows) {
            if (row.formality > 0.5) ++formal;
        }
        rep.formality_accuracy = static_cast<double>(formal) / static_cast<double>(n);
        if (with_refs) {
            rep.h_mean = h_mean(rep.formality_accuracy, rep.bleu);
            rep.g_mean = g_mean(rep.formality_accuracy, rep.bleu);
        }
    } else if (with_refs) {
        // Paraphrase trade-off: reference overlap against novelty from the
        // source.
        rep.h_mean = h_mean(rep.bleu, 1.0 - rep.self_bleu);
        rep.g_mean = g_mean(rep.bleu, 1.0 - rep.self_bleu);
    }
    // Empty decodes carry no tokens to score; they already show up as zero
    // totals, so perplexity pools the non-empty outputs.
    std::vector<Sentence> scored;
    scored.reserve(n);
    for (const auto& y : outputs) {
        if (!y.empty()) scored.push_back(y);
    }
    if (!scored.empty()) rep.perplexity = perplexity(scorers.fwd, scored);
    rep.rows = std::move(rows);
    return eval;
}

std::string report_to_json(const std::string& stage, const StageEval& eval) {
    ordered_json j;
    j["stage"] = stage;
    j["task"] = eval.metrics.task;
    j["samples"] = eval.sample_count;
    j["with_references"] = eval.with_references;
    j["mean_total"] = eval.mean_breakdown.total;
    j["mean_s_lm"] = eval.mean_breakdown.s_lm;
    j["mean_s_word"] = eval.mean_breakdown.s_word;
    j["mean_s_sent"] = eval.mean_breakdown.s_sent;
    j["mean_s_task"] = eval.mean_breakdown.s_task;
    j["perplexity"] = eval.metrics.perplexity;
    if (eval.with_references) {
        j["bleu"] = eval.metrics.bleu;
        j["self_bleu"] = eval.metrics.self_bleu;
        j["ibleu"] = eval.metrics.ibleu;
        j["h_mean"] = eval.metrics.h_mean;
        j["g_mean"] = eval.metrics.g_mean;
    }
    if (eval.metrics.task == "formalize") {
        j["formality_accuracy"] = eval.metrics.formality_accuracy;
    }
    return j.dump();
}

PipelineResult run_all(const PipelineConfig& cfg) {
    auto run_start = Clock::now();
    fs::create_directories(cfg.out_dir);
    PipelineResult result;
    result.reports_path = cfg.out_dir + "/reports.jsonl";
    result.timings_path = cfg.out_dir + "/timings.jsonl";
    std::vector<std::string> reports;
    std::vector<std::string> timings;
    auto add_timing = [&](const std::string& stage, const char* key, double value) {
        ordered_json j;
        j["stage"] = stage;
        j[key] = value;
        timings.push_back(j.dump());
    };
    auto write_outputs = [&](const std::string& name, const std::vector<Sentence>& outs,
                             const Vocabulary& vocab) {
        std::vector<std::string> lines;
        lines.reserve(outs.size());
        for (const auto& y : outs) lines.push_back(detokenize(y, vocab));
        atomic_write_file(cfg.out_dir + "/" + name, join_lines(lines));
    };

    log_info("loading task data");
    TaskData data = load_task_data(cfg);
    data.vocab.save(cfg.out_dir + "/vocab.txt");
    log_info("vocabulary: %zu entries; train %zu, valid %zu, test %zu samples", data.vocab.size(),
             data.train.size(), data.valid.size(), data.test.size());

    std::string scorers_path = cfg.out_dir + "/scorers.ckpt";
    Scorers scorers;
    if (fs::exists(scorers_path)) {
        log_info("reusing scorers checkpoint %s", scorers_path.c_str());
        scorers = load_scorers(scorers_path);
    } else {
        log_info("training scorers");
        auto t0 = Clock::now();
        scorers = train_task_scorers(data, cfg);
        save_scorers(scorers, scorers_path);
        // Reload so a fresh run and a resumed run continue from identical
        // float-rounded state.
        scorers = load_scorers(scorers_path);
        add_timing("scorers", "seconds", seconds_since(t0));
    }
    SearchEngine eng = make_engine(scorers, data, cfg);
    int rank = ablation_rank(cfg.ablation);

    // Stage 1 search: annealing from each training input. The outputs are
    // persisted as text and re-read in both the fresh and the resumed path,
    // so downstream stages always see the file's tokenization.
    std::string s1_path = cfg.out_dir + "/stage1-search.txt";
    if (!fs::exists(s1_path)) {
        log_info("stage 1: searching %zu training inputs", data.train.size());
        double per = stage1_search(data.train, eng, cfg);
        add_timing("stage1-search", "seconds_per_sample", per);
        std::vector<std::string> lines;
        lines.reserve(data.train.size());
        for (const auto& s : data.train.samples) {
            lines.push_back(detokenize(*s.pseudo_reference, data.vocab));
        }
        atomic_write_file(s1_path, join_lines(lines));
    } else {
        log_info("reusing search outputs %s", s1_path.c_str());
    }
    {
        auto lines = read_lines(s1_path);
        if (lines.size() != data.train.size()) {
            throw std::runtime_error("stage1-search.txt has " + std::to_string(lines.size()) +
                                     " lines but the training corpus has " +
                                     std::to_string(data.train.size()) + " samples");
        }
        for (size_t i = 0; i < lines.size(); ++i) {
            data.train.samples[i].pseudo_reference =
                tokenize(lines[i], data.vocab, cfg.proposal.max_len);
        }
    }
    if (!data.valid.empty()) {
        double per = 0.0;
        auto outs = decode_corpus(nullptr, data.valid, eng, cfg, Ablation::kSa,
                                  phase_of(kSeedEvalSearch, 1), &per);
        add_timing("stage1-search", "valid_seconds_per_sample", per);
        reports.push_back(
            report_to_json("stage1-search", evaluate_outputs(outs, data.valid, eng, scorers, cfg)));
    }

    GeneratorModel model;
    bool have_model = false;
    std::string stage1_ckpt = cfg.out_dir + "/stage1.ckpt";
    if (rank >= ablation_rank(Ablation::kSaCe)) {
        if (fs::exists(stage1_ckpt)) {
            log_info("reusing generator checkpoint %s", stage1_ckpt.c_str());
            model = load_generator(stage1_ckpt);
        } else {
            auto t0 = Clock::now();
            if (cfg.mm_cold_start) {
                log_info("stage 1: cold start, skipping cross-entropy learning");
                model = GeneratorModel::init(cfg.gen, data.vocab.size(),
                                             derive_seed(cfg.seed, phase_of(kSeedModelInit)));
            } else {
                log_info("stage 1: cross-entropy learning, %d epochs", cfg.train.ce_epochs);
                LearnCurves curves;
                model = stage1_learn(data.train, data, cfg, &curves);
                if (curves.best_epoch >= 0) {
                    log_info("stage 1: best validation loss at epoch %d", curves.best_epoch + 1);
                }
            }
            save_generator(model, nullptr, stage1_ckpt);
            model = load_generator(stage1_ckpt);
            add_timing("stage1-learn", "seconds", seconds_since(t0));
        }
        have_model = true;
        if (!data.valid.empty() && !cfg.mm_cold_start) {
            double per = 0.0;
            auto outs = decode_corpus(&model, data.valid, eng, cfg, Ablation::kSaCe, 0, &per);
            add_timing("stage1-learn", "valid_seconds_per_sample", per);
            reports.push_back(report_to_json("stage1-learn",
                                             evaluate_outputs(outs, data.valid, eng, scorers, cfg)));
        }
    }

    if (rank >= ablation_rank(Ablation::kSaCeSaCe)) {
        AdamState opt;
        for (int k = 1; k <= cfg.stage2_epochs; ++k) {
            std::string ckpt = cfg.out_dir + "/stage2-epoch" + std::to_string(k) + ".ckpt";
            std::string stage = "stage2-epoch" + std::to_string(k);
            if (fs::exists(ckpt)) {
                log_info("reusing generator checkpoint %s", ckpt.c_str());
                model = load_generator(ckpt, &opt);
            } else {
                auto t0 = Clock::now();
                Stage2Stats st = stage2_epoch(model, opt, data.train, eng, cfg, k);
                log_info("%s: %d search wins, %d skipped, mean positive total %.6g", stage.c_str(),
                         st.search_wins, st.skipped, st.mean_positive_total);
                ordered_json tj;
                tj["stage"] = stage;
                tj["seconds"] = seconds_since(t0);
                tj["sa_seconds_per_sample"] = st.sa_sec_per_sample;
                tj["decode_seconds_per_sample"] = st.decode_sec_per_sample;
                timings.push_back(tj.dump());
                save_generator(model, &opt, ckpt);
                model = load_generator(ckpt, &opt);
            }
            if (!data.valid.empty()) {
                double per = 0.0;
                auto outs = decode_corpus(&model, data.valid, eng, cfg, Ablation::kSaCe, 0, &per);
                add_timing(stage, "valid_seconds_per_sample", per);
                reports.push_back(
                    report_to_json(stage, evaluate_outputs(outs, data.valid, eng, scorers, cfg)));
            }
        }
    }

    if (!data.test.empty()) {
        if (rank >= ablation_rank(Ablation::kSaCeSaCe)) {
            // Ablation rows on the test split, mirroring the staged variants
            // of the same run.
            double per = 0.0;
            auto sa_outs = decode_corpus(nullptr, data.test, eng, cfg, Ablation::kSa,
                                         phase_of(kSeedEvalSearch, 2), &per);
            add_timing("ablation-sa", "seconds_per_sample", per);
            reports.push_back(report_to_json(
                "ablation-sa", evaluate_outputs(sa_outs, data.test, eng, scorers, cfg)));
            write_outputs("outputs-test-sa.txt", sa_outs, data.vocab);
            if (!cfg.mm_cold_start) {
                GeneratorModel stage1_model = load_generator(stage1_ckpt);
                auto ce_outs =
                    decode_corpus(&stage1_model, data.test, eng, cfg, Ablation::kSaCe, 0, &per);
                add_timing("ablation-sa-ce", "seconds_per_sample", per);
                reports.push_back(report_to_json(
                    "ablation-sa-ce", evaluate_outputs(ce_outs, data.test, eng, scorers, cfg)));
                write_outputs("outputs-test-sa-ce.txt", ce_outs, data.vocab);
            }
        }
        double per = 0.0;
        auto outs = decode_corpus(have_model ? &model : nullptr, data.test, eng, cfg, cfg.ablation,
                                  phase_of(kSeedEvalSearch, 3), &per);
        add_timing("final", "seconds_per_sample", per);
        reports.push_back(
            report_to_json("final", evaluate_outputs(outs, data.test, eng, scorers, cfg)));
        write_outputs("outputs-test-final.txt", outs, data.vocab);
    }

    add_timing("total", "seconds", seconds_since(run_start));
    atomic_write_file(result.reports_path, join_lines(reports));
    atomic_write_file(result.timings_path, join_lines(timings));
    result.report_lines = std::move(reports);
    if (have_model) result.model = std::move(model);
    log_info("run complete: %s", result.reports_path.c_str());
    return result;
}

}  // namespace tgls
