#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tgls/annealing.hpp"
#include "tgls/checkpoint.hpp"
#include "tgls/config.hpp"
#include "tgls/generator.hpp"
#include "tgls/metrics.hpp"
#include "tgls/objective.hpp"
#include "tgls/semantics.hpp"
#include "tgls/text.hpp"

namespace tgls {

// How much of the pipeline runs and how its output model is decoded:
//   kSa          search only; outputs come from annealing over each input.
//   kSaCe        stage-1 learning; greedy decode.
//   kSaCeSa      stage-1 learning; greedy decode refined by search at eval.
//   kSaCeSaCe    stage 2 trains with cross-entropy on the search output.
//   kFull        stage 2 trains with the max-margin loss; beam decode.
enum class Ablation { kSa, kSaCe, kSaCeSa, kSaCeSaCe, kFull };

const char* ablation_name(Ablation a);
Ablation parse_ablation(const std::string& name);  // throws on unknown names

struct PipelineConfig {
    Task task = Task::kParaphrase;
    std::string out_dir = "tgls-out";

    // Data files, resolved to concrete paths by make_pipeline_config.
    std::string train_path;
    std::string valid_path;
    std::string test_path;
    std::string refs_valid_path;
    std::string refs_test_path;
    std::string lm_path;
    std::string emb_path;
    std::string labeled_path;
    std::string rules_path;

    ScorerWeights weights = ScorerWeights::paraphrase_defaults();
    AnnealingSchedule schedule_s1 = AnnealingSchedule::paraphrase_defaults();
    AnnealingSchedule schedule_s2 = AnnealingSchedule::paraphrase_defaults();
    ProposalConfig proposal;
    GeneratorConfig gen;
    TrainConfig train;
    int stage2_epochs = 6;
    int lm_order = 3;
    int emb_dim = 64;
    uint64_t seed = 0;
    int threads = 1;
    Ablation ablation = Ablation::kFull;
    bool mm_as_printed = false;
    bool mm_cold_start = false;
    double valid_fraction = 0.05;
    bool save_traces = false;
};

// Defaults for the task, overridden by the recognized config keys; relative
// paths resolve against config_dir. Unknown keys are an error.
PipelineConfig make_pipeline_config(const KeyValueConfig& file, const std::string& config_dir);

// Corpora plus the vocabulary built deterministically over every line the
// task ships (inputs, references, scorer corpora, labeled sentences).
struct TaskData {
    Vocabulary vocab;
    Corpus train;
    Corpus valid;  // gold_references attached when the refs file exists
    Corpus test;
    std::vector<Sentence> lm_lines;
    std::vector<Sentence> emb_lines;
    std::optional<Corpus> labeled;
    std::optional<RuleTable> rules;
};

TaskData load_task_data(const PipelineConfig& cfg);

// Non-owning bundle wiring the objective and proposal scorers; the Scorers
// and TaskData it points into must outlive it.
struct SearchEngine {
    Objective objective;
    const NGramModel* fwd = nullptr;
    const NGramModel* bwd = nullptr;
    const RuleTable* rules = nullptr;
    RakeConfig rake;
    const Vocabulary* vocab = nullptr;
    const StyleClassifier* clf = nullptr;

    // Built on demand so copies of the bundle never hold stale self-pointers.
    SearchContext context() const { return {&objective, fwd, bwd, rules}; }

    KeywordSet keywords(const Sentence& x) const { return extract_keywords(x, *vocab, rake); }
    ScoreBreakdown score(const Sentence& y, const Sentence& x) const {
        return objective.score(y, x, keywords(x));
    }
};

Scorers train_task_scorers(const TaskData& data, const PipelineConfig& cfg);
SearchEngine make_engine(const Scorers& scorers, const TaskData& data,
                         const PipelineConfig& cfg);

// Annealing from y0 = x for every sample; fills pseudo_reference. Per-sample
// seeds derive from cfg.seed, so results are independent of thread count.
// Returns mean wall-clock seconds per sample.
double stage1_search(Corpus& corpus, const SearchEngine& eng, const PipelineConfig& cfg);

struct LearnCurves {
    std::vector<double> train_loss;  // mean per-sample loss, one per epoch
    std::vector<double> valid_loss;
    int best_epoch = -1;
};

// Cross-entropy training on (input -> pseudo_reference) pairs with a small
// deterministic validation split; returns the parameters of the epoch with
// the best validation loss. Zero epochs returns the initialized model.
GeneratorModel stage1_learn(const Corpus& corpus, const TaskData& data,
                            const PipelineConfig& cfg, LearnCurves* curves = nullptr);

struct Stage2Stats {
    int skipped = 0;      // samples whose beam held nothing usable
    int search_wins = 0;  // samples where annealing out-scored every beam row
    double mean_positive_total = 0.0;
    double sa_sec_per_sample = 0.0;
    double decode_sec_per_sample = 0.0;
};

// One alternation: beam-decode each sample, anneal from a uniformly picked
// hypothesis, pool the beam with the search output, pick the highest-total
// candidate as the positive, and apply per-batch updates (max-margin, or
// cross-entropy on the search output under the kSaCeSaCe ablation).
Stage2Stats stage2_epoch(GeneratorModel& model, AdamState& opt, const Corpus& corpus,
                         const SearchEngine& eng, const PipelineConfig& cfg, int epoch);

// Decodes eval outputs for the ablation: annealing for kSa, greedy decode
// for CE-only models (plus annealing refinement for kSaCeSa), beam
// otherwise. model may be null only for kSa.
std::vector<Sentence> decode_corpus(const GeneratorModel* model, const Corpus& corpus,
                                    const SearchEngine& eng, const PipelineConfig& cfg,
                                    Ablation ablation, uint64_t phase_seed,
                                    double* sec_per_sample = nullptr);

// One evaluated stage: corpus metrics plus the mean objective factors over
// the outputs. sample_count always equals the corpus size.
struct StageEval {
    MetricReport metrics;
    ScoreBreakdown mean_breakdown;
    bool with_references = false;
    size_t sample_count = 0;
};

// Corpus metrics for precomputed outputs: objective means always; BLEU,
// iBLEU or formality depending on task and reference availability.
StageEval evaluate_outputs(const std::vector<Sentence>& outputs, const Corpus& corpus,
                           const SearchEngine& eng, const Scorers& scorers,
                           const PipelineConfig& cfg);

// Deterministic single-line JSON object; wall-clock never appears here.
std::string report_to_json(const std::string& stage, const StageEval& eval);

struct PipelineResult {
    std::optional<GeneratorModel> model;
    std::vector<std::string> report_lines;  // reports.jsonl content, in order
    std::string reports_path;
    std::string timings_path;
};

// Runs scorer training (or reload), stage-1 search and learning, stage-2
// alternations, and final evaluation, checkpointing every stage under
// cfg.out_dir. Reports are byte-deterministic; timings go to a separate
// file. Stages reload their inputs from the files the previous stage wrote,
// so a full run and a staged run produce identical artifacts.
PipelineResult run_all(const PipelineConfig& cfg);

}  // namespace tgls
