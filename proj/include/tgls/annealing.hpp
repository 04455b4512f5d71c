#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tgls/objective.hpp"
#include "tgls/rng.hpp"
#include "tgls/text.hpp"

namespace tgls {

struct AnnealingSchedule {
    double t_init = 1e-2;
    double c = 2e-4;
    int max_steps = 50;

    static AnnealingSchedule paraphrase_defaults() { return {1e-2, 2e-4, 50}; }
    static AnnealingSchedule formalize_defaults() { return {1e-2, 1e-4, 100}; }
};

// max(t_init - c*t, 0).
double temperature(const AnnealingSchedule& schedule, int t);

// min(1, exp((s_new - s_old) / T)); the T = 0 limit is greedy: accept
// exactly when the proposal does not score worse.
double acceptance_prob(double s_new, double s_old, double temp);

enum class EditKind { kReplace, kInsert, kDelete, kRule, kNone };

struct EditOp {
    EditKind kind = EditKind::kNone;
    int position = 0;
    TokenId token = -1;
    int rule_id = -1;
    // Set when no legal edit existed and the proposal is the unchanged
    // sentence.
    bool degenerate = false;
};

const char* edit_kind_name(EditKind kind);

struct Rule {
    std::vector<TokenId> source;
    std::vector<TokenId> target;
};

// Phrase substitution table ("we 're" -> "we are"), tokenized under the
// shared vocabulary and indexed by first source token.
class RuleTable {
  public:
    static RuleTable load(const std::string& path, const Vocabulary& vocab,
                          int max_len = kDefaultMaxLen);
    static RuleTable from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs,
                                const Vocabulary& vocab, int max_len = kDefaultMaxLen);

    bool empty() const { return rules_.empty(); }
    size_t size() const { return rules_.size(); }
    const Rule& rule(int id) const { return rules_.at(static_cast<size_t>(id)); }

    // Every (rule id, start position) whose source phrase occurs in y and
    // whose application changes the sentence.
    std::vector<std::pair<int, int>> matches(const Sentence& y) const;

  private:
    std::vector<Rule> rules_;
    std::unordered_map<TokenId, std::vector<int>> index_;

    void add_rule(Rule rule);
};

Sentence apply_rule(const Sentence& y, const Rule& rule, int position);

struct ProposalConfig {
    int top_k = 50;
    // Pick the highest-total candidate instead of sampling proportionally.
    bool argmax_selection = false;
    int max_len = kDefaultMaxLen;
};

// Scorers and candidate generators shared by every proposal; all read-only.
struct SearchContext {
    const Objective* objective = nullptr;
    const NGramModel* fwd = nullptr;
    const NGramModel* bwd = nullptr;
    const RuleTable* rules = nullptr;  // optional; enables Rule edits
};

struct ProposeResult {
    Sentence candidate;
    EditOp op;
    ScoreBreakdown score;
};

// One random edit: operator and position drawn uniformly among legal
// choices; Replace/Insert candidates come from the bidirectional word
// posterior and are sampled proportionally to their full objective totals.
ProposeResult propose(const Sentence& y, const Sentence& x, const KeywordSet& keywords,
                      const SearchContext& ctx, const ProposalConfig& cfg, Rng& rng);

struct TraceStep {
    int step = 0;  // 1-based
    double temperature = 0.0;
    EditOp op;
    Sentence proposal;
    ScoreBreakdown current;
    ScoreBreakdown proposed;
    double accept_prob = 0.0;
    bool accepted = false;
};

struct SearchTrace {
    Sentence x;
    Sentence y0;
    ScoreBreakdown y0_score;
    std::vector<TraceStep> steps;
    // 0 means y0; otherwise the 1-based step whose accepted proposal is the
    // returned sentence.
    int best_step = 0;
};

struct SearchResult {
    Sentence best;
    ScoreBreakdown best_score;
    SearchTrace trace;
};

// Simulated annealing from y0: propose, score, accept with the annealing
// rule, and return the highest-scoring state ever occupied (y0 included),
// ties broken toward the earliest step.
SearchResult sa_search(const Sentence& x, const Sentence& y0, const KeywordSet& keywords,
                       const SearchContext& ctx, const AnnealingSchedule& schedule,
                       const ProposalConfig& cfg, Rng& rng);

// One JSON object per line: a header, then one object per step.
std::string trace_to_json_lines(const SearchTrace& trace, const Vocabulary& vocab);

}  // namespace tgls
