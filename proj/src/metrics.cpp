#include "tgls/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <stdexcept>

#include <json.hpp>

#include "tgls/log.hpp"

namespace tgls {

namespace {

using NgramCounts = std::map<std::vector<TokenId>, int64_t>;

struct OrderStats {
    int64_t matched = 0;
    int64_t total = 0;
};

NgramCounts count_ngrams(const std::vector<TokenId>& ids, int n) {
    NgramCounts counts;
    if (static_cast<int>(ids.size()) < n) return counts;
    for (size_t i = 0; i + static_cast<size_t>(n) <= ids.size(); ++i) {
        std::vector<TokenId> gram(ids.begin() + static_cast<std::ptrdiff_t>(i),
                                  ids.begin() + static_cast<std::ptrdiff_t>(i) + n);
        ++counts[gram];
    }
    return counts;
}

void validate(const BleuConfig& cfg) {
    if (cfg.max_order < 1 || cfg.max_order > 4) {
        throw std::invalid_argument("bleu max_order must be in [1,4]");
    }
    if (cfg.smoothing && cfg.epsilon <= 0.0) {
        throw std::invalid_argument("bleu smoothing epsilon must be positive");
    }
}

// Clipped matches per order: candidate counts capped by the per-gram maximum
// over all references.
void accumulate_order_stats(const Sentence& candidate, const std::vector<Sentence>& references,
                            int max_order, std::vector<OrderStats>& stats) {
    for (int n = 1; n <= max_order; ++n) {
        NgramCounts cand = count_ngrams(candidate.ids, n);
        if (cand.empty()) continue;
        NgramCounts best_ref;
        for (const auto& ref : references) {
            for (const auto& [gram, count] : count_ngrams(ref.ids, n)) {
                auto& slot = best_ref[gram];
                slot = std::max(slot, count);
            }
        }
        auto& s = stats[static_cast<size_t>(n - 1)];
        for (const auto& [gram, count] : cand) {
            s.total += count;
            auto it = best_ref.find(gram);
            if (it != best_ref.end()) s.matched += std::min(count, it->second);
        }
    }
}

int64_t closest_reference_length(int64_t candidate_len, const std::vector<Sentence>& references) {
    int64_t best = static_cast<int64_t>(references.front().size());
    for (const auto& ref : references) {
        int64_t len = static_cast<int64_t>(ref.size());
        int64_t diff = std::llabs(len - candidate_len);
        int64_t best_diff = std::llabs(best - candidate_len);
        if (diff < best_diff || (diff == best_diff && len < best)) best = len;
    }
    return best;
}

double score_from_stats(const std::vector<OrderStats>& stats, int64_t candidate_len,
                        int64_t reference_len, const BleuConfig& cfg) {
    double log_sum = 0.0;
    int used_orders = 0;
    for (const auto& s : stats) {
        if (s.total == 0) continue;
        double matched = static_cast<double>(s.matched);
        if (s.matched == 0) {
            if (!cfg.smoothing) return 0.0;
            matched = cfg.epsilon;
        }
        log_sum += std::log(matched / static_cast<double>(s.total));
        ++used_orders;
    }
    if (used_orders == 0) return 0.0;
    double score = std::exp(log_sum / used_orders);
    if (cfg.use_brevity_penalty && candidate_len < reference_len) {
        score *= std::exp(1.0 - static_cast<double>(reference_len) /
                                    static_cast<double>(candidate_len));
    }
    return score;
}

}  // namespace

double bleu(const Sentence& candidate, const std::vector<Sentence>& references,
            const BleuConfig& cfg) {
    validate(cfg);
    if (references.empty()) throw std::invalid_argument("bleu requires at least one reference");
    if (candidate.empty()) {
        log_info("bleu: empty candidate scored 0");
        return 0.0;
    }
    std::vector<OrderStats> stats(static_cast<size_t>(cfg.max_order));
    accumulate_order_stats(candidate, references, cfg.max_order, stats);
    int64_t c = static_cast<int64_t>(candidate.size());
    return score_from_stats(stats, c, closest_reference_length(c, references), cfg);
}

double corpus_bleu(const std::vector<Sentence>& candidates,
                   const std::vector<std::vector<Sentence>>& references, const BleuConfig& cfg) {
    validate(cfg);
    if (candidates.size() != references.size()) {
        throw std::invalid_argument("corpus_bleu: candidate/reference count mismatch");
    }
    if (candidates.empty()) throw std::invalid_argument("corpus_bleu: empty corpus");

    std::vector<OrderStats> stats(static_cast<size_t>(cfg.max_order));
    int64_t candidate_len = 0;
    int64_t reference_len = 0;
    for (size_t i = 0; i < candidates.size(); ++i) {
        if (references[i].empty()) {
            throw std::invalid_argument("corpus_bleu: sample without references");
        }
        if (candidates[i].empty()) {
            log_info("corpus_bleu: empty candidate at index %zu", i);
            continue;
        }
        accumulate_order_stats(candidates[i], references[i], cfg.max_order, stats);
        int64_t c = static_cast<int64_t>(candidates[i].size());
        candidate_len += c;
        reference_len += closest_reference_length(c, references[i]);
    }
    return score_from_stats(stats, candidate_len, reference_len, cfg);
}

double ibleu(const Sentence& candidate, const std::vector<Sentence>& references,
             const Sentence& source, double alpha_ib, const BleuConfig& cfg) {
    if (alpha_ib < 0.0 || alpha_ib > 1.0) {
        throw std::invalid_argument("ibleu alpha must be in [0,1]");
    }
    return alpha_ib * bleu(candidate, references, cfg) -
           (1.0 - alpha_ib) * bleu(candidate, {source}, cfg);
}

double h_mean(double a, double b) {
    if (a < 0.0 || b < 0.0) throw std::invalid_argument("h_mean requires non-negative inputs");
    if (a + b == 0.0) return 0.0;
    return 2.0 * a * b / (a + b);
}

double g_mean(double a, double b) {
    if (a < 0.0 || b < 0.0) throw std::invalid_argument("g_mean requires non-negative inputs");
    return std::sqrt(a * b);
}

std::string MetricReport::to_json_lines() const {
    nlohmann::ordered_json summary{{"kind", "summary"},
                                   {"task", task},
                                   {"bleu", bleu},
                                   {"ibleu", ibleu},
                                   {"self_bleu", self_bleu},
                                   {"formality_accuracy", formality_accuracy},
                                   {"h_mean", h_mean},
                                   {"g_mean", g_mean},
                                   {"perplexity", perplexity},
                                   {"mean_total_score", mean_total_score},
                                   {"samples", rows.size()}};
    std::string out = summary.dump();
    out.push_back('\n');
    for (const auto& row : rows) {
        nlohmann::ordered_json line{{"kind", "sample"},       {"index", row.index},
                                    {"output", row.output},   {"total_score", row.total_score},
                                    {"bleu", row.bleu},       {"ibleu", row.ibleu},
                                    {"self_bleu", row.self_bleu}, {"formality", row.formality}};
        out += line.dump();
        out.push_back('\n');
    }
    return out;
}

}  // namespace tgls
