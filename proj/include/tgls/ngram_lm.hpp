#pragma once

#include <cstdint>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tgls/text.hpp"

namespace tgls {

using Gram = std::vector<TokenId>;

struct GramHash {
    size_t operator()(const Gram& g) const {
        uint64_t h = 1469598103934665603ULL;
        for (TokenId t : g) {
            h ^= static_cast<uint64_t>(static_cast<uint32_t>(t));
            h *= 1099511628211ULL;
        }
        return static_cast<size_t>(h);
    }
};

using CountTable = std::unordered_map<Gram, int64_t, GramHash>;

// Interpolated Kneser-Ney n-gram model. The top order keeps raw counts,
// lower orders use continuation counts, and the unigram level interpolates
// with a uniform distribution over the full vocabulary, so every conditional
// is strictly positive and sums to one.
class NGramModel {
  public:
    enum class Direction { kForward, kBackward };

    // Sentences are padded with order-1 leading [BOS] and one trailing
    // [EOS]; backward models count reversed sentences. Throws on an empty
    // sentence list, order < 1, or discount outside (0, 1].
    static NGramModel train(const std::vector<Sentence>& sentences, int order, Direction direction,
                            size_t vocab_size, double discount = 0.75);

    // Rebuilds a model from persisted raw count tables (index m-1 holds the
    // m-gram table); derived continuation structures are recomputed.
    static NGramModel from_counts(std::vector<CountTable> raw, int order, Direction direction,
                                  size_t vocab_size, double discount);

    // p(w | context). Longer contexts are truncated to the final order-1
    // tokens; shorter ones query the matching lower-order distribution
    // directly (empty context = unigram). Never zero.
    double prob(TokenId w, const std::vector<TokenId>& context) const;

    // Sum of log conditionals over the sentence plus the terminal [EOS]
    // transition. Backward models score the reversed sentence; callers
    // always pass forward-order ids.
    double log_prob(const Sentence& y) const;

    int order() const { return order_; }
    Direction direction() const { return direction_; }
    size_t vocab_size() const { return vocab_size_; }
    double discount() const { return discount_; }
    // Raw m-gram counts (1 <= m <= order), as persisted in checkpoints.
    const CountTable& raw_counts(int m) const;

  private:
    int order_ = 0;
    Direction direction_ = Direction::kForward;
    size_t vocab_size_ = 0;
    double discount_ = 0.75;
    std::vector<CountTable> raw_;     // index m-1: raw m-gram counts
    std::vector<CountTable> level_;   // index m-1: counts used at level m
    // Per level, context -> (total count, distinct continuations).
    std::vector<std::unordered_map<Gram, std::pair<int64_t, int64_t>, GramHash>> ctx_;

    double prob_level(int m, const TokenId* ctx, TokenId w) const;
    void finalize();
};

// exp(alpha * log_prob(y)): the fluency expert. Monotone in log_prob for any
// alpha > 0.
double fluency_score(const NGramModel& model, const Sentence& y, double alpha);

// Top-K replacement candidates for a slot between left and right context.
// weight(w) is proportional to p_fwd(w | left) * p_bwd(w | reversed right);
// special tokens are excluded and the K survivors are renormalized to sum to
// one. Ordering: weight descending, token id ascending on ties.
std::vector<std::pair<TokenId, double>> word_posterior(const NGramModel& fwd,
                                                       const NGramModel& bwd,
                                                       const std::vector<TokenId>& left,
                                                       const std::vector<TokenId>& right, int k);

// exp of the negative average per-token log probability over the corpus
// inputs, [EOS] transitions counted. Throws on an empty corpus.
double perplexity(const NGramModel& model, const std::vector<Sentence>& sentences);

}  // namespace tgls
