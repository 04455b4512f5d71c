#include "tgls/ngram_lm.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tgls {

namespace {

std::vector<TokenId> padded_ids(const Sentence& y, int order, NGramModel::Direction direction) {
    std::vector<TokenId> ids;
    ids.reserve(y.size() + static_cast<size_t>(order));
    for (int i = 0; i < order - 1; ++i) ids.push_back(Vocabulary::kBos);
    if (direction == NGramModel::Direction::kBackward) {
        ids.insert(ids.end(), y.ids.rbegin(), y.ids.rend());
    } else {
        ids.insert(ids.end(), y.ids.begin(), y.ids.end());
    }
    ids.push_back(Vocabulary::kEos);
    return ids;
}

}  // namespace

NGramModel NGramModel::train(const std::vector<Sentence>& sentences, int order,
                             Direction direction, size_t vocab_size, double discount) {
    if (sentences.empty()) throw std::runtime_error("cannot train a language model on an empty corpus");
    if (order < 1) throw std::invalid_argument("language model order must be >= 1");
    if (discount <= 0.0 || discount > 1.0) {
        throw std::invalid_argument("language model discount must be in (0, 1]");
    }
    if (vocab_size < Vocabulary::kNumSpecials) {
        throw std::invalid_argument("vocabulary size below the reserved special count");
    }

    NGramModel model;
    model.order_ = order;
    model.direction_ = direction;
    model.vocab_size_ = vocab_size;
    model.discount_ = discount;
    model.raw_.assign(static_cast<size_t>(order), CountTable{});

    for (const auto& y : sentences) {
        std::vector<TokenId> ids = padded_ids(y, order, direction);
        for (int m = 1; m <= order; ++m) {
            for (size_t i = 0; i + static_cast<size_t>(m) <= ids.size(); ++i) {
                Gram gram(ids.begin() + static_cast<std::ptrdiff_t>(i),
                          ids.begin() + static_cast<std::ptrdiff_t>(i) + m);
                ++model.raw_[static_cast<size_t>(m - 1)][gram];
            }
        }
    }
    model.finalize();
    return model;
}

NGramModel NGramModel::from_counts(std::vector<CountTable> raw, int order, Direction direction,
                                   size_t vocab_size, double discount) {
    if (static_cast<int>(raw.size()) != order || order < 1) {
        throw std::invalid_argument("count table list does not match the model order");
    }
    NGramModel model;
    model.order_ = order;
    model.direction_ = direction;
    model.vocab_size_ = vocab_size;
    model.discount_ = discount;
    model.raw_ = std::move(raw);
    model.finalize();
    return model;
}

// Level m of the interpolation uses raw counts at the top order and
// continuation counts (distinct left extensions in the m+1 raw table)
// below it.
void NGramModel::finalize() {
    size_t n = static_cast<size_t>(order_);
    level_.assign(n, CountTable{});
    ctx_.assign(n, {});

    level_[n - 1] = raw_[n - 1];
    for (size_t m = n - 1; m >= 1; --m) {
        CountTable& cont = level_[m - 1];
        for (const auto& [gram, count] : raw_[m]) {
            (void)count;
            Gram suffix(gram.begin() + 1, gram.end());
            ++cont[suffix];
        }
        if (m == 1) break;
    }

    for (size_t m = 1; m <= n; ++m) {
        auto& ctx_map = ctx_[m - 1];
        for (const auto& [gram, count] : level_[m - 1]) {
            Gram context(gram.begin(), gram.end() - 1);
            auto& slot = ctx_map[context];
            slot.first += count;
            slot.second += 1;
        }
    }
}

double NGramModel::prob_level(int m, const TokenId* ctx, TokenId w) const {
    if (m == 1) {
        double uniform = 1.0 / static_cast<double>(vocab_size_);
        const auto& agg = ctx_[0];
        auto it = agg.find(Gram{});
        if (it == agg.end()) return uniform;
        double denom = static_cast<double>(it->second.first);
        double distinct = static_cast<double>(it->second.second);
        const auto& counts = level_[0];
        auto cit = counts.find(Gram{w});
        double c = cit == counts.end() ? 0.0 : static_cast<double>(cit->second);
        return (std::max(c - discount_, 0.0) + discount_ * distinct * uniform) / denom;
    }

    Gram context(ctx, ctx + (m - 1));
    auto it = ctx_[static_cast<size_t>(m - 1)].find(context);
    if (it == ctx_[static_cast<size_t>(m - 1)].end()) {
        // Unseen context: exactly the next-lower-order distribution.
        return prob_level(m - 1, ctx + 1, w);
    }
    double denom = static_cast<double>(it->second.first);
    double distinct = static_cast<double>(it->second.second);
    const auto& counts = level_[static_cast<size_t>(m - 1)];
    Gram gram = context;
    gram.push_back(w);
    auto cit = counts.find(gram);
    double c = cit == counts.end() ? 0.0 : static_cast<double>(cit->second);
    return (std::max(c - discount_, 0.0) +
            discount_ * distinct * prob_level(m - 1, ctx + 1, w)) /
           denom;
}

double NGramModel::prob(TokenId w, const std::vector<TokenId>& context) const {
    size_t len = std::min(context.size(), static_cast<size_t>(order_ - 1));
    const TokenId* ctx = context.data() + (context.size() - len);
    return prob_level(static_cast<int>(len) + 1, ctx, w);
}

double NGramModel::log_prob(const Sentence& y) const {
    if (y.empty()) throw std::invalid_argument("log_prob requires a non-empty sentence");
    std::vector<TokenId> ids = padded_ids(y, order_, direction_);
    size_t start = static_cast<size_t>(order_ - 1);
    double total = 0.0;
    for (size_t i = start; i < ids.size(); ++i) {
        const TokenId* ctx = ids.data() + i - start;
        total += std::log(prob_level(order_, ctx, ids[i]));
    }
    return total;
}

const CountTable& NGramModel::raw_counts(int m) const {
    if (m < 1 || m > order_) throw std::out_of_range("no count table for that order");
    return raw_[static_cast<size_t>(m - 1)];
}

double fluency_score(const NGramModel& model, const Sentence& y, double alpha) {
    if (alpha <= 0.0) throw std::invalid_argument("fluency alpha must be positive");
    return std::exp(alpha * model.log_prob(y));
}

std::vector<std::pair<TokenId, double>> word_posterior(const NGramModel& fwd,
                                                       const NGramModel& bwd,
                                                       const std::vector<TokenId>& left,
                                                       const std::vector<TokenId>& right, int k) {
    if (k < 1) throw std::invalid_argument("word_posterior requires k >= 1");

    // The backward model sees the sentence reversed, so the context closest
    // to the slot is the reversed right-hand side.
    std::vector<TokenId> rev_right(right.rbegin(), right.rend());

    std::vector<std::pair<TokenId, double>> weights;
    size_t v = std::min(fwd.vocab_size(), bwd.vocab_size());
    weights.reserve(v - Vocabulary::kNumSpecials);
    for (TokenId w = Vocabulary::kNumSpecials; w < static_cast<TokenId>(v); ++w) {
        double weight = fwd.prob(w, left) * bwd.prob(w, rev_right);
        weights.emplace_back(w, weight);
    }
    std::sort(weights.begin(), weights.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (weights.size() > static_cast<size_t>(k)) weights.resize(static_cast<size_t>(k));

    double total = 0.0;
    for (const auto& [w, weight] : weights) total += weight;
    for (auto& [w, weight] : weights) weight /= total;
    return weights;
}

double perplexity(const NGramModel& model, const std::vector<Sentence>& sentences) {
    if (sentences.empty()) throw std::runtime_error("perplexity requires a non-empty corpus");
    double log_sum = 0.0;
    int64_t tokens = 0;
    for (const auto& y : sentences) {
        log_sum += model.log_prob(y);
        tokens += static_cast<int64_t>(y.size()) + 1;
    }
    return std::exp(-log_sum / static_cast<double>(tokens));
}

}  // namespace tgls
