#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tgls/embeddings.hpp"
#include "tgls/metrics.hpp"
#include "tgls/ngram_lm.hpp"
#include "tgls/semantics.hpp"
#include "tgls/text.hpp"

namespace tgls {

struct ScorerWeights {
    double alpha = 0.8;
    double beta = 1.0;
    double gamma = 0.6;
    double delta = 0.125;

    static ScorerWeights paraphrase_defaults() { return {0.8, 1.0, 0.6, 0.125}; }
    static ScorerWeights formalize_defaults() { return {0.8, 2.0, 1.25, 0.26}; }
};

// Factors of one scored candidate. s_word and s_sent are the clamped bases;
// total applies the exponents: s_lm * s_word^beta * s_sent^gamma * s_task.
struct ScoreBreakdown {
    double s_lm = 0.0;
    double s_word = 0.0;
    double s_sent = 0.0;
    double s_task = 0.0;
    double total = 0.0;
};

// (1 - BLEU(y, x))^delta. Self-BLEU runs without smoothing so copying the
// input is penalized exactly to zero.
double paraphrase_task_score(const Sentence& y, const Sentence& x, double delta,
                             const BleuConfig& cfg);
double paraphrase_task_score(const Sentence& y, const Sentence& x, double delta);

// Binary logistic style model over hashed features: word unigrams and
// bigrams of token ids plus character trigrams of the detokenized surface.
class StyleClassifier {
  public:
    static constexpr int kDefaultHashBits = 18;

    StyleClassifier() = default;

    // Deterministic SGD from zero weights: a fixed seed fixes the sample
    // order, and flipping every label exactly mirrors the trained model.
    // Throws if the corpus lacks either label.
    static StyleClassifier train(const Corpus& labeled, const Vocabulary& vocab,
                                 double l2 = 1e-4, int epochs = 10, double lr = 0.1,
                                 uint64_t seed = 0, int hash_bits = kDefaultHashBits);

    static StyleClassifier from_params(std::vector<double> weights, double bias, int hash_bits);

    double prob_formal(const Sentence& y, const Vocabulary& vocab) const;
    bool trained() const { return !weights_.empty(); }

    const std::vector<double>& weights() const { return weights_; }
    double bias() const { return bias_; }
    int hash_bits() const { return hash_bits_; }

  private:
    std::vector<double> weights_;
    double bias_ = 0.0;
    int hash_bits_ = kDefaultHashBits;

    std::vector<uint32_t> features(const Sentence& y, const Vocabulary& vocab) const;
};

// Fraction of samples whose predicted label matches the annotation.
double classifier_accuracy(const StyleClassifier& clf, const Corpus& labeled,
                           const Vocabulary& vocab);

// p(formal | y)^delta.
double formality_task_score(const Sentence& y, const StyleClassifier& clf,
                            const Vocabulary& vocab, double delta);

// Product-of-experts candidate scorer. Immutable after construction; safe
// to call concurrently. Factors are combined in log space and exponentiated
// once.
class Objective {
  public:
    static Objective paraphrase(const NGramModel* lm, const EmbeddingTable* emb,
                                ScorerWeights weights);
    static Objective formalize(const NGramModel* lm, const EmbeddingTable* emb,
                               const StyleClassifier* clf, const Vocabulary* vocab,
                               ScorerWeights weights);

    // Keywords must come from x (see extract_keywords); they are passed in
    // so callers can compute them once per input.
    ScoreBreakdown score(const Sentence& y, const Sentence& x, const KeywordSet& keywords) const;

    const ScorerWeights& weights() const { return weights_; }
    Task task() const { return task_; }

  private:
    Task task_ = Task::kParaphrase;
    ScorerWeights weights_;
    const NGramModel* lm_ = nullptr;
    const EmbeddingTable* emb_ = nullptr;
    const StyleClassifier* clf_ = nullptr;
    const Vocabulary* vocab_ = nullptr;
};

}  // namespace tgls
