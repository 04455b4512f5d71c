#include "tgls/objective.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "tgls/log.hpp"
#include "tgls/rng.hpp"

namespace tgls {

namespace {

constexpr uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr uint64_t kFnvPrime = 1099511628211ULL;

uint64_t fnv1a_byte(uint64_t h, uint8_t byte) { return (h ^ byte) * kFnvPrime; }

uint64_t fnv1a_id(uint64_t h, TokenId id) {
    auto u = static_cast<uint32_t>(id);
    h = fnv1a_byte(h, static_cast<uint8_t>(u & 0xff));
    h = fnv1a_byte(h, static_cast<uint8_t>((u >> 8) & 0xff));
    h = fnv1a_byte(h, static_cast<uint8_t>((u >> 16) & 0xff));
    return fnv1a_byte(h, static_cast<uint8_t>((u >> 24) & 0xff));
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void validate_weights(const ScorerWeights& w) {
    for (double v : {w.alpha, w.beta, w.gamma, w.delta}) {
        if (!(v >= 0.0) || !std::isfinite(v)) {
            throw std::invalid_argument("scorer weights must be finite and non-negative");
        }
    }
    if (w.alpha <= 0.0) throw std::invalid_argument("fluency alpha must be positive");
}

}  // namespace

double paraphrase_task_score(const Sentence& y, const Sentence& x, double delta,
                             const BleuConfig& cfg) {
    if (delta < 0.0) throw std::invalid_argument("task delta must be non-negative");
    return std::pow(1.0 - bleu(y, {x}, cfg), delta);
}

double paraphrase_task_score(const Sentence& y, const Sentence& x, double delta) {
    BleuConfig cfg;
    cfg.smoothing = false;
    return paraphrase_task_score(y, x, delta, cfg);
}

std::vector<uint32_t> StyleClassifier::features(const Sentence& y,
                                                const Vocabulary& vocab) const {
    std::vector<uint32_t> out;
    out.reserve(2 * y.size() + 32);
    uint32_t mask = (1u << hash_bits_) - 1u;

    for (size_t i = 0; i < y.ids.size(); ++i) {
        uint64_t h = fnv1a_id(fnv1a_byte(kFnvOffset, 'u'), y.ids[i]);
        out.push_back(static_cast<uint32_t>(h) & mask);
        if (i + 1 < y.ids.size()) {
            uint64_t h2 = fnv1a_id(fnv1a_id(fnv1a_byte(kFnvOffset, 'b'), y.ids[i]), y.ids[i + 1]);
            out.push_back(static_cast<uint32_t>(h2) & mask);
        }
    }

    std::string surface = detokenize(y, vocab);
    for (size_t i = 0; i + 3 <= surface.size(); ++i) {
        uint64_t h = fnv1a_byte(kFnvOffset, 'c');
        h = fnv1a_byte(h, static_cast<uint8_t>(surface[i]));
        h = fnv1a_byte(h, static_cast<uint8_t>(surface[i + 1]));
        h = fnv1a_byte(h, static_cast<uint8_t>(surface[i + 2]));
        out.push_back(static_cast<uint32_t>(h) & mask);
    }
    return out;
}

StyleClassifier StyleClassifier::train(const Corpus& labeled, const Vocabulary& vocab, double l2,
                                       int epochs, double lr, uint64_t seed, int hash_bits) {
    if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
    if (hash_bits < 8 || hash_bits > 28) throw std::invalid_argument("hash_bits out of range");

    std::vector<size_t> indices;
    size_t formal = 0, informal = 0;
    for (size_t i = 0; i < labeled.samples.size(); ++i) {
        if (!labeled.samples[i].style_label) continue;
        indices.push_back(i);
        if (labeled.samples[i].style_label == StyleLabel::kFormal) {
            ++formal;
        } else {
            ++informal;
        }
    }
    if (formal == 0 || informal == 0) {
        throw std::runtime_error("style training needs both formal and informal samples");
    }

    StyleClassifier clf;
    clf.hash_bits_ = hash_bits;
    clf.weights_.assign(size_t{1} << hash_bits, 0.0);
    clf.bias_ = 0.0;

    Rng rng(seed);
    std::shuffle(indices.begin(), indices.end(), rng);
    size_t held_out = indices.size() >= 10 ? indices.size() / 10 : 0;
    size_t train_count = indices.size() - held_out;

    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(indices.begin(), indices.begin() + static_cast<std::ptrdiff_t>(train_count),
                     rng);
        for (size_t k = 0; k < train_count; ++k) {
            const DataSample& sample = labeled.samples[indices[k]];
            std::vector<uint32_t> f = clf.features(sample.input, vocab);
            double z = clf.bias_;
            for (uint32_t idx : f) z += clf.weights_[idx];
            double label = sample.style_label == StyleLabel::kFormal ? 1.0 : 0.0;
            double g = sigmoid(z) - label;
            for (uint32_t idx : f) {
                clf.weights_[idx] -= lr * (g + l2 * clf.weights_[idx]);
            }
            clf.bias_ -= lr * g;
        }
    }

    if (held_out > 0) {
        size_t correct = 0;
        for (size_t k = train_count; k < indices.size(); ++k) {
            const DataSample& sample = labeled.samples[indices[k]];
            double p = clf.prob_formal(sample.input, vocab);
            bool predicted_formal = p >= 0.5;
            bool is_formal = sample.style_label == StyleLabel::kFormal;
            if (predicted_formal == is_formal) ++correct;
        }
        log_info("style classifier held-out accuracy %.3f over %zu samples",
                 static_cast<double>(correct) / static_cast<double>(held_out), held_out);
    }
    return clf;
}

StyleClassifier StyleClassifier::from_params(std::vector<double> weights, double bias,
                                             int hash_bits) {
    if (weights.size() != (size_t{1} << hash_bits)) {
        throw std::invalid_argument("weight vector does not match hash_bits");
    }
    StyleClassifier clf;
    clf.weights_ = std::move(weights);
    clf.bias_ = bias;
    clf.hash_bits_ = hash_bits;
    return clf;
}

double StyleClassifier::prob_formal(const Sentence& y, const Vocabulary& vocab) const {
    if (weights_.empty()) throw std::runtime_error("style classifier is not trained");
    double z = bias_;
    for (uint32_t idx : features(y, vocab)) z += weights_[idx];
    return sigmoid(z);
}

double classifier_accuracy(const StyleClassifier& clf, const Corpus& labeled,
                           const Vocabulary& vocab) {
    size_t total = 0, correct = 0;
    for (const auto& sample : labeled.samples) {
        if (!sample.style_label) continue;
        ++total;
        bool predicted_formal = clf.prob_formal(sample.input, vocab) >= 0.5;
        if (predicted_formal == (sample.style_label == StyleLabel::kFormal)) ++correct;
    }
    if (total == 0) throw std::runtime_error("accuracy needs labeled samples");
    return static_cast<double>(correct) / static_cast<double>(total);
}

double formality_task_score(const Sentence& y, const StyleClassifier& clf,
                            const Vocabulary& vocab, double delta) {
    if (delta < 0.0) throw std::invalid_argument("task delta must be non-negative");
    return std::pow(clf.prob_formal(y, vocab), delta);
}

Objective Objective::paraphrase(const NGramModel* lm, const EmbeddingTable* emb,
                                ScorerWeights weights) {
    if (lm == nullptr || emb == nullptr) {
        throw std::invalid_argument("paraphrase objective needs a language model and embeddings");
    }
    validate_weights(weights);
    Objective obj;
    obj.task_ = Task::kParaphrase;
    obj.weights_ = weights;
    obj.lm_ = lm;
    obj.emb_ = emb;
    return obj;
}

Objective Objective::formalize(const NGramModel* lm, const EmbeddingTable* emb,
                               const StyleClassifier* clf, const Vocabulary* vocab,
                               ScorerWeights weights) {
    if (lm == nullptr || emb == nullptr || clf == nullptr || vocab == nullptr) {
        throw std::invalid_argument("formalize objective needs lm, embeddings, classifier, vocab");
    }
    validate_weights(weights);
    Objective obj;
    obj.task_ = Task::kFormalize;
    obj.weights_ = weights;
    obj.lm_ = lm;
    obj.emb_ = emb;
    obj.clf_ = clf;
    obj.vocab_ = vocab;
    return obj;
}

ScoreBreakdown Objective::score(const Sentence& y, const Sentence& x,
                                const KeywordSet& keywords) const {
    ScoreBreakdown b;
    if (y.empty()) return b;

    double lp = lm_->log_prob(y);
    b.s_lm = std::exp(weights_.alpha * lp);
    b.s_word = std::clamp(word_semantic_score(y, *emb_, keywords), 0.0, 1.0);
    b.s_sent = std::clamp(sentence_semantic_score(y, x, *emb_), 0.0, 1.0);

    double task_base;
    if (task_ == Task::kParaphrase) {
        BleuConfig cfg;
        cfg.smoothing = false;
        task_base = 1.0 - bleu(y, {x}, cfg);
    } else {
        task_base = clf_->prob_formal(y, *vocab_);
    }
    b.s_task = std::pow(task_base, weights_.delta);

    // Log-space combination, exponentiated once. A zero base under a
    // positive exponent annihilates the product.
    double log_total = weights_.alpha * lp;
    bool zero = false;
    auto add_factor = [&](double base, double exponent) {
        if (exponent == 0.0) return;
        if (base <= 0.0) {
            zero = true;
            return;
        }
        log_total += exponent * std::log(base);
    };
    add_factor(b.s_word, weights_.beta);
    add_factor(b.s_sent, weights_.gamma);
    add_factor(task_base, weights_.delta);
    b.total = zero ? 0.0 : std::exp(log_total);
    return b;
}

}  // namespace tgls
