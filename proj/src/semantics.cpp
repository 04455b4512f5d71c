#include "tgls/semantics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

namespace tgls {

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double sum = 0.0;
    for (size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
    return sum;
}

bool is_content(TokenId id) { return id >= Vocabulary::kNumSpecials; }

}  // namespace

const std::unordered_set<std::string>& default_stopwords() {
    static const std::unordered_set<std::string> kStopwords = {
        "a",       "about",  "above",  "after",   "again",  "all",    "am",     "an",
        "and",     "any",    "are",    "as",      "at",     "be",     "because", "been",
        "before",  "being",  "below",  "between", "both",   "but",    "by",     "can",
        "could",   "did",    "do",     "does",    "doing",  "down",   "during", "each",
        "few",     "for",    "from",   "further", "had",    "has",    "have",   "having",
        "he",      "her",    "here",   "hers",    "him",    "his",    "how",    "i",
        "if",      "in",     "into",   "is",      "it",     "its",    "itself", "just",
        "me",      "more",   "most",   "my",      "no",     "nor",    "not",    "now",
        "of",      "off",    "on",     "once",    "only",   "or",     "other",  "our",
        "out",     "over",   "own",    "same",    "she",    "should", "so",     "some",
        "such",    "than",   "that",   "the",     "their",  "them",   "then",   "there",
        "these",   "they",   "this",   "those",   "through", "to",    "too",    "under",
        "until",   "up",     "very",   "was",     "we",     "were",   "what",   "when",
        "where",   "which",  "while",  "who",     "whom",   "why",    "will",   "with",
        "would",   "you",    "your",   "yours",
        "n't",     "'re",    "'ve",    "'ll",     "'s",     "'d",     "'m"};
    return kStopwords;
}

RakeConfig default_rake_config() {
    RakeConfig cfg;
    cfg.stopwords = default_stopwords();
    return cfg;
}

RakeConfig load_rake_config(const std::string& stopword_path) {
    RakeConfig cfg;
    for (const auto& line : read_lines(stopword_path)) {
        if (!line.empty()) cfg.stopwords.insert(line);
    }
    if (cfg.stopwords.empty()) {
        throw std::runtime_error("stopword file is empty: " + stopword_path);
    }
    return cfg;
}

KeywordSet extract_keywords(const Sentence& x, const Vocabulary& vocab, const RakeConfig& cfg) {
    if (cfg.stopwords.empty()) throw std::invalid_argument("stopword list must be non-empty");
    if (cfg.max_phrase_len < 1) throw std::invalid_argument("max_phrase_len must be >= 1");
    if (cfg.top_fraction <= 0.0 || cfg.top_fraction > 1.0) {
        throw std::invalid_argument("top_fraction must be in (0, 1]");
    }
    if (x.empty()) throw std::invalid_argument("cannot extract keywords from an empty sentence");

    auto is_boundary = [&](TokenId id) {
        if (!is_content(id)) return true;
        const std::string& surface = vocab.surface(id);
        if (surface.size() == 1 && std::ispunct(static_cast<unsigned char>(surface[0]))) {
            return true;
        }
        return cfg.stopwords.count(surface) > 0;
    };

    // Maximal content runs, chopped to max_phrase_len.
    std::vector<std::vector<TokenId>> phrases;
    std::vector<TokenId> current;
    auto flush = [&] {
        if (!current.empty()) phrases.push_back(std::move(current));
        current.clear();
    };
    for (TokenId id : x.ids) {
        if (is_boundary(id)) {
            flush();
            continue;
        }
        current.push_back(id);
        if (static_cast<int>(current.size()) == cfg.max_phrase_len) flush();
    }
    flush();

    if (phrases.empty()) return {};

    // Degree counts co-occurrence within each phrase (self included);
    // score(w) = degree(w) / freq(w).
    std::unordered_map<TokenId, double> freq, degree;
    for (const auto& phrase : phrases) {
        for (TokenId id : phrase) {
            freq[id] += 1.0;
            degree[id] += static_cast<double>(phrase.size());
        }
    }
    auto word_score = [&](TokenId id) { return degree.at(id) / freq.at(id); };

    std::vector<std::pair<double, size_t>> ranked;  // (score, phrase index)
    ranked.reserve(phrases.size());
    for (size_t p = 0; p < phrases.size(); ++p) {
        double score = 0.0;
        for (TokenId id : phrases[p]) score += word_score(id);
        ranked.emplace_back(score, p);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });

    size_t keep = std::max<size_t>(
        1, static_cast<size_t>(
               std::ceil(cfg.top_fraction * static_cast<double>(phrases.size()))));
    // Extend through ties with the last kept phrase.
    while (keep < ranked.size() && ranked[keep].first == ranked[keep - 1].first) ++keep;

    KeywordSet keywords;
    std::unordered_set<TokenId> seen;
    for (size_t r = 0; r < keep; ++r) {
        for (TokenId id : phrases[ranked[r].second]) {
            if (seen.insert(id).second) {
                keywords.ids.push_back(id);
                keywords.scores.push_back(word_score(id));
            }
        }
    }
    return keywords;
}

double word_semantic_score(const Sentence& y, const EmbeddingTable& emb,
                           const KeywordSet& keywords) {
    if (!emb.trained()) throw std::runtime_error("embeddings are not trained");
    if (keywords.empty()) return 1.0;

    std::vector<std::vector<double>> y_vectors;
    for (TokenId id : y.ids) {
        if (is_content(id)) y_vectors.push_back(emb.normalized(id));
    }
    if (y_vectors.empty()) return 0.0;

    double worst = 1.0;
    for (TokenId k : keywords.ids) {
        std::vector<double> key = emb.normalized(k);
        double best = -1.0;
        for (const auto& v : y_vectors) best = std::max(best, dot(key, v));
        worst = std::min(worst, best);
    }
    return worst;
}

double sentence_semantic_score(const Sentence& y, const Sentence& x, const EmbeddingTable& emb) {
    if (!emb.trained()) throw std::runtime_error("embeddings are not trained");

    auto mean_pool = [&](const Sentence& s) {
        std::vector<double> mean(static_cast<size_t>(emb.dimension()), 0.0);
        int used = 0;
        for (TokenId id : s.ids) {
            if (!is_content(id)) continue;
            std::vector<double> v = emb.normalized(id);
            for (size_t i = 0; i < mean.size(); ++i) mean[i] += v[i];
            ++used;
        }
        if (used > 0) {
            for (double& m : mean) m /= used;
        }
        return std::make_pair(mean, used);
    };

    auto [my, ny] = mean_pool(y);
    auto [mx, nx] = mean_pool(x);
    if (ny == 0 || nx == 0) return 0.0;

    double norm_y = std::sqrt(dot(my, my));
    double norm_x = std::sqrt(dot(mx, mx));
    if (norm_y < 1e-12 || norm_x < 1e-12) return 0.0;
    return dot(my, mx) / (norm_y * norm_x);
}

double semantic_score(const Sentence& y, const Sentence& x, const EmbeddingTable& emb,
                      const KeywordSet& keywords, double beta, double gamma) {
    if (beta < 0.0 || gamma < 0.0) {
        throw std::invalid_argument("semantic exponents must be non-negative");
    }
    double s_word = std::clamp(word_semantic_score(y, emb, keywords), 0.0, 1.0);
    double s_sent = std::clamp(sentence_semantic_score(y, x, emb), 0.0, 1.0);
    return std::pow(s_word, beta) * std::pow(s_sent, gamma);
}

}  // namespace tgls
