#pragma once

#include <string>
#include <unordered_set>
#include <vector>

#include "tgls/embeddings.hpp"
#include "tgls/text.hpp"

namespace tgls {

struct RakeConfig {
    std::unordered_set<std::string> stopwords;
    int max_phrase_len = 4;
    double top_fraction = 0.33;
};

// Conventional English stopword list plus the contraction suffixes the
// tokenizer splits off.
const std::unordered_set<std::string>& default_stopwords();
RakeConfig default_rake_config();
// One stopword per line.
RakeConfig load_rake_config(const std::string& stopword_path);

// Distinct content words of the kept phrases, in first-appearance order,
// with their degree/frequency scores.
struct KeywordSet {
    std::vector<TokenId> ids;
    std::vector<double> scores;

    bool empty() const { return ids.empty(); }
    size_t size() const { return ids.size(); }
};

// RAKE over a single sentence: candidate phrases are maximal stopword-free
// runs (chopped to max_phrase_len), scored by summed degree/frequency; the
// top fraction of phrases is kept, extended through ties so equal-scored
// phrases never split arbitrarily.
KeywordSet extract_keywords(const Sentence& x, const Vocabulary& vocab, const RakeConfig& cfg);

// min over keywords of the best normalized dot product against y's tokens.
// No keywords means no constraint: score 1. Empty y scores 0.
double word_semantic_score(const Sentence& y, const EmbeddingTable& emb,
                           const KeywordSet& keywords);

// Cosine between mean-pooled normalized token vectors of y and x; special
// and [UNK] tokens are dropped first, and a sentence left empty scores 0.
double sentence_semantic_score(const Sentence& y, const Sentence& x, const EmbeddingTable& emb);

// clamp(s_word,0,1)^beta * clamp(s_sent,0,1)^gamma. Exponent 0 disables a
// factor entirely.
double semantic_score(const Sentence& y, const Sentence& x, const EmbeddingTable& emb,
                      const KeywordSet& keywords, double beta, double gamma);

}  // namespace tgls
