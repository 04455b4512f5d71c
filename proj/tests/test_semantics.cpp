#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "tgls/embeddings.hpp"
#include "tgls/semantics.hpp"
#include "tgls/text.hpp"

using namespace tgls;

namespace {

double cosine(const EmbeddingTable& emb, TokenId a, TokenId b) {
    auto va = emb.normalized(a);
    auto vb = emb.normalized(b);
    double sum = 0.0;
    for (size_t i = 0; i < va.size(); ++i) sum += va[i] * vb[i];
    return sum;
}

// Specials get zero rows; content ids start at 6.
EmbeddingTable fixture_table() {
    std::vector<std::vector<double>> rows(6, {0.0, 0.0});
    rows.push_back({1.0, 0.0});                              // id 6
    rows.push_back({0.3, std::sqrt(1.0 - 0.09)});            // id 7: cos to id6 = 0.3
    rows.push_back({0.0, 1.0});                              // id 8: orthogonal to id6
    rows.push_back({0.5, std::sqrt(0.75)});                  // id 9: cos to id6 = 0.5
    return EmbeddingTable::from_rows(std::move(rows));
}

Sentence ids(std::vector<TokenId> v) {
    Sentence s;
    s.ids = std::move(v);
    return s;
}

}  // namespace

TEST_CASE("exclusively co-occurring tokens end up closer than outsiders") {
    std::vector<std::string> lines;
    for (int i = 0; i < 10; ++i) lines.push_back("alpha beta alpha beta");
    for (int i = 0; i < 10; ++i) lines.push_back("gamma delta gamma delta");
    Vocabulary vocab = Vocabulary::build(lines, 1);
    std::vector<Sentence> corpus;
    for (const auto& line : lines) corpus.push_back(tokenize(line, vocab));

    EmbeddingTable emb = EmbeddingTable::train(corpus, vocab.size(), 4, 5);
    TokenId alpha = *vocab.id_of("alpha");
    TokenId beta = *vocab.id_of("beta");
    TokenId gamma = *vocab.id_of("gamma");
    CHECK(cosine(emb, alpha, beta) > cosine(emb, alpha, gamma));
}

TEST_CASE("small corpus produces finite vectors with zero padding") {
    Vocabulary vocab = Vocabulary::build({"a b c"}, 1);
    std::vector<Sentence> corpus = {tokenize("a b c", vocab)};
    EmbeddingTable emb = EmbeddingTable::train(corpus, vocab.size(), 2, 5);
    CHECK(emb.trained());
    for (TokenId id = 0; id < static_cast<TokenId>(vocab.size()); ++id) {
        for (double x : emb.normalized(id)) CHECK(std::isfinite(x));
    }
}

TEST_CASE("embedding training is deterministic") {
    std::vector<std::string> lines = {"a b c d", "b c d a", "c a d b", "d b a c"};
    Vocabulary vocab = Vocabulary::build(lines, 1);
    std::vector<Sentence> corpus;
    for (const auto& line : lines) corpus.push_back(tokenize(line, vocab));

    EmbeddingTable first = EmbeddingTable::train(corpus, vocab.size(), 4, 5, 1);
    EmbeddingTable second = EmbeddingTable::train(corpus, vocab.size(), 4, 5, 1);
    CHECK(first.flat() == second.flat());
}

TEST_CASE("special tokens keep zero vectors") {
    Vocabulary vocab = Vocabulary::build({"a b a b"}, 1);
    std::vector<Sentence> corpus = {tokenize("a b a b", vocab)};
    EmbeddingTable emb = EmbeddingTable::train(corpus, vocab.size(), 2, 5);
    for (TokenId id = 0; id < Vocabulary::kNumSpecials; ++id) {
        for (double x : emb.normalized(id)) CHECK(x == 0.0);
    }
}

TEST_CASE("embedding training validation") {
    Vocabulary vocab = Vocabulary::build({"a b"}, 1);
    std::vector<Sentence> corpus = {tokenize("a b", vocab)};
    CHECK_THROWS_AS(EmbeddingTable::train({}, vocab.size(), 4, 5), std::runtime_error);
    CHECK_THROWS_AS(EmbeddingTable::train(corpus, vocab.size(), 1, 5), std::invalid_argument);
    CHECK_THROWS_AS(EmbeddingTable::train(corpus, vocab.size(), 4, 0), std::invalid_argument);
}

TEST_CASE("rake keeps tied phrases together") {
    Vocabulary vocab = Vocabulary::build({"what is the capital of france"}, 1);
    Sentence x = tokenize("what is the capital of france", vocab);
    KeywordSet keywords = extract_keywords(x, vocab, default_rake_config());

    // "capital" and "france" are both single-word phrases with score 1; the
    // 0.33 fraction alone would keep only one.
    REQUIRE(keywords.size() == 2);
    CHECK(keywords.ids[0] == *vocab.id_of("capital"));
    CHECK(keywords.ids[1] == *vocab.id_of("france"));
}

TEST_CASE("rake hand-executed scores") {
    Vocabulary vocab = Vocabulary::build({"the big red apple of the nice garden"}, 1);
    Sentence x = tokenize("the big red apple of the nice garden", vocab);
    KeywordSet keywords = extract_keywords(x, vocab, default_rake_config());

    // Phrases: [big red apple] score 9, [nice garden] score 4; one phrase
    // kept, no tie. Word scores are degree/frequency = 3 each.
    REQUIRE(keywords.size() == 3);
    CHECK(keywords.ids[0] == *vocab.id_of("big"));
    CHECK(keywords.ids[1] == *vocab.id_of("red"));
    CHECK(keywords.ids[2] == *vocab.id_of("apple"));
    for (double s : keywords.scores) CHECK(s == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("rake chops runs at max phrase length") {
    Vocabulary vocab = Vocabulary::build({"the big red apple of the nice garden"}, 1);
    Sentence x = tokenize("the big red apple of the nice garden", vocab);
    RakeConfig cfg = default_rake_config();
    cfg.max_phrase_len = 2;
    KeywordSet keywords = extract_keywords(x, vocab, cfg);

    // Phrases become [big red]=4, [apple]=1, [nice garden]=4: the tie at 4
    // keeps two phrases.
    REQUIRE(keywords.size() == 4);
    CHECK(keywords.ids[0] == *vocab.id_of("big"));
    CHECK(keywords.ids[1] == *vocab.id_of("red"));
    CHECK(keywords.ids[2] == *vocab.id_of("nice"));
    CHECK(keywords.ids[3] == *vocab.id_of("garden"));
}

TEST_CASE("rake edge cases") {
    Vocabulary vocab = Vocabulary::build({"the of a paris apples , oranges grew"}, 1);

    CHECK(extract_keywords(tokenize("the of a", vocab), vocab, default_rake_config()).empty());

    KeywordSet single = extract_keywords(tokenize("paris", vocab), vocab, default_rake_config());
    REQUIRE(single.size() == 1);
    CHECK(single.ids[0] == *vocab.id_of("paris"));

    // Punctuation and [UNK] break phrases.
    KeywordSet split =
        extract_keywords(tokenize("apples , oranges", vocab), vocab, default_rake_config());
    CHECK(split.size() == 2);
    KeywordSet unk =
        extract_keywords(tokenize("zzz apples", vocab), vocab, default_rake_config());
    REQUIRE(unk.size() == 1);
    CHECK(unk.ids[0] == *vocab.id_of("apples"));

    CHECK_THROWS_AS(extract_keywords(Sentence{}, vocab, default_rake_config()),
                    std::invalid_argument);
    RakeConfig empty_stops;
    CHECK_THROWS_AS(extract_keywords(tokenize("paris", vocab), vocab, empty_stops),
                    std::invalid_argument);
}

TEST_CASE("keywords exclude stopwords and specials and stay inside the sentence") {
    Vocabulary vocab =
        Vocabulary::build({"the quick brown fox jumps over the lazy dog today"}, 1);
    Sentence x = tokenize("the quick brown fox jumps over the lazy dog", vocab);
    KeywordSet keywords = extract_keywords(x, vocab, default_rake_config());
    REQUIRE_FALSE(keywords.empty());
    for (TokenId id : keywords.ids) {
        CHECK_FALSE(Vocabulary::is_special(id));
        CHECK_FALSE(default_stopwords().count(vocab.surface(id)) > 0);
        CHECK(std::count(x.ids.begin(), x.ids.end(), id) > 0);
    }
}

TEST_CASE("word semantic score against the fixture table") {
    EmbeddingTable emb = fixture_table();
    KeywordSet keywords;
    keywords.ids = {6};
    keywords.scores = {1.0};

    // Keyword present verbatim.
    CHECK(word_semantic_score(ids({6, 8}), emb, keywords) == doctest::Approx(1.0).epsilon(1e-12));
    // Best match capped at cosine 0.3.
    CHECK(word_semantic_score(ids({7, 8}), emb, keywords) <= 0.3 + 1e-12);
    CHECK(word_semantic_score(ids({7, 8}), emb, keywords) == doctest::Approx(0.3).epsilon(1e-9));
    // No keywords, no constraint.
    CHECK(word_semantic_score(ids({8}), emb, KeywordSet{}) == 1.0);
    // Nothing left in y after dropping specials.
    CHECK(word_semantic_score(ids({Vocabulary::kEos}), emb, keywords) == 0.0);
}

TEST_CASE("word semantic score takes the least matched keyword") {
    EmbeddingTable emb = fixture_table();
    KeywordSet keywords;
    keywords.ids = {6, 8};
    keywords.scores = {1.0, 1.0};
    // y covers id6 exactly; id8's best match in y is cos([0,1],[1,0]) = 0.
    CHECK(word_semantic_score(ids({6}), emb, keywords) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("adding tokens to y never decreases the word score") {
    EmbeddingTable emb = fixture_table();
    KeywordSet keywords;
    keywords.ids = {6, 9};
    keywords.scores = {1.0, 1.0};
    Sentence y = ids({7});
    double base = word_semantic_score(y, emb, keywords);
    for (TokenId extra : {8, 9, 6}) {
        Sentence grown = y;
        grown.ids.push_back(extra);
        CHECK(word_semantic_score(grown, emb, keywords) >= base - 1e-12);
    }
}

TEST_CASE("sentence semantic score") {
    EmbeddingTable emb = fixture_table();

    CHECK(sentence_semantic_score(ids({6, 7}), ids({6, 7}), emb) ==
          doctest::Approx(1.0).epsilon(1e-12));
    // Orthogonal fixture rows.
    CHECK(sentence_semantic_score(ids({8}), ids({6}), emb) ==
          doctest::Approx(0.0).epsilon(1e-12));
    // Empty after dropping specials.
    CHECK(sentence_semantic_score(ids({Vocabulary::kBos}), ids({6}), emb) == 0.0);

    // Scale invariance: doubling every entry changes nothing.
    std::vector<std::vector<double>> doubled;
    for (TokenId id = 0; id < 10; ++id) {
        std::vector<double> row = {0.0, 0.0};
        doubled.push_back(row);
    }
    doubled[6] = {2.0, 0.0};
    doubled[7] = {0.6, 2.0 * std::sqrt(1.0 - 0.09)};
    doubled[8] = {0.0, 2.0};
    doubled[9] = {1.0, 2.0 * std::sqrt(0.75)};
    EmbeddingTable big = EmbeddingTable::from_rows(std::move(doubled));
    CHECK(sentence_semantic_score(ids({6, 7}), ids({8, 9}), big) ==
          doctest::Approx(sentence_semantic_score(ids({6, 7}), ids({8, 9}), emb))
              .epsilon(1e-12));
}

TEST_CASE("combined semantic score") {
    EmbeddingTable emb = fixture_table();
    KeywordSet keywords;
    keywords.ids = {6};
    keywords.scores = {1.0};

    // s_word = cos(id6, id9) = 0.5, s_sent = 1 (y = x), beta 1, gamma 0.6.
    Sentence y = ids({9});
    CHECK(semantic_score(y, y, emb, keywords, 1.0, 0.6) ==
          doctest::Approx(0.5).epsilon(1e-9));

    // Identity scores one for any exponents.
    Sentence x = ids({6});
    KeywordSet self;
    self.ids = {6};
    self.scores = {1.0};
    CHECK(semantic_score(x, x, emb, self, 2.0, 1.25) == doctest::Approx(1.0).epsilon(1e-9));

    // Zero word score annihilates for beta > 0 and is ignored at beta = 0.
    KeywordSet orthogonal;
    orthogonal.ids = {8};
    orthogonal.scores = {1.0};
    Sentence y6 = ids({6});
    CHECK(semantic_score(y6, y6, emb, orthogonal, 1.0, 0.6) ==
          doctest::Approx(0.0).epsilon(1e-12));
    CHECK(semantic_score(y6, y6, emb, orthogonal, 0.0, 0.0) == 1.0);

    CHECK_THROWS_AS(semantic_score(y6, y6, emb, self, -1.0, 0.6), std::invalid_argument);
}

TEST_CASE("semantic score stays in the unit interval") {
    EmbeddingTable emb = fixture_table();
    KeywordSet keywords;
    keywords.ids = {6, 7, 8, 9};
    keywords.scores = {1.0, 1.0, 1.0, 1.0};
    std::vector<Sentence> candidates = {ids({6}), ids({7, 8}), ids({9, 6, 7}), ids({8, 8})};
    for (const auto& y : candidates) {
        for (const auto& x : candidates) {
            double s = semantic_score(y, x, emb, keywords, 2.0, 1.25);
            CHECK(s >= 0.0);
            CHECK(s <= 1.0);
        }
    }
}

TEST_CASE("external embedding text format round-trip") {
    Vocabulary vocab = Vocabulary::build({"a b"}, 1);
    std::string path = "tgls_test_emb.txt";
    atomic_write_file(path, "a 1.0 0.0\nb 0.0 1.0\n");
    EmbeddingTable emb = EmbeddingTable::load_text(path, vocab);
    CHECK(emb.dimension() == 2);
    CHECK(cosine(emb, *vocab.id_of("a"), *vocab.id_of("b")) == doctest::Approx(0.0));
    auto va = emb.normalized(*vocab.id_of("a"));
    CHECK(va[0] == doctest::Approx(1.0));
    std::remove(path.c_str());
}
