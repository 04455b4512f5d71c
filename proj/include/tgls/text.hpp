#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace tgls {

using TokenId = int32_t;

constexpr int kDefaultMaxLen = 35;

// Word-level vocabulary with six reserved special tokens at fixed ids 0..5.
class Vocabulary {
  public:
    static constexpr TokenId kBos = 0;
    static constexpr TokenId kEos = 1;
    static constexpr TokenId kSep = 2;
    static constexpr TokenId kMask = 3;
    static constexpr TokenId kPad = 4;
    static constexpr TokenId kUnk = 5;
    static constexpr TokenId kNumSpecials = 6;

    Vocabulary();

    // Counts surface forms over the line stream; forms with frequency
    // >= min_count get ids (count desc, then surface asc). Throws on an
    // empty stream.
    static Vocabulary build(const std::vector<std::string>& lines, int min_count);

    size_t size() const { return surfaces_.size(); }
    int min_count() const { return min_count_; }

    const std::string& surface(TokenId id) const;
    std::optional<TokenId> id_of(const std::string& surface) const;
    // Lookup that maps out-of-vocabulary forms to [UNK].
    TokenId lookup(const std::string& surface) const;
    int64_t count(TokenId id) const { return counts_[static_cast<size_t>(id)]; }

    static bool is_special(TokenId id) { return id >= 0 && id < kNumSpecials; }

    // Dump format: `id<TAB>surface<TAB>count`, specials first.
    void dump(std::ostream& out) const;
    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

  private:
    std::vector<std::string> surfaces_;
    std::vector<int64_t> counts_;
    std::unordered_map<std::string, TokenId> ids_;
    int min_count_ = 1;

    void add_entry(const std::string& surface, int64_t count);
};

struct Sentence {
    std::vector<TokenId> ids;
    std::string raw;

    Sentence() = default;
    explicit Sentence(std::vector<TokenId> token_ids) : ids(std::move(token_ids)) {}

    size_t size() const { return ids.size(); }
    bool empty() const { return ids.empty(); }
    bool operator==(const Sentence& other) const { return ids == other.ids; }
};

enum class StyleLabel { kFormal, kInformal };

struct DataSample {
    Sentence input;
    std::optional<Sentence> pseudo_reference;
    std::vector<Sentence> gold_references;
    std::optional<StyleLabel> style_label;
};

enum class Task { kParaphrase, kFormalize };

struct Corpus {
    std::vector<DataSample> samples;
    std::string provenance;
    Task task = Task::kParaphrase;

    bool empty() const { return samples.empty(); }
    size_t size() const { return samples.size(); }
};

// Lowercases and splits text into word-level surface tokens. Punctuation
// characters become single-character tokens; contractions split PTB-style
// ("don't" -> "do n't", "we're" -> "we 're").
std::vector<std::string> split_text(const std::string& text);

// split_text + vocabulary lookup, truncated to max_len ids.
Sentence tokenize(const std::string& text, const Vocabulary& vocab, int max_len = kDefaultMaxLen);

// Surface forms joined by single spaces; the six special tokens are dropped.
// Throws "id out of range" on an id outside the vocabulary.
std::string detokenize(const Sentence& s, const Vocabulary& vocab);

std::vector<std::string> read_lines(const std::string& path);

// Plain corpus file: one sentence per line.
Corpus load_plain_corpus(const std::string& path, const Vocabulary& vocab, Task task,
                         int max_len = kDefaultMaxLen);

// Labeled corpus file: `label<TAB>sentence`, label in {formal, informal}.
Corpus load_labeled_corpus(const std::string& path, const Vocabulary& vocab,
                           int max_len = kDefaultMaxLen);

// Attaches gold references from a TSV with one line per sample (multiple
// references separated by tabs).
void attach_references(Corpus& corpus, const std::string& refs_path, const Vocabulary& vocab,
                       int max_len = kDefaultMaxLen);

// Write-temp-then-rename so interrupted runs never leave truncated files.
void atomic_write_file(const std::string& path, const std::string& content);

}  // namespace tgls
