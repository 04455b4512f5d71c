#include "tgls/text.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace tgls {

namespace {

const std::vector<std::string>& special_surfaces() {
    static const std::vector<std::string> kSpecials = {"[BOS]", "[EOS]", "[SEP]",
                                                       "[MASK]", "[PAD]", "[UNK]"};
    return kSpecials;
}

bool is_punct_char(char c) {
    return std::ispunct(static_cast<unsigned char>(c)) != 0;
}

// Suffixes split off as their own tokens, checked longest-first against the
// tail of an alphabetic run ("don't" -> "do" + "n't").
const std::vector<std::string>& contraction_suffixes() {
    static const std::vector<std::string> kSuffixes = {"n't", "'re", "'ve", "'ll",
                                                       "'s",  "'d",  "'m"};
    return kSuffixes;
}

void emit_word(const std::string& word, std::vector<std::string>& out) {
    if (word.empty()) return;
    for (const auto& suffix : contraction_suffixes()) {
        if (word.size() > suffix.size() &&
            word.compare(word.size() - suffix.size(), suffix.size(), suffix) == 0) {
            out.push_back(word.substr(0, word.size() - suffix.size()));
            out.push_back(suffix);
            return;
        }
    }
    out.push_back(word);
}

}  // namespace

Vocabulary::Vocabulary() {
    for (const auto& surface : special_surfaces()) add_entry(surface, 0);
}

void Vocabulary::add_entry(const std::string& surface, int64_t count) {
    TokenId id = static_cast<TokenId>(surfaces_.size());
    surfaces_.push_back(surface);
    counts_.push_back(count);
    ids_.emplace(surface, id);
}

Vocabulary Vocabulary::build(const std::vector<std::string>& lines, int min_count) {
    std::unordered_map<std::string, int64_t> freq;
    for (const auto& line : lines) {
        for (const auto& token : split_text(line)) ++freq[token];
    }
    if (freq.empty()) throw std::runtime_error("cannot build vocabulary from an empty corpus");

    std::vector<std::pair<std::string, int64_t>> entries(freq.begin(), freq.end());
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Vocabulary vocab;
    vocab.min_count_ = min_count;
    for (const auto& [surface, count] : entries) {
        if (count < min_count) continue;
        if (vocab.ids_.count(surface) > 0) continue;
        vocab.add_entry(surface, count);
    }
    return vocab;
}

const std::string& Vocabulary::surface(TokenId id) const {
    if (id < 0 || static_cast<size_t>(id) >= surfaces_.size()) {
        throw std::out_of_range("token id out of range: " + std::to_string(id));
    }
    return surfaces_[static_cast<size_t>(id)];
}

std::optional<TokenId> Vocabulary::id_of(const std::string& surface) const {
    auto it = ids_.find(surface);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
}

TokenId Vocabulary::lookup(const std::string& surface) const {
    auto it = ids_.find(surface);
    return it == ids_.end() ? kUnk : it->second;
}

void Vocabulary::dump(std::ostream& out) const {
    for (size_t id = 0; id < surfaces_.size(); ++id) {
        out << id << '\t' << surfaces_[id] << '\t' << counts_[id] << '\n';
    }
}

void Vocabulary::save(const std::string& path) const {
    std::ostringstream buf;
    dump(buf);
    atomic_write_file(path, buf.str());
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open vocabulary file: " + path);

    Vocabulary vocab;
    vocab.surfaces_.clear();
    vocab.counts_.clear();
    vocab.ids_.clear();

    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string id_str, surface, count_str;
        if (!std::getline(fields, id_str, '\t') || !std::getline(fields, surface, '\t') ||
            !std::getline(fields, count_str, '\t')) {
            throw std::runtime_error("malformed vocabulary line " + std::to_string(line_no) +
                                     " in " + path);
        }
        TokenId id = static_cast<TokenId>(std::stol(id_str));
        if (id != static_cast<TokenId>(vocab.surfaces_.size())) {
            throw std::runtime_error("non-contiguous id at vocabulary line " +
                                     std::to_string(line_no) + " in " + path);
        }
        vocab.add_entry(surface, std::stoll(count_str));
    }
    if (vocab.surfaces_.size() < static_cast<size_t>(kNumSpecials)) {
        throw std::runtime_error("vocabulary file missing special tokens: " + path);
    }
    for (TokenId id = 0; id < kNumSpecials; ++id) {
        if (vocab.surfaces_[static_cast<size_t>(id)] != special_surfaces()[static_cast<size_t>(id)]) {
            throw std::runtime_error("vocabulary file has wrong special token order: " + path);
        }
    }
    return vocab;
}

std::vector<std::string> split_text(const std::string& text) {
    std::vector<std::string> tokens;
    std::string word;
    for (char raw : text) {
        char c = static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
        if (std::isspace(static_cast<unsigned char>(c))) {
            emit_word(word, tokens);
            word.clear();
        } else if (c == '\'') {
            // Keep apostrophes inside words so contraction suffixes survive.
            word.push_back(c);
        } else if (is_punct_char(c)) {
            emit_word(word, tokens);
            word.clear();
            tokens.emplace_back(1, c);
        } else {
            word.push_back(c);
        }
    }
    emit_word(word, tokens);
    return tokens;
}

Sentence tokenize(const std::string& text, const Vocabulary& vocab, int max_len) {
    Sentence s;
    s.raw = text;
    for (const auto& surface : split_text(text)) {
        if (static_cast<int>(s.ids.size()) >= max_len) break;
        s.ids.push_back(vocab.lookup(surface));
    }
    return s;
}

std::string detokenize(const Sentence& s, const Vocabulary& vocab) {
    std::string out;
    for (TokenId id : s.ids) {
        if (id < 0 || static_cast<size_t>(id) >= vocab.size()) {
            throw std::out_of_range("token id out of range: " + std::to_string(id));
        }
        if (Vocabulary::is_special(id)) continue;
        if (!out.empty()) out.push_back(' ');
        out += vocab.surface(id);
    }
    return out;
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

Corpus load_plain_corpus(const std::string& path, const Vocabulary& vocab, Task task,
                         int max_len) {
    Corpus corpus;
    corpus.provenance = path;
    corpus.task = task;
    for (const auto& line : read_lines(path)) {
        if (line.empty()) continue;
        DataSample sample;
        sample.input = tokenize(line, vocab, max_len);
        if (sample.input.empty()) continue;
        corpus.samples.push_back(std::move(sample));
    }
    return corpus;
}

Corpus load_labeled_corpus(const std::string& path, const Vocabulary& vocab, int max_len) {
    Corpus corpus;
    corpus.provenance = path;
    corpus.task = Task::kFormalize;
    size_t line_no = 0;
    for (const auto& line : read_lines(path)) {
        ++line_no;
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw std::runtime_error("missing tab in labeled corpus line " +
                                     std::to_string(line_no) + " of " + path);
        }
        std::string label = line.substr(0, tab);
        std::string sentence = line.substr(tab + 1);
        DataSample sample;
        if (label == "formal") {
            sample.style_label = StyleLabel::kFormal;
        } else if (label == "informal") {
            sample.style_label = StyleLabel::kInformal;
        } else {
            throw std::runtime_error("unknown style label '" + label + "' at line " +
                                     std::to_string(line_no) + " of " + path);
        }
        sample.input = tokenize(sentence, vocab, max_len);
        if (sample.input.empty()) continue;
        corpus.samples.push_back(std::move(sample));
    }
    return corpus;
}

void attach_references(Corpus& corpus, const std::string& refs_path, const Vocabulary& vocab,
                       int max_len) {
    auto lines = read_lines(refs_path);
    if (lines.size() != corpus.samples.size()) {
        throw std::runtime_error("reference file has " + std::to_string(lines.size()) +
                                 " lines but corpus has " + std::to_string(corpus.samples.size()) +
                                 " samples");
    }
    for (size_t i = 0; i < lines.size(); ++i) {
        std::istringstream fields(lines[i]);
        std::string ref;
        while (std::getline(fields, ref, '\t')) {
            if (ref.empty()) continue;
            corpus.samples[i].gold_references.push_back(tokenize(ref, vocab, max_len));
        }
    }
}

void atomic_write_file(const std::string& path, const std::string& content) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open file for writing: " + tmp);
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw std::runtime_error("write failed: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        throw std::runtime_error("rename failed: " + tmp + " -> " + path);
    }
}

}  // namespace tgls
