#include "tgls/synthetic.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "tgls/rng.hpp"

namespace tgls {
namespace {

// Slot groups let one frame slot range over several synonym classes; the
// built-in grammars reference them as "@persons" etc. Custom grammars use
// "@<digits>" to name a class directly.
struct Grammar {
    std::vector<SynonymClass> classes;
    std::vector<Frame> frames;
    std::map<std::string, std::vector<int>> groups;
};

void add_class(Grammar& g, const std::string& group, std::initializer_list<const char*> members) {
    std::vector<std::string> m;
    for (const char* w : members) m.emplace_back(w);
    g.groups[group].push_back(static_cast<int>(g.classes.size()));
    g.classes.push_back(SynonymClass{std::move(m)});
}

Frame parse_frame(const std::string& text, int twin = -1) {
    Frame f;
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) f.slots.push_back(tok);
    f.twin = twin;
    return f;
}

Grammar paraphrase_grammar() {
    Grammar g;
    add_class(g, "persons", {"researcher", "scientist", "scholar"});
    add_class(g, "persons", {"teacher", "instructor"});
    add_class(g, "persons", {"student", "pupil", "learner"});
    add_class(g, "persons", {"doctor", "physician"});
    add_class(g, "persons", {"lawyer", "attorney"});
    add_class(g, "persons", {"writer", "author"});
    add_class(g, "persons", {"manager", "supervisor"});
    add_class(g, "persons", {"child", "kid"});
    add_class(g, "verbs", {"examined", "inspected", "reviewed"});
    add_class(g, "verbs", {"started", "began"});
    add_class(g, "verbs", {"finished", "completed"});
    add_class(g, "verbs", {"explained", "described"});
    add_class(g, "verbs", {"bought", "purchased"});
    add_class(g, "verbs", {"fixed", "repaired", "mended"});
    add_class(g, "verbs", {"built", "constructed"});
    add_class(g, "verbs", {"found", "discovered"});
    add_class(g, "verbs", {"needed", "required"});
    add_class(g, "verbs", {"enjoyed", "liked"});
    add_class(g, "objects", {"report", "document"});
    add_class(g, "objects", {"house", "home"});
    add_class(g, "objects", {"car", "vehicle"});
    add_class(g, "objects", {"movie", "film"});
    add_class(g, "objects", {"book", "novel"});
    add_class(g, "objects", {"plan", "proposal"});
    add_class(g, "objects", {"machine", "device"});
    add_class(g, "objects", {"problem", "issue"});
    add_class(g, "objects", {"answer", "solution"});
    add_class(g, "objects", {"picture", "photo", "image"});
    add_class(g, "adjectives", {"big", "large", "huge"});
    add_class(g, "adjectives", {"small", "little", "tiny"});
    add_class(g, "adjectives", {"quick", "fast", "rapid"});
    add_class(g, "adjectives", {"important", "crucial"});
    add_class(g, "adjectives", {"strange", "odd", "unusual"});
    add_class(g, "adjectives", {"old", "ancient"});
    add_class(g, "adjectives", {"new", "recent", "modern"});
    add_class(g, "adverbs", {"yesterday", "recently"});
    add_class(g, "adverbs", {"carefully", "quietly", "calmly"});
    add_class(g, "adverbs", {"eventually", "finally"});
    add_class(g, "places", {"office", "workshop"});
    add_class(g, "places", {"garden", "yard"});
    add_class(g, "places", {"library", "bookstore"});
    add_class(g, "places", {"market", "shop", "store"});

    g.frames.push_back(parse_frame("the @persons @verbs the @adjectives @objects @adverbs", 1));
    g.frames.push_back(parse_frame("@adverbs the @persons @verbs the @adjectives @objects", 0));
    g.frames.push_back(parse_frame("the @persons @verbs the @objects in the @places", 3));
    g.frames.push_back(parse_frame("in the @places the @persons @verbs the @objects", 2));
    g.frames.push_back(parse_frame("the @adjectives @persons @verbs a @adjectives @objects"));
    g.frames.push_back(parse_frame("my @persons @verbs that @adjectives @objects @adverbs", 6));
    g.frames.push_back(parse_frame("@adverbs my @persons @verbs that @adjectives @objects", 5));
    g.frames.push_back(parse_frame("the @persons in the @places @verbs the @adjectives @objects"));
    return g;
}

// Formal/informal token pairs: contractions plus register-marked verbs.
// The formal side appears in frames; informalization maps formal spans to
// the informal variant, and `rules.tsv` carries the reverse direction.
struct RegisterPair {
    std::vector<std::string> formal;
    std::vector<std::string> informal;
};

const std::vector<RegisterPair>& register_pairs() {
    static const std::vector<RegisterPair> pairs = {
        {{"i", "am"}, {"i", "'m"}},
        {{"we", "are"}, {"we", "'re"}},
        {{"they", "are"}, {"they", "'re"}},
        {{"it", "is"}, {"it", "'s"}},
        {{"do", "not"}, {"do", "n't"}},
        {{"can", "not"}, {"ca", "n't"}},
        {{"i", "will"}, {"i", "'ll"}},
        {{"i", "have"}, {"i", "'ve"}},
        {{"obtain"}, {"get"}},
        {{"purchase"}, {"buy"}},
        {{"require"}, {"need"}},
        {{"repair"}, {"fix"}},
        {{"demonstrate"}, {"show"}},
        {{"inform"}, {"tell"}},
        {{"request"}, {"ask"}},
        {{"commence"}, {"start"}},
        {{"conclude"}, {"finish"}},
        {{"assist"}, {"help"}},
        {{"obtained"}, {"got"}},
        {{"purchased"}, {"bought"}},
        {{"required"}, {"needed"}},
        {{"repaired"}, {"fixed"}},
        {{"requested"}, {"asked"}},
        {{"concluded"}, {"finished"}},
        {{"assisted"}, {"helped"}},
        {{"reviewed"}, {"checked"}},
    };
    return pairs;
}

const std::vector<std::string>& filler_tokens() {
    static const std::vector<std::string> fillers = {"just", "really", "like", "basically",
                                                     "actually"};
    return fillers;
}

Grammar formalize_grammar() {
    Grammar g;
    add_class(g, "objects", {"report", "document"});
    add_class(g, "objects", {"proposal", "plan"});
    add_class(g, "objects", {"meeting", "session"});
    add_class(g, "objects", {"budget", "estimate"});
    add_class(g, "objects", {"schedule", "timetable"});
    add_class(g, "objects", {"contract", "agreement"});
    add_class(g, "verbs", {"obtain"});
    add_class(g, "verbs", {"purchase"});
    add_class(g, "verbs", {"require"});
    add_class(g, "verbs", {"repair"});
    add_class(g, "verbs", {"demonstrate"});
    add_class(g, "verbs", {"inform"});
    add_class(g, "verbs", {"request"});
    add_class(g, "verbs", {"commence"});
    add_class(g, "verbs", {"conclude"});
    add_class(g, "verbs", {"assist"});
    add_class(g, "pastverbs", {"obtained"});
    add_class(g, "pastverbs", {"purchased"});
    add_class(g, "pastverbs", {"required"});
    add_class(g, "pastverbs", {"repaired"});
    add_class(g, "pastverbs", {"requested"});
    add_class(g, "pastverbs", {"concluded"});
    add_class(g, "pastverbs", {"assisted"});
    add_class(g, "pastverbs", {"reviewed"});
    add_class(g, "feelings", {"pleased", "satisfied"});
    add_class(g, "feelings", {"concerned", "worried"});
    add_class(g, "adjectives", {"important", "essential"});
    add_class(g, "adjectives", {"urgent", "pressing"});
    add_class(g, "adverbs", {"promptly", "carefully"});
    add_class(g, "adverbs", {"today", "tomorrow"});

    g.frames.push_back(parse_frame("i am going to @verbs the @objects @adverbs"));
    g.frames.push_back(parse_frame("we are @feelings about the @objects"));
    g.frames.push_back(parse_frame("it is @adjectives that we @verbs the @objects"));
    g.frames.push_back(parse_frame("we do not @verbs the @objects @adverbs"));
    g.frames.push_back(parse_frame("i will @verbs the @objects @adverbs"));
    g.frames.push_back(parse_frame("we can not @verbs the @objects @adverbs"));
    g.frames.push_back(parse_frame("i have @pastverbs the @objects already"));
    g.frames.push_back(parse_frame("they are @feelings with the @objects"));
    return g;
}

Grammar resolve_grammar(const SyntheticSpec& spec) {
    Grammar g;
    if (spec.classes.empty() && spec.frames.empty()) {
        g = spec.task == Task::kParaphrase ? paraphrase_grammar() : formalize_grammar();
    } else {
        g.classes = spec.classes;
        g.frames = spec.frames;
    }
    if (g.classes.empty() || g.frames.empty()) {
        throw std::runtime_error("synthetic grammar needs classes and frames");
    }
    bool any_multi = false;
    for (const auto& c : g.classes) {
        if (c.members.empty()) throw std::runtime_error("synthetic grammar has an empty class");
        any_multi = any_multi || c.members.size() >= 2;
    }
    if (!any_multi) {
        throw std::runtime_error("synthetic grammar has no synonym class with two members");
    }
    return g;
}

struct SlotFill {
    int cls = -1;     // -1: literal token
    int member = 0;
    std::string literal;
};

std::vector<SlotFill> fill_frame(const Grammar& g, const Frame& frame, Rng& rng) {
    std::vector<SlotFill> fills;
    for (const auto& slot : frame.slots) {
        SlotFill f;
        if (!slot.empty() && slot[0] == '@') {
            std::string ref = slot.substr(1);
            int cls;
            if (std::all_of(ref.begin(), ref.end(), [](char c) { return c >= '0' && c <= '9'; })) {
                cls = std::stoi(ref);
                if (cls < 0 || cls >= static_cast<int>(g.classes.size())) {
                    throw std::runtime_error("synthetic frame references unknown class " + ref);
                }
            } else {
                auto it = g.groups.find(ref);
                if (it == g.groups.end() || it->second.empty()) {
                    throw std::runtime_error("synthetic frame references unknown group " + ref);
                }
                cls = it->second[uniform_index(rng, it->second.size())];
            }
            f.cls = cls;
            f.member = static_cast<int>(uniform_index(rng, g.classes[(size_t)cls].members.size()));
        } else {
            f.literal = slot;
        }
        fills.push_back(std::move(f));
    }
    return fills;
}

std::string render(const Grammar& g, const std::vector<SlotFill>& fills) {
    std::string out;
    for (const auto& f : fills) {
        const std::string& tok =
            f.cls < 0 ? f.literal : g.classes[(size_t)f.cls].members[(size_t)f.member];
        if (!out.empty()) out += ' ';
        out += tok;
    }
    return out;
}

// Resample every multi-member slot to a different member; singletons and
// literals stay. Guarantees at least one changed token whenever the frame
// has a substitutable slot.
std::vector<SlotFill> substitute(const Grammar& g, const std::vector<SlotFill>& fills, Rng& rng) {
    std::vector<SlotFill> out = fills;
    for (auto& f : out) {
        if (f.cls < 0) continue;
        size_t n = g.classes[(size_t)f.cls].members.size();
        if (n < 2) continue;
        size_t shift = 1 + uniform_index(rng, n - 1);
        f.member = static_cast<int>((static_cast<size_t>(f.member) + shift) % n);
    }
    return out;
}

// The twin frame holds the same slots in a different order; fills are
// carried across by matching slot strings.
std::vector<SlotFill> reorder_to_twin(const Grammar& g, const Frame& from, const Frame& to,
                                      const std::vector<SlotFill>& fills) {
    std::vector<SlotFill> out;
    std::vector<bool> used(fills.size(), false);
    for (const auto& slot : to.slots) {
        bool found = false;
        for (size_t i = 0; i < from.slots.size(); ++i) {
            if (!used[i] && from.slots[i] == slot) {
                out.push_back(fills[i]);
                used[i] = true;
                found = true;
                break;
            }
        }
        if (!found) throw std::runtime_error("synthetic twin frames have mismatched slots");
    }
    (void)g;
    return out;
}

std::vector<std::string> informalize(const std::vector<std::string>& formal_tokens, Rng& rng) {
    std::vector<std::string> toks = formal_tokens;
    for (const auto& pair : register_pairs()) {
        for (size_t i = 0; i + pair.formal.size() <= toks.size();) {
            bool match = true;
            for (size_t j = 0; j < pair.formal.size(); ++j) {
                if (toks[i + j] != pair.formal[j]) {
                    match = false;
                    break;
                }
            }
            if (match) {
                toks.erase(toks.begin() + (long)i, toks.begin() + (long)(i + pair.formal.size()));
                toks.insert(toks.begin() + (long)i, pair.informal.begin(), pair.informal.end());
                i += pair.informal.size();
            } else {
                ++i;
            }
        }
    }
    if (uniform01(rng) < 0.8) {
        const auto& fillers = filler_tokens();
        const std::string& filler = fillers[uniform_index(rng, fillers.size())];
        size_t pos = 1 + uniform_index(rng, toks.size() - 1);
        toks.insert(toks.begin() + (long)pos, filler);
    }
    return toks;
}

std::string join(const std::vector<std::string>& toks) {
    std::string out;
    for (const auto& t : toks) {
        if (!out.empty()) out += ' ';
        out += t;
    }
    return out;
}

std::vector<std::string> split_ws(const std::string& line) {
    std::istringstream in(line);
    std::vector<std::string> toks;
    std::string t;
    while (in >> t) toks.push_back(t);
    return toks;
}

void generate_paraphrase_split(const Grammar& g, size_t count, Rng& rng,
                               std::vector<std::string>& inputs,
                               std::vector<std::vector<std::string>>* references) {
    for (size_t i = 0; i < count; ++i) {
        size_t fi = uniform_index(rng, g.frames.size());
        const Frame& frame = g.frames[fi];
        std::vector<SlotFill> fills = fill_frame(g, frame, rng);
        inputs.push_back(render(g, fills));
        if (references == nullptr) continue;
        std::vector<std::string> refs;
        refs.push_back(render(g, substitute(g, fills, rng)));
        if (frame.twin >= 0) {
            const Frame& twin = g.frames[(size_t)frame.twin];
            refs.push_back(render(g, substitute(g, reorder_to_twin(g, frame, twin, fills), rng)));
        } else {
            refs.push_back(render(g, substitute(g, fills, rng)));
        }
        references->push_back(std::move(refs));
    }
}

void generate_formalize_split(const Grammar& g, size_t count, Rng& rng,
                              std::vector<std::string>& inputs,
                              std::vector<std::vector<std::string>>* references,
                              std::vector<std::string>* formal_lines) {
    for (size_t i = 0; i < count; ++i) {
        size_t fi = uniform_index(rng, g.frames.size());
        std::vector<SlotFill> fills = fill_frame(g, g.frames[fi], rng);
        std::string formal = render(g, fills);
        inputs.push_back(join(informalize(split_ws(formal), rng)));
        if (references != nullptr) references->push_back({formal});
        if (formal_lines != nullptr) formal_lines->push_back(formal);
    }
}

size_t count_grammar_tokens(const Grammar& g) {
    std::set<std::string> tokens;
    for (const auto& c : g.classes) tokens.insert(c.members.begin(), c.members.end());
    for (const auto& f : g.frames) {
        for (const auto& s : f.slots) {
            if (s.empty() || s[0] != '@') tokens.insert(s);
        }
    }
    for (const auto& p : register_pairs()) {
        tokens.insert(p.formal.begin(), p.formal.end());
        tokens.insert(p.informal.begin(), p.informal.end());
    }
    tokens.insert(filler_tokens().begin(), filler_tokens().end());
    return tokens.size();
}

}  // namespace

SyntheticData make_synthetic(const SyntheticSpec& spec) {
    Grammar g = resolve_grammar(spec);
    if (spec.task == Task::kParaphrase) {
        for (const auto& frame : g.frames) {
            bool has_multi = false;
            for (const auto& slot : frame.slots) {
                if (slot.empty() || slot[0] != '@') continue;
                std::string ref = slot.substr(1);
                if (std::all_of(ref.begin(), ref.end(),
                                [](char c) { return c >= '0' && c <= '9'; })) {
                    size_t cls = static_cast<size_t>(std::stoi(ref));
                    if (cls >= g.classes.size()) {
                        throw std::runtime_error("synthetic frame references unknown class " +
                                                 ref);
                    }
                    has_multi = has_multi || g.classes[cls].members.size() >= 2;
                } else {
                    auto it = g.groups.find(ref);
                    if (it == g.groups.end() || it->second.empty()) {
                        throw std::runtime_error("synthetic frame references unknown group " +
                                                 ref);
                    }
                    for (int cls : it->second) {
                        has_multi = has_multi || g.classes[(size_t)cls].members.size() >= 2;
                    }
                }
            }
            if (!has_multi) {
                throw std::runtime_error("synthetic frame has no substitutable slot");
            }
        }
    }
    if (count_grammar_tokens(g) + static_cast<size_t>(Vocabulary::kNumSpecials) >
        spec.vocab_size) {
        throw std::runtime_error("synthetic grammar exceeds the vocabulary budget");
    }

    SyntheticData data;
    if (spec.task == Task::kParaphrase) {
        Rng rt(derive_seed(spec.seed, 1, 0));
        generate_paraphrase_split(g, spec.train_size, rt, data.train_inputs, nullptr);
        Rng rv(derive_seed(spec.seed, 2, 0));
        generate_paraphrase_split(g, spec.valid_size, rv, data.valid_inputs,
                                  &data.valid_references);
        Rng rs(derive_seed(spec.seed, 3, 0));
        generate_paraphrase_split(g, spec.test_size, rs, data.test_inputs, &data.test_references);
        data.lm_corpus = data.train_inputs;
        data.emb_corpus = data.train_inputs;
    } else {
        Rng rt(derive_seed(spec.seed, 1, 0));
        std::vector<std::string> train_formal;
        generate_formalize_split(g, spec.train_size, rt, data.train_inputs, nullptr,
                                 &train_formal);
        Rng rv(derive_seed(spec.seed, 2, 0));
        generate_formalize_split(g, spec.valid_size, rv, data.valid_inputs,
                                 &data.valid_references, nullptr);
        Rng rs(derive_seed(spec.seed, 3, 0));
        generate_formalize_split(g, spec.test_size, rs, data.test_inputs, &data.test_references,
                                 nullptr);
        data.lm_corpus = train_formal;
        data.emb_corpus = data.train_inputs;
        data.emb_corpus.insert(data.emb_corpus.end(), train_formal.begin(), train_formal.end());
        for (size_t i = 0; i < data.train_inputs.size(); ++i) {
            data.labeled.emplace_back(false, data.train_inputs[i]);
            data.labeled.emplace_back(true, train_formal[i]);
        }
        for (const auto& p : register_pairs()) {
            data.rules.emplace_back(join(p.informal), join(p.formal));
        }
        for (const auto& f : filler_tokens()) data.rules.emplace_back(f, "");
    }
    return data;
}

void write_synthetic(const SyntheticData& data, Task task, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    auto write_lines = [&](const std::string& name, const std::vector<std::string>& lines) {
        std::string body;
        for (const auto& l : lines) {
            body += l;
            body += '\n';
        }
        atomic_write_file(dir + "/" + name, body);
    };
    auto write_refs = [&](const std::string& name,
                          const std::vector<std::vector<std::string>>& refs) {
        std::string body;
        for (const auto& row : refs) {
            for (size_t i = 0; i < row.size(); ++i) {
                if (i > 0) body += '\t';
                body += row[i];
            }
            body += '\n';
        }
        atomic_write_file(dir + "/" + name, body);
    };

    write_lines("train.txt", data.train_inputs);
    write_lines("valid.txt", data.valid_inputs);
    write_lines("test.txt", data.test_inputs);
    write_refs("refs.valid.tsv", data.valid_references);
    write_refs("refs.test.tsv", data.test_references);
    write_lines("lm.txt", data.lm_corpus);
    write_lines("emb.txt", data.emb_corpus);

    std::string cfg;
    cfg += std::string("task=") + (task == Task::kParaphrase ? "paraphrase" : "formalize") + "\n";
    cfg += "train=train.txt\nvalid=valid.txt\ntest=test.txt\n";
    cfg += "refs_valid=refs.valid.tsv\nrefs_test=refs.test.tsv\n";
    cfg += "lm=lm.txt\nemb=emb.txt\n";
    if (task == Task::kFormalize) {
        std::string rules;
        for (const auto& r : data.rules) rules += r.first + "\t" + r.second + "\n";
        atomic_write_file(dir + "/rules.tsv", rules);
        std::string labeled;
        for (const auto& l : data.labeled) {
            labeled += (l.first ? "formal\t" : "informal\t") + l.second + "\n";
        }
        atomic_write_file(dir + "/labeled.tsv", labeled);
        cfg += "rules=rules.tsv\nlabeled=labeled.tsv\n";
    }
    atomic_write_file(dir + "/task.cfg", cfg);
}

}  // namespace tgls
