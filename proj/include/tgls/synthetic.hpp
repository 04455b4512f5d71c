#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tgls/text.hpp"

namespace tgls {

// One interchangeable word group; substituting members preserves meaning.
struct SynonymClass {
    std::vector<std::string> members;
};

// A sentence template. Slots are literal tokens or "@k" references into the
// class list. A frame may name a twin frame holding the same slots in a
// different order; references may swap to the twin.
struct Frame {
    std::vector<std::string> slots;
    int twin = -1;
};

// Desk-scale corpus generator. Empty classes/frames select the built-in
// grammar for the task.
struct SyntheticSpec {
    Task task = Task::kParaphrase;
    size_t vocab_size = 200;
    size_t train_size = 2000;
    size_t valid_size = 200;
    size_t test_size = 200;
    uint64_t seed = 0;
    std::vector<SynonymClass> classes;
    std::vector<Frame> frames;
};

struct SyntheticData {
    std::vector<std::string> train_inputs;
    std::vector<std::string> valid_inputs;
    std::vector<std::string> test_inputs;
    std::vector<std::vector<std::string>> valid_references;
    std::vector<std::vector<std::string>> test_references;
    // Fluency corpus: the train inputs (paraphrase) or the formal rewrites
    // only (formalize), so the language model prefers the target register.
    std::vector<std::string> lm_corpus;
    // Embedding corpus: covers both registers so every token has a vector.
    std::vector<std::string> emb_corpus;
    // Formalize only: rewrite rules and labeled classifier lines.
    std::vector<std::pair<std::string, std::string>> rules;
    std::vector<std::pair<bool, std::string>> labeled;  // (is_formal, text)
};

// Deterministic in the spec seed. Throws on a grammar without any usable
// synonym class or with frames lacking a substitutable slot.
SyntheticData make_synthetic(const SyntheticSpec& spec);

// Writes the corpus files plus a ready-to-run `task.cfg` into dir (created
// if missing): train/valid/test inputs, reference TSVs, scorer corpora, and
// for the formalize task `rules.tsv` and `labeled.tsv`.
void write_synthetic(const SyntheticData& data, Task task, const std::string& dir);

}  // namespace tgls
