#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tgls/embeddings.hpp"
#include "tgls/generator.hpp"
#include "tgls/ngram_lm.hpp"
#include "tgls/objective.hpp"

namespace tgls {

struct CheckpointBlock {
    std::string name;
    std::vector<uint64_t> shape;
    std::vector<float> data;
};

// Versioned binary container of named float32 blocks, written atomically.
// One format carries generator weights, optimizer state, n-gram counts,
// embeddings, and classifier weights under distinct name prefixes.
class CheckpointFile {
  public:
    static constexpr uint32_t kVersion = 1;

    void add(std::string name, std::vector<uint64_t> shape, const std::vector<double>& values);
    void add_scalar(std::string name, double value);

    const CheckpointBlock* find(const std::string& name) const;
    const CheckpointBlock& require(const std::string& name) const;
    const std::vector<CheckpointBlock>& blocks() const { return blocks_; }

    void save(const std::string& path) const;
    static CheckpointFile load(const std::string& path);

  private:
    std::vector<CheckpointBlock> blocks_;
};

// Model parameters plus optional optimizer state. Values are stored as
// float32, so parameters are rounded on save; freshly initialized or
// previously loaded models round-trip exactly.
void save_generator(const GeneratorModel& model, const AdamState* state, const std::string& path);
GeneratorModel load_generator(const std::string& path, AdamState* state_out = nullptr);

// The frozen search-time scorers. The classifier is present only for
// formalization tasks.
struct Scorers {
    NGramModel fwd;
    NGramModel bwd;
    EmbeddingTable emb;
    std::optional<StyleClassifier> clf;
};

void save_scorers(const Scorers& scorers, const std::string& path);
Scorers load_scorers(const std::string& path);

}  // namespace tgls
