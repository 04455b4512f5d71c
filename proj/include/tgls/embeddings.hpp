#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tgls/text.hpp"

namespace tgls {

// Static word embeddings: positive-PMI co-occurrence statistics factorized
// by SVD. Special tokens (and anything unseen) keep zero vectors.
class EmbeddingTable {
  public:
    EmbeddingTable() = default;

    // Symmetric co-occurrence window over non-special tokens; PPMI matrix
    // factorized to rank d. The factorization is exact and deterministic;
    // the seed parameter is kept for interface stability. Ranks below d pad
    // with zero columns and log a warning.
    static EmbeddingTable train(const std::vector<Sentence>& sentences, size_t vocab_size,
                                int d = 64, int window = 5, uint64_t seed = 0);

    // Direct construction from per-token rows (tests, external tables).
    static EmbeddingTable from_rows(std::vector<std::vector<double>> rows);

    // Text format: `word f1 f2 ... fd` per line; words missing from the file
    // keep zero vectors.
    static EmbeddingTable load_text(const std::string& path, const Vocabulary& vocab);

    // Flat row-major storage, for persistence.
    static EmbeddingTable from_flat(std::vector<double> data, size_t vocab_size, int d);
    const std::vector<double>& flat() const { return data_; }

    bool trained() const { return trained_; }
    int dimension() const { return dim_; }
    size_t size() const { return dim_ == 0 ? 0 : data_.size() / static_cast<size_t>(dim_); }

    // L2-normalized copy of the token's vector; zero vectors stay zero.
    std::vector<double> normalized(TokenId id) const;

  private:
    std::vector<double> data_;
    int dim_ = 0;
    bool trained_ = false;
};

}  // namespace tgls
