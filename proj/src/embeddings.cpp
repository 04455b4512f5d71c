#include "tgls/embeddings.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "tgls/log.hpp"

namespace tgls {

namespace {

bool is_content(TokenId id) { return id >= Vocabulary::kNumSpecials; }

}  // namespace

EmbeddingTable EmbeddingTable::train(const std::vector<Sentence>& sentences, size_t vocab_size,
                                     int d, int window, uint64_t seed) {
    (void)seed;
    if (sentences.empty()) throw std::runtime_error("cannot train embeddings on an empty corpus");
    if (d < 2) throw std::invalid_argument("embedding dimension must be >= 2");
    if (window < 1) throw std::invalid_argument("embedding window must be >= 1");

    const auto v = static_cast<Eigen::Index>(vocab_size);
    Eigen::MatrixXd cooc = Eigen::MatrixXd::Zero(v, v);
    for (const auto& s : sentences) {
        for (size_t i = 0; i < s.ids.size(); ++i) {
            if (!is_content(s.ids[i])) continue;
            size_t hi = std::min(s.ids.size(), i + static_cast<size_t>(window) + 1);
            for (size_t j = i + 1; j < hi; ++j) {
                if (!is_content(s.ids[j])) continue;
                cooc(s.ids[i], s.ids[j]) += 1.0;
                cooc(s.ids[j], s.ids[i]) += 1.0;
            }
        }
    }

    EmbeddingTable table;
    table.dim_ = d;
    table.trained_ = true;
    table.data_.assign(vocab_size * static_cast<size_t>(d), 0.0);

    double total = cooc.sum();
    if (total <= 0.0) {
        log_info("embeddings: no co-occurrences found, all vectors stay zero");
        return table;
    }

    Eigen::VectorXd marginals = cooc.rowwise().sum();
    Eigen::MatrixXd ppmi = Eigen::MatrixXd::Zero(v, v);
    for (Eigen::Index i = 0; i < v; ++i) {
        if (marginals(i) <= 0.0) continue;
        for (Eigen::Index j = 0; j < v; ++j) {
            if (cooc(i, j) <= 0.0 || marginals(j) <= 0.0) continue;
            double pmi = std::log(cooc(i, j) * total / (marginals(i) * marginals(j)));
            if (pmi > 0.0) ppmi(i, j) = pmi;
        }
    }

    Eigen::BDCSVD<Eigen::MatrixXd> svd(ppmi, Eigen::ComputeThinU);
    const auto& u = svd.matrixU();
    const auto& sigma = svd.singularValues();

    int rank = 0;
    Eigen::Index cols = std::min<Eigen::Index>(d, sigma.size());
    for (Eigen::Index k = 0; k < cols; ++k) {
        if (sigma(k) <= 1e-12) break;
        ++rank;
        double scale = std::sqrt(sigma(k));
        // Canonical sign: the largest-magnitude component of each singular
        // vector points up.
        Eigen::Index top = 0;
        u.col(k).cwiseAbs().maxCoeff(&top);
        double sign = u(top, k) >= 0.0 ? 1.0 : -1.0;
        for (Eigen::Index i = 0; i < v; ++i) {
            table.data_[static_cast<size_t>(i) * static_cast<size_t>(d) +
                        static_cast<size_t>(k)] = sign * u(i, k) * scale;
        }
    }
    if (rank < d) {
        log_info("embeddings: effective rank %d below dimension %d, padding with zeros", rank, d);
    }
    return table;
}

EmbeddingTable EmbeddingTable::from_rows(std::vector<std::vector<double>> rows) {
    if (rows.empty()) throw std::invalid_argument("embedding table needs at least one row");
    EmbeddingTable table;
    table.dim_ = static_cast<int>(rows.front().size());
    if (table.dim_ == 0) throw std::invalid_argument("embedding rows must be non-empty");
    table.trained_ = true;
    table.data_.reserve(rows.size() * rows.front().size());
    for (const auto& row : rows) {
        if (static_cast<int>(row.size()) != table.dim_) {
            throw std::invalid_argument("embedding rows must share one dimension");
        }
        table.data_.insert(table.data_.end(), row.begin(), row.end());
    }
    return table;
}

EmbeddingTable EmbeddingTable::load_text(const std::string& path, const Vocabulary& vocab) {
    auto lines = read_lines(path);
    int d = -1;
    std::vector<std::vector<double>> rows;
    rows.assign(vocab.size(), {});
    for (const auto& line : lines) {
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string word;
        fields >> word;
        std::vector<double> values;
        double value = 0.0;
        while (fields >> value) values.push_back(value);
        if (values.empty()) throw std::runtime_error("embedding line without values: " + line);
        if (d == -1) d = static_cast<int>(values.size());
        if (static_cast<int>(values.size()) != d) {
            throw std::runtime_error("inconsistent embedding dimension at word: " + word);
        }
        auto id = vocab.id_of(word);
        if (!id) continue;
        rows[static_cast<size_t>(*id)] = std::move(values);
    }
    if (d == -1) throw std::runtime_error("embedding file has no vectors: " + path);
    for (auto& row : rows) {
        if (row.empty()) row.assign(static_cast<size_t>(d), 0.0);
    }
    return from_rows(std::move(rows));
}

EmbeddingTable EmbeddingTable::from_flat(std::vector<double> data, size_t vocab_size, int d) {
    if (d < 1 || data.size() != vocab_size * static_cast<size_t>(d)) {
        throw std::invalid_argument("embedding data does not match vocab_size x d");
    }
    EmbeddingTable table;
    table.data_ = std::move(data);
    table.dim_ = d;
    table.trained_ = true;
    return table;
}

std::vector<double> EmbeddingTable::normalized(TokenId id) const {
    if (id < 0 || static_cast<size_t>(id) >= size()) {
        throw std::out_of_range("embedding id out of range: " + std::to_string(id));
    }
    auto offset = static_cast<size_t>(id) * static_cast<size_t>(dim_);
    std::vector<double> row(data_.begin() + static_cast<std::ptrdiff_t>(offset),
                            data_.begin() + static_cast<std::ptrdiff_t>(offset + dim_));
    double norm_sq = 0.0;
    for (double x : row) norm_sq += x * x;
    if (norm_sq > 1e-24) {
        double inv = 1.0 / std::sqrt(norm_sq);
        for (double& x : row) x *= inv;
    }
    return row;
}

}  // namespace tgls
