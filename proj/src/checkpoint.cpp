#include "tgls/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "tgls/text.hpp"

namespace tgls {

namespace {

constexpr char kMagic[4] = {'T', 'G', 'L', 'S'};
// Largest integer float32 represents exactly; counts beyond it would corrupt.
constexpr double kMaxExactInt = 16777216.0;

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > buf.size()) throw std::runtime_error("truncated checkpoint file");
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + static_cast<size_t>(i)]))
                 << (8 * i);
        }
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + static_cast<size_t>(i)]))
                 << (8 * i);
        }
        pos += 8;
        return v;
    }
    float f32() {
        uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string bytes(size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint file: " + path);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return data;
}

uint64_t shape_count(const std::vector<uint64_t>& shape) {
    uint64_t n = 1;
    for (uint64_t d : shape) n *= d;
    return n;
}

void add_count_tables(CheckpointFile& file, const std::string& prefix, const NGramModel& model) {
    for (int m = 1; m <= model.order(); ++m) {
        const CountTable& table = model.raw_counts(m);
        std::vector<const Gram*> grams;
        grams.reserve(table.size());
        for (const auto& [gram, count] : table) grams.push_back(&gram);
        std::sort(grams.begin(), grams.end(),
                  [](const Gram* a, const Gram* b) { return *a < *b; });

        std::vector<double> rows;
        rows.reserve(table.size() * static_cast<size_t>(m + 1));
        for (const Gram* gram : grams) {
            for (TokenId id : *gram) rows.push_back(static_cast<double>(id));
            double count = static_cast<double>(table.at(*gram));
            if (count > kMaxExactInt) {
                throw std::runtime_error("n-gram count too large for exact storage");
            }
            rows.push_back(count);
        }
        file.add(prefix + std::to_string(m),
                 {static_cast<uint64_t>(table.size()), static_cast<uint64_t>(m + 1)}, rows);
    }
}

std::vector<CountTable> read_count_tables(const CheckpointFile& file, const std::string& prefix,
                                          int order) {
    std::vector<CountTable> raw(static_cast<size_t>(order));
    for (int m = 1; m <= order; ++m) {
        const CheckpointBlock& block = file.require(prefix + std::to_string(m));
        if (block.shape.size() != 2 || block.shape[1] != static_cast<uint64_t>(m + 1)) {
            throw std::runtime_error("count table block has the wrong shape");
        }
        CountTable& table = raw[static_cast<size_t>(m - 1)];
        size_t n = block.shape[0];
        table.reserve(n);
        for (size_t r = 0; r < n; ++r) {
            const float* row = block.data.data() + r * static_cast<size_t>(m + 1);
            Gram gram(static_cast<size_t>(m));
            for (int j = 0; j < m; ++j) gram[static_cast<size_t>(j)] = static_cast<TokenId>(row[j]);
            table[gram] = static_cast<int64_t>(row[m]);
        }
    }
    return raw;
}

}  // namespace

void CheckpointFile::add(std::string name, std::vector<uint64_t> shape,
                         const std::vector<double>& values) {
    if (name.empty()) throw std::invalid_argument("checkpoint block needs a name");
    if (shape_count(shape) != values.size()) {
        throw std::invalid_argument("checkpoint block shape does not match the value count");
    }
    if (find(name) != nullptr) throw std::invalid_argument("duplicate checkpoint block: " + name);
    CheckpointBlock block;
    block.name = std::move(name);
    block.shape = std::move(shape);
    block.data.reserve(values.size());
    for (double v : values) block.data.push_back(static_cast<float>(v));
    blocks_.push_back(std::move(block));
}

void CheckpointFile::add_scalar(std::string name, double value) {
    add(std::move(name), {1}, {value});
}

const CheckpointBlock* CheckpointFile::find(const std::string& name) const {
    for (const auto& b : blocks_) {
        if (b.name == name) return &b;
    }
    return nullptr;
}

const CheckpointBlock& CheckpointFile::require(const std::string& name) const {
    const CheckpointBlock* b = find(name);
    if (b == nullptr) throw std::runtime_error("missing checkpoint block: " + name);
    return *b;
}

void CheckpointFile::save(const std::string& path) const {
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<uint32_t>(blocks_.size()));
    for (const auto& b : blocks_) {
        put_u32(out, static_cast<uint32_t>(b.name.size()));
        out.append(b.name);
        put_u32(out, static_cast<uint32_t>(b.shape.size()));
        for (uint64_t d : b.shape) put_u64(out, d);
        for (float v : b.data) put_f32(out, v);
    }
    atomic_write_file(path, out);
}

CheckpointFile CheckpointFile::load(const std::string& path) {
    std::string buf = read_file(path);
    Reader r{buf};
    std::string magic = r.bytes(4);
    if (std::memcmp(magic.data(), kMagic, 4) != 0) {
        throw std::runtime_error("not a checkpoint file: " + path);
    }
    uint32_t version = r.u32();
    if (version != kVersion) {
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    }
    uint32_t count = r.u32();
    CheckpointFile file;
    for (uint32_t i = 0; i < count; ++i) {
        CheckpointBlock block;
        uint32_t name_len = r.u32();
        block.name = r.bytes(name_len);
        uint32_t ndims = r.u32();
        block.shape.resize(ndims);
        for (uint32_t j = 0; j < ndims; ++j) block.shape[j] = r.u64();
        uint64_t n = shape_count(block.shape);
        r.need(n * 4);
        block.data.resize(n);
        for (uint64_t j = 0; j < n; ++j) block.data[j] = r.f32();
        file.blocks_.push_back(std::move(block));
    }
    if (r.pos != buf.size()) throw std::runtime_error("trailing bytes after the last block");
    return file;
}

void save_generator(const GeneratorModel& model, const AdamState* state,
                    const std::string& path) {
    const GeneratorConfig& cfg = model.config();
    CheckpointFile file;
    file.add("gen.meta", {8},
             {static_cast<double>(cfg.layers), static_cast<double>(cfg.heads),
              static_cast<double>(cfg.width), static_cast<double>(cfg.ffw),
              static_cast<double>(cfg.max_seq), static_cast<double>(cfg.beam), cfg.dropout,
              static_cast<double>(model.vocab_size())});
    for (const ParamBlock& b : model.blocks()) {
        std::vector<double> values(model.params().begin() + static_cast<std::ptrdiff_t>(b.offset),
                                   model.params().begin() +
                                       static_cast<std::ptrdiff_t>(b.offset + b.size()));
        file.add("gen." + b.name, {b.rows, b.cols}, values);
    }
    if (state != nullptr && !state->m.empty()) {
        if (state->m.size() != model.param_count() || state->v.size() != model.param_count()) {
            throw std::invalid_argument("optimizer state size does not match the model");
        }
        file.add_scalar("opt.step", static_cast<double>(state->step));
        file.add("opt.m", {static_cast<uint64_t>(state->m.size())}, state->m);
        file.add("opt.v", {static_cast<uint64_t>(state->v.size())}, state->v);
    }
    file.save(path);
}

GeneratorModel load_generator(const std::string& path, AdamState* state_out) {
    CheckpointFile file = CheckpointFile::load(path);
    const CheckpointBlock& meta = file.require("gen.meta");
    if (meta.data.size() != 8) throw std::runtime_error("generator metadata has the wrong size");
    GeneratorConfig cfg;
    cfg.layers = static_cast<int>(meta.data[0]);
    cfg.heads = static_cast<int>(meta.data[1]);
    cfg.width = static_cast<int>(meta.data[2]);
    cfg.ffw = static_cast<int>(meta.data[3]);
    cfg.max_seq = static_cast<int>(meta.data[4]);
    cfg.beam = static_cast<int>(meta.data[5]);
    cfg.dropout = static_cast<double>(meta.data[6]);
    size_t vocab = static_cast<size_t>(meta.data[7]);

    // Build the layout first, then fill parameters block by block. Every
    // model block is required in the file, so all values get overwritten.
    GeneratorModel model = GeneratorModel::init(cfg, vocab, 0);
    for (const ParamBlock& b : model.blocks()) {
        const CheckpointBlock& stored = file.require("gen." + b.name);
        if (stored.shape.size() != 2 || stored.shape[0] != b.rows || stored.shape[1] != b.cols) {
            throw std::runtime_error("parameter block has the wrong shape: " + b.name);
        }
        for (size_t i = 0; i < b.size(); ++i) {
            model.params()[b.offset + i] = static_cast<double>(stored.data[i]);
        }
    }

    if (state_out != nullptr) {
        const CheckpointBlock* step = file.find("opt.step");
        if (step != nullptr) {
            state_out->step = static_cast<int64_t>(step->data.at(0));
            const CheckpointBlock& m = file.require("opt.m");
            const CheckpointBlock& v = file.require("opt.v");
            if (m.data.size() != model.param_count() || v.data.size() != model.param_count()) {
                throw std::runtime_error("optimizer state size does not match the model");
            }
            state_out->m.assign(m.data.begin(), m.data.end());
            state_out->v.assign(v.data.begin(), v.data.end());
        } else {
            *state_out = AdamState{};
        }
    }
    return model;
}

void save_scorers(const Scorers& scorers, const std::string& path) {
    if (scorers.fwd.order() != scorers.bwd.order() ||
        scorers.fwd.vocab_size() != scorers.bwd.vocab_size()) {
        throw std::invalid_argument("forward and backward models must share order and vocabulary");
    }
    CheckpointFile file;
    file.add("lm.meta", {3},
             {static_cast<double>(scorers.fwd.order()),
              static_cast<double>(scorers.fwd.vocab_size()), scorers.fwd.discount()});
    add_count_tables(file, "lm.fwd.", scorers.fwd);
    add_count_tables(file, "lm.bwd.", scorers.bwd);

    file.add("emb.meta", {2},
             {static_cast<double>(scorers.emb.size()),
              static_cast<double>(scorers.emb.dimension())});
    file.add("emb.e",
             {static_cast<uint64_t>(scorers.emb.size()),
              static_cast<uint64_t>(scorers.emb.dimension())},
             scorers.emb.flat());

    if (scorers.clf.has_value()) {
        file.add("clf.meta", {2},
                 {static_cast<double>(scorers.clf->hash_bits()), scorers.clf->bias()});
        file.add("clf.w", {static_cast<uint64_t>(scorers.clf->weights().size())},
                 scorers.clf->weights());
    }
    file.save(path);
}

Scorers load_scorers(const std::string& path) {
    CheckpointFile file = CheckpointFile::load(path);
    const CheckpointBlock& meta = file.require("lm.meta");
    if (meta.data.size() != 3) throw std::runtime_error("scorer metadata has the wrong size");
    int order = static_cast<int>(meta.data[0]);
    size_t vocab = static_cast<size_t>(meta.data[1]);
    double discount = static_cast<double>(meta.data[2]);

    Scorers out{
        NGramModel::from_counts(read_count_tables(file, "lm.fwd.", order), order,
                                NGramModel::Direction::kForward, vocab, discount),
        NGramModel::from_counts(read_count_tables(file, "lm.bwd.", order), order,
                                NGramModel::Direction::kBackward, vocab, discount),
        EmbeddingTable(), std::nullopt};

    const CheckpointBlock& emeta = file.require("emb.meta");
    if (emeta.data.size() != 2) throw std::runtime_error("embedding metadata has the wrong size");
    size_t emb_vocab = static_cast<size_t>(emeta.data[0]);
    int dim = static_cast<int>(emeta.data[1]);
    const CheckpointBlock& etable = file.require("emb.e");
    std::vector<double> flat(etable.data.begin(), etable.data.end());
    out.emb = EmbeddingTable::from_flat(std::move(flat), emb_vocab, dim);

    const CheckpointBlock* cmeta = file.find("clf.meta");
    if (cmeta != nullptr) {
        if (cmeta->data.size() != 2) {
            throw std::runtime_error("classifier metadata has the wrong size");
        }
        int hash_bits = static_cast<int>(cmeta->data[0]);
        double bias = static_cast<double>(cmeta->data[1]);
        const CheckpointBlock& w = file.require("clf.w");
        std::vector<double> weights(w.data.begin(), w.data.end());
        out.clf = StyleClassifier::from_params(std::move(weights), bias, hash_bits);
    }
    return out;
}

}  // namespace tgls
