#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tgls/rng.hpp"
#include "tgls/text.hpp"

namespace tgls {

// Decoder-only autoregressive model over `x [SEP] y [EOS]`. Sizes default to
// the desk-scale configuration; width must divide evenly into heads.
struct GeneratorConfig {
    int layers = 2;
    int heads = 4;
    int width = 128;
    int ffw = 256;
    int max_seq = 72;  // 35 + [SEP] + 35 + [EOS]
    int beam = 5;
    double dropout = 0.1;
};

struct ParamBlock {
    std::string name;
    size_t offset = 0;
    size_t rows = 0;
    size_t cols = 0;

    size_t size() const { return rows * cols; }
};

// Flat parameter vector addressed through named blocks: token and position
// embeddings, per-layer pre-norm attention and feed-forward weights, a final
// norm, and the output projection. All compute is double precision; initial
// values are exactly representable in 32-bit floats so checkpoints round-trip.
class GeneratorModel {
  public:
    GeneratorModel() = default;

    static GeneratorModel init(const GeneratorConfig& cfg, size_t vocab_size, uint64_t seed);
    static GeneratorModel from_params(const GeneratorConfig& cfg, size_t vocab_size,
                                      std::vector<double> params);

    const GeneratorConfig& config() const { return cfg_; }
    size_t vocab_size() const { return vocab_; }

    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }
    size_t param_count() const { return params_.size(); }

    const std::vector<ParamBlock>& blocks() const { return blocks_; }
    const ParamBlock& block(const std::string& name) const;

    // Longest y accepted next to this x: max_seq minus |x|, [SEP], [EOS].
    int max_y_len(const Sentence& x) const;

  private:
    GeneratorConfig cfg_;
    size_t vocab_ = 0;
    std::vector<double> params_;
    std::vector<ParamBlock> blocks_;

    void build_layout();
};

// Pre-softmax logit rows aligned to the y-part: row 0 predicts y[0] (from
// [SEP]), row i predicts y[i], and the last row predicts the terminal [EOS].
using LogitSequence = std::vector<std::vector<double>>;

// Causal forward pass; |y_prefix| + 1 rows. Dropout is never applied here.
LogitSequence forward_logits(const GeneratorModel& model, const Sentence& x,
                             const Sentence& y_prefix);

// Teacher-forced cross-entropy summed over the y-part including [EOS], with
// exact gradients accumulated into `grad` (flat, same layout as params).
// A null dropout_rng disables dropout (evaluation-exact loss).
double ce_loss_and_grad(const GeneratorModel& model, const Sentence& x, const Sentence& y_target,
                        std::vector<double>& grad, Rng* dropout_rng = nullptr);

// E(y) = minus the sum of realized-token logits over the y-part, [EOS]
// included. Lower energy = more probable under the model.
double energy(const GeneratorModel& model, const Sentence& x, const Sentence& y);

// Hinge over negatives: sum of max{0, margin + E(y+) - E(y-)}. Gradients are
// exact and zero for satisfied pairs. `as_printed` flips to the literal
// variant max{0, -E(y+) + E(y-) - margin}. Dropout is never applied.
double mm_loss_and_grad(const GeneratorModel& model, const Sentence& x, const Sentence& y_plus,
                        const std::vector<Sentence>& negatives, double margin,
                        std::vector<double>& grad, bool as_printed = false);

struct BeamHypothesis {
    Sentence y;
    double log_prob = 0.0;  // raw sum of token log-probabilities, [EOS] included
    double score = 0.0;     // ranking score (length-normalized by default)
};

// Standard beam search over y tokens until [EOS] or the length limit, where
// survivors are closed with the forced [EOS] transition. Returns at most
// beam_size finished hypotheses, best ranking score first.
std::vector<BeamHypothesis> beam_search(const GeneratorModel& model, const Sentence& x,
                                        int beam_size, bool length_normalized = true);

// Argmax decoding; token-for-token identical to beam_search with size 1.
Sentence greedy_decode(const GeneratorModel& model, const Sentence& x);

struct TrainConfig {
    double lr = 1e-3;
    int batch_size = 32;
    int ce_epochs = 10;
    double margin = 1.0;
    double clip_norm = 1.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    uint64_t seed = 0;
};

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    int64_t step = 0;
};

double grad_global_norm(const std::vector<double>& grad);

// Global-norm clipping followed by a bias-corrected adaptive-moment update.
// Throws on non-finite gradients without touching the parameters.
void optimizer_step(GeneratorModel& model, const std::vector<double>& grad,
                    const TrainConfig& cfg, AdamState& state);

}  // namespace tgls
