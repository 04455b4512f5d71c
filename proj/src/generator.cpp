#include "tgls/generator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Dense>

namespace tgls {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using CVecMap = Eigen::Map<const Eigen::VectorXd>;

void validate_config(const GeneratorConfig& cfg, size_t vocab_size) {
    if (cfg.layers < 1 || cfg.heads < 1 || cfg.width < 1 || cfg.ffw < 1) {
        throw std::invalid_argument("generator sizes must be positive");
    }
    if (cfg.width % cfg.heads != 0) {
        throw std::invalid_argument("generator width must be divisible by the head count");
    }
    if (cfg.max_seq < 3) throw std::invalid_argument("generator max_seq must be at least 3");
    if (cfg.beam < 1) throw std::invalid_argument("beam size must be at least 1");
    if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0)) {
        throw std::invalid_argument("dropout must lie in [0, 1)");
    }
    if (vocab_size < static_cast<size_t>(Vocabulary::kNumSpecials)) {
        throw std::invalid_argument("vocabulary too small for a generator");
    }
}

// out(SxO) = in(SxI) * w(IxO) [+ b(1xO)]
void affine_forward(const double* in, size_t s, size_t in_dim, const double* w, const double* b,
                    size_t out_dim, double* out) {
    MatMap o(out, s, out_dim);
    o.noalias() = CMatMap(in, s, in_dim) * CMatMap(w, in_dim, out_dim);
    if (b != nullptr) o.rowwise() += CVecMap(b, out_dim).transpose();
}

void affine_backward(const double* in, const double* w, const double* dout, size_t s,
                     size_t in_dim, size_t out_dim, double* din, double* dw, double* db) {
    CMatMap i(in, s, in_dim);
    CMatMap d(dout, s, out_dim);
    MatMap(dw, in_dim, out_dim).noalias() += i.transpose() * d;
    if (db != nullptr) VecMap(db, out_dim).noalias() += d.colwise().sum().transpose();
    if (din != nullptr) {
        MatMap(din, s, in_dim).noalias() += d * CMatMap(w, in_dim, out_dim).transpose();
    }
}

// Row-wise normalization; caches the normalized rows and reciprocal standard
// deviations, which is all the backward pass needs.
void ln_forward(const double* x, size_t s, size_t d, const double* g, const double* b, double* n,
                double* rstd, double* out) {
    for (size_t r = 0; r < s; ++r) {
        const double* row = x + r * d;
        double mean = 0.0;
        for (size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (size_t j = 0; j < d; ++j) {
            double c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        double rs = 1.0 / std::sqrt(var + kLnEps);
        rstd[r] = rs;
        for (size_t j = 0; j < d; ++j) {
            double nj = (row[j] - mean) * rs;
            n[r * d + j] = nj;
            out[r * d + j] = nj * g[j] + b[j];
        }
    }
}

void ln_backward(const double* n, const double* rstd, const double* g, const double* dout,
                 size_t s, size_t d, double* dx, double* dg, double* db) {
    for (size_t r = 0; r < s; ++r) {
        const double* nr = n + r * d;
        const double* dor = dout + r * d;
        double mean_dn = 0.0;
        double mean_dnn = 0.0;
        for (size_t j = 0; j < d; ++j) {
            double dn = dor[j] * g[j];
            mean_dn += dn;
            mean_dnn += dn * nr[j];
            dg[j] += dor[j] * nr[j];
            db[j] += dor[j];
        }
        mean_dn /= static_cast<double>(d);
        mean_dnn /= static_cast<double>(d);
        for (size_t j = 0; j < d; ++j) {
            double dn = dor[j] * g[j];
            dx[r * d + j] += rstd[r] * (dn - mean_dn - nr[j] * mean_dnn);
        }
    }
}

void fill_dropout_mask(std::vector<double>& mask, size_t count, double p, Rng& rng) {
    mask.resize(count);
    double keep = 1.0 - p;
    double inv = 1.0 / keep;
    for (size_t i = 0; i < count; ++i) mask[i] = uniform01(rng) < keep ? inv : 0.0;
}

struct Layout {
    size_t wte = 0, wpe = 0, lnfg = 0, lnfb = 0, headw = 0;
    struct Layer {
        size_t ln1g, ln1b, wq, bq, wk, bk, wv, bv, wo, bo;
        size_t ln2g, ln2b, w1, b1, w2, b2;
    };
    std::vector<Layer> layer;
};

Layout layout_of(const GeneratorModel& m) {
    Layout lt;
    lt.wte = m.block("wte").offset;
    lt.wpe = m.block("wpe").offset;
    lt.lnfg = m.block("lnf.g").offset;
    lt.lnfb = m.block("lnf.b").offset;
    lt.headw = m.block("head.w").offset;
    for (int l = 0; l < m.config().layers; ++l) {
        std::string p = "l" + std::to_string(l) + ".";
        Layout::Layer ly;
        ly.ln1g = m.block(p + "ln1.g").offset;
        ly.ln1b = m.block(p + "ln1.b").offset;
        ly.wq = m.block(p + "attn.wq").offset;
        ly.bq = m.block(p + "attn.bq").offset;
        ly.wk = m.block(p + "attn.wk").offset;
        ly.bk = m.block(p + "attn.bk").offset;
        ly.wv = m.block(p + "attn.wv").offset;
        ly.bv = m.block(p + "attn.bv").offset;
        ly.wo = m.block(p + "attn.wo").offset;
        ly.bo = m.block(p + "attn.bo").offset;
        ly.ln2g = m.block(p + "ln2.g").offset;
        ly.ln2b = m.block(p + "ln2.b").offset;
        ly.w1 = m.block(p + "ffn.w1").offset;
        ly.b1 = m.block(p + "ffn.b1").offset;
        ly.w2 = m.block(p + "ffn.w2").offset;
        ly.b2 = m.block(p + "ffn.b2").offset;
        lt.layer.push_back(ly);
    }
    return lt;
}

struct LayerCache {
    std::vector<double> n1, rstd1, q, k, v, att, ctx, attn_mask, h_mid;
    std::vector<double> n2, rstd2, r, ffn_mask, h_out;
};

struct TrainForward {
    std::vector<TokenId> tokens;
    size_t s = 0;
    size_t y_start = 0;  // index of [SEP]; logit rows cover y_start..s-1
    size_t y_rows = 0;
    std::vector<double> emb_mask, h0;
    std::vector<LayerCache> layers;
    std::vector<double> nf, rstdf;
    LogitSequence logits;
};

std::vector<TokenId> build_tokens(const GeneratorModel& m, const Sentence& x, const Sentence& y) {
    size_t total = x.size() + 1 + y.size() + 1;  // [SEP] and the predicted [EOS]
    if (total > static_cast<size_t>(m.config().max_seq)) {
        throw std::invalid_argument("sequence exceeds the generator's maximum length");
    }
    std::vector<TokenId> tokens;
    tokens.reserve(x.size() + 1 + y.size());
    for (TokenId t : x.ids) tokens.push_back(t);
    tokens.push_back(Vocabulary::kSep);
    for (TokenId t : y.ids) tokens.push_back(t);
    for (TokenId t : tokens) {
        if (t < 0 || static_cast<size_t>(t) >= m.vocab_size()) {
            throw std::invalid_argument("token id outside the generator vocabulary");
        }
    }
    return tokens;
}

TrainForward train_forward(const GeneratorModel& m, const Sentence& x, const Sentence& y,
                           Rng* dropout_rng) {
    const GeneratorConfig& cfg = m.config();
    const double* p = m.params().data();
    Layout lt = layout_of(m);
    size_t d = static_cast<size_t>(cfg.width);
    size_t f = static_cast<size_t>(cfg.ffw);
    size_t heads = static_cast<size_t>(cfg.heads);
    size_t dk = d / heads;
    size_t vocab = m.vocab_size();
    double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    bool training = dropout_rng != nullptr && cfg.dropout > 0.0;

    TrainForward tf;
    tf.tokens = build_tokens(m, x, y);
    tf.s = tf.tokens.size();
    tf.y_start = x.size();  // position of [SEP]
    tf.y_rows = y.size() + 1;
    size_t s = tf.s;

    tf.h0.resize(s * d);
    for (size_t i = 0; i < s; ++i) {
        const double* te = p + lt.wte + static_cast<size_t>(tf.tokens[i]) * d;
        const double* pe = p + lt.wpe + i * d;
        for (size_t j = 0; j < d; ++j) tf.h0[i * d + j] = te[j] + pe[j];
    }
    if (training) {
        fill_dropout_mask(tf.emb_mask, s * d, cfg.dropout, *dropout_rng);
        for (size_t i = 0; i < s * d; ++i) tf.h0[i] *= tf.emb_mask[i];
    }

    const std::vector<double>* h_in = &tf.h0;
    tf.layers.resize(static_cast<size_t>(cfg.layers));
    std::vector<double> a(s * d), ffn_out(s * d), n1out(s * d), n2out(s * d);
    for (int l = 0; l < cfg.layers; ++l) {
        LayerCache& lc = tf.layers[static_cast<size_t>(l)];
        const Layout::Layer& ly = lt.layer[static_cast<size_t>(l)];

        lc.n1.resize(s * d);
        lc.rstd1.resize(s);
        ln_forward(h_in->data(), s, d, p + ly.ln1g, p + ly.ln1b, lc.n1.data(), lc.rstd1.data(),
                   n1out.data());

        lc.q.resize(s * d);
        lc.k.resize(s * d);
        lc.v.resize(s * d);
        affine_forward(n1out.data(), s, d, p + ly.wq, p + ly.bq, d, lc.q.data());
        affine_forward(n1out.data(), s, d, p + ly.wk, p + ly.bk, d, lc.k.data());
        affine_forward(n1out.data(), s, d, p + ly.wv, p + ly.bv, d, lc.v.data());

        lc.att.assign(heads * s * s, 0.0);
        lc.ctx.assign(s * d, 0.0);
        std::vector<double> row(s);
        for (size_t h = 0; h < heads; ++h) {
            size_t off = h * dk;
            double* att_h = lc.att.data() + h * s * s;
            for (size_t i = 0; i < s; ++i) {
                double mx = kNegInf;
                for (size_t j = 0; j <= i; ++j) {
                    double dot = 0.0;
                    const double* qi = lc.q.data() + i * d + off;
                    const double* kj = lc.k.data() + j * d + off;
                    for (size_t c = 0; c < dk; ++c) dot += qi[c] * kj[c];
                    row[j] = dot * scale;
                    mx = std::max(mx, row[j]);
                }
                double denom = 0.0;
                for (size_t j = 0; j <= i; ++j) {
                    row[j] = std::exp(row[j] - mx);
                    denom += row[j];
                }
                double* ctx_i = lc.ctx.data() + i * d + off;
                for (size_t j = 0; j <= i; ++j) {
                    double pr = row[j] / denom;
                    att_h[i * s + j] = pr;
                    const double* vj = lc.v.data() + j * d + off;
                    for (size_t c = 0; c < dk; ++c) ctx_i[c] += pr * vj[c];
                }
            }
        }

        affine_forward(lc.ctx.data(), s, d, p + ly.wo, p + ly.bo, d, a.data());
        if (training) {
            fill_dropout_mask(lc.attn_mask, s * d, cfg.dropout, *dropout_rng);
            for (size_t i = 0; i < s * d; ++i) a[i] *= lc.attn_mask[i];
        }
        lc.h_mid.resize(s * d);
        for (size_t i = 0; i < s * d; ++i) lc.h_mid[i] = (*h_in)[i] + a[i];

        lc.n2.resize(s * d);
        lc.rstd2.resize(s);
        ln_forward(lc.h_mid.data(), s, d, p + ly.ln2g, p + ly.ln2b, lc.n2.data(),
                   lc.rstd2.data(), n2out.data());

        lc.r.resize(s * f);
        affine_forward(n2out.data(), s, d, p + ly.w1, p + ly.b1, f, lc.r.data());
        for (size_t i = 0; i < s * f; ++i) lc.r[i] = std::max(lc.r[i], 0.0);

        affine_forward(lc.r.data(), s, f, p + ly.w2, p + ly.b2, d, ffn_out.data());
        if (training) {
            fill_dropout_mask(lc.ffn_mask, s * d, cfg.dropout, *dropout_rng);
            for (size_t i = 0; i < s * d; ++i) ffn_out[i] *= lc.ffn_mask[i];
        }
        lc.h_out.resize(s * d);
        for (size_t i = 0; i < s * d; ++i) lc.h_out[i] = lc.h_mid[i] + ffn_out[i];
        h_in = &lc.h_out;
    }

    tf.nf.resize(s * d);
    tf.rstdf.resize(s);
    std::vector<double> nfout(s * d);
    ln_forward(h_in->data(), s, d, p + lt.lnfg, p + lt.lnfb, tf.nf.data(), tf.rstdf.data(),
               nfout.data());

    tf.logits.assign(tf.y_rows, std::vector<double>(vocab));
    for (size_t r = 0; r < tf.y_rows; ++r) {
        size_t pos = tf.y_start + r;
        CMatMap wh(p + lt.headw, d, vocab);
        Eigen::Map<Eigen::RowVectorXd>(tf.logits[r].data(), vocab).noalias() =
            Eigen::Map<const Eigen::RowVectorXd>(nfout.data() + pos * d, d) * wh;
    }
    return tf;
}

// dlogits has tf.y_rows rows over the vocabulary; accumulates into grad.
void train_backward(const GeneratorModel& m, const TrainForward& tf,
                    const std::vector<std::vector<double>>& dlogits, std::vector<double>& grad) {
    const GeneratorConfig& cfg = m.config();
    const double* p = m.params().data();
    double* g = grad.data();
    Layout lt = layout_of(m);
    size_t d = static_cast<size_t>(cfg.width);
    size_t f = static_cast<size_t>(cfg.ffw);
    size_t heads = static_cast<size_t>(cfg.heads);
    size_t dk = d / heads;
    size_t vocab = m.vocab_size();
    size_t s = tf.s;
    double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    bool training = !tf.emb_mask.empty();

    // Head projection: the post-gain norm output at y positions feeds the
    // logits, so its rows are rebuilt from the cached normalized values.
    std::vector<double> dnf(s * d, 0.0);
    {
        CMatMap wh(p + lt.headw, d, vocab);
        MatMap dwh(g + lt.headw, d, vocab);
        std::vector<double> nfout_row(d);
        for (size_t r = 0; r < tf.y_rows; ++r) {
            size_t pos = tf.y_start + r;
            for (size_t j = 0; j < d; ++j) {
                nfout_row[j] = tf.nf[pos * d + j] * p[lt.lnfg + j] + p[lt.lnfb + j];
            }
            Eigen::Map<const Eigen::RowVectorXd> dz(dlogits[r].data(), vocab);
            dwh.noalias() +=
                Eigen::Map<const Eigen::RowVectorXd>(nfout_row.data(), d).transpose() * dz;
            Eigen::Map<Eigen::RowVectorXd>(dnf.data() + pos * d, d).noalias() +=
                dz * wh.transpose();
        }
    }

    std::vector<double> dh(s * d, 0.0);
    ln_backward(tf.nf.data(), tf.rstdf.data(), p + lt.lnfg, dnf.data(), s, d, dh.data(),
                g + lt.lnfg, g + lt.lnfb);

    std::vector<double> da(s * d), dctx(s * d), dqkv(s * d), dn1(s * d), dn2(s * d), du(s * f),
        dh_mid(s * d);
    std::vector<double> n1out(s * d), n2out(s * d);
    for (int l = cfg.layers - 1; l >= 0; --l) {
        const LayerCache& lc = tf.layers[static_cast<size_t>(l)];
        const Layout::Layer& ly = lt.layer[static_cast<size_t>(l)];
        const std::vector<double>& h_in =
            l == 0 ? tf.h0 : tf.layers[static_cast<size_t>(l - 1)].h_out;

        // dh currently holds dL/d(h_out). FFN residual branch first.
        for (size_t i = 0; i < s * d; ++i) {
            da[i] = training ? dh[i] * lc.ffn_mask[i] : dh[i];
        }
        // Recompute the ln2 output (input to w1) for the weight gradient.
        {
            // n2 is cached; the affine input was n2 * g2 + b2.
            const double* g2 = p + ly.ln2g;
            const double* b2 = p + ly.ln2b;
            for (size_t i = 0; i < s; ++i) {
                for (size_t j = 0; j < d; ++j) {
                    n2out[i * d + j] = lc.n2[i * d + j] * g2[j] + b2[j];
                }
            }
        }
        std::fill(du.begin(), du.end(), 0.0);
        affine_backward(lc.r.data(), p + ly.w2, da.data(), s, f, d, du.data(), g + ly.w2,
                        g + ly.b2);
        for (size_t i = 0; i < s * f; ++i) {
            if (lc.r[i] <= 0.0) du[i] = 0.0;
        }
        std::fill(dn2.begin(), dn2.end(), 0.0);
        affine_backward(n2out.data(), p + ly.w1, du.data(), s, d, f, dn2.data(), g + ly.w1,
                        g + ly.b1);
        // dh_mid = dh (residual) + ln2 backward of dn2.
        dh_mid = dh;
        ln_backward(lc.n2.data(), lc.rstd2.data(), p + ly.ln2g, dn2.data(), s, d, dh_mid.data(),
                    g + ly.ln2g, g + ly.ln2b);

        // Attention branch: dh_mid = dL/d(h_mid).
        for (size_t i = 0; i < s * d; ++i) {
            da[i] = training ? dh_mid[i] * lc.attn_mask[i] : dh_mid[i];
        }
        std::fill(dctx.begin(), dctx.end(), 0.0);
        affine_backward(lc.ctx.data(), p + ly.wo, da.data(), s, d, d, dctx.data(), g + ly.wo,
                        g + ly.bo);

        std::vector<double> dq(s * d, 0.0), dkk(s * d, 0.0), dv(s * d, 0.0);
        std::vector<double> dp_row(s), ds_row(s);
        for (size_t h = 0; h < heads; ++h) {
            size_t off = h * dk;
            const double* att_h = lc.att.data() + h * s * s;
            for (size_t i = 0; i < s; ++i) {
                const double* dctx_i = dctx.data() + i * d + off;
                double dot_pp = 0.0;
                for (size_t j = 0; j <= i; ++j) {
                    const double* vj = lc.v.data() + j * d + off;
                    double dp = 0.0;
                    for (size_t c = 0; c < dk; ++c) dp += dctx_i[c] * vj[c];
                    dp_row[j] = dp;
                    dot_pp += dp * att_h[i * s + j];
                    double* dvj = dv.data() + j * d + off;
                    double pr = att_h[i * s + j];
                    for (size_t c = 0; c < dk; ++c) dvj[c] += pr * dctx_i[c];
                }
                const double* qi = lc.q.data() + i * d + off;
                double* dqi = dq.data() + i * d + off;
                for (size_t j = 0; j <= i; ++j) {
                    double ds = att_h[i * s + j] * (dp_row[j] - dot_pp) * scale;
                    const double* kj = lc.k.data() + j * d + off;
                    double* dkr = dkk.data() + j * d + off;
                    for (size_t c = 0; c < dk; ++c) {
                        dqi[c] += ds * kj[c];
                        dkr[c] += ds * qi[c];
                    }
                }
            }
        }

        // Recompute the ln1 output for the QKV weight gradients.
        {
            const double* g1 = p + ly.ln1g;
            const double* b1 = p + ly.ln1b;
            for (size_t i = 0; i < s; ++i) {
                for (size_t j = 0; j < d; ++j) {
                    n1out[i * d + j] = lc.n1[i * d + j] * g1[j] + b1[j];
                }
            }
        }
        std::fill(dn1.begin(), dn1.end(), 0.0);
        affine_backward(n1out.data(), p + ly.wq, dq.data(), s, d, d, dn1.data(), g + ly.wq,
                        g + ly.bq);
        affine_backward(n1out.data(), p + ly.wk, dkk.data(), s, d, d, dn1.data(), g + ly.wk,
                        g + ly.bk);
        affine_backward(n1out.data(), p + ly.wv, dv.data(), s, d, d, dn1.data(), g + ly.wv,
                        g + ly.bv);

        // dh for the layer below = dh_mid (residual) + ln1 backward of dn1.
        dh = dh_mid;
        ln_backward(lc.n1.data(), lc.rstd1.data(), p + ly.ln1g, dn1.data(), s, d, dh.data(),
                    g + ly.ln1g, g + ly.ln1b);
    }

    // Embedding backward.
    for (size_t i = 0; i < s; ++i) {
        for (size_t j = 0; j < d; ++j) {
            double gi = dh[i * d + j];
            if (training) gi *= tf.emb_mask[i * d + j];
            g[lt.wte + static_cast<size_t>(tf.tokens[i]) * d + j] += gi;
            g[lt.wpe + i * d + j] += gi;
        }
    }
}

double energy_from_logits(const LogitSequence& logits, const Sentence& y) {
    double sum = 0.0;
    for (size_t r = 0; r < logits.size(); ++r) {
        TokenId target = r < y.size() ? y.ids[r] : Vocabulary::kEos;
        sum += logits[r][static_cast<size_t>(target)];
    }
    return -sum;
}

// Incremental single-token evaluation path used by decoding; keyed by the
// cached per-layer key/value rows.
struct DecodeState {
    std::vector<std::vector<double>> k, v;  // [layer] row-major len x width
    int len = 0;
};

std::vector<double> decode_step(const GeneratorModel& m, DecodeState& st, TokenId tok) {
    const GeneratorConfig& cfg = m.config();
    const double* p = m.params().data();
    Layout lt = layout_of(m);
    size_t d = static_cast<size_t>(cfg.width);
    size_t f = static_cast<size_t>(cfg.ffw);
    size_t heads = static_cast<size_t>(cfg.heads);
    size_t dk = d / heads;
    size_t vocab = m.vocab_size();
    double scale = 1.0 / std::sqrt(static_cast<double>(dk));

    if (st.len >= cfg.max_seq) throw std::invalid_argument("decode past the maximum length");
    if (st.k.empty()) {
        st.k.resize(static_cast<size_t>(cfg.layers));
        st.v.resize(static_cast<size_t>(cfg.layers));
    }
    size_t pos = static_cast<size_t>(st.len);

    std::vector<double> h(d), n1(d), rstd1(1), n1out(d), q(d), k(d), v(d), ctx(d), a(d);
    std::vector<double> n2(d), rstd2(1), n2out(d), u(f), ffn(d);
    const double* te = p + lt.wte + static_cast<size_t>(tok) * d;
    const double* pe = p + lt.wpe + pos * d;
    for (size_t j = 0; j < d; ++j) h[j] = te[j] + pe[j];

    for (int l = 0; l < cfg.layers; ++l) {
        const Layout::Layer& ly = lt.layer[static_cast<size_t>(l)];
        ln_forward(h.data(), 1, d, p + ly.ln1g, p + ly.ln1b, n1.data(), rstd1.data(),
                   n1out.data());
        affine_forward(n1out.data(), 1, d, p + ly.wq, p + ly.bq, d, q.data());
        affine_forward(n1out.data(), 1, d, p + ly.wk, p + ly.bk, d, k.data());
        affine_forward(n1out.data(), 1, d, p + ly.wv, p + ly.bv, d, v.data());

        auto& kcache = st.k[static_cast<size_t>(l)];
        auto& vcache = st.v[static_cast<size_t>(l)];
        kcache.insert(kcache.end(), k.begin(), k.end());
        vcache.insert(vcache.end(), v.begin(), v.end());
        size_t n = pos + 1;

        std::fill(ctx.begin(), ctx.end(), 0.0);
        std::vector<double> row(n);
        for (size_t hh = 0; hh < heads; ++hh) {
            size_t off = hh * dk;
            double mx = kNegInf;
            for (size_t j = 0; j < n; ++j) {
                double dot = 0.0;
                const double* kj = kcache.data() + j * d + off;
                for (size_t c = 0; c < dk; ++c) dot += q[off + c] * kj[c];
                row[j] = dot * scale;
                mx = std::max(mx, row[j]);
            }
            double denom = 0.0;
            for (size_t j = 0; j < n; ++j) {
                row[j] = std::exp(row[j] - mx);
                denom += row[j];
            }
            for (size_t j = 0; j < n; ++j) {
                double pr = row[j] / denom;
                const double* vj = vcache.data() + j * d + off;
                for (size_t c = 0; c < dk; ++c) ctx[off + c] += pr * vj[c];
            }
        }
        affine_forward(ctx.data(), 1, d, p + ly.wo, p + ly.bo, d, a.data());
        for (size_t j = 0; j < d; ++j) h[j] += a[j];

        ln_forward(h.data(), 1, d, p + ly.ln2g, p + ly.ln2b, n2.data(), rstd2.data(),
                   n2out.data());
        affine_forward(n2out.data(), 1, d, p + ly.w1, p + ly.b1, f, u.data());
        for (size_t j = 0; j < f; ++j) u[j] = std::max(u[j], 0.0);
        affine_forward(u.data(), 1, f, p + ly.w2, p + ly.b2, d, ffn.data());
        for (size_t j = 0; j < d; ++j) h[j] += ffn[j];
    }

    std::vector<double> nf(d), rstdf(1), nfout(d), logits(vocab);
    ln_forward(h.data(), 1, d, p + lt.lnfg, p + lt.lnfb, nf.data(), rstdf.data(), nfout.data());
    Eigen::Map<Eigen::RowVectorXd>(logits.data(), vocab).noalias() =
        Eigen::Map<const Eigen::RowVectorXd>(nfout.data(), d) * CMatMap(p + lt.headw, d, vocab);
    st.len += 1;
    return logits;
}

bool decodable_token(TokenId t) {
    return t != Vocabulary::kBos && t != Vocabulary::kSep && t != Vocabulary::kMask &&
           t != Vocabulary::kPad;
}

// Log-softmax over the decodable tokens; structural specials get -inf.
std::vector<double> masked_log_softmax(const std::vector<double>& logits) {
    std::vector<double> out(logits.size(), kNegInf);
    double mx = kNegInf;
    for (size_t t = 0; t < logits.size(); ++t) {
        if (decodable_token(static_cast<TokenId>(t))) mx = std::max(mx, logits[t]);
    }
    double denom = 0.0;
    for (size_t t = 0; t < logits.size(); ++t) {
        if (decodable_token(static_cast<TokenId>(t))) denom += std::exp(logits[t] - mx);
    }
    double lse = mx + std::log(denom);
    for (size_t t = 0; t < logits.size(); ++t) {
        if (decodable_token(static_cast<TokenId>(t))) out[t] = logits[t] - lse;
    }
    return out;
}

// Runs x then [SEP] through the incremental path; the returned logits row
// predicts the first y token.
std::vector<double> prefix_state(const GeneratorModel& m, const Sentence& x, DecodeState& st) {
    if (x.size() + 2 > static_cast<size_t>(m.config().max_seq)) {
        throw std::invalid_argument("input too long for the generator");
    }
    for (TokenId t : x.ids) {
        if (t < 0 || static_cast<size_t>(t) >= m.vocab_size()) {
            throw std::invalid_argument("token id outside the generator vocabulary");
        }
    }
    std::vector<double> logits;
    for (TokenId t : x.ids) logits = decode_step(m, st, t);
    logits = decode_step(m, st, Vocabulary::kSep);
    return logits;
}

}  // namespace

void GeneratorModel::build_layout() {
    blocks_.clear();
    size_t off = 0;
    auto add = [&](const std::string& name, size_t rows, size_t cols) {
        blocks_.push_back({name, off, rows, cols});
        off += rows * cols;
    };
    size_t d = static_cast<size_t>(cfg_.width);
    size_t f = static_cast<size_t>(cfg_.ffw);
    add("wte", vocab_, d);
    add("wpe", static_cast<size_t>(cfg_.max_seq), d);
    for (int l = 0; l < cfg_.layers; ++l) {
        std::string p = "l" + std::to_string(l) + ".";
        add(p + "ln1.g", 1, d);
        add(p + "ln1.b", 1, d);
        add(p + "attn.wq", d, d);
        add(p + "attn.bq", 1, d);
        add(p + "attn.wk", d, d);
        add(p + "attn.bk", 1, d);
        add(p + "attn.wv", d, d);
        add(p + "attn.bv", 1, d);
        add(p + "attn.wo", d, d);
        add(p + "attn.bo", 1, d);
        add(p + "ln2.g", 1, d);
        add(p + "ln2.b", 1, d);
        add(p + "ffn.w1", d, f);
        add(p + "ffn.b1", 1, f);
        add(p + "ffn.w2", f, d);
        add(p + "ffn.b2", 1, d);
    }
    add("lnf.g", 1, d);
    add("lnf.b", 1, d);
    add("head.w", d, vocab_);
}

const ParamBlock& GeneratorModel::block(const std::string& name) const {
    for (const auto& b : blocks_) {
        if (b.name == name) return b;
    }
    throw std::out_of_range("unknown parameter block: " + name);
}

int GeneratorModel::max_y_len(const Sentence& x) const {
    int room = cfg_.max_seq - static_cast<int>(x.size()) - 2;
    return std::max(room, 0);
}

GeneratorModel GeneratorModel::init(const GeneratorConfig& cfg, size_t vocab_size,
                                    uint64_t seed) {
    validate_config(cfg, vocab_size);
    GeneratorModel m;
    m.cfg_ = cfg;
    m.vocab_ = vocab_size;
    m.build_layout();
    size_t total = 0;
    for (const auto& b : m.blocks_) total += b.size();
    m.params_.assign(total, 0.0);

    Rng rng(seed);
    std::normal_distribution<double> base(0.0, 0.02);
    // Residual output projections start smaller so depth does not inflate
    // the variance of the stream.
    double res_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(cfg.layers));
    auto fill = [&](const std::string& name, double stddev) {
        const ParamBlock& b = m.block(name);
        for (size_t i = 0; i < b.size(); ++i) {
            double v = base(rng) * (stddev / 0.02);
            // Keep every parameter exactly representable in 32-bit floats so
            // checkpoints round-trip bit-for-bit.
            m.params_[b.offset + i] = static_cast<double>(static_cast<float>(v));
        }
    };
    auto ones = [&](const std::string& name) {
        const ParamBlock& b = m.block(name);
        std::fill_n(m.params_.begin() + static_cast<std::ptrdiff_t>(b.offset), b.size(), 1.0);
    };

    fill("wte", 0.02);
    fill("wpe", 0.02);
    for (int l = 0; l < cfg.layers; ++l) {
        std::string p = "l" + std::to_string(l) + ".";
        ones(p + "ln1.g");
        fill(p + "attn.wq", 0.02);
        fill(p + "attn.wk", 0.02);
        fill(p + "attn.wv", 0.02);
        fill(p + "attn.wo", 0.02 * res_scale);
        ones(p + "ln2.g");
        fill(p + "ffn.w1", 0.02);
        fill(p + "ffn.w2", 0.02 * res_scale);
    }
    ones("lnf.g");
    fill("head.w", 0.02);
    return m;
}

GeneratorModel GeneratorModel::from_params(const GeneratorConfig& cfg, size_t vocab_size,
                                           std::vector<double> params) {
    validate_config(cfg, vocab_size);
    GeneratorModel m;
    m.cfg_ = cfg;
    m.vocab_ = vocab_size;
    m.build_layout();
    size_t total = 0;
    for (const auto& b : m.blocks_) total += b.size();
    if (params.size() != total) {
        throw std::invalid_argument("parameter vector size does not match the configuration");
    }
    m.params_ = std::move(params);
    return m;
}

LogitSequence forward_logits(const GeneratorModel& model, const Sentence& x,
                             const Sentence& y_prefix) {
    TrainForward tf = train_forward(model, x, y_prefix, nullptr);
    return std::move(tf.logits);
}

double ce_loss_and_grad(const GeneratorModel& model, const Sentence& x, const Sentence& y_target,
                        std::vector<double>& grad, Rng* dropout_rng) {
    if (y_target.empty()) throw std::invalid_argument("cross-entropy needs a non-empty target");
    if (grad.size() != model.param_count()) {
        throw std::invalid_argument("gradient buffer size does not match the model");
    }
    TrainForward tf = train_forward(model, x, y_target, dropout_rng);

    double loss = 0.0;
    std::vector<std::vector<double>> dlogits(tf.y_rows);
    for (size_t r = 0; r < tf.y_rows; ++r) {
        TokenId target = r < y_target.size() ? y_target.ids[r] : Vocabulary::kEos;
        const std::vector<double>& z = tf.logits[r];
        double mx = *std::max_element(z.begin(), z.end());
        double denom = 0.0;
        for (double v : z) denom += std::exp(v - mx);
        double lse = mx + std::log(denom);
        loss += lse - z[static_cast<size_t>(target)];

        dlogits[r].resize(z.size());
        for (size_t t = 0; t < z.size(); ++t) dlogits[r][t] = std::exp(z[t] - lse);
        dlogits[r][static_cast<size_t>(target)] -= 1.0;
    }
    train_backward(model, tf, dlogits, grad);
    return loss;
}

double energy(const GeneratorModel& model, const Sentence& x, const Sentence& y) {
    if (y.empty()) throw std::invalid_argument("energy needs a non-empty sentence");
    return energy_from_logits(forward_logits(model, x, y), y);
}

double mm_loss_and_grad(const GeneratorModel& model, const Sentence& x, const Sentence& y_plus,
                        const std::vector<Sentence>& negatives, double margin,
                        std::vector<double>& grad, bool as_printed) {
    if (negatives.empty()) throw std::invalid_argument("max-margin needs at least one negative");
    if (margin < 0.0) throw std::invalid_argument("margin must be non-negative");
    if (y_plus.empty()) throw std::invalid_argument("max-margin needs a non-empty positive");
    if (grad.size() != model.param_count()) {
        throw std::invalid_argument("gradient buffer size does not match the model");
    }
    for (const auto& neg : negatives) {
        if (neg.ids == y_plus.ids) {
            throw std::invalid_argument("positive sample appears among the negatives");
        }
        if (neg.empty()) throw std::invalid_argument("max-margin negatives must be non-empty");
    }

    TrainForward tf_plus = train_forward(model, x, y_plus, nullptr);
    double e_plus = energy_from_logits(tf_plus.logits, y_plus);

    std::vector<TrainForward> tf_neg;
    tf_neg.reserve(negatives.size());
    std::vector<double> e_neg(negatives.size());
    for (size_t i = 0; i < negatives.size(); ++i) {
        tf_neg.push_back(train_forward(model, x, negatives[i], nullptr));
        e_neg[i] = energy_from_logits(tf_neg[i].logits, negatives[i]);
    }

    double loss = 0.0;
    int active = 0;
    std::vector<bool> is_active(negatives.size(), false);
    for (size_t i = 0; i < negatives.size(); ++i) {
        double term = as_printed ? e_neg[i] - e_plus - margin : margin + e_plus - e_neg[i];
        if (term > 0.0) {
            loss += term;
            is_active[i] = true;
            ++active;
        }
    }
    if (active == 0) return 0.0;

    // d(loss)/d(E+) = +active (or -active in the printed variant) and
    // dE/dz[realized] = -1, so the positive's realized logits receive
    // -active (or +active).
    double plus_coef = as_printed ? static_cast<double>(active) : -static_cast<double>(active);
    auto seed_and_backprop = [&](const TrainForward& tf, const Sentence& y, double coef) {
        std::vector<std::vector<double>> dlogits(tf.y_rows,
                                                 std::vector<double>(model.vocab_size(), 0.0));
        for (size_t r = 0; r < tf.y_rows; ++r) {
            TokenId target = r < y.size() ? y.ids[r] : Vocabulary::kEos;
            dlogits[r][static_cast<size_t>(target)] = coef;
        }
        train_backward(model, tf, dlogits, grad);
    };
    seed_and_backprop(tf_plus, y_plus, plus_coef);
    double neg_coef = as_printed ? -1.0 : 1.0;
    for (size_t i = 0; i < negatives.size(); ++i) {
        if (is_active[i]) seed_and_backprop(tf_neg[i], negatives[i], neg_coef);
    }
    return loss;
}

std::vector<BeamHypothesis> beam_search(const GeneratorModel& model, const Sentence& x,
                                        int beam_size, bool length_normalized) {
    if (beam_size < 1) throw std::invalid_argument("beam size must be at least 1");

    struct Hyp {
        DecodeState st;
        std::vector<TokenId> toks;
        double logp = 0.0;
        std::vector<double> logits;
    };

    Hyp root;
    root.logits = prefix_state(model, x, root.st);
    std::vector<Hyp> alive;
    alive.push_back(std::move(root));
    std::vector<BeamHypothesis> finished;

    int max_y = model.max_y_len(x);
    for (int step = 0; step < max_y && !alive.empty(); ++step) {
        struct Expansion {
            size_t hyp;
            TokenId tok;
            double logp;
        };
        std::vector<Expansion> exps;
        for (size_t i = 0; i < alive.size(); ++i) {
            std::vector<double> lsm = masked_log_softmax(alive[i].logits);
            for (size_t t = 0; t < lsm.size(); ++t) {
                if (lsm[t] == kNegInf) continue;
                exps.push_back({i, static_cast<TokenId>(t), alive[i].logp + lsm[t]});
            }
        }
        size_t keep = std::min(static_cast<size_t>(beam_size), exps.size());
        std::stable_sort(exps.begin(), exps.end(),
                         [](const Expansion& a, const Expansion& b) { return a.logp > b.logp; });
        exps.resize(keep);

        std::vector<Hyp> next;
        for (const Expansion& e : exps) {
            if (e.tok == Vocabulary::kEos) {
                BeamHypothesis done;
                done.y = Sentence(alive[e.hyp].toks);
                done.log_prob = e.logp;
                finished.push_back(std::move(done));
                continue;
            }
            Hyp h;
            h.st = alive[e.hyp].st;
            h.toks = alive[e.hyp].toks;
            h.toks.push_back(e.tok);
            h.logp = e.logp;
            h.logits = decode_step(model, h.st, e.tok);
            next.push_back(std::move(h));
        }
        alive = std::move(next);
    }
    // Survivors at the length limit are closed with the forced [EOS]
    // transition so every hypothesis has a complete probability.
    for (Hyp& h : alive) {
        std::vector<double> lsm = masked_log_softmax(h.logits);
        BeamHypothesis done;
        done.y = Sentence(h.toks);
        done.log_prob = h.logp + lsm[static_cast<size_t>(Vocabulary::kEos)];
        finished.push_back(std::move(done));
    }

    for (BeamHypothesis& h : finished) {
        double len = static_cast<double>(h.y.size()) + 1.0;  // [EOS] counted
        h.score = length_normalized ? h.log_prob / len : h.log_prob;
    }
    std::stable_sort(finished.begin(), finished.end(),
                     [](const BeamHypothesis& a, const BeamHypothesis& b) {
                         return a.score > b.score;
                     });
    if (finished.size() > static_cast<size_t>(beam_size)) {
        finished.resize(static_cast<size_t>(beam_size));
    }
    return finished;
}

Sentence greedy_decode(const GeneratorModel& model, const Sentence& x) {
    DecodeState st;
    std::vector<double> logits = prefix_state(model, x, st);
    Sentence y;
    int max_y = model.max_y_len(x);
    for (int step = 0; step < max_y; ++step) {
        std::vector<double> lsm = masked_log_softmax(logits);
        size_t best = 0;
        for (size_t t = 1; t < lsm.size(); ++t) {
            if (lsm[t] > lsm[best]) best = t;
        }
        if (static_cast<TokenId>(best) == Vocabulary::kEos) break;
        y.ids.push_back(static_cast<TokenId>(best));
        logits = decode_step(model, st, static_cast<TokenId>(best));
    }
    return y;
}

double grad_global_norm(const std::vector<double>& grad) {
    double sum = 0.0;
    for (double g : grad) sum += g * g;
    return std::sqrt(sum);
}

void optimizer_step(GeneratorModel& model, const std::vector<double>& grad,
                    const TrainConfig& cfg, AdamState& state) {
    size_t n = model.param_count();
    if (grad.size() != n) throw std::invalid_argument("gradient size does not match the model");
    if (cfg.lr <= 0.0) throw std::invalid_argument("learning rate must be positive");
    for (double g : grad) {
        if (!std::isfinite(g)) throw std::runtime_error("non-finite gradient, step aborted");
    }
    if (state.m.empty()) {
        state.m.assign(n, 0.0);
        state.v.assign(n, 0.0);
        state.step = 0;
    }
    if (state.m.size() != n || state.v.size() != n) {
        throw std::invalid_argument("optimizer state size does not match the model");
    }

    double norm = grad_global_norm(grad);
    double scale = 1.0;
    if (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) scale = cfg.clip_norm / norm;

    state.step += 1;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    double* p = model.params().data();
    for (size_t i = 0; i < n; ++i) {
        double g = grad[i] * scale;
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        double mhat = state.m[i] / bc1;
        double vhat = state.v[i] / bc2;
        p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

}  // namespace tgls
