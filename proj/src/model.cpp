#include "conmax/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "conmax/parallel.hpp"
#include "json.hpp"

namespace conmax {

void ModelConfig::validate() const {
    if (vocab_size < 2) throw std::invalid_argument("vocab_size must be >= 2");
    if (d_model < 1 || n_layers < 1 || n_heads < 1 || max_len < 1)
        throw std::invalid_argument("model dims must be positive");
    if (d_model % n_heads != 0)
        throw std::invalid_argument("d_model must be divisible by n_heads");
}

std::vector<ParamTensor> param_tensors(const ModelConfig& cfg) {
    std::vector<ParamTensor> out;
    size_t off = 0;
    auto add = [&](const std::string& name, std::vector<int> shape) {
        size_t n = 1;
        for (int d : shape) n *= (size_t)d;
        out.push_back({name, std::move(shape), off, n});
        off += n;
    };
    int C = cfg.d_model, V = cfg.vocab_size;
    add("wte", {V, C});
    add("wpe", {cfg.max_len, C});
    for (int l = 0; l < cfg.n_layers; l++) {
        std::string p = "layers." + std::to_string(l) + ".";
        add(p + "ln1_w", {C});
        add(p + "ln1_b", {C});
        add(p + "qkv_w", {3 * C, C});
        add(p + "qkv_b", {3 * C});
        add(p + "attn_w", {C, C});
        add(p + "attn_b", {C});
        add(p + "ln2_w", {C});
        add(p + "ln2_b", {C});
        add(p + "fc_w", {4 * C, C});
        add(p + "fc_b", {4 * C});
        add(p + "proj_w", {C, 4 * C});
        add(p + "proj_b", {C});
    }
    add("lnf_w", {C});
    add("lnf_b", {C});
    add("head_w", {V, C});
    return out;
}

size_t param_count(const ModelConfig& cfg) {
    auto ts = param_tensors(cfg);
    return ts.back().offset + ts.back().size;
}

Model::Model(const ModelConfig& c) : cfg(c) {
    cfg.validate();
    p.assign(param_count(cfg), 0.0);
}

// Offsets into the flat parameter vector, resolved once per call site.
struct ParamIx {
    size_t wte, wpe, lnf_w, lnf_b, head_w;
    struct Layer {
        size_t ln1_w, ln1_b, qkv_w, qkv_b, attn_w, attn_b;
        size_t ln2_w, ln2_b, fc_w, fc_b, proj_w, proj_b;
    };
    std::vector<Layer> layer;

    explicit ParamIx(const ModelConfig& cfg) {
        size_t C = (size_t)cfg.d_model, V = (size_t)cfg.vocab_size;
        size_t off = 0;
        wte = off; off += V * C;
        wpe = off; off += (size_t)cfg.max_len * C;
        layer.resize(cfg.n_layers);
        for (auto& L : layer) {
            L.ln1_w = off; off += C;
            L.ln1_b = off; off += C;
            L.qkv_w = off; off += 3 * C * C;
            L.qkv_b = off; off += 3 * C;
            L.attn_w = off; off += C * C;
            L.attn_b = off; off += C;
            L.ln2_w = off; off += C;
            L.ln2_b = off; off += C;
            L.fc_w = off; off += 4 * C * C;
            L.fc_b = off; off += 4 * C;
            L.proj_w = off; off += C * 4 * C;
            L.proj_b = off; off += C;
        }
        lnf_w = off; off += C;
        lnf_b = off; off += C;
        head_w = off; off += V * C;
    }
};

void init_weights(Model& m, Rng& rng) {
    ParamIx ix(m.cfg);
    size_t C = (size_t)m.cfg.d_model, V = (size_t)m.cfg.vocab_size;
    double resid_scale = 1.0 / std::sqrt(2.0 * m.cfg.n_layers);
    auto gauss = [&](size_t off, size_t n, double std) {
        for (size_t i = 0; i < n; i++) m.p[off + i] = std * rng.normal();
    };
    auto fill = [&](size_t off, size_t n, double val) {
        for (size_t i = 0; i < n; i++) m.p[off + i] = val;
    };
    gauss(ix.wte, V * C, 0.02);
    gauss(ix.wpe, (size_t)m.cfg.max_len * C, 0.01);
    for (const auto& L : ix.layer) {
        fill(L.ln1_w, C, 1.0);
        fill(L.ln1_b, C, 0.0);
        gauss(L.qkv_w, 3 * C * C, 0.02);
        fill(L.qkv_b, 3 * C, 0.0);
        gauss(L.attn_w, C * C, 0.02 * resid_scale);
        fill(L.attn_b, C, 0.0);
        fill(L.ln2_w, C, 1.0);
        fill(L.ln2_b, C, 0.0);
        gauss(L.fc_w, 4 * C * C, 0.02);
        fill(L.fc_b, 4 * C, 0.0);
        gauss(L.proj_w, 4 * C * C, 0.02 * resid_scale);
        fill(L.proj_b, C, 0.0);
    }
    fill(ix.lnf_w, C, 1.0);
    fill(ix.lnf_b, C, 0.0);
    gauss(ix.head_w, V * C, 0.02);
}

// --- layer primitives (llm.c style: raw pointers, explicit loops) ---

static void layernorm_forward(double* out, double* mean, double* rstd, const double* inp,
                              const double* w, const double* b, int T, int C) {
    for (int t = 0; t < T; t++) {
        const double* x = inp + (size_t)t * C;
        double m = 0.0;
        for (int i = 0; i < C; i++) m += x[i];
        m /= C;
        double v = 0.0;
        for (int i = 0; i < C; i++) {
            double d = x[i] - m;
            v += d * d;
        }
        v /= C;
        double rs = 1.0 / std::sqrt(v + 1e-5);
        double* o = out + (size_t)t * C;
        for (int i = 0; i < C; i++) o[i] = (x[i] - m) * rs * w[i] + b[i];
        mean[t] = m;
        rstd[t] = rs;
    }
}

static void layernorm_backward(double* dinp, double* dw, double* db, const double* dout,
                               const double* inp, const double* w, const double* mean,
                               const double* rstd, int T, int C) {
    for (int t = 0; t < T; t++) {
        const double* x = inp + (size_t)t * C;
        const double* dy = dout + (size_t)t * C;
        double m = mean[t], rs = rstd[t];
        double dnorm_mean = 0.0, dnorm_norm_mean = 0.0;
        for (int i = 0; i < C; i++) {
            double norm = (x[i] - m) * rs;
            double dnorm = w[i] * dy[i];
            dnorm_mean += dnorm;
            dnorm_norm_mean += dnorm * norm;
        }
        dnorm_mean /= C;
        dnorm_norm_mean /= C;
        double* dx = dinp + (size_t)t * C;
        for (int i = 0; i < C; i++) {
            double norm = (x[i] - m) * rs;
            double dnorm = w[i] * dy[i];
            dx[i] += (dnorm - dnorm_mean - norm * dnorm_norm_mean) * rs;
            dw[i] += dy[i] * norm;
            db[i] += dy[i];
        }
    }
}

// out (T,OUT) = inp (T,IN) @ w^T (OUT,IN) + b
static void matmul_forward(double* out, const double* inp, const double* w, const double* b,
                           int T, int IN, int OUT) {
    for (int t = 0; t < T; t++) {
        const double* x = inp + (size_t)t * IN;
        double* o = out + (size_t)t * OUT;
        for (int j = 0; j < OUT; j++) {
            const double* wr = w + (size_t)j * IN;
            double acc = b ? b[j] : 0.0;
            for (int i = 0; i < IN; i++) acc += wr[i] * x[i];
            o[j] = acc;
        }
    }
}

static void matmul_backward(double* dinp, double* dw, double* db, const double* dout,
                            const double* inp, const double* w, int T, int IN, int OUT) {
    for (int t = 0; t < T; t++) {
        const double* dy = dout + (size_t)t * OUT;
        const double* x = inp + (size_t)t * IN;
        double* dx = dinp + (size_t)t * IN;
        for (int j = 0; j < OUT; j++) {
            double d = dy[j];
            if (d == 0.0) continue;
            const double* wr = w + (size_t)j * IN;
            double* dwr = dw + (size_t)j * IN;
            for (int i = 0; i < IN; i++) {
                dx[i] += wr[i] * d;
                dwr[i] += x[i] * d;
            }
            if (db) db[j] += d;
        }
    }
}

// qkv (T,3C) -> atty (T,C); att (H,T,T) holds the softmax weights
static void attention_forward(double* atty, double* att, const double* qkv, int T, int C, int H) {
    int hs = C / H;
    double scale = 1.0 / std::sqrt((double)hs);
    for (int h = 0; h < H; h++) {
        double* att_h = att + (size_t)h * T * T;
        for (int t = 0; t < T; t++) {
            const double* q = qkv + (size_t)t * 3 * C + h * hs;
            double* arow = att_h + (size_t)t * T;
            double maxv = -1e30;
            for (int j = 0; j <= t; j++) {
                const double* k = qkv + (size_t)j * 3 * C + C + h * hs;
                double s = 0.0;
                for (int i = 0; i < hs; i++) s += q[i] * k[i];
                s *= scale;
                arow[j] = s;
                if (s > maxv) maxv = s;
            }
            double sum = 0.0;
            for (int j = 0; j <= t; j++) {
                double e = std::exp(arow[j] - maxv);
                arow[j] = e;
                sum += e;
            }
            double inv = 1.0 / sum;
            for (int j = 0; j <= t; j++) arow[j] *= inv;
            for (int j = t + 1; j < T; j++) arow[j] = 0.0;
            double* o = atty + (size_t)t * C + h * hs;
            for (int i = 0; i < hs; i++) o[i] = 0.0;
            for (int j = 0; j <= t; j++) {
                const double* v = qkv + (size_t)j * 3 * C + 2 * C + h * hs;
                double a = arow[j];
                for (int i = 0; i < hs; i++) o[i] += a * v[i];
            }
        }
    }
}

static void attention_backward(double* dqkv, const double* datty, const double* att,
                               const double* qkv, int T, int C, int H) {
    int hs = C / H;
    double scale = 1.0 / std::sqrt((double)hs);
    std::vector<double> datt(T), dpre(T);
    for (int h = 0; h < H; h++) {
        const double* att_h = att + (size_t)h * T * T;
        for (int t = 0; t < T; t++) {
            const double* dy = datty + (size_t)t * C + h * hs;
            const double* arow = att_h + (size_t)t * T;
            const double* q = qkv + (size_t)t * 3 * C + h * hs;
            // through the value mix: datt and dv
            for (int j = 0; j <= t; j++) {
                const double* v = qkv + (size_t)j * 3 * C + 2 * C + h * hs;
                double* dv = dqkv + (size_t)j * 3 * C + 2 * C + h * hs;
                double d = 0.0;
                for (int i = 0; i < hs; i++) {
                    d += dy[i] * v[i];
                    dv[i] += arow[j] * dy[i];
                }
                datt[j] = d;
            }
            // softmax jacobian
            double dot = 0.0;
            for (int j = 0; j <= t; j++) dot += arow[j] * datt[j];
            for (int j = 0; j <= t; j++) dpre[j] = arow[j] * (datt[j] - dot) * scale;
            // through the scores: dq and dk
            double* dq = dqkv + (size_t)t * 3 * C + h * hs;
            for (int j = 0; j <= t; j++) {
                const double* k = qkv + (size_t)j * 3 * C + C + h * hs;
                double* dk = dqkv + (size_t)j * 3 * C + C + h * hs;
                double d = dpre[j];
                for (int i = 0; i < hs; i++) {
                    dq[i] += d * k[i];
                    dk[i] += d * q[i];
                }
            }
        }
    }
}

static constexpr double kGeluScale = 0.7978845608028653559;  // sqrt(2/pi)

static void gelu_forward(double* out, const double* inp, size_t n) {
    for (size_t i = 0; i < n; i++) {
        double x = inp[i];
        double cube = 0.044715 * x * x * x;
        out[i] = 0.5 * x * (1.0 + std::tanh(kGeluScale * (x + cube)));
    }
}

static void gelu_backward(double* dinp, const double* inp, const double* dout, size_t n) {
    for (size_t i = 0; i < n; i++) {
        double x = inp[i];
        double cube = 0.044715 * x * x * x;
        double th = std::tanh(kGeluScale * (x + cube));
        double sech2 = 1.0 - th * th;
        double local = 0.5 * (1.0 + th) +
                       0.5 * x * sech2 * kGeluScale * (1.0 + 3.0 * 0.044715 * x * x);
        dinp[i] += local * dout[i];
    }
}

// --- full forward pass ---

namespace {

struct LayerActs {
    std::vector<double> ln1, qkv, att, atty, resid1;
    std::vector<double> ln2, fch, fch_gelu, resid2;
    std::vector<double> ln1_mean, ln1_rstd, ln2_mean, ln2_rstd;
};

struct Acts {
    int T = 0;
    std::vector<double> emb;
    std::vector<LayerActs> layer;
    std::vector<double> lnf, lnf_mean, lnf_rstd, logits;
};

void forward(const Model& m, const ParamIx& ix, const std::vector<int>& tokens, Acts& a) {
    const ModelConfig& cfg = m.cfg;
    int T = (int)tokens.size();
    int C = cfg.d_model, H = cfg.n_heads, V = cfg.vocab_size;
    if (T == 0) throw std::invalid_argument("forward: empty token sequence");
    if (T > cfg.max_len)
        throw std::invalid_argument("sequence length " + std::to_string(T) +
                                    " exceeds max_len " + std::to_string(cfg.max_len));
    const double* p = m.p.data();
    a.T = T;
    a.emb.resize((size_t)T * C);
    for (int t = 0; t < T; t++) {
        int tok = tokens[t];
        if (tok < 0 || tok >= V) throw std::invalid_argument("token id out of range");
        const double* te = p + ix.wte + (size_t)tok * C;
        const double* pe = p + ix.wpe + (size_t)t * C;
        double* o = a.emb.data() + (size_t)t * C;
        for (int i = 0; i < C; i++) o[i] = te[i] + pe[i];
    }
    a.layer.resize(cfg.n_layers);
    const double* x = a.emb.data();
    for (int l = 0; l < cfg.n_layers; l++) {
        LayerActs& la = a.layer[l];
        const ParamIx::Layer& L = ix.layer[l];
        la.ln1.resize((size_t)T * C);
        la.ln1_mean.resize(T);
        la.ln1_rstd.resize(T);
        la.qkv.resize((size_t)T * 3 * C);
        la.att.resize((size_t)H * T * T);
        la.atty.resize((size_t)T * C);
        la.resid1.resize((size_t)T * C);
        la.ln2.resize((size_t)T * C);
        la.ln2_mean.resize(T);
        la.ln2_rstd.resize(T);
        la.fch.resize((size_t)T * 4 * C);
        la.fch_gelu.resize((size_t)T * 4 * C);
        la.resid2.resize((size_t)T * C);

        layernorm_forward(la.ln1.data(), la.ln1_mean.data(), la.ln1_rstd.data(), x,
                          p + L.ln1_w, p + L.ln1_b, T, C);
        matmul_forward(la.qkv.data(), la.ln1.data(), p + L.qkv_w, p + L.qkv_b, T, C, 3 * C);
        attention_forward(la.atty.data(), la.att.data(), la.qkv.data(), T, C, H);
        // attn projection straight into resid1, then add the skip
        matmul_forward(la.resid1.data(), la.atty.data(), p + L.attn_w, p + L.attn_b, T, C, C);
        for (size_t i = 0; i < (size_t)T * C; i++) la.resid1[i] += x[i];

        layernorm_forward(la.ln2.data(), la.ln2_mean.data(), la.ln2_rstd.data(),
                          la.resid1.data(), p + L.ln2_w, p + L.ln2_b, T, C);
        matmul_forward(la.fch.data(), la.ln2.data(), p + L.fc_w, p + L.fc_b, T, C, 4 * C);
        gelu_forward(la.fch_gelu.data(), la.fch.data(), (size_t)T * 4 * C);
        matmul_forward(la.resid2.data(), la.fch_gelu.data(), p + L.proj_w, p + L.proj_b, T,
                       4 * C, C);
        for (size_t i = 0; i < (size_t)T * C; i++) la.resid2[i] += la.resid1[i];
        x = la.resid2.data();
    }
    a.lnf.resize((size_t)T * C);
    a.lnf_mean.resize(T);
    a.lnf_rstd.resize(T);
    layernorm_forward(a.lnf.data(), a.lnf_mean.data(), a.lnf_rstd.data(), x, p + ix.lnf_w,
                      p + ix.lnf_b, T, C);
    a.logits.resize((size_t)T * V);
    matmul_forward(a.logits.data(), a.lnf.data(), p + ix.head_w, nullptr, T, C, V);
}

// dlogits (T,V) -> grad over all parameters (accumulated)
void backward(const Model& m, const ParamIx& ix, const std::vector<int>& tokens, const Acts& a,
              const std::vector<double>& dlogits, std::vector<double>& grad) {
    const ModelConfig& cfg = m.cfg;
    int T = a.T, C = cfg.d_model, H = cfg.n_heads, V = cfg.vocab_size;
    const double* p = m.p.data();
    double* g = grad.data();

    std::vector<double> dlnf((size_t)T * C, 0.0);
    matmul_backward(dlnf.data(), g + ix.head_w, nullptr, dlogits.data(), a.lnf.data(),
                    p + ix.head_w, T, C, V);

    const double* x_last =
        cfg.n_layers ? a.layer.back().resid2.data() : a.emb.data();
    std::vector<double> dres((size_t)T * C, 0.0);
    layernorm_backward(dres.data(), g + ix.lnf_w, g + ix.lnf_b, dlnf.data(), x_last,
                       p + ix.lnf_w, a.lnf_mean.data(), a.lnf_rstd.data(), T, C);

    std::vector<double> dresid1((size_t)T * C), dfch_gelu((size_t)T * 4 * C),
        dfch((size_t)T * 4 * C), dln2((size_t)T * C), datty((size_t)T * C),
        dqkv((size_t)T * 3 * C), dln1((size_t)T * C), dx((size_t)T * C);

    for (int l = cfg.n_layers - 1; l >= 0; l--) {
        const LayerActs& la = a.layer[l];
        const ParamIx::Layer& L = ix.layer[l];
        const double* x_in = l == 0 ? a.emb.data() : a.layer[l - 1].resid2.data();

        // resid2 = resid1 + proj(gelu(fc(ln2(resid1))))
        std::fill(dresid1.begin(), dresid1.end(), 0.0);
        std::fill(dfch_gelu.begin(), dfch_gelu.end(), 0.0);
        std::fill(dfch.begin(), dfch.end(), 0.0);
        std::fill(dln2.begin(), dln2.end(), 0.0);
        for (size_t i = 0; i < (size_t)T * C; i++) dresid1[i] = dres[i];
        matmul_backward(dfch_gelu.data(), g + L.proj_w, g + L.proj_b, dres.data(),
                        la.fch_gelu.data(), p + L.proj_w, T, 4 * C, C);
        gelu_backward(dfch.data(), la.fch.data(), dfch_gelu.data(), (size_t)T * 4 * C);
        matmul_backward(dln2.data(), g + L.fc_w, g + L.fc_b, dfch.data(), la.ln2.data(),
                        p + L.fc_w, T, C, 4 * C);
        layernorm_backward(dresid1.data(), g + L.ln2_w, g + L.ln2_b, dln2.data(),
                           la.resid1.data(), p + L.ln2_w, la.ln2_mean.data(),
                           la.ln2_rstd.data(), T, C);

        // resid1 = x_in + attnproj(atty)
        std::fill(dx.begin(), dx.end(), 0.0);
        std::fill(datty.begin(), datty.end(), 0.0);
        std::fill(dqkv.begin(), dqkv.end(), 0.0);
        std::fill(dln1.begin(), dln1.end(), 0.0);
        for (size_t i = 0; i < (size_t)T * C; i++) dx[i] = dresid1[i];
        matmul_backward(datty.data(), g + L.attn_w, g + L.attn_b, dresid1.data(),
                        la.atty.data(), p + L.attn_w, T, C, C);
        attention_backward(dqkv.data(), datty.data(), la.att.data(), la.qkv.data(), T, C, H);
        matmul_backward(dln1.data(), g + L.qkv_w, g + L.qkv_b, dqkv.data(), la.ln1.data(),
                        p + L.qkv_w, T, C, 3 * C);
        layernorm_backward(dx.data(), g + L.ln1_w, g + L.ln1_b, dln1.data(), x_in,
                           p + L.ln1_w, la.ln1_mean.data(), la.ln1_rstd.data(), T, C);
        std::swap(dres, dx);
    }

    for (int t = 0; t < T; t++) {
        const double* d = dres.data() + (size_t)t * C;
        double* dwte = g + ix.wte + (size_t)tokens[t] * C;
        double* dwpe = g + ix.wpe + (size_t)t * C;
        for (int i = 0; i < C; i++) {
            dwte[i] += d[i];
            dwpe[i] += d[i];
        }
    }
}

double logsumexp(const double* row, int n) {
    double maxv = row[0];
    for (int j = 1; j < n; j++)
        if (row[j] > maxv) maxv = row[j];
    double s = 0.0;
    for (int j = 0; j < n; j++) s += std::exp(row[j] - maxv);
    return maxv + std::log(s);
}

}  // namespace

std::vector<double> token_logprobs(const Model& m, const std::vector<int>& ctx,
                                   const std::vector<int>& tgt) {
    if (ctx.empty()) throw std::invalid_argument("token_logprobs: empty context");
    if (tgt.empty()) return {};
    std::vector<int> toks = ctx;
    toks.insert(toks.end(), tgt.begin(), tgt.end());
    ParamIx ix(m.cfg);
    Acts a;
    forward(m, ix, toks, a);
    int V = m.cfg.vocab_size;
    std::vector<double> out(tgt.size());
    for (size_t i = 0; i < tgt.size(); i++) {
        size_t pos = ctx.size() + i - 1;  // position predicting tgt[i]
        const double* row = a.logits.data() + pos * V;
        out[i] = row[tgt[i]] - logsumexp(row, V);
    }
    return out;
}

std::vector<double> full_logprobs(const Model& m, const std::vector<int>& tokens) {
    ParamIx ix(m.cfg);
    Acts a;
    forward(m, ix, tokens, a);
    int V = m.cfg.vocab_size;
    std::vector<double> out((size_t)a.T * V);
    for (int t = 0; t < a.T; t++) {
        const double* row = a.logits.data() + (size_t)t * V;
        double lse = logsumexp(row, V);
        for (int j = 0; j < V; j++) out[(size_t)t * V + j] = row[j] - lse;
    }
    return out;
}

SampleResult sample_tokens(const Model& m, const std::vector<int>& ctx, double temperature,
                           int max_new, int stop_token, Rng& rng) {
    if (ctx.empty()) throw std::invalid_argument("sample_tokens: empty context");
    if (max_new < 0) throw std::invalid_argument("sample_tokens: negative max_new");
    if ((int)ctx.size() + max_new > m.cfg.max_len)
        throw std::invalid_argument("sample_tokens: context of " + std::to_string(ctx.size()) +
                                    " plus max_new " + std::to_string(max_new) +
                                    " exceeds max_len " + std::to_string(m.cfg.max_len));
    ParamIx ix(m.cfg);
    int V = m.cfg.vocab_size;
    SampleResult res;
    std::vector<int> toks = ctx;
    Acts a;
    std::vector<double> logp(V), prob(V);
    while ((int)res.tokens.size() < max_new) {
        forward(m, ix, toks, a);
        const double* row = a.logits.data() + (size_t)(a.T - 1) * V;
        int pick;
        if (temperature < 1e-6) {
            pick = 0;
            for (int j = 1; j < V; j++)
                if (row[j] > row[pick]) pick = j;
            // log-prob still reported under the unscaled distribution
            double lse = logsumexp(row, V);
            res.logprobs.push_back(row[pick] - lse);
        } else {
            for (int j = 0; j < V; j++) logp[j] = row[j] / temperature;
            double lse = logsumexp(logp.data(), V);
            for (int j = 0; j < V; j++) {
                logp[j] -= lse;
                prob[j] = std::exp(logp[j]);
            }
            pick = (int)rng.categorical(prob);
            res.logprobs.push_back(logp[pick]);
        }
        res.tokens.push_back(pick);
        toks.push_back(pick);
        if (pick == stop_token) break;
    }
    return res;
}

double weighted_logprob_backward(const Model& m, const std::vector<int>& ctx,
                                 const std::vector<int>& tgt, const std::vector<double>& w,
                                 std::vector<double>& grad) {
    if (ctx.empty()) throw std::invalid_argument("weighted_logprob_backward: empty context");
    if (w.size() != tgt.size())
        throw std::invalid_argument("weighted_logprob_backward: weight/target size mismatch");
    if (grad.size() != m.p.size())
        throw std::invalid_argument("weighted_logprob_backward: grad buffer size mismatch");
    if (tgt.empty()) return 0.0;
    std::vector<int> toks = ctx;
    toks.insert(toks.end(), tgt.begin(), tgt.end());
    ParamIx ix(m.cfg);
    Acts a;
    forward(m, ix, toks, a);
    int V = m.cfg.vocab_size;
    double value = 0.0;
    std::vector<double> dlogits((size_t)a.T * V, 0.0);
    std::vector<double> probs(V);
    for (size_t i = 0; i < tgt.size(); i++) {
        size_t pos = ctx.size() + i - 1;
        const double* row = a.logits.data() + pos * V;
        double lse = logsumexp(row, V);
        value += w[i] * (row[tgt[i]] - lse);
        if (w[i] == 0.0) continue;
        double* dl = dlogits.data() + pos * V;
        for (int j = 0; j < V; j++) dl[j] = -w[i] * std::exp(row[j] - lse);
        dl[tgt[i]] += w[i];
    }
    backward(m, ix, toks, a, dlogits, grad);
    return value;
}

void adam_step(Adam& opt, std::vector<double>& params, const std::vector<double>& grad) {
    if (opt.m.size() != params.size() || grad.size() != params.size())
        throw std::invalid_argument("adam_step: size mismatch");
    opt.t++;
    double bc1 = 1.0 - std::pow(opt.beta1, (double)opt.t);
    double bc2 = 1.0 - std::pow(opt.beta2, (double)opt.t);
    for (size_t i = 0; i < params.size(); i++) {
        double g = grad[i];
        opt.m[i] = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * g;
        opt.v[i] = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * g * g;
        double mhat = opt.m[i] / bc1;
        double vhat = opt.v[i] / bc2;
        params[i] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
    }
}

// Shared batched xent: parallel over sequences into per-slot grad buffers,
// reduced in slot order so results do not depend on scheduling.
static double xent_batch(const Model& m, const std::vector<SeqPair>& batch, int workers,
                         std::vector<double>* grad_out) {
    size_t n_tok = 0;
    for (const auto& sp : batch) n_tok += sp.tgt.size();
    if (n_tok == 0) return 0.0;
    double inv = -1.0 / (double)n_tok;

    size_t slots = n_slots(batch.size(), workers);
    std::vector<std::vector<double>> slot_grad(slots);
    std::vector<double> slot_loss(slots, 0.0);
    if (grad_out)
        for (auto& sg : slot_grad) sg.assign(m.p.size(), 0.0);

    parallel_for_slots(batch.size(), workers, [&](size_t i, size_t slot) {
        const SeqPair& sp = batch[i];
        if (sp.tgt.empty()) return;
        if (grad_out) {
            std::vector<double> w(sp.tgt.size(), inv);
            slot_loss[slot] += weighted_logprob_backward(m, sp.ctx, sp.tgt, w, slot_grad[slot]);
        } else {
            auto lp = token_logprobs(m, sp.ctx, sp.tgt);
            double s = 0.0;
            for (double x : lp) s += x;
            slot_loss[slot] += inv * s;
        }
    });

    double loss = 0.0;
    for (size_t s = 0; s < slots; s++) loss += slot_loss[s];
    if (grad_out) {
        grad_out->assign(m.p.size(), 0.0);
        for (size_t s = 0; s < slots; s++)
            for (size_t i = 0; i < grad_out->size(); i++) (*grad_out)[i] += slot_grad[s][i];
    }
    return loss;
}

double xent_step(Model& m, Adam& opt, const std::vector<SeqPair>& batch, int workers) {
    std::vector<double> grad;
    double loss = xent_batch(m, batch, workers, &grad);
    if (grad.empty()) return loss;  // nothing to learn from
    adam_step(opt, m.p, grad);
    return loss;
}

double xent_loss(const Model& m, const std::vector<SeqPair>& batch, int workers) {
    return xent_batch(m, batch, workers, nullptr);
}

double grad_l2norm(const std::vector<double>& g) {
    double s = 0.0;
    for (double x : g) s += x * x;
    return std::sqrt(s);
}

// --- checkpoints ---

static constexpr char kMagic[8] = {'C', 'M', 'A', 'X', 'C', 'K', 'P', 'T'};
static constexpr uint32_t kVersion = 1;

void save_model(const Model& m, const std::string& path) {
    nlohmann::ordered_json hdr;
    hdr["vocab_size"] = m.cfg.vocab_size;
    hdr["d_model"] = m.cfg.d_model;
    hdr["n_layers"] = m.cfg.n_layers;
    hdr["n_heads"] = m.cfg.n_heads;
    hdr["max_len"] = m.cfg.max_len;
    hdr["param_count"] = m.p.size();
    auto& tensors = hdr["tensors"] = nlohmann::ordered_json::array();
    for (const auto& t : param_tensors(m.cfg)) {
        nlohmann::ordered_json tj;
        tj["name"] = t.name;
        tj["shape"] = t.shape;
        tensors.push_back(tj);
    }
    std::string hs = hdr.dump();
    uint64_t hlen = hs.size();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f.write(kMagic, 8);
    f.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
    f.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
    f.write(hs.data(), (std::streamsize)hs.size());
    f.write(reinterpret_cast<const char*>(m.p.data()),
            (std::streamsize)(m.p.size() * sizeof(double)));
    if (!f) throw std::runtime_error("write failed: " + path);
}

Model load_model(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    uint32_t version = 0;
    uint64_t hlen = 0;
    f.read(magic, 8);
    f.read(reinterpret_cast<char*>(&version), sizeof version);
    f.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
    if (!f || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("not a model checkpoint: " + path);
    if (version != kVersion)
        throw std::runtime_error("unsupported checkpoint version in " + path);
    std::string hs(hlen, '\0');
    f.read(hs.data(), (std::streamsize)hlen);
    if (!f) throw std::runtime_error("truncated checkpoint header: " + path);
    nlohmann::json hdr;
    try {
        hdr = nlohmann::json::parse(hs);
    } catch (const std::exception& e) {
        throw std::runtime_error("bad checkpoint header in " + path + ": " + e.what());
    }
    ModelConfig cfg;
    cfg.vocab_size = hdr.at("vocab_size").get<int>();
    cfg.d_model = hdr.at("d_model").get<int>();
    cfg.n_layers = hdr.at("n_layers").get<int>();
    cfg.n_heads = hdr.at("n_heads").get<int>();
    cfg.max_len = hdr.at("max_len").get<int>();
    Model m(cfg);
    size_t expect = hdr.at("param_count").get<size_t>();
    if (expect != m.p.size())
        throw std::runtime_error("checkpoint param count mismatch in " + path);
    f.read(reinterpret_cast<char*>(m.p.data()), (std::streamsize)(m.p.size() * sizeof(double)));
    if (!f) throw std::runtime_error("truncated checkpoint data: " + path);
    return m;
}

}  // namespace conmax
