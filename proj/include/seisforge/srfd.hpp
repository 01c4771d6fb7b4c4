#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <type_traits>
#include <string>
#include <vector>

#include "seisforge/errors.hpp"
#include "seisforge/jsondoc.hpp"
#include "seisforge/rng.hpp"
#include "seisforge/tensor.hpp"

namespace seisforge::srfd {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Seismic-Response Feature Decoder hyperparameters. Output channels are
/// (displacement, acceleration) per story slot: channel q*n_max + s.
struct SrfdConfig {
    int d_model = 64;
    int window = 64;
    int n_layers = 2;
    int n_heads = 4;
    int n_kv_groups = 2;
    double ffn_mult = 2.0;
    int n_max = 33;
    double rope_base = 10000.0;
    double rms_eps = 1e-6;
    int lora_rank = 0;
    double lora_alpha = 16.0;
    // physics conditioning: one block after the embedding by default, or
    // repeated (shared weights) in front of every layer for ablations
    bool physics_per_layer = false;

    int d_head() const { return d_model / n_heads; }
    int kv_dim() const { return n_kv_groups * d_head(); }
    int heads_per_group() const { return n_heads / n_kv_groups; }
    int out_channels() const { return 2 * n_max; }
    int in_features() const { return 1 + 2 * out_channels(); }
    int ffn_hidden() const { return static_cast<int>(std::lround(ffn_mult * d_model)); }

    void validate() const {
        if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0)
            throw ConfigError("srfd: n_heads must divide d_model");
        if (d_head() % 2 != 0) throw ConfigError("srfd: d_head must be even for RoPE");
        if (n_kv_groups <= 0 || n_heads % n_kv_groups != 0)
            throw ConfigError("srfd: n_kv_groups must divide n_heads");
        if (window < 2) throw ConfigError("srfd: window must be >= 2");
        if (n_max < 1) throw ConfigError("srfd: n_max must be >= 1");
        if (n_layers < 1) throw ConfigError("srfd: n_layers must be >= 1");
        if (ffn_hidden() < 1) throw ConfigError("srfd: ffn_mult too small");
        if (lora_rank < 0) throw ConfigError("srfd: lora_rank must be >= 0");
        if (rope_base <= 1.0) throw ConfigError("srfd: rope_base must exceed 1");
    }

    Doc to_doc() const {
        Doc d;
        d["d_model"] = d_model;
        d["window"] = window;
        d["n_layers"] = n_layers;
        d["n_heads"] = n_heads;
        d["n_kv_groups"] = n_kv_groups;
        d["ffn_mult"] = ffn_mult;
        d["n_max"] = n_max;
        d["rope_base"] = rope_base;
        d["rms_eps"] = rms_eps;
        d["lora_rank"] = lora_rank;
        d["lora_alpha"] = lora_alpha;
        d["physics_per_layer"] = physics_per_layer;
        return d;
    }

    static SrfdConfig from_doc(const Doc& d) {
        reject_unknown_keys(d,
                            {"d_model", "window", "n_layers", "n_heads", "n_kv_groups",
                             "ffn_mult", "n_max", "rope_base", "rms_eps", "lora_rank",
                             "lora_alpha", "physics_per_layer"},
                            "srfd config");
        SrfdConfig c;
        c.d_model = doc_get(d, "d_model", c.d_model);
        c.window = doc_get(d, "window", c.window);
        c.n_layers = doc_get(d, "n_layers", c.n_layers);
        c.n_heads = doc_get(d, "n_heads", c.n_heads);
        c.n_kv_groups = doc_get(d, "n_kv_groups", c.n_kv_groups);
        c.ffn_mult = doc_get(d, "ffn_mult", c.ffn_mult);
        c.n_max = doc_get(d, "n_max", c.n_max);
        c.rope_base = doc_get(d, "rope_base", c.rope_base);
        c.rms_eps = doc_get(d, "rms_eps", c.rms_eps);
        c.lora_rank = doc_get(d, "lora_rank", c.lora_rank);
        c.lora_alpha = doc_get(d, "lora_alpha", c.lora_alpha);
        c.physics_per_layer = doc_get(d, "physics_per_layer", c.physics_per_layer);
        c.validate();
        return c;
    }
};

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

template <class S>
struct Lora {
    Mat<S> a; // rank x d_in
    Mat<S> b; // d_out x rank
    bool present() const { return a.rows > 0; }
};

template <class S>
struct SrfdLayerWeights {
    Mat<S> rms1_gain;
    Mat<S> att_wq, att_wk, att_wv, att_wo;
    Mat<S> rms2_gain;
    Mat<S> ffn_gate, ffn_up, ffn_down;
};

template <class S>
struct SrfdWeights {
    Mat<S> embed; // d_model x in_features
    Mat<S> phys_rms_gain;
    Mat<S> phys_wq, phys_wk, phys_wq2, phys_wk2, phys_wv, phys_wo; // d x d
    Mat<S> phys_um, phys_uk;                                       // d_head x n_max
    std::vector<SrfdLayerWeights<S>> layers;
    Mat<S> final_rms_gain;
    Mat<S> head; // out_channels x d_model

    /// Every learnable tensor, in declaration order. The order is the
    /// checkpoint array order and the Adam state order.
    template <class F>
    void visit(F&& f) {
        f("embed", embed);
        f("phys.rms", phys_rms_gain);
        f("phys.wq", phys_wq);
        f("phys.wk", phys_wk);
        f("phys.wq2", phys_wq2);
        f("phys.wk2", phys_wk2);
        f("phys.wv", phys_wv);
        f("phys.wo", phys_wo);
        f("phys.um", phys_um);
        f("phys.uk", phys_uk);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            f(p + "rms1", layers[l].rms1_gain);
            f(p + "att.wq", layers[l].att_wq);
            f(p + "att.wk", layers[l].att_wk);
            f(p + "att.wv", layers[l].att_wv);
            f(p + "att.wo", layers[l].att_wo);
            f(p + "rms2", layers[l].rms2_gain);
            f(p + "ffn.gate", layers[l].ffn_gate);
            f(p + "ffn.up", layers[l].ffn_up);
            f(p + "ffn.down", layers[l].ffn_down);
        }
        f("final.rms", final_rms_gain);
        f("head", head);
    }

    template <class F>
    void visit(F&& f) const {
        const_cast<SrfdWeights*>(this)->visit(
            [&](const std::string& n, Mat<S>& m) { f(n, static_cast<const Mat<S>&>(m)); });
    }
};

/// Attention maps eligible for LoRA adapters, in adapter-file order.
template <class S, class F>
void visit_attention_maps(SrfdWeights<S>& w, F&& f) {
    f("phys.wq", w.phys_wq);
    f("phys.wk", w.phys_wk);
    f("phys.wq2", w.phys_wq2);
    f("phys.wk2", w.phys_wk2);
    f("phys.wv", w.phys_wv);
    f("phys.wo", w.phys_wo);
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        const std::string p = "layer" + std::to_string(l) + ".att.";
        f(p + "wq", w.layers[l].att_wq);
        f(p + "wk", w.layers[l].att_wk);
        f(p + "wv", w.layers[l].att_wv);
        f(p + "wo", w.layers[l].att_wo);
    }
}

template <class S>
struct LoraSet {
    int rank = 0;
    double alpha = 16.0;
    std::vector<Lora<S>> items; // aligned with visit_attention_maps order

    bool empty() const { return items.empty() || rank == 0; }
    double scale() const { return alpha / rank; }

    template <class F>
    void visit(SrfdWeights<S>& w, F&& f) {
        std::size_t i = 0;
        visit_attention_maps(w, [&](const std::string& name, Mat<S>&) {
            f("lora." + name + ".a", items[i].a);
            f("lora." + name + ".b", items[i].b);
            ++i;
        });
    }
};

template <class S>
SrfdWeights<S> make_weights(const SrfdConfig& cfg) {
    cfg.validate();
    SrfdWeights<S> w;
    w.embed = Mat<S>(cfg.d_model, cfg.in_features());
    w.phys_rms_gain = Mat<S>(1, cfg.d_model);
    for (Mat<S>* m : {&w.phys_wq, &w.phys_wk, &w.phys_wq2, &w.phys_wk2, &w.phys_wv, &w.phys_wo})
        *m = Mat<S>(cfg.d_model, cfg.d_model);
    w.phys_um = Mat<S>(cfg.d_head(), cfg.n_max);
    w.phys_uk = Mat<S>(cfg.d_head(), cfg.n_max);
    w.layers.resize(cfg.n_layers);
    for (auto& l : w.layers) {
        l.rms1_gain = Mat<S>(1, cfg.d_model);
        l.att_wq = Mat<S>(cfg.d_model, cfg.d_model);
        l.att_wk = Mat<S>(cfg.kv_dim(), cfg.d_model);
        l.att_wv = Mat<S>(cfg.kv_dim(), cfg.d_model);
        l.att_wo = Mat<S>(cfg.d_model, cfg.d_model);
        l.rms2_gain = Mat<S>(1, cfg.d_model);
        l.ffn_gate = Mat<S>(cfg.ffn_hidden(), cfg.d_model);
        l.ffn_up = Mat<S>(cfg.ffn_hidden(), cfg.d_model);
        l.ffn_down = Mat<S>(cfg.d_model, cfg.ffn_hidden());
    }
    w.final_rms_gain = Mat<S>(1, cfg.d_model);
    w.head = Mat<S>(cfg.out_channels(), cfg.d_model);
    return w;
}

template <class S>
SrfdWeights<S> init_weights(const SrfdConfig& cfg, std::uint64_t seed) {
    SrfdWeights<S> w = make_weights<S>(cfg);
    SplitMix64 rng = substream(seed, 0x5EEDu);
    w.visit([&](const std::string& name, Mat<S>& m) {
        const bool gain = name.find("rms") != std::string::npos;
        if (gain) {
            for (auto& v : m.d) v = S(1);
        } else {
            const double std = 1.0 / std::sqrt(static_cast<double>(m.cols));
            for (auto& v : m.d) v = S(rng.normal(0.0, std));
        }
    });
    return w;
}

template <class S>
SrfdWeights<S> zeros_like(const SrfdWeights<S>& w) {
    SrfdWeights<S> z = w;
    z.visit([](const std::string&, Mat<S>& m) { m.zero(); });
    return z;
}

/// Zero-initialized B keeps freshly attached adapters an exact no-op.
template <class S>
LoraSet<S> make_lora(const SrfdConfig& cfg, SrfdWeights<S>& w, std::uint64_t seed) {
    LoraSet<S> set;
    set.rank = cfg.lora_rank;
    set.alpha = cfg.lora_alpha;
    if (cfg.lora_rank <= 0) return set;
    SplitMix64 rng = substream(seed, 0x10A4u);
    visit_attention_maps(w, [&](const std::string&, Mat<S>& base) {
        Lora<S> l;
        l.a = Mat<S>(set.rank, base.cols);
        l.b = Mat<S>(base.rows, set.rank);
        const double std = 1.0 / std::sqrt(static_cast<double>(set.rank));
        for (auto& v : l.a.d) v = S(rng.normal(0.0, std));
        set.items.push_back(std::move(l));
    });
    return set;
}

template <class S>
LoraSet<S> lora_zeros_like(const LoraSet<S>& l) {
    LoraSet<S> z = l;
    for (auto& it : z.items) {
        it.a.zero();
        it.b.zero();
    }
    return z;
}

// ---------------------------------------------------------------------------
// Elementary ops
// ---------------------------------------------------------------------------

inline double gelu_exact(double z) {
    return 0.5 * z * (1.0 + std::erf(z / std::numbers::sqrt2));
}

inline double gelu_grad(double z) {
    const double phi = 0.5 * (1.0 + std::erf(z / std::numbers::sqrt2));
    const double dens = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
    return phi + z * dens;
}

inline double silu(double z) { return z / (1.0 + std::exp(-z)); }

inline double silu_grad(double z) {
    const double s = 1.0 / (1.0 + std::exp(-z));
    return s * (1.0 + z * (1.0 - s));
}

/// Row-wise RMS normalization: y_i = gain_i * x_i / sqrt(eps + mean(x^2)).
/// The per-row denominators are retained for the backward pass.
template <class S>
void rms_norm_fwd(const Mat<S>& x, const Mat<S>& gain, double eps, Mat<S>& y,
                  std::vector<double>* denoms = nullptr) {
    if (gain.cols != x.cols) throw ConfigError("rms_norm: gain size mismatch");
    if (!y.same_shape(x)) y = Mat<S>(x.rows, x.cols);
    if (denoms) denoms->assign(x.rows, 0.0);
    for (int i = 0; i < x.rows; ++i) {
        const S* xi = x.row(i);
        double ss = 0.0;
        for (int j = 0; j < x.cols; ++j) ss += double(xi[j]) * double(xi[j]);
        const double r = std::sqrt(eps + ss / x.cols);
        if (denoms) (*denoms)[i] = r;
        S* yi = y.row(i);
        for (int j = 0; j < x.cols; ++j) yi[j] = S(double(gain.d[j]) * double(xi[j]) / r);
    }
}

template <class S>
void rms_norm_bwd(const Mat<S>& x, const Mat<S>& gain, const std::vector<double>& denoms,
                  const Mat<S>& dy, Mat<S>& dgain, Mat<S>& dx) {
    const int d = x.cols;
    for (int i = 0; i < x.rows; ++i) {
        const S* xi = x.row(i);
        const S* dyi = dy.row(i);
        const double r = denoms[i];
        double t = 0.0;
        for (int j = 0; j < d; ++j) t += double(dyi[j]) * double(gain.d[j]) * double(xi[j]);
        S* dxi = dx.row(i);
        for (int j = 0; j < d; ++j) {
            dgain.d[j] = S(double(dgain.d[j]) + double(dyi[j]) * double(xi[j]) / r);
            dxi[j] = S(double(dxi[j]) + double(gain.d[j]) * double(dyi[j]) / r -
                       double(xi[j]) * t / (d * r * r * r));
        }
    }
}

/// Rotary position embedding, in place: consecutive pairs (2i, 2i+1) of each
/// row rotate by angle pos * base^(-2i/d); positions default to row indices.
template <class S>
void rope_fwd(Mat<S>& x, double base, const std::vector<int>* positions = nullptr,
              bool inverse = false) {
    const int d = x.cols;
    if (d % 2 != 0) throw ConfigError("rope: head dimension must be even");
    for (int i = 0; i < x.rows; ++i) {
        const double pos = positions ? (*positions)[i] : i;
        S* xi = x.row(i);
        for (int p = 0; p < d / 2; ++p) {
            const double theta = std::pow(base, -2.0 * p / d);
            const double ang = (inverse ? -pos : pos) * theta;
            const double c = std::cos(ang), s = std::sin(ang);
            const double a = xi[2 * p], b = xi[2 * p + 1];
            xi[2 * p] = S(c * a - s * b);
            xi[2 * p + 1] = S(s * a + c * b);
        }
    }
}

/// LoRA-composed map: y = x*W^T + (alpha/r) * (x*A^T)*B^T.
template <class S>
void linear_fwd(const Mat<S>& x, const Mat<S>& w, const Lora<S>* lora, double lora_scale,
                Mat<S>& y) {
    if (y.rows != x.rows || y.cols != w.rows) y = Mat<S>(x.rows, w.rows);
    kern::mm_nt(x, w, y, false);
    if (lora && lora->present()) {
        Mat<S> xa(x.rows, lora->a.rows);
        kern::mm_nt(x, lora->a, xa, false);
        for (auto& v : xa.d) v = S(double(v) * lora_scale);
        kern::mm_nt(xa, lora->b, y, true);
    }
}

/// Accumulating backward of linear_fwd. Null grad pointers skip that output
/// (frozen base weights during adapter-only training still need dx).
template <class S>
void linear_bwd(const Mat<S>& x, const Mat<S>& w, const Lora<S>* lora, double lora_scale,
                const Mat<S>& dy, Mat<S>* dw, Lora<S>* dlora, Mat<S>* dx) {
    if (dw) kern::mm_tn(dy, x, *dw, true);
    if (dx) kern::mm_nn(dy, w, *dx, true);
    if (lora && lora->present()) {
        // y2 = s*(x A^T) B^T  =>  dB += s*dy^T*(x A^T), dA += (s*dy*B)^T*x,
        //                         dx += (s*dy*B)*A
        Mat<S> dxa(x.rows, lora->a.rows);
        kern::mm_nn(dy, lora->b, dxa, false);
        for (auto& v : dxa.d) v = S(double(v) * lora_scale);
        if (dlora) {
            Mat<S> xa(x.rows, lora->a.rows);
            kern::mm_nt(x, lora->a, xa, false);
            for (auto& v : xa.d) v = S(double(v) * lora_scale);
            kern::mm_tn(dy, xa, dlora->b, true);
            kern::mm_tn(dxa, x, dlora->a, true);
        }
        if (dx) kern::mm_nn(dxa, lora->a, *dx, true);
    }
}

/// Causal row softmax: probabilities over columns j <= i, zero elsewhere.
template <class S>
void softmax_causal_fwd(const Mat<S>& z, Mat<S>& p) {
    if (!p.same_shape(z)) p = Mat<S>(z.rows, z.cols);
    for (int i = 0; i < z.rows; ++i) {
        const S* zi = z.row(i);
        S* pi = p.row(i);
        double m = -1e300;
        for (int j = 0; j <= i && j < z.cols; ++j) m = std::max(m, double(zi[j]));
        double sum = 0.0;
        for (int j = 0; j <= i && j < z.cols; ++j) sum += std::exp(double(zi[j]) - m);
        for (int j = 0; j < z.cols; ++j)
            pi[j] = j <= i ? S(std::exp(double(zi[j]) - m) / sum) : S(0);
    }
}

template <class S>
void softmax_causal_bwd(const Mat<S>& p, const Mat<S>& dp, Mat<S>& dz) {
    if (!dz.same_shape(p)) dz = Mat<S>(p.rows, p.cols);
    for (int i = 0; i < p.rows; ++i) {
        const S* pi = p.row(i);
        const S* dpi = dp.row(i);
        S* dzi = dz.row(i);
        double t = 0.0;
        for (int j = 0; j <= i && j < p.cols; ++j) t += double(dpi[j]) * double(pi[j]);
        for (int j = 0; j < p.cols; ++j)
            dzi[j] = j <= i ? S(double(pi[j]) * (double(dpi[j]) - t)) : S(0);
    }
}

// ---------------------------------------------------------------------------
// Step inputs
// ---------------------------------------------------------------------------

/// One autoregressive window: normalized wave, teacher/rollout history,
/// simplified-model response, and the padded story vectors.
template <class S>
struct StepInputs {
    Mat<S> wave;    // W x 1
    Mat<S> history; // W x out_channels
    Mat<S> sdr;     // W x out_channels
    std::vector<S> m_vec, k_vec;       // n_max, zero-padded
    std::vector<std::uint8_t> story_mask; // n_max

    void validate(const SrfdConfig& cfg) const {
        const int w = cfg.window, oc = cfg.out_channels();
        if (wave.rows != w || wave.cols != 1 || history.rows != w || history.cols != oc ||
            sdr.rows != w || sdr.cols != oc)
            throw ConfigError("step inputs: array shapes do not match the config");
        if (static_cast<int>(m_vec.size()) != cfg.n_max ||
            static_cast<int>(k_vec.size()) != cfg.n_max ||
            static_cast<int>(story_mask.size()) != cfg.n_max)
            throw ConfigError("step inputs: story vectors must have n_max entries");
        for (int s = 0; s < cfg.n_max; ++s)
            if (!story_mask[s] && (m_vec[s] != S(0) || k_vec[s] != S(0)))
                throw ConfigError("step inputs: padded stories must be zero");
    }
};

template <class S>
struct StepInputGrads {
    Mat<S> wave, history, sdr;
    std::vector<S> m_vec, k_vec;
};

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <class S>
struct PhysActs {
    Mat<S> x_in, xn;
    std::vector<double> rms_r;
    Mat<S> q, k, q2, k2, v;
    Mat<S> bm, bk;
    std::vector<Mat<S>> t1m, t1k; // per head, W x d_head
    std::vector<Mat<S>> zm, zk;   // per head, scaled pre-gelu scores
    std::vector<Mat<S>> pm, pk;   // per head, softmax probabilities
    Mat<S> att;                   // W x d_model, pre-output-map
};

template <class S>
struct LayerActs {
    Mat<S> x_in;
    std::vector<double> r1;
    Mat<S> n1;
    Mat<S> q, k, v;            // q/k post-RoPE
    std::vector<Mat<S>> probs; // per query head
    Mat<S> att;
    Mat<S> x_mid;
    std::vector<double> r2;
    Mat<S> n2;
    Mat<S> gate, up, hidden;
};

template <class S>
struct SrfdState {
    bool ran = false;
    Mat<S> features;
    Mat<S> x0;
    std::vector<PhysActs<S>> phys;
    std::vector<LayerActs<S>> layers;
    Mat<S> x_final;
    std::vector<double> rf;
    Mat<S> xn_final;
    Mat<S> y;
};

// ---------------------------------------------------------------------------
// Physics attention
// ---------------------------------------------------------------------------

namespace detail {

/// B = U * diag(vec) * U^T, exactly symmetric by construction (upper triangle
/// mirrored) and PSD for nonnegative vec.
template <class S>
void bilinear_kernel(const Mat<S>& u, const std::vector<S>& vec, Mat<S>& b) {
    const int dh = u.rows, n = u.cols;
    if (b.rows != dh || b.cols != dh) b = Mat<S>(dh, dh);
    for (int i = 0; i < dh; ++i)
        for (int j = i; j < dh; ++j) {
            double acc = 0.0;
            for (int k = 0; k < n; ++k)
                acc += double(u(i, k)) * double(vec[k]) * double(u(j, k));
            b(i, j) = S(acc);
            b(j, i) = b(i, j);
        }
}

/// dU += (G + G^T) * U * diag(vec); dvec_j += u_j^T * G * u_j.
template <class S>
void bilinear_kernel_bwd(const Mat<S>& u, const std::vector<S>& vec, const Mat<S>& g,
                         Mat<S>& du, std::vector<S>& dvec) {
    const int dh = u.rows, n = u.cols;
    Mat<S> sym(dh, dh);
    for (int i = 0; i < dh; ++i)
        for (int j = 0; j < dh; ++j) sym(i, j) = S(double(g(i, j)) + double(g(j, i)));
    Mat<S> tmp(dh, n);
    kern::mm_nn(sym, u, tmp, false);
    for (int i = 0; i < dh; ++i)
        for (int j = 0; j < n; ++j)
            du(i, j) = S(double(du(i, j)) + double(tmp(i, j)) * double(vec[j]));
    // dvec_j = u_j^T G u_j
    Mat<S> gu(dh, n);
    kern::mm_nn(g, u, gu, false);
    for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int i = 0; i < dh; ++i) acc += double(u(i, j)) * double(gu(i, j));
        dvec[j] = S(double(dvec[j]) + acc);
    }
}

} // namespace detail

/// Physics-conditioned attention: per head, scores_M = softmax over the
/// causal prefix of gelu((X Wq) B_M (X Wk)^T / sqrt(d_head)); the M and K
/// branch probabilities add before multiplying the shared value projection.
template <class S>
void physics_attention_fwd(const SrfdConfig& cfg, const SrfdWeights<S>& w,
                           std::type_identity_t<const LoraSet<S>*> lora, const Mat<S>& x,
                           const std::vector<S>& m_vec, const std::vector<S>& k_vec,
                           PhysActs<S>& a, Mat<S>& y) {
    const int W = x.rows, dh = cfg.d_head(), nh = cfg.n_heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    const Lora<S>* lq = nullptr;
    const Lora<S>* lk = nullptr;
    const Lora<S>* lq2 = nullptr;
    const Lora<S>* lk2 = nullptr;
    const Lora<S>* lv = nullptr;
    const Lora<S>* lo = nullptr;
    double ls = 0.0;
    if (lora && !lora->empty()) {
        ls = lora->scale();
        lq = &lora->items[0];
        lk = &lora->items[1];
        lq2 = &lora->items[2];
        lk2 = &lora->items[3];
        lv = &lora->items[4];
        lo = &lora->items[5];
    }
    linear_fwd(x, w.phys_wq, lq, ls, a.q);
    linear_fwd(x, w.phys_wk, lk, ls, a.k);
    linear_fwd(x, w.phys_wq2, lq2, ls, a.q2);
    linear_fwd(x, w.phys_wk2, lk2, ls, a.k2);
    linear_fwd(x, w.phys_wv, lv, ls, a.v);
    detail::bilinear_kernel(w.phys_um, m_vec, a.bm);
    detail::bilinear_kernel(w.phys_uk, k_vec, a.bk);

    a.t1m.assign(nh, Mat<S>(W, dh));
    a.t1k.assign(nh, Mat<S>(W, dh));
    a.zm.assign(nh, Mat<S>(W, W));
    a.zk.assign(nh, Mat<S>(W, W));
    a.pm.assign(nh, Mat<S>(W, W));
    a.pk.assign(nh, Mat<S>(W, W));
    a.att = Mat<S>(W, cfg.d_model);

    Mat<S> qh(W, dh), kh(W, dh), vh(W, dh), padd(W, W), outh(W, dh);
    for (int h = 0; h < nh; ++h) {
        kern::split_head(a.q, h, dh, qh);
        kern::split_head(a.k, h, dh, kh);
        kern::mm_nn(qh, a.bm, a.t1m[h], false);
        kern::mm_nt(a.t1m[h], kh, a.zm[h], false);
        for (auto& v : a.zm[h].d) v = S(double(v) * inv_sqrt);
        Mat<S> sg(W, W);
        for (std::size_t i = 0; i < sg.d.size(); ++i) sg.d[i] = S(gelu_exact(double(a.zm[h].d[i])));
        softmax_causal_fwd(sg, a.pm[h]);

        kern::split_head(a.q2, h, dh, qh);
        kern::split_head(a.k2, h, dh, kh);
        kern::mm_nn(qh, a.bk, a.t1k[h], false);
        kern::mm_nt(a.t1k[h], kh, a.zk[h], false);
        for (auto& v : a.zk[h].d) v = S(double(v) * inv_sqrt);
        for (std::size_t i = 0; i < sg.d.size(); ++i) sg.d[i] = S(gelu_exact(double(a.zk[h].d[i])));
        softmax_causal_fwd(sg, a.pk[h]);

        for (std::size_t i = 0; i < padd.d.size(); ++i)
            padd.d[i] = S(double(a.pm[h].d[i]) + double(a.pk[h].d[i]));
        kern::split_head(a.v, h, dh, vh);
        kern::mm_nn(padd, vh, outh, false);
        for (int i = 0; i < W; ++i)
            for (int j = 0; j < dh; ++j) a.att(i, h * dh + j) = outh(i, j);
    }
    linear_fwd(a.att, w.phys_wo, lo, ls, y);
}

template <class S>
void physics_attention_bwd(const SrfdConfig& cfg, const SrfdWeights<S>& w,
                           std::type_identity_t<const LoraSet<S>*> lora, const Mat<S>& x,
                           const std::vector<S>& m_vec, const std::vector<S>& k_vec,
                           const PhysActs<S>& a, const Mat<S>& dy, SrfdWeights<S>& dw,
                           std::type_identity_t<LoraSet<S>*> dlora, Mat<S>& dx, std::vector<S>* dm_vec,
                           std::vector<S>* dk_vec) {
    const int W = x.rows, dh = cfg.d_head(), nh = cfg.n_heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    const Lora<S>* lmaps[6] = {nullptr, nullptr, nullptr, nullptr, nullptr, nullptr};
    Lora<S>* dlmaps[6] = {nullptr, nullptr, nullptr, nullptr, nullptr, nullptr};
    double ls = 0.0;
    if (lora && !lora->empty()) {
        ls = lora->scale();
        for (int i = 0; i < 6; ++i) lmaps[i] = &lora->items[i];
        if (dlora)
            for (int i = 0; i < 6; ++i) dlmaps[i] = &dlora->items[i];
    }

    Mat<S> datt(W, cfg.d_model);
    linear_bwd(a.att, w.phys_wo, lmaps[5], ls, dy, &dw.phys_wo, dlmaps[5], &datt);

    Mat<S> dq(W, cfg.d_model), dk(W, cfg.d_model), dq2(W, cfg.d_model), dk2(W, cfg.d_model),
        dv(W, cfg.d_model);
    Mat<S> dbm(dh, dh), dbk(dh, dh);
    Mat<S> qh(W, dh), kh(W, dh), vh(W, dh), datt_h(W, dh);
    Mat<S> padd(W, W), dpadd(W, W), ds(W, W), dz(W, W), dt1(W, dh), dkh(W, dh), dqh(W, dh),
        dvh(W, dh);

    for (int h = 0; h < nh; ++h) {
        kern::split_head(datt, h, dh, datt_h);
        for (std::size_t i = 0; i < padd.d.size(); ++i)
            padd.d[i] = S(double(a.pm[h].d[i]) + double(a.pk[h].d[i]));
        kern::split_head(a.v, h, dh, vh);
        kern::mm_nt(datt_h, vh, dpadd, false);
        dvh.zero();
        kern::mm_tn(padd, datt_h, dvh, true);
        kern::merge_head_add(dvh, h, dh, dv);

        // branch M
        softmax_causal_bwd(a.pm[h], dpadd, ds);
        for (std::size_t i = 0; i < ds.d.size(); ++i)
            dz.d[i] = S(double(ds.d[i]) * gelu_grad(double(a.zm[h].d[i])));
        kern::split_head(a.q, h, dh, qh);
        kern::split_head(a.k, h, dh, kh);
        // z = (t1 * kh^T) * inv_sqrt
        dt1.zero();
        kern::mm_nn(dz, kh, dt1, true);
        for (auto& v : dt1.d) v = S(double(v) * inv_sqrt);
        dkh.zero();
        kern::mm_tn(dz, a.t1m[h], dkh, true);
        for (auto& v : dkh.d) v = S(double(v) * inv_sqrt);
        kern::merge_head_add(dkh, h, dh, dk);
        // t1 = qh * bm
        dqh.zero();
        kern::mm_nt(dt1, a.bm, dqh, true);
        kern::merge_head_add(dqh, h, dh, dq);
        kern::mm_tn(qh, dt1, dbm, true);

        // branch K
        softmax_causal_bwd(a.pk[h], dpadd, ds);
        for (std::size_t i = 0; i < ds.d.size(); ++i)
            dz.d[i] = S(double(ds.d[i]) * gelu_grad(double(a.zk[h].d[i])));
        kern::split_head(a.q2, h, dh, qh);
        kern::split_head(a.k2, h, dh, kh);
        dt1.zero();
        kern::mm_nn(dz, kh, dt1, true);
        for (auto& v : dt1.d) v = S(double(v) * inv_sqrt);
        dkh.zero();
        kern::mm_tn(dz, a.t1k[h], dkh, true);
        for (auto& v : dkh.d) v = S(double(v) * inv_sqrt);
        kern::merge_head_add(dkh, h, dh, dk2);
        dqh.zero();
        kern::mm_nt(dt1, a.bk, dqh, true);
        kern::merge_head_add(dqh, h, dh, dq2);
        kern::mm_tn(qh, dt1, dbk, true);
    }

    std::vector<S> dm_local(cfg.n_max, S(0)), dk_local(cfg.n_max, S(0));
    detail::bilinear_kernel_bwd(w.phys_um, m_vec, dbm, dw.phys_um, dm_local);
    detail::bilinear_kernel_bwd(w.phys_uk, k_vec, dbk, dw.phys_uk, dk_local);
    if (dm_vec)
        for (int j = 0; j < cfg.n_max; ++j)
            (*dm_vec)[j] = S(double((*dm_vec)[j]) + double(dm_local[j]));
    if (dk_vec)
        for (int j = 0; j < cfg.n_max; ++j)
            (*dk_vec)[j] = S(double((*dk_vec)[j]) + double(dk_local[j]));

    linear_bwd(x, w.phys_wq, lmaps[0], ls, dq, &dw.phys_wq, dlmaps[0], &dx);
    linear_bwd(x, w.phys_wk, lmaps[1], ls, dk, &dw.phys_wk, dlmaps[1], &dx);
    linear_bwd(x, w.phys_wq2, lmaps[2], ls, dq2, &dw.phys_wq2, dlmaps[2], &dx);
    linear_bwd(x, w.phys_wk2, lmaps[3], ls, dk2, &dw.phys_wk2, dlmaps[3], &dx);
    linear_bwd(x, w.phys_wv, lmaps[4], ls, dv, &dw.phys_wv, dlmaps[4], &dx);
}

// ---------------------------------------------------------------------------
// Grouped-query attention
// ---------------------------------------------------------------------------

template <class S>
void gqa_attention_fwd(const SrfdConfig& cfg, const SrfdLayerWeights<S>& lw,
                       const Lora<S>* lora_maps[4], double ls, const Mat<S>& x,
                       LayerActs<S>& a, Mat<S>& y) {
    const int W = x.rows, dh = cfg.d_head(), nh = cfg.n_heads, hpg = cfg.heads_per_group();
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    linear_fwd(x, lw.att_wq, lora_maps[0], ls, a.q);
    linear_fwd(x, lw.att_wk, lora_maps[1], ls, a.k);
    linear_fwd(x, lw.att_wv, lora_maps[2], ls, a.v);
    // RoPE on queries and keys, per head/group, positions = window indices
    for (int h = 0; h < nh; ++h) {
        Mat<S> tmp(W, dh);
        kern::split_head(a.q, h, dh, tmp);
        rope_fwd(tmp, cfg.rope_base);
        for (int i = 0; i < W; ++i)
            for (int j = 0; j < dh; ++j) a.q(i, h * dh + j) = tmp(i, j);
    }
    for (int g = 0; g < cfg.n_kv_groups; ++g) {
        Mat<S> tmp(W, dh);
        kern::split_head(a.k, g, dh, tmp);
        rope_fwd(tmp, cfg.rope_base);
        for (int i = 0; i < W; ++i)
            for (int j = 0; j < dh; ++j) a.k(i, g * dh + j) = tmp(i, j);
    }

    a.probs.assign(nh, Mat<S>(W, W));
    a.att = Mat<S>(W, cfg.d_model);
    Mat<S> qh(W, dh), kg(W, dh), vg(W, dh), z(W, W), outh(W, dh);
    for (int h = 0; h < nh; ++h) {
        const int g = h / hpg;
        kern::split_head(a.q, h, dh, qh);
        kern::split_head(a.k, g, dh, kg);
        kern::mm_nt(qh, kg, z, false);
        for (auto& v : z.d) v = S(double(v) * inv_sqrt);
        softmax_causal_fwd(z, a.probs[h]);
        kern::split_head(a.v, g, dh, vg);
        kern::mm_nn(a.probs[h], vg, outh, false);
        for (int i = 0; i < W; ++i)
            for (int j = 0; j < dh; ++j) a.att(i, h * dh + j) = outh(i, j);
    }
    linear_fwd(a.att, lw.att_wo, lora_maps[3], ls, y);
}

template <class S>
void gqa_attention_bwd(const SrfdConfig& cfg, const SrfdLayerWeights<S>& lw,
                       const Lora<S>* lora_maps[4], Lora<S>* dlora_maps[4], double ls,
                       const Mat<S>& x, const LayerActs<S>& a, const Mat<S>& dy,
                       SrfdLayerWeights<S>& dlw, Mat<S>& dx) {
    const int W = x.rows, dh = cfg.d_head(), nh = cfg.n_heads, hpg = cfg.heads_per_group();
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    Mat<S> datt(W, cfg.d_model);
    linear_bwd(a.att, lw.att_wo, lora_maps[3], ls, dy, &dlw.att_wo, dlora_maps[3], &datt);

    Mat<S> dq(W, cfg.d_model), dk(W, cfg.kv_dim()), dv(W, cfg.kv_dim());
    Mat<S> qh(W, dh), kg(W, dh), vg(W, dh), datt_h(W, dh), dprob(W, W), dz(W, W), dqh(W, dh),
        dkg(W, dh), dvg(W, dh);
    for (int h = 0; h < nh; ++h) {
        const int g = h / hpg;
        kern::split_head(datt, h, dh, datt_h);
        kern::split_head(a.v, g, dh, vg);
        kern::mm_nt(datt_h, vg, dprob, false);
        dvg.zero();
        kern::mm_tn(a.probs[h], datt_h, dvg, true);
        kern::merge_head_add(dvg, g, dh, dv);

        softmax_causal_bwd(a.probs[h], dprob, dz);
        kern::split_head(a.q, h, dh, qh);
        kern::split_head(a.k, g, dh, kg);
        dqh.zero();
        kern::mm_nn(dz, kg, dqh, true);
        for (auto& v : dqh.d) v = S(double(v) * inv_sqrt);
        kern::merge_head_add(dqh, h, dh, dq);
        dkg.zero();
        kern::mm_tn(dz, qh, dkg, true);
        for (auto& v : dkg.d) v = S(double(v) * inv_sqrt);
        kern::merge_head_add(dkg, g, dh, dk);
    }

    // rotate gradients back through RoPE
    for (int h = 0; h < nh; ++h) {
        Mat<S> tmp(W, dh);
        kern::split_head(dq, h, dh, tmp);
        rope_fwd(tmp, cfg.rope_base, nullptr, /*inverse=*/true);
        for (int i = 0; i < W; ++i)
            for (int j = 0; j < dh; ++j) dq(i, h * dh + j) = tmp(i, j);
    }
    for (int g = 0; g < cfg.n_kv_groups; ++g) {
        Mat<S> tmp(W, dh);
        kern::split_head(dk, g, dh, tmp);
        rope_fwd(tmp, cfg.rope_base, nullptr, /*inverse=*/true);
        for (int i = 0; i < W; ++i)
            for (int j = 0; j < dh; ++j) dk(i, g * dh + j) = tmp(i, j);
    }

    linear_bwd(x, lw.att_wq, lora_maps[0], ls, dq, &dlw.att_wq, dlora_maps[0], &dx);
    linear_bwd(x, lw.att_wk, lora_maps[1], ls, dk, &dlw.att_wk, dlora_maps[1], &dx);
    linear_bwd(x, lw.att_wv, lora_maps[2], ls, dv, &dlw.att_wv, dlora_maps[2], &dx);
}

// ---------------------------------------------------------------------------
// SwiGLU feed-forward
// ---------------------------------------------------------------------------

template <class S>
void swiglu_ffn_fwd(const SrfdLayerWeights<S>& lw, const Mat<S>& x, LayerActs<S>& a, Mat<S>& y) {
    linear_fwd(x, lw.ffn_gate, static_cast<const Lora<S>*>(nullptr), 0.0, a.gate);
    linear_fwd(x, lw.ffn_up, static_cast<const Lora<S>*>(nullptr), 0.0, a.up);
    if (!a.hidden.same_shape(a.gate)) a.hidden = Mat<S>(a.gate.rows, a.gate.cols);
    for (std::size_t i = 0; i < a.gate.d.size(); ++i)
        a.hidden.d[i] = S(silu(double(a.gate.d[i])) * double(a.up.d[i]));
    linear_fwd(a.hidden, lw.ffn_down, static_cast<const Lora<S>*>(nullptr), 0.0, y);
}

template <class S>
void swiglu_ffn_bwd(const SrfdLayerWeights<S>& lw, const Mat<S>& x, const LayerActs<S>& a,
                    const Mat<S>& dy, SrfdLayerWeights<S>& dlw, Mat<S>& dx) {
    Mat<S> dhidden(a.hidden.rows, a.hidden.cols);
    linear_bwd(a.hidden, lw.ffn_down, static_cast<const Lora<S>*>(nullptr), 0.0, dy,
               &dlw.ffn_down, static_cast<Lora<S>*>(nullptr), &dhidden);
    Mat<S> dgate(a.gate.rows, a.gate.cols), dup(a.up.rows, a.up.cols);
    for (std::size_t i = 0; i < dhidden.d.size(); ++i) {
        const double g = a.gate.d[i];
        dup.d[i] = S(double(dhidden.d[i]) * silu(g));
        dgate.d[i] = S(double(dhidden.d[i]) * double(a.up.d[i]) * silu_grad(g));
    }
    linear_bwd(x, lw.ffn_gate, static_cast<const Lora<S>*>(nullptr), 0.0, dgate, &dlw.ffn_gate,
               static_cast<Lora<S>*>(nullptr), &dx);
    linear_bwd(x, lw.ffn_up, static_cast<const Lora<S>*>(nullptr), 0.0, dup, &dlw.ffn_up,
               static_cast<Lora<S>*>(nullptr), &dx);
}

// ---------------------------------------------------------------------------
// Full decoder forward / backward
// ---------------------------------------------------------------------------

namespace detail {

template <class S>
void assemble_features(const SrfdConfig& cfg, const StepInputs<S>& in, Mat<S>& f) {
    const int W = cfg.window, oc = cfg.out_channels();
    if (f.rows != W || f.cols != cfg.in_features()) f = Mat<S>(W, cfg.in_features());
    for (int i = 0; i < W; ++i) {
        S* fi = f.row(i);
        fi[0] = in.wave(i, 0);
        for (int c = 0; c < oc; ++c) fi[1 + c] = in.history(i, c);
        for (int c = 0; c < oc; ++c) fi[1 + oc + c] = in.sdr(i, c);
    }
}

template <class S>
void mask_outputs(const SrfdConfig& cfg, const std::vector<std::uint8_t>& story_mask, Mat<S>& y) {
    for (int s = 0; s < cfg.n_max; ++s) {
        if (story_mask[s]) continue;
        for (int i = 0; i < y.rows; ++i) {
            y(i, s) = S(0);
            y(i, cfg.n_max + s) = S(0);
        }
    }
}

template <class S>
const Lora<S>* layer_lora(const LoraSet<S>* lora, int layer, int map) {
    if (!lora || lora->empty()) return nullptr;
    return &lora->items[6 + 4 * layer + map];
}

template <class S>
Lora<S>* layer_lora_mut(LoraSet<S>* lora, int layer, int map) {
    if (!lora || lora->empty()) return nullptr;
    return &lora->items[6 + 4 * layer + map];
}

} // namespace detail

/// Full decoder pass; every intermediate needed by srfd_backward is retained
/// in `st`. Outputs for masked stories are zeroed.
template <class S>
void srfd_forward(const SrfdConfig& cfg, const SrfdWeights<S>& w,
                  std::type_identity_t<const LoraSet<S>*> lora, const StepInputs<S>& in,
                  SrfdState<S>& st) {
    cfg.validate();
    in.validate(cfg);
    const int W = cfg.window;

    detail::assemble_features(cfg, in, st.features);
    linear_fwd(st.features, w.embed, static_cast<const Lora<S>*>(nullptr), 0.0, st.x0);

    const int n_phys = cfg.physics_per_layer ? cfg.n_layers : 1;
    st.phys.resize(n_phys);
    st.layers.resize(cfg.n_layers);

    Mat<S> x = st.x0;
    auto run_phys = [&](int slot) {
        PhysActs<S>& pa = st.phys[slot];
        pa.x_in = x;
        rms_norm_fwd(pa.x_in, w.phys_rms_gain, cfg.rms_eps, pa.xn, &pa.rms_r);
        Mat<S> y(W, cfg.d_model);
        physics_attention_fwd(cfg, w, lora, pa.xn, in.m_vec, in.k_vec, pa, y);
        kern::add_inplace(x, y);
    };

    if (!cfg.physics_per_layer) run_phys(0);
    for (int l = 0; l < cfg.n_layers; ++l) {
        if (cfg.physics_per_layer) run_phys(l);
        LayerActs<S>& la = st.layers[l];
        la.x_in = x;
        rms_norm_fwd(la.x_in, w.layers[l].rms1_gain, cfg.rms_eps, la.n1, &la.r1);
        const Lora<S>* lmaps[4] = {detail::layer_lora(lora, l, 0), detail::layer_lora(lora, l, 1),
                                   detail::layer_lora(lora, l, 2), detail::layer_lora(lora, l, 3)};
        const double ls = (lora && !lora->empty()) ? lora->scale() : 0.0;
        Mat<S> att_y(W, cfg.d_model);
        gqa_attention_fwd(cfg, w.layers[l], lmaps, ls, la.n1, la, att_y);
        kern::add_inplace(x, att_y);
        la.x_mid = x;
        rms_norm_fwd(la.x_mid, w.layers[l].rms2_gain, cfg.rms_eps, la.n2, &la.r2);
        Mat<S> ffn_y(W, cfg.d_model);
        swiglu_ffn_fwd(w.layers[l], la.n2, la, ffn_y);
        kern::add_inplace(x, ffn_y);
    }

    st.x_final = x;
    rms_norm_fwd(st.x_final, w.final_rms_gain, cfg.rms_eps, st.xn_final, &st.rf);
    linear_fwd(st.xn_final, w.head, static_cast<const Lora<S>*>(nullptr), 0.0, st.y);
    detail::mask_outputs(cfg, in.story_mask, st.y);
    st.ran = true;
}

/// Exact reverse-mode gradients of every weight (and optionally the inputs
/// and LoRA adapters) for the retained forward pass.
template <class S>
void srfd_backward(const SrfdConfig& cfg, const SrfdWeights<S>& w,
                   std::type_identity_t<const LoraSet<S>*> lora, const StepInputs<S>& in,
                   const SrfdState<S>& st, const Mat<S>& dy_in, SrfdWeights<S>& dw,
                   std::type_identity_t<LoraSet<S>*> dlora,
                   std::type_identity_t<StepInputGrads<S>*> din) {
    if (!st.ran) throw UsageError("srfd_backward: no retained forward pass");
    const int W = cfg.window;

    Mat<S> dy = dy_in;
    detail::mask_outputs(cfg, in.story_mask, dy); // dead outputs carry no gradient

    Mat<S> dxn_final(W, cfg.d_model);
    linear_bwd(st.xn_final, w.head, static_cast<const Lora<S>*>(nullptr), 0.0, dy, &dw.head,
               static_cast<Lora<S>*>(nullptr), &dxn_final);
    Mat<S> dx(W, cfg.d_model);
    rms_norm_bwd(st.x_final, w.final_rms_gain, st.rf, dxn_final, dw.final_rms_gain, dx);

    std::vector<S> dm_vec(cfg.n_max, S(0)), dk_vec(cfg.n_max, S(0));

    auto bwd_phys = [&](int slot) {
        const PhysActs<S>& pa = st.phys[slot];
        // x_out = x_in + PA(rms(x_in)): dx flows through both paths
        Mat<S> dxn(W, cfg.d_model);
        physics_attention_bwd(cfg, w, lora, pa.xn, in.m_vec, in.k_vec, pa, dx, dw, dlora, dxn,
                              &dm_vec, &dk_vec);
        // note: physics_attention_bwd accumulated into dxn (the normed input)
        rms_norm_bwd(pa.x_in, w.phys_rms_gain, pa.rms_r, dxn, dw.phys_rms_gain, dx);
    };

    for (int l = cfg.n_layers - 1; l >= 0; --l) {
        const LayerActs<S>& la = st.layers[l];
        const Lora<S>* lmaps[4] = {detail::layer_lora(lora, l, 0), detail::layer_lora(lora, l, 1),
                                   detail::layer_lora(lora, l, 2), detail::layer_lora(lora, l, 3)};
        Lora<S>* dlmaps[4] = {detail::layer_lora_mut(dlora, l, 0),
                              detail::layer_lora_mut(dlora, l, 1),
                              detail::layer_lora_mut(dlora, l, 2),
                              detail::layer_lora_mut(dlora, l, 3)};
        const double ls = (lora && !lora->empty()) ? lora->scale() : 0.0;

        // FFN sub-block: x_out = x_mid + FFN(rms2(x_mid))
        Mat<S> dn2(W, cfg.d_model);
        swiglu_ffn_bwd(w.layers[l], la.n2, la, dx, dw.layers[l], dn2);
        rms_norm_bwd(la.x_mid, w.layers[l].rms2_gain, la.r2, dn2, dw.layers[l].rms2_gain, dx);

        // attention sub-block: x_mid = x_in + GQA(rms1(x_in))
        Mat<S> dn1(W, cfg.d_model);
        gqa_attention_bwd(cfg, w.layers[l], lmaps, dlmaps, ls, la.n1, la, dx, dw.layers[l], dn1);
        rms_norm_bwd(la.x_in, w.layers[l].rms1_gain, la.r1, dn1, dw.layers[l].rms1_gain, dx);

        if (cfg.physics_per_layer) bwd_phys(l);
    }
    if (!cfg.physics_per_layer) bwd_phys(0);

    // embedding
    Mat<S> dfeat(W, cfg.in_features());
    linear_bwd(st.features, w.embed, static_cast<const Lora<S>*>(nullptr), 0.0, dx, &dw.embed,
               static_cast<Lora<S>*>(nullptr), &dfeat);

    if (din) {
        const int oc = cfg.out_channels();
        din->wave = Mat<S>(W, 1);
        din->history = Mat<S>(W, oc);
        din->sdr = Mat<S>(W, oc);
        for (int i = 0; i < W; ++i) {
            const S* fi = dfeat.row(i);
            din->wave(i, 0) = fi[0];
            for (int c = 0; c < oc; ++c) din->history(i, c) = fi[1 + c];
            for (int c = 0; c < oc; ++c) din->sdr(i, c) = fi[1 + oc + c];
        }
        din->m_vec = dm_vec;
        din->k_vec = dk_vec;
    }
}

/// The standalone adapter composition (effective(x) = base(x) + (alpha/r)BAx),
/// exposed for the adapter contract tests.
template <class S>
void lora_apply(const Mat<S>& base, const Lora<S>& adapter, double alpha, int rank,
                const Mat<S>& x, Mat<S>& y) {
    if (adapter.a.rows != rank || adapter.a.cols != base.cols || adapter.b.rows != base.rows ||
        adapter.b.cols != rank)
        throw ConfigError("lora_apply: adapter rank/shape mismatch");
    linear_fwd(x, base, &adapter, alpha / rank, y);
}

} // namespace seisforge::srfd
