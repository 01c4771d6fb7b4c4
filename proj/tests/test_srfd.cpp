#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "seisforge/linalg.hpp"
#include "seisforge/srfd.hpp"

using namespace seisforge;
using namespace seisforge::srfd;

namespace {

SrfdConfig tiny_config() {
    SrfdConfig c;
    c.d_model = 8;
    c.window = 8;
    c.n_layers = 1;
    c.n_heads = 2;
    c.n_kv_groups = 1;
    c.ffn_mult = 2.0;
    c.n_max = 3;
    c.rope_base = 10000.0;
    return c;
}

template <class S>
StepInputs<S> random_inputs(const SrfdConfig& cfg, std::uint64_t seed, int masked_stories = 1) {
    StepInputs<S> in;
    SplitMix64 rng(seed);
    in.wave = Mat<S>(cfg.window, 1);
    in.history = Mat<S>(cfg.window, cfg.out_channels());
    in.sdr = Mat<S>(cfg.window, cfg.out_channels());
    for (auto& v : in.wave.d) v = S(rng.normal());
    in.m_vec.assign(cfg.n_max, S(0));
    in.k_vec.assign(cfg.n_max, S(0));
    in.story_mask.assign(cfg.n_max, 0);
    const int active = cfg.n_max - masked_stories;
    for (int s = 0; s < active; ++s) {
        in.story_mask[s] = 1;
        in.m_vec[s] = S(rng.uniform(0.1, 1.0));
        in.k_vec[s] = S(rng.uniform(0.1, 1.0));
    }
    for (int i = 0; i < cfg.window; ++i)
        for (int c = 0; c < cfg.out_channels(); ++c) {
            const int story = c % cfg.n_max;
            if (in.story_mask[story]) {
                in.history(i, c) = S(rng.normal());
                in.sdr(i, c) = S(rng.normal());
            }
        }
    return in;
}

// scalar loss L = sum c_ij y_ij with fixed random coefficients
template <class S>
double linear_loss(const Mat<S>& y, const Mat<S>& coeff) {
    double acc = 0.0;
    for (std::size_t i = 0; i < y.d.size(); ++i) acc += double(y.d[i]) * double(coeff.d[i]);
    return acc;
}

} // namespace

TEST_CASE("rms_norm substitution example") {
    Mat<double> x(1, 2), gain(1, 2), y;
    x(0, 0) = 3.0;
    x(0, 1) = 4.0;
    gain.d = {1.0, 1.0};
    rms_norm_fwd(x, gain, 0.0, y); // eps -> 0 for the closed-form value
    CHECK(y(0, 0) == doctest::Approx(0.848528).epsilon(1e-6));
    CHECK(y(0, 1) == doctest::Approx(1.131371).epsilon(1e-6));

    Mat<double> zeros(1, 2), yz;
    zeros.zero();
    rms_norm_fwd(zeros, gain, 1e-6, yz);
    CHECK(yz(0, 0) == 0.0);
    CHECK(yz(0, 1) == 0.0);
}

TEST_CASE("rms_norm output has unit RMS for unit gain") {
    SplitMix64 rng(2);
    Mat<float> x(4, 16), gain(1, 16), y;
    for (auto& v : x.d) v = float(rng.normal(0.0, 3.0));
    for (auto& v : gain.d) v = 1.0f;
    rms_norm_fwd(x, gain, 1e-6, y);
    for (int i = 0; i < y.rows; ++i) {
        double ss = 0.0;
        for (int j = 0; j < y.cols; ++j) ss += double(y(i, j)) * double(y(i, j));
        CHECK(std::sqrt(ss / y.cols) == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("rope preserves pair norms and position zero") {
    SplitMix64 rng(3);
    Mat<double> x(6, 8);
    for (auto& v : x.d) v = rng.normal();
    Mat<double> orig = x;
    rope_fwd(x, 10000.0);
    for (int j = 0; j < 8; ++j) CHECK(x(0, j) == orig(0, j));
    for (int i = 0; i < 6; ++i)
        for (int p = 0; p < 4; ++p) {
            const double n0 = std::hypot(orig(i, 2 * p), orig(i, 2 * p + 1));
            const double n1 = std::hypot(x(i, 2 * p), x(i, 2 * p + 1));
            CHECK(n1 == doctest::Approx(n0).epsilon(1e-6));
        }
    rope_fwd(x, 10000.0, nullptr, true); // inverse restores the input
    for (std::size_t i = 0; i < x.d.size(); ++i)
        CHECK(x.d[i] == doctest::Approx(orig.d[i]).epsilon(1e-12));
}

TEST_CASE("rope dot products depend only on the position offset") {
    SplitMix64 rng(4);
    Mat<double> q1(1, 8), k1(1, 8);
    for (auto& v : q1.d) v = rng.normal();
    for (auto& v : k1.d) v = rng.normal();
    for (int offset : {1, 3, 5}) {
        double ref = 0.0;
        bool first = true;
        for (int p : {0, 2, 7}) {
            Mat<double> q = q1, k = k1;
            std::vector<int> pos_q = {p + offset}, pos_k = {p};
            rope_fwd(q, 10000.0, &pos_q);
            rope_fwd(k, 10000.0, &pos_k);
            double dot = 0.0;
            for (int j = 0; j < 8; ++j) dot += q(0, j) * k(0, j);
            if (first) {
                ref = dot;
                first = false;
            } else {
                CHECK(dot == doctest::Approx(ref).epsilon(1e-10));
            }
        }
    }
}

TEST_CASE("physics attention: tied M/K branches double the probabilities") {
    SrfdConfig cfg = tiny_config();
    auto w = init_weights<double>(cfg, 11);
    w.phys_wq2 = w.phys_wq;
    w.phys_wk2 = w.phys_wk;
    w.phys_uk = w.phys_um;
    auto in = random_inputs<double>(cfg, 12, 0);
    in.k_vec = in.m_vec;

    Mat<double> x(cfg.window, cfg.d_model);
    SplitMix64 rng(13);
    for (auto& v : x.d) v = rng.normal();
    PhysActs<double> acts;
    Mat<double> y;
    physics_attention_fwd(cfg, w, nullptr, x, in.m_vec, in.k_vec, acts, y);
    for (int h = 0; h < cfg.n_heads; ++h)
        for (std::size_t i = 0; i < acts.pm[h].d.size(); ++i)
            CHECK(acts.pm[h].d[i] == acts.pk[h].d[i]); // attn = 2 * attn_M
}

TEST_CASE("physics attention on zero input is zero with uniform rows") {
    SrfdConfig cfg = tiny_config();
    auto w = init_weights<double>(cfg, 21);
    auto in = random_inputs<double>(cfg, 22, 0);
    Mat<double> x(cfg.window, cfg.d_model); // zeros
    PhysActs<double> acts;
    Mat<double> y;
    physics_attention_fwd(cfg, w, nullptr, x, in.m_vec, in.k_vec, acts, y);
    for (double v : y.d) CHECK(v == 0.0);
    for (int h = 0; h < cfg.n_heads; ++h)
        for (int i = 0; i < cfg.window; ++i)
            for (int j = 0; j <= i; ++j)
                CHECK(acts.pm[h](i, j) == doctest::Approx(1.0 / (i + 1)).epsilon(1e-12));
}

TEST_CASE("attention probability rows sum to one (physics and GQA)") {
    SrfdConfig cfg = tiny_config();
    cfg.window = 12;
    auto w = init_weights<float>(cfg, 31);
    auto in = random_inputs<float>(cfg, 32);
    SrfdState<float> st;
    srfd_forward(cfg, w, nullptr, in, st);
    for (const auto& pa : st.phys)
        for (int h = 0; h < cfg.n_heads; ++h)
            for (int i = 0; i < cfg.window; ++i) {
                double sm = 0.0, sk = 0.0;
                for (int j = 0; j < cfg.window; ++j) {
                    sm += double(pa.pm[h](i, j));
                    sk += double(pa.pk[h](i, j));
                }
                CHECK(std::abs(sm - 1.0) < 1e-5);
                CHECK(std::abs(sk - 1.0) < 1e-5);
            }
    for (const auto& la : st.layers)
        for (int h = 0; h < cfg.n_heads; ++h)
            for (int i = 0; i < cfg.window; ++i) {
                double s = 0.0;
                for (int j = 0; j < cfg.window; ++j) s += double(la.probs[h](i, j));
                CHECK(std::abs(s - 1.0) < 1e-5);
            }
}

TEST_CASE("physics kernels are symmetric and PSD for nonnegative stories") {
    SplitMix64 rng(41);
    for (int trial = 0; trial < 20; ++trial) {
        const int dh = 4, n = 6; // n >= dh so the kernel is generically PD
        Mat<double> u(dh, n);
        std::vector<double> m(n);
        for (auto& v : u.d) v = rng.normal();
        for (auto& v : m) v = rng.uniform(0.0, 2.0);
        Mat<double> b;
        detail::bilinear_kernel(u, m, b);
        for (int i = 0; i < dh; ++i)
            for (int j = 0; j < dh; ++j) CHECK(b(i, j) == b(j, i)); // exact symmetry
        std::vector<double> a(b.d.begin(), b.d.end());
        CHECK_NOTHROW(solve_spd_dense(a, Vec(dh, 1.0))); // Cholesky succeeds
    }
}

TEST_CASE("GQA with one group per head reproduces vanilla MHA bitwise") {
    SrfdConfig cfg = tiny_config();
    cfg.n_kv_groups = cfg.n_heads; // degeneracy
    auto w = init_weights<float>(cfg, 51);
    Mat<float> x(cfg.window, cfg.d_model);
    SplitMix64 rng(52);
    for (auto& v : x.d) v = float(rng.normal());

    LayerActs<float> acts;
    Mat<float> y;
    const Lora<float>* no_lora[4] = {nullptr, nullptr, nullptr, nullptr};
    gqa_attention_fwd(cfg, w.layers[0], no_lora, 0.0, x, acts, y);

    // vanilla multi-head attention: per-head q/k/v with no grouping concept
    const int dh = cfg.d_head(), W = cfg.window;
    Mat<float> q, k, v;
    linear_fwd(x, w.layers[0].att_wq, static_cast<const Lora<float>*>(nullptr), 0.0, q);
    linear_fwd(x, w.layers[0].att_wk, static_cast<const Lora<float>*>(nullptr), 0.0, k);
    linear_fwd(x, w.layers[0].att_wv, static_cast<const Lora<float>*>(nullptr), 0.0, v);
    Mat<float> att(W, cfg.d_model);
    for (int h = 0; h < cfg.n_heads; ++h) {
        Mat<float> qh(W, dh), kh(W, dh), vh(W, dh), z(W, W), p(W, W), outh(W, dh);
        kern::split_head(q, h, dh, qh);
        kern::split_head(k, h, dh, kh);
        kern::split_head(v, h, dh, vh);
        rope_fwd(qh, cfg.rope_base);
        rope_fwd(kh, cfg.rope_base);
        kern::mm_nt(qh, kh, z, false);
        for (auto& s : z.d) s = float(double(s) / std::sqrt(double(dh)));
        softmax_causal_fwd(z, p);
        kern::mm_nn(p, vh, outh, false);
        for (int i = 0; i < W; ++i)
            for (int j = 0; j < dh; ++j) att(i, h * dh + j) = outh(i, j);
    }
    Mat<float> y_ref;
    linear_fwd(att, w.layers[0].att_wo, static_cast<const Lora<float>*>(nullptr), 0.0, y_ref);

    REQUIRE(y.d.size() == y_ref.d.size());
    for (std::size_t i = 0; i < y.d.size(); ++i) CHECK(y.d[i] == y_ref.d[i]); // bitwise
}

TEST_CASE("GQA on a single token returns its value projection") {
    SrfdConfig cfg = tiny_config();
    auto w = init_weights<float>(cfg, 61);
    Mat<float> x(1, cfg.d_model);
    SplitMix64 rng(62);
    for (auto& v : x.d) v = float(rng.normal());
    LayerActs<float> acts;
    Mat<float> y;
    const Lora<float>* no_lora[4] = {nullptr, nullptr, nullptr, nullptr};
    gqa_attention_fwd(cfg, w.layers[0], no_lora, 0.0, x, acts, y);

    Mat<float> v, expect;
    linear_fwd(x, w.layers[0].att_wv, static_cast<const Lora<float>*>(nullptr), 0.0, v);
    Mat<float> att(1, cfg.d_model);
    const int dh = cfg.d_head();
    for (int h = 0; h < cfg.n_heads; ++h) {
        const int g = h / cfg.heads_per_group();
        for (int j = 0; j < dh; ++j) att(0, h * dh + j) = v(0, g * dh + j);
    }
    linear_fwd(att, w.layers[0].att_wo, static_cast<const Lora<float>*>(nullptr), 0.0, expect);
    for (std::size_t i = 0; i < y.d.size(); ++i)
        CHECK(y.d[i] == doctest::Approx(expect.d[i]).epsilon(1e-6));
}

TEST_CASE("silu values") {
    CHECK(silu(0.0) == 0.0);
    CHECK(silu(1.0) == doctest::Approx(0.731059).epsilon(1e-6));
}

TEST_CASE("swiglu with zero gate map is identically zero") {
    SrfdConfig cfg = tiny_config();
    auto w = init_weights<float>(cfg, 71);
    w.layers[0].ffn_gate.zero();
    Mat<float> x(cfg.window, cfg.d_model);
    SplitMix64 rng(72);
    for (auto& v : x.d) v = float(rng.normal());
    LayerActs<float> acts;
    Mat<float> y;
    swiglu_ffn_fwd(w.layers[0], x, acts, y);
    for (float v : y.d) CHECK(v == 0.0f);
}

TEST_CASE("forward shape contract and determinism") {
    SrfdConfig cfg = tiny_config();
    auto w = init_weights<float>(cfg, 81);
    auto in = random_inputs<float>(cfg, 82);
    SrfdState<float> st1, st2;
    srfd_forward(cfg, w, nullptr, in, st1);
    srfd_forward(cfg, w, nullptr, in, st2);
    CHECK(st1.y.rows == cfg.window);
    CHECK(st1.y.cols == cfg.out_channels());
    CHECK(st1.y.d == st2.y.d); // bitwise determinism
}

TEST_CASE("masked story outputs are zero") {
    SrfdConfig cfg = tiny_config();
    auto w = init_weights<float>(cfg, 91);
    auto in = random_inputs<float>(cfg, 92, 1); // story 2 masked
    SrfdState<float> st;
    srfd_forward(cfg, w, nullptr, in, st);
    for (int i = 0; i < cfg.window; ++i) {
        CHECK(st.y(i, 2) == 0.0f);
        CHECK(st.y(i, cfg.n_max + 2) == 0.0f);
    }
}

TEST_CASE("causality: perturbing an input timestep leaves earlier outputs bit-identical") {
    SrfdConfig cfg = tiny_config();
    cfg.n_layers = 2;
    auto w = init_weights<float>(cfg, 101);
    auto base_in = random_inputs<float>(cfg, 102);
    SrfdState<float> st0;
    srfd_forward(cfg, w, nullptr, base_in, st0);

    for (int t0 : {1, 3, 6}) {
        auto in = base_in;
        in.wave(t0, 0) = in.wave(t0, 0) + 2.5f;
        in.history(t0, 0) = in.history(t0, 0) - 1.5f;
        in.sdr(t0, 1) = in.sdr(t0, 1) + 0.75f;
        SrfdState<float> st;
        srfd_forward(cfg, w, nullptr, in, st);
        bool later_changed = false;
        for (int i = 0; i < cfg.window; ++i)
            for (int c = 0; c < cfg.out_channels(); ++c) {
                if (i < t0) {
                    CHECK(st.y(i, c) == st0.y(i, c)); // exact
                } else if (st.y(i, c) != st0.y(i, c)) {
                    later_changed = true;
                }
            }
        CHECK(later_changed);
    }
}

TEST_CASE("permuting the story vectors changes the physics attention output") {
    SrfdConfig cfg = tiny_config();
    auto w = init_weights<float>(cfg, 111);
    auto in = random_inputs<float>(cfg, 112, 0); // all three stories active
    in.m_vec = {0.2f, 0.5f, 0.9f};
    in.k_vec = {0.9f, 0.3f, 0.6f};
    SrfdState<float> st0;
    srfd_forward(cfg, w, nullptr, in, st0);
    auto permuted = in;
    std::swap(permuted.m_vec[0], permuted.m_vec[2]);
    std::swap(permuted.k_vec[0], permuted.k_vec[2]);
    SrfdState<float> st1;
    srfd_forward(cfg, w, nullptr, permuted, st1);
    bool changed = false;
    for (std::size_t i = 0; i < st0.y.d.size(); ++i)
        if (st0.y.d[i] != st1.y.d[i]) changed = true;
    CHECK(changed); // the model does distinguish story order
}

TEST_CASE("backward without forward is a usage error") {
    SrfdConfig cfg = tiny_config();
    auto w = init_weights<float>(cfg, 121);
    auto in = random_inputs<float>(cfg, 122);
    SrfdState<float> st; // never ran
    auto dw = zeros_like(w);
    Mat<float> dy(cfg.window, cfg.out_channels());
    CHECK_THROWS_AS(srfd_backward(cfg, w, nullptr, in, st, dy, dw, nullptr, nullptr),
                    UsageError);
}

TEST_CASE("zero output gradient produces zero parameter gradients") {
    SrfdConfig cfg = tiny_config();
    auto w = init_weights<float>(cfg, 131);
    auto in = random_inputs<float>(cfg, 132);
    SrfdState<float> st;
    srfd_forward(cfg, w, nullptr, in, st);
    auto dw = zeros_like(w);
    Mat<float> dy(cfg.window, cfg.out_channels()); // zeros
    srfd_backward(cfg, w, nullptr, in, st, dy, dw, nullptr, nullptr);
    dw.visit([&](const std::string&, Mat<float>& m) {
        for (float v : m.d) CHECK(v == 0.0f);
    });
}

// 64-bit mode: analytic gradients against central differences. The error
// denominator carries a floor at 1e-3 of the gradient scale so parameters
// whose true gradient sits at the finite-difference noise level do not
// produce spurious relative errors.
void run_gradcheck_fd(bool per_layer_physics, double h_rel, double tol_rel) {
    SrfdConfig cfg = tiny_config();
    cfg.physics_per_layer = per_layer_physics;
    auto w = init_weights<double>(cfg, 141);
    auto in = random_inputs<double>(cfg, 142);
    Mat<double> coeff(cfg.window, cfg.out_channels());
    SplitMix64 crng(143);
    for (auto& v : coeff.d) v = double(crng.normal());

    SrfdState<double> st;
    srfd_forward(cfg, w, nullptr, in, st);
    auto dw = zeros_like(w);
    StepInputGrads<double> din;
    srfd_backward(cfg, w, nullptr, in, st, coeff, dw, nullptr, &din);

    double gscale = 0.0;
    dw.visit([&](const std::string&, Mat<double>& m) {
        for (double v : m.d) gscale = std::max(gscale, std::abs(v));
    });
    const double floor = 1e-3 * gscale;

    auto loss_at = [&]() {
        SrfdState<double> s;
        srfd_forward(cfg, w, nullptr, in, s);
        return linear_loss(s.y, coeff);
    };

    double worst = 0.0;
    std::string worst_name;
    w.visit([&](const std::string& name, Mat<double>& m) {
        Mat<double>* grad = nullptr;
        dw.visit([&](const std::string& gn, Mat<double>& gm) {
            if (gn == name) grad = &gm;
        });
        for (std::size_t i = 0; i < m.d.size(); ++i) {
            const double theta = m.d[i];
            const double h = h_rel * std::max(1.0, std::abs(theta));
            m.d[i] = theta + h;
            const double lp = loss_at();
            m.d[i] = theta - h;
            const double lm = loss_at();
            m.d[i] = theta;
            const double fd = (lp - lm) / (2.0 * h);
            const double an = grad->d[i];
            const double err = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), floor});
            if (err > worst) {
                worst = err;
                worst_name = name + "[" + std::to_string(i) + "]";
            }
        }
    });
    INFO("worst parameter: ", worst_name, " rel err ", worst);
    CHECK(worst < tol_rel);

    // input gradients: the wave channel
    double worst_in = 0.0;
    for (int i = 0; i < cfg.window; ++i) {
        const double theta = in.wave(i, 0);
        const double h = h_rel * std::max(1.0, std::abs(theta));
        in.wave(i, 0) = theta + h;
        const double lp = loss_at();
        in.wave(i, 0) = theta - h;
        const double lm = loss_at();
        in.wave(i, 0) = theta;
        const double fd = (lp - lm) / (2.0 * h);
        const double an = din.wave(i, 0);
        worst_in = std::max(worst_in,
                            std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), floor}));
    }
    CHECK(worst_in < tol_rel);
}

TEST_CASE("gradient check, 64-bit: every parameter within 1e-6 of central differences") {
    run_gradcheck_fd(false, 1e-5, 1e-6);
}

TEST_CASE("gradient check, 64-bit, per-layer physics conditioning") {
    run_gradcheck_fd(true, 1e-5, 1e-6);
}

// 32-bit mode: the float pipeline against the FD-verified double pipeline on
// identical values; the budget is pure single-precision rounding.
TEST_CASE("gradient check, 32-bit: every parameter within 1e-3") {
    SrfdConfig cfg = tiny_config();
    auto wf = init_weights<float>(cfg, 141);
    auto inf_ = random_inputs<float>(cfg, 142);
    Mat<float> coeff_f(cfg.window, cfg.out_channels());
    SplitMix64 crng(143);
    for (auto& v : coeff_f.d) v = float(crng.normal());

    // exact float -> double copies
    auto wd = make_weights<double>(cfg);
    {
        std::vector<Mat<float>*> src;
        wf.visit([&](const std::string&, Mat<float>& m) { src.push_back(&m); });
        std::size_t idx = 0;
        wd.visit([&](const std::string&, Mat<double>& m) {
            for (std::size_t i = 0; i < m.d.size(); ++i) m.d[i] = double(src[idx]->d[i]);
            ++idx;
        });
    }
    StepInputs<double> ind;
    ind.wave = Mat<double>(cfg.window, 1);
    ind.history = Mat<double>(cfg.window, cfg.out_channels());
    ind.sdr = Mat<double>(cfg.window, cfg.out_channels());
    for (std::size_t i = 0; i < inf_.wave.d.size(); ++i) ind.wave.d[i] = inf_.wave.d[i];
    for (std::size_t i = 0; i < inf_.history.d.size(); ++i) ind.history.d[i] = inf_.history.d[i];
    for (std::size_t i = 0; i < inf_.sdr.d.size(); ++i) ind.sdr.d[i] = inf_.sdr.d[i];
    ind.m_vec.assign(inf_.m_vec.begin(), inf_.m_vec.end());
    ind.k_vec.assign(inf_.k_vec.begin(), inf_.k_vec.end());
    ind.story_mask = inf_.story_mask;
    Mat<double> coeff_d(cfg.window, cfg.out_channels());
    for (std::size_t i = 0; i < coeff_f.d.size(); ++i) coeff_d.d[i] = coeff_f.d[i];

    SrfdState<float> stf;
    srfd_forward(cfg, wf, nullptr, inf_, stf);
    auto dwf = zeros_like(wf);
    srfd_backward(cfg, wf, nullptr, inf_, stf, coeff_f, dwf, nullptr, nullptr);

    SrfdState<double> std_;
    srfd_forward(cfg, wd, nullptr, ind, std_);
    auto dwd = zeros_like(wd);
    srfd_backward(cfg, wd, nullptr, ind, std_, coeff_d, dwd, nullptr, nullptr);

    double gscale = 0.0;
    dwd.visit([&](const std::string&, Mat<double>& m) {
        for (double v : m.d) gscale = std::max(gscale, std::abs(v));
    });
    const double floor = 1e-3 * gscale;

    std::vector<Mat<float>*> gf;
    dwf.visit([&](const std::string&, Mat<float>& m) { gf.push_back(&m); });
    std::size_t idx = 0;
    double worst = 0.0;
    dwd.visit([&](const std::string&, Mat<double>& m) {
        for (std::size_t i = 0; i < m.d.size(); ++i) {
            const double an = gf[idx]->d[i];
            const double ref = m.d[i];
            worst = std::max(worst,
                             std::abs(an - ref) / std::max({std::abs(an), std::abs(ref), floor}));
        }
        ++idx;
    });
    CHECK(worst < 1e-3);
}

TEST_CASE("gradients of padded story columns in U_M are exactly zero") {
    SrfdConfig cfg = tiny_config();
    auto w = init_weights<float>(cfg, 151);
    auto in = random_inputs<float>(cfg, 152, 1); // story index 2 padded
    SrfdState<float> st;
    srfd_forward(cfg, w, nullptr, in, st);
    auto dw = zeros_like(w);
    Mat<float> dy(cfg.window, cfg.out_channels());
    SplitMix64 rng(153);
    for (auto& v : dy.d) v = float(rng.normal());
    srfd_backward(cfg, w, nullptr, in, st, dy, dw, nullptr, nullptr);
    for (int i = 0; i < cfg.d_head(); ++i) {
        CHECK(dw.phys_um(i, 2) == 0.0f);
        CHECK(dw.phys_uk(i, 2) == 0.0f);
    }
    double total = 0.0;
    for (int i = 0; i < cfg.d_head(); ++i)
        total += std::abs(dw.phys_um(i, 0)) + std::abs(dw.phys_um(i, 1));
    CHECK(total > 0.0); // active stories do receive gradient
}

TEST_CASE("LoRA with zero B is a bitwise no-op") {
    SrfdConfig cfg = tiny_config();
    cfg.lora_rank = 2;
    auto w = init_weights<float>(cfg, 161);
    auto lora = make_lora(cfg, w, 162);
    auto in = random_inputs<float>(cfg, 163);
    SrfdState<float> plain, adapted;
    srfd_forward(cfg, w, nullptr, in, plain);
    srfd_forward(cfg, w, &lora, in, adapted);
    CHECK(plain.y.d == adapted.y.d); // zero-init B annihilates the adapter path
}

TEST_CASE("full-rank LoRA recovers base + delta exactly") {
    const int d = 6, r = d;
    Mat<float> base(d, d), delta(d, d);
    SplitMix64 rng(171);
    for (auto& v : base.d) v = float(rng.normal());
    for (auto& v : delta.d) v = float(rng.normal());
    Lora<float> adapter;
    adapter.a = Mat<float>(r, d);
    for (int i = 0; i < d; ++i) adapter.a(i, i) = 1.0f; // A = I
    adapter.b = delta;                                  // B = delta W
    // effective weight = base + (alpha/r) * B * A = base + delta, exactly
    Mat<float> ba(d, d);
    kern::mm_nn(adapter.b, adapter.a, ba, false);
    for (int i = 0; i < d * d; ++i) CHECK(ba.d[i] == delta.d[i]);

    Mat<float> x(3, d), y, y_ref;
    for (auto& v : x.d) v = float(rng.normal());
    lora_apply(base, adapter, double(r), r, x, y);
    Mat<float> merged = base;
    for (int i = 0; i < d * d; ++i) merged.d[i] = float(double(base.d[i]) + double(delta.d[i]));
    linear_fwd(x, merged, static_cast<const Lora<float>*>(nullptr), 0.0, y_ref);
    for (std::size_t i = 0; i < y.d.size(); ++i)
        CHECK(y.d[i] == doctest::Approx(y_ref.d[i]).epsilon(1e-5));
}

TEST_CASE("LoRA gradient check (adapters only, 64-bit)") {
    SrfdConfig cfg = tiny_config();
    cfg.lora_rank = 2;
    auto w = init_weights<double>(cfg, 181);
    auto lora = make_lora(cfg, w, 182);
    SplitMix64 rng(183);
    for (auto& it : lora.items)
        for (auto& v : it.b.d) v = rng.normal(0.0, 0.3);
    auto in = random_inputs<double>(cfg, 184);
    Mat<double> coeff(cfg.window, cfg.out_channels());
    for (auto& v : coeff.d) v = rng.normal();

    SrfdState<double> st;
    srfd_forward(cfg, w, &lora, in, st);
    auto dw = zeros_like(w);
    auto dlora = lora_zeros_like(lora);
    srfd_backward(cfg, w, &lora, in, st, coeff, dw, &dlora, nullptr);

    auto loss_at = [&]() {
        SrfdState<double> s;
        srfd_forward(cfg, w, &lora, in, s);
        return linear_loss(s.y, coeff);
    };
    double gscale = 0.0;
    for (const auto& it : dlora.items) {
        for (double v : it.a.d) gscale = std::max(gscale, std::abs(v));
        for (double v : it.b.d) gscale = std::max(gscale, std::abs(v));
    }
    const double floor = 1e-3 * gscale;
    double worst = 0.0;
    for (std::size_t t = 0; t < lora.items.size(); ++t) {
        for (auto field : {&Lora<double>::a, &Lora<double>::b}) {
            Mat<double>& m = lora.items[t].*field;
            Mat<double>& g = dlora.items[t].*field;
            for (std::size_t i = 0; i < m.d.size(); i += 3) { // stride for speed
                const double theta = m.d[i];
                const double h = 1e-5 * std::max(1.0, std::abs(theta));
                m.d[i] = theta + h;
                const double lp = loss_at();
                m.d[i] = theta - h;
                const double lm = loss_at();
                m.d[i] = theta;
                const double fd = (lp - lm) / (2.0 * h);
                worst = std::max(worst, std::abs(fd - g.d[i]) /
                                            std::max({std::abs(fd), std::abs(g.d[i]), floor}));
            }
        }
    }
    CHECK(worst < 1e-6);
}
