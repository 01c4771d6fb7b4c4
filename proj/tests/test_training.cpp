#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "seisforge/training.hpp"

using namespace seisforge;
using namespace seisforge::train;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / "seisforge_train_tests" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

GenConfig toy_gen(int n_samples, std::uint64_t seed) {
    GenConfig g;
    g.n_samples = n_samples;
    g.seed = seed;
    g.mix_frame = 1.0; // 1-5 story linear frames
    g.mix_shear_frame = 0.0;
    g.mix_complex = 0.0;
    g.max_stories = 5;
    g.duration_s = 4.0;
    g.plateau_s = 2.0;
    g.decay_s = 1.0;
    return g;
}

srfd::SrfdConfig toy_model(int n_max = 5) {
    srfd::SrfdConfig c;
    c.d_model = 16;
    c.window = 16;
    c.n_layers = 1;
    c.n_heads = 2;
    c.n_kv_groups = 1;
    c.ffn_mult = 2.0;
    c.n_max = n_max;
    return c;
}

std::string dir_fingerprint(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::string all;
    for (const auto& f : files) {
        all += fs::relative(f, dir).string();
        all += '\0';
        all += read_file_bytes(f);
        all += '\0';
    }
    return hex64(fnv1a64(all));
}

} // namespace

TEST_CASE("build_dataset splits 9/1 on ten samples and regenerates byte-identically") {
    const auto dir_a = fresh_dir("gen_a");
    const auto dir_b = fresh_dir("gen_b");
    const auto g = toy_gen(10, 77);
    const auto ma = build_dataset(g, dir_a);
    int train_count = 0, test_count = 0;
    for (const auto& s : ma.samples) {
        if (s.split == "train") ++train_count;
        if (s.split == "test") ++test_count;
    }
    CHECK(train_count == 9);
    CHECK(test_count == 1);

    build_dataset(g, dir_b);
    CHECK(dir_fingerprint(dir_a) == dir_fingerprint(dir_b));

    const auto loaded = load_manifest(dir_a / "manifest.json");
    CHECK(loaded.samples.size() == ma.samples.size());
    const auto sample = load_sample(loaded, loaded.samples[0]);
    CHECK(sample.oracle.n_steps == sample.motion.samples.size());
    CHECK(sample.oracle.n_stories == sample.model.n_stories());
}

TEST_CASE("dataset honors the intensity distribution") {
    const auto dir = fresh_dir("gen_mix");
    auto g = toy_gen(400, 123);
    const auto m = build_dataset(g, dir);
    const auto& by_int = m.counts.at("by_intensity");
    const double n = 400.0;
    const double p[4] = {0.481, 0.4177, 0.0886, 0.0127};
    const char* names[4] = {"I6", "I7", "I8", "I9"};
    for (int i = 0; i < 4; ++i) {
        const double expect = n * p[i];
        const double sigma = std::sqrt(n * p[i] * (1.0 - p[i]));
        const double got = by_int.contains(names[i]) ? by_int.at(names[i]).get<double>() : 0.0;
        CHECK(std::abs(got - expect) <= 3.0 * sigma + 1.0);
    }
}

TEST_CASE("make_windows boundary cases") {
    const auto dir = fresh_dir("gen_win");
    auto g = toy_gen(2, 5);
    const auto m = build_dataset(g, dir);
    const auto sample = load_sample(m, m.samples[0]);
    auto cfg = toy_model();
    const int W = cfg.window;
    const int n = static_cast<int>(sample.oracle.n_steps); // 201 at 4 s / 0.02 s

    auto wins = make_windows(sample, m.stats, cfg, W, "t");
    const int expect = (n - W + W - 1) / W + 1;
    CHECK(static_cast<int>(wins.size()) == expect);
    for (float v : wins[0].inputs.history.d) CHECK(v == 0.0f); // zero history first
    // the second window's history equals the normalized oracle over the first
    for (int t = 0; t < W; ++t)
        for (int s = 0; s < static_cast<int>(sample.oracle.n_stories); ++s) {
            const float expect_h = static_cast<float>(
                static_cast<float>(sample.oracle.get_u(s, t)) / m.stats.disp_std);
            CHECK(wins[1].inputs.history(t, s) == expect_h);
        }

    auto wins2 = make_windows(sample, m.stats, cfg, W / 2, "t");
    const int expect2 = (n - W + W / 2 - 1) / (W / 2) + 1;
    CHECK(static_cast<int>(wins2.size()) == expect2);
}

TEST_CASE("teacher-forced windows stitch back to the normalized oracle") {
    const auto dir = fresh_dir("gen_stitch");
    auto g = toy_gen(1, 9);
    const auto m = build_dataset(g, dir);
    const auto sample = load_sample(m, m.samples[0]);
    auto cfg = toy_model();
    const int W = cfg.window;
    auto wins = make_windows(sample, m.stats, cfg, W, "t");

    const int n = static_cast<int>(sample.oracle.n_steps);
    const int ns = static_cast<int>(sample.oracle.n_stories);
    for (int gidx = 0; gidx < n; ++gidx) {
        const int w = gidx / W;
        const int t = gidx - w * W;
        for (int s = 0; s < ns; ++s) {
            const float want = static_cast<float>(
                static_cast<float>(sample.oracle.get_u(s, gidx)) / m.stats.disp_std);
            CHECK(wins[w].target(t, s) == want); // bitwise reconstruction
        }
    }
}

TEST_CASE("short samples are front-padded into a single window") {
    const auto dir = fresh_dir("gen_short");
    auto g = toy_gen(1, 11);
    g.duration_s = 0.2; // 11 steps << W
    g.rise_s = 0.05;
    g.plateau_s = 0.1;
    g.decay_s = 0.05;
    const auto m = build_dataset(g, dir);
    const auto sample = load_sample(m, m.samples[0]);
    auto cfg = toy_model();
    auto wins = make_windows(sample, m.stats, cfg, cfg.window, "t");
    REQUIRE(wins.size() == 1);
    const int n = static_cast<int>(sample.oracle.n_steps);
    CHECK(wins[0].valid_from == cfg.window - n);
    CHECK(wins[0].valid_to == cfg.window);
    for (int t = 0; t < wins[0].valid_from; ++t) CHECK(wins[0].inputs.wave(t, 0) == 0.0f);
}

TEST_CASE("loss operation") {
    std::vector<std::uint8_t> mask = {1};
    srfd::Mat<float> pred(2, 2), target(2, 2);
    // single story; channel layout q*n_max+s with n_max=1
    pred(0, 0) = 1.0f;
    pred(1, 0) = 2.0f;
    target(0, 0) = 1.0f;
    target(1, 0) = 4.0f;
    pred(0, 1) = target(0, 1) = 0.5f;
    pred(1, 1) = target(1, 1) = -0.25f;
    CHECK(train::loss(pred, target, mask) == doctest::Approx(2.0).epsilon(1e-12));

    CHECK(train::loss(target, target, mask) == 0.0);

    // masking a floor removes its (huge) error from the loss
    std::vector<std::uint8_t> mask2 = {1, 0};
    srfd::Mat<float> p2(1, 4), t2(1, 4);
    p2(0, 0) = 1.0f;
    t2(0, 0) = 2.0f; // story 1 disp error 1
    p2(0, 1) = 1e6f; // story 2 disp, masked
    t2(0, 1) = 0.0f;
    const double l2 = train::loss(p2, t2, mask2);
    CHECK(l2 == doctest::Approx(1.0).epsilon(1e-12)); // disp mse 1 + acc mse 0
}

TEST_CASE("metrics match hand arithmetic and contracts") {
    auto ms = compute_metrics({1.0, 2.0, 3.0}, {2.0, 2.0, 2.0});
    CHECK(ms.mse == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(ms.mae == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(ms.mre == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    auto perfect = compute_metrics({1.0, -2.0, 0.5}, {1.0, -2.0, 0.5});
    CHECK(perfect.mse == 0.0);
    CHECK(perfect.mae == 0.0);
    CHECK(perfect.mre == 0.0);
    CHECK(perfect.r == doctest::Approx(1.0).epsilon(1e-12));

    auto anti = compute_metrics({-1.0, 2.0, -0.5}, {1.0, -2.0, 0.5});
    CHECK(anti.r == doctest::Approx(-1.0).epsilon(1e-12));

    // Jensen: mae^2 <= mse; |R| <= 1; MRE >= 0 on random data
    SplitMix64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> a(64), b(64);
        for (auto& v : a) v = rng.normal();
        for (auto& v : b) v = rng.normal();
        auto mm = compute_metrics(a, b);
        CHECK(mm.mae * mm.mae <= mm.mse + 1e-12);
        CHECK(std::abs(mm.r) <= 1.0 + 1e-12);
        CHECK(mm.mre >= 0.0);
    }
}

TEST_CASE("zero learning rate leaves weights bit-identical") {
    const auto dir = fresh_dir("gen_lr0");
    const auto m = build_dataset(toy_gen(4, 21), dir);
    TrainConfig cfg;
    cfg.model = toy_model();
    cfg.batch_size = 2;
    cfg.max_steps = 10;
    cfg.peak_lr = 0.0;
    cfg.seed = 3;

    auto w0 = srfd::init_weights<float>(cfg.model, cfg.seed);
    auto result = train_loop(cfg, m, w0, nullptr);
    bool identical = true;
    std::vector<srfd::Mat<float>*> before, after;
    w0.visit([&](const std::string&, srfd::Mat<float>& mm) { before.push_back(&mm); });
    result.checkpoint.weights.visit(
        [&](const std::string&, srfd::Mat<float>& mm) { after.push_back(&mm); });
    for (std::size_t i = 0; i < before.size(); ++i)
        if (before[i]->d != after[i]->d) identical = false;
    CHECK(identical);
}

TEST_CASE("training is deterministic and loss trajectories repeat exactly") {
    const auto dir = fresh_dir("gen_det");
    const auto m = build_dataset(toy_gen(4, 22), dir);
    TrainConfig cfg;
    cfg.model = toy_model();
    cfg.batch_size = 2;
    cfg.max_steps = 15;
    cfg.seed = 5;

    auto r1 = train::train(cfg, m);
    auto r2 = train::train(cfg, m);
    REQUIRE(r1.log.size() == r2.log.size());
    for (std::size_t i = 0; i < r1.log.size(); ++i) {
        CHECK(r1.log[i].loss == r2.log[i].loss); // to the last bit
        CHECK(r1.log[i].grad_norm == r2.log[i].grad_norm);
    }
    CHECK(r1.checkpoint.encode() == r2.checkpoint.encode()); // byte-identical
}

TEST_CASE("checkpoint save/load/save round-trips byte-identically") {
    const auto dir = fresh_dir("gen_ckpt");
    const auto m = build_dataset(toy_gen(2, 23), dir);
    TrainConfig cfg;
    cfg.model = toy_model();
    cfg.batch_size = 2;
    cfg.max_steps = 3;
    auto r = train::train(cfg, m);
    const std::string bytes = r.checkpoint.encode();
    const auto back = Checkpoint::decode(bytes, "mem");
    CHECK(back.encode() == bytes);

    std::string corrupt = bytes;
    corrupt[1] = 'X';
    CHECK_THROWS_AS(Checkpoint::decode(corrupt, "mem"), ParseError);
}

// smoke-budget overfit; the acceptance suite runs the full criterion
// (5000 steps, loss < 1e-3, rollout R >= 0.99)
TEST_CASE("overfit smoke: training loss collapses and rollout tracks the oracle") {
    const auto dir = fresh_dir("gen_overfit");
    auto g = toy_gen(8, 31);
    g.train_fraction = 1.0; // all eight samples train
    g.duration_s = 3.0;
    g.plateau_s = 1.0;
    const auto m = build_dataset(g, dir);

    TrainConfig cfg;
    cfg.model = toy_model();
    cfg.model.d_model = 32;
    cfg.model.window = 32;
    cfg.model.n_heads = 4;
    cfg.model.n_kv_groups = 2;
    cfg.batch_size = 8;
    cfg.max_steps = 1500;
    cfg.peak_lr = 3e-3;
    cfg.hop = 16;
    cfg.seed = 9;

    auto r = train::train(cfg, m);
    CHECK(r.log.back().loss < 5e-3);

    double worst_r = 1.0;
    for (const auto& meta : m.samples) {
        const auto sample = load_sample(m, meta);
        const auto pred = predict_rollout(r.checkpoint, nullptr, sample.model, sample.motion);
        std::vector<double> pd, td;
        for (std::size_t s = 0; s < pred.n_stories; ++s)
            for (std::size_t t = 0; t < pred.n_steps; ++t) {
                pd.push_back(pred.get_u(s, t));
                td.push_back(static_cast<float>(sample.oracle.get_u(s, t)));
            }
        worst_r = std::min(worst_r, compute_metrics(pd, td).r);
    }
    CHECK(worst_r > 0.9);
}

TEST_CASE("rollout output length always equals the motion length") {
    const auto dir = fresh_dir("gen_lens");
    const auto m = build_dataset(toy_gen(1, 41), dir);
    TrainConfig cfg;
    cfg.model = toy_model();
    cfg.batch_size = 2;
    cfg.max_steps = 2;
    auto r = train::train(cfg, m);

    const auto sample = load_sample(m, m.samples[0]);
    const int W = cfg.model.window;
    for (int len : {1, W - 1, W, W + 1, 10 * W + 3}) {
        gm::GroundMotion gmn;
        gmn.id = "len";
        gmn.dt = m.stats.dt;
        gmn.samples.assign(len, 0.0);
        for (int i = 0; i < len; ++i) gmn.samples[i] = 0.5 * std::sin(0.37 * i) + 0.1;
        const auto pred = predict_rollout(r.checkpoint, nullptr, sample.model, gmn);
        CHECK(pred.n_steps == static_cast<std::size_t>(len));
        CHECK(pred.n_stories == sample.model.n_stories());
    }
}

TEST_CASE("evaluate produces a consistent report") {
    const auto dir = fresh_dir("gen_eval");
    auto g = toy_gen(6, 51);
    g.train_fraction = 0.667; // 4 train, 2 test
    const auto m = build_dataset(g, dir);
    TrainConfig cfg;
    cfg.model = toy_model();
    cfg.batch_size = 2;
    cfg.max_steps = 30;
    auto r = train::train(cfg, m);

    const auto rep = evaluate(r.checkpoint, nullptr, m, "test");
    CHECK(rep.n_samples == 2);
    CHECK(rep.displacement.mse >= 0.0);
    CHECK(std::abs(rep.displacement.r) <= 1.0);
    CHECK(rep.worst.size() == 2);
    CHECK(rep.worst[0].r_disp <= rep.worst[1].r_disp);
    CHECK_THROWS_AS(evaluate(r.checkpoint, nullptr, m, "validation"), ConfigError);
}

TEST_CASE("LoRA fine-tune freezes the base and adapts to a new regime") {
    const auto dir = fresh_dir("gen_ft_base");
    auto g = toy_gen(6, 61);
    g.train_fraction = 1.0;
    g.duration_s = 3.0;
    g.plateau_s = 1.0;
    const auto m = build_dataset(g, dir);

    TrainConfig cfg;
    cfg.model = toy_model();
    cfg.model.d_model = 32;
    cfg.model.window = 32;
    cfg.model.n_heads = 4;
    cfg.model.n_kv_groups = 2;
    cfg.batch_size = 8;
    cfg.max_steps = 1200;
    cfg.peak_lr = 3e-3;
    cfg.hop = 16;
    cfg.seed = 13;
    auto base_result = train::train(cfg, m);
    const std::string base_bytes = base_result.checkpoint.encode();

    // an unseen, yielding regime
    const auto dir2 = fresh_dir("gen_ft_new");
    auto g2 = toy_gen(4, 62);
    g2.train_fraction = 1.0;
    g2.duration_s = 3.0;
    g2.plateau_s = 1.0;
    g2.spring_kind = "bilinear";
    g2.yield_drift_ratio = 0.002;
    const auto m2 = build_dataset(g2, dir2);

    TrainConfig tune = cfg;
    tune.max_steps = 400;
    tune.peak_lr = 1e-3;
    tune.seed = 14;
    auto adapter = finetune_lora(base_result.checkpoint, base_bytes, m2, 8, 16.0, tune);

    // frozen-base contract: the base checkpoint bytes never change
    CHECK(base_result.checkpoint.encode() == base_bytes);

    // zero-progress adapters reproduce the base outputs bitwise
    TrainConfig zero_tune = tune;
    zero_tune.max_steps = 1;
    zero_tune.peak_lr = 0.0;
    auto zero_adapter = finetune_lora(base_result.checkpoint, base_bytes, m2, 8, 16.0, zero_tune);
    const auto s0 = load_sample(m2, m2.samples[0]);
    const auto pred_base = predict_rollout(base_result.checkpoint, nullptr, s0.model, s0.motion);
    const auto pred_zero =
        predict_rollout(base_result.checkpoint, &zero_adapter.lora, s0.model, s0.motion);
    CHECK(pred_base.u == pred_zero.u);
    CHECK(pred_base.a == pred_zero.a);

    // the trained adapter reduces rollout MSE on the new-regime samples
    double mse_base = 0.0, mse_tuned = 0.0;
    for (const auto& meta : m2.samples) {
        const auto sample = load_sample(m2, meta);
        const auto pb =
            predict_rollout(base_result.checkpoint, nullptr, sample.model, sample.motion);
        const auto pt =
            predict_rollout(base_result.checkpoint, &adapter.lora, sample.model, sample.motion);
        for (std::size_t i = 0; i < pb.u.size(); ++i) {
            const double tb = static_cast<float>(sample.oracle.u[i]);
            mse_base += (pb.u[i] - tb) * (pb.u[i] - tb);
            mse_tuned += (pt.u[i] - tb) * (pt.u[i] - tb);
        }
    }
    CHECK(mse_tuned < mse_base);

    // adapter container round-trip with hash checking
    auto weights_copy = base_result.checkpoint.weights;
    const std::string adapter_bytes = adapter.encode(weights_copy);
    const auto back =
        AdapterCheckpoint::decode(adapter_bytes, "mem", base_result.checkpoint, base_bytes);
    CHECK(back.lora.rank == 8);
    std::string other_base = base_bytes;
    other_base[other_base.size() - 1] = static_cast<char>(other_base.back() ^ 1);
    CHECK_THROWS_AS(
        AdapterCheckpoint::decode(adapter_bytes, "mem", base_result.checkpoint, other_base),
        CompatibilityError);
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
    const auto dir = fresh_dir("gen_abort");
    const auto m = build_dataset(toy_gen(2, 71), dir);
    TrainConfig cfg;
    cfg.model = toy_model();
    cfg.batch_size = 1;
    cfg.max_steps = 50;
    cfg.peak_lr = 1e10; // guaranteed blowup
    CHECK_THROWS_AS(train::train(cfg, m), NumericalError);
}
