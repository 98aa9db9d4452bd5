#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "gradient_check.hpp"
#include "tnet/dataio.hpp"
#include "tnet/model.hpp"
#include "tnet/rng.hpp"
#include "tnet/training.hpp"

using tnet::AdamConfig;
using tnet::AdamState;
using tnet::ArchitectureSpec;
using tnet::Error;
using tnet::ErrorCategory;
using tnet::LabelRaw;
using tnet::Metrics;
using tnet::Model;
using tnet::Rng;
using tnet::ShardSet;
using tnet::TceRecord;
using tnet::TrainConfig;
using tnet::TrainHistory;
using tnet::View;

namespace {

// One global branch of length 16, small enough that training runs are
// near-instant.
ArchitectureSpec micro_spec() {
    ArchitectureSpec s;
    s.name = "micro";
    s.branches = {{View::Global, 16, 1, 1, 2, 2, 3, 2, 2}};
    s.fc_layers = 1;
    s.fc_size = 4;
    return s;
}

// Pass-through scalar model: probability sigmoid(max(0, x[0])) for a
// constant two-sample input, giving exact control over predictions.
Model passthrough_model() {
    ArchitectureSpec s;
    s.name = "pass";
    s.branches = {{View::Global, 2, 1, 1, 1, 1, 1, 2, 2}};
    s.fc_layers = 1;
    s.fc_size = 1;
    Model m = Model::build_uninitialized(s);
    std::vector<double> params = m.flatten_params();
    // conv weight, fc weight, head weight = 1; all biases stay 0.
    Model::Offsets off = m.offsets();
    params[off.branch_convs[0][0].w_off] = 1.0;
    params[off.fc[0].w_off] = 1.0;
    params[off.head.w_off] = 1.0;
    m.set_params(params);
    return m;
}

TceRecord constant_record(const std::string& id, int label, double value) {
    TceRecord r;
    r.id = id;
    r.label = label;
    r.label_raw = label ? LabelRaw::PC : LabelRaw::AFP;
    r.views.global = {value, value};
    return r;
}

// Linearly separable records for micro_spec: positives hover near +0.5,
// negatives near -0.5, with mild noise.
std::vector<TceRecord> separable_records(std::size_t n, Rng& rng) {
    std::vector<TceRecord> out;
    for (std::size_t i = 0; i < n; ++i) {
        TceRecord r;
        r.id = "rec-" + std::to_string(i);
        r.label = i % 2 == 0 ? 1 : 0;
        r.label_raw = r.label ? LabelRaw::PC : LabelRaw::NTP;
        double center = r.label ? 0.5 : -0.5;
        r.views.global.resize(16);
        for (double& v : r.views.global) v = center + rng.uniform(-0.2, 0.2);
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace

TEST_CASE("bce loss closed forms and clamping") {
    auto [l1, g1] = tnet::bce_loss(0.5, 1);
    CHECK(l1 == Catch::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(g1 == Catch::Approx(-2.0).epsilon(1e-12));

    auto [l0, g0] = tnet::bce_loss(0.5, 0);
    CHECK(l0 == Catch::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(g0 == Catch::Approx(2.0).epsilon(1e-12));

    // Perfect confident prediction costs about the clamp width.
    auto [lp, gp] = tnet::bce_loss(1.0 - 1e-7, 1);
    CHECK(lp == Catch::Approx(1e-7).margin(1e-9));
    CHECK(gp < 0.0);

    // The clamp keeps catastrophically wrong predictions finite.
    auto [lw, gw] = tnet::bce_loss(0.0, 1);
    CHECK(lw == Catch::Approx(-std::log(1e-7)).epsilon(1e-12));
    CHECK(std::isfinite(gw));
    // (1 - (1 - 1e-7)) differs from 1e-7 in the last few bits, so this
    // side of the clamp is only equal to ~1e-9.
    CHECK(tnet::bce_loss(1.0, 0).first == Catch::Approx(-std::log(1e-7)).margin(1e-9));

    CHECK_THROWS_AS(tnet::bce_loss(0.5, 2), Error);
    CHECK_THROWS_AS(tnet::bce_loss(0.5, -1), Error);

    // Loss is non-negative across the whole domain.
    Rng rng(1);
    for (int i = 0; i < 200; ++i) {
        double p = rng.uniform01();
        CHECK(tnet::bce_loss(p, i % 2).first >= 0.0);
    }
}

TEST_CASE("bce gradient matches finite differences") {
    Rng rng(2);
    int n_cases = 0;
    for (int i = 0; i < 40; ++i) {
        // Stay inside the clamp so the loss is differentiable.
        double p = rng.uniform(1e-3, 1.0 - 1e-3);
        int y = i % 2;
        double analytic = tnet::bce_loss(p, y).second;
        auto f = [&] { return tnet::bce_loss(p, y).first; };
        double numeric = gradcheck::central_diff(f, p);
        CHECK(gradcheck::rel_err(analytic, numeric) < 1e-6);
        ++n_cases;
    }
    CHECK(n_cases >= 20);
}

TEST_CASE("adam step closed forms") {
    AdamConfig cfg;  // alpha 1e-5, betas 0.9/0.999, eps 1e-8

    // Zero gradient is a fixpoint of a fresh state.
    std::vector<double> params{1.0, -2.0, 3.5};
    std::vector<double> zeros(3, 0.0);
    AdamState state = AdamState::init(3);
    tnet::adam_step(params, zeros, state, cfg);
    CHECK(params == std::vector<double>{1.0, -2.0, 3.5});
    CHECK(state.t == 1);

    // First step with g=2: bias correction makes m_hat=g, v_hat=g^2,
    // so theta moves by alpha * g / (|g| + eps).
    std::vector<double> p1{1.0};
    std::vector<double> g1{2.0};
    AdamState s1 = AdamState::init(1);
    tnet::adam_step(p1, g1, s1, cfg);
    double expected = 1.0 - 1e-5 * (2.0 / (2.0 + 1e-8));
    CHECK(p1[0] == Catch::Approx(expected).epsilon(1e-15));

    // First-step magnitude is within [0.999 alpha, alpha] regardless of
    // gradient scale, and it moves against the gradient sign.
    for (double g : {-1e3, -1.0, -1e-3, 1e-3, 1.0, 1e3}) {
        std::vector<double> p{0.0};
        std::vector<double> gv{g};
        AdamState s = AdamState::init(1);
        tnet::adam_step(p, gv, s, cfg);
        double step = std::abs(p[0]);
        CHECK(step >= 0.999 * cfg.alpha);
        CHECK(step <= cfg.alpha);
        CHECK(p[0] * g <= 0.0);
    }
}

TEST_CASE("adam matches a step-by-step reference over several updates") {
    AdamConfig cfg;
    cfg.alpha = 0.01;
    Rng rng(5);
    const std::size_t n = 6;
    std::vector<double> params(n), ref(n);
    for (std::size_t i = 0; i < n; ++i) params[i] = ref[i] = rng.uniform(-1.0, 1.0);
    AdamState state = AdamState::init(n);
    std::vector<double> m(n, 0.0), v(n, 0.0);

    for (int t = 1; t <= 5; ++t) {
        std::vector<double> g(n);
        for (double& x : g) x = rng.uniform(-2.0, 2.0);
        tnet::adam_step(params, g, state, cfg);
        // Direct transcription of the update rule as the oracle.
        for (std::size_t i = 0; i < n; ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            double mhat = m[i] / (1.0 - std::pow(cfg.beta1, t));
            double vhat = v[i] / (1.0 - std::pow(cfg.beta2, t));
            ref[i] -= cfg.alpha * mhat / (std::sqrt(vhat) + cfg.epsilon);
        }
        for (std::size_t i = 0; i < n; ++i)
            CHECK(params[i] == Catch::Approx(ref[i]).margin(1e-15));
        for (double x : state.v) CHECK(x >= 0.0);
    }
}

TEST_CASE("adam validates configuration and lengths") {
    std::vector<double> p{1.0}, g{1.0};
    AdamState s = AdamState::init(2);
    AdamConfig cfg;
    CHECK_THROWS_AS(tnet::adam_step(p, g, s, cfg), Error);  // moment length

    AdamConfig bad = cfg;
    bad.alpha = 0.0;
    AdamState s1 = AdamState::init(1);
    CHECK_THROWS_AS(tnet::adam_step(p, g, s1, bad), Error);
    bad = cfg;
    bad.beta1 = 1.0;
    CHECK_THROWS_AS(tnet::validate_adam_config(bad), Error);
    bad = cfg;
    bad.epsilon = 0.0;
    CHECK_THROWS_AS(tnet::validate_adam_config(bad), Error);
}

TEST_CASE("evaluate computes confusion-matrix metrics") {
    Model m = passthrough_model();
    // sigmoid(relu(2)) > 0.5 predicts positive; relu clips negatives to
    // sigmoid(0) = 0.5, which the strict threshold counts as negative.
    std::vector<TceRecord> recs;
    recs.push_back(constant_record("tp-a", 1, 2.0));
    recs.push_back(constant_record("tp-b", 1, 1.0));
    recs.push_back(constant_record("fp", 0, 3.0));
    recs.push_back(constant_record("tn", 0, -1.0));
    recs.push_back(constant_record("fn", 1, -2.0));

    Metrics got = tnet::evaluate(m, recs);
    CHECK(got.tp == 2);
    CHECK(got.fp == 1);
    CHECK(got.tn == 1);
    CHECK(got.fn == 1);
    CHECK(got.n_examples == 5);
    CHECK(got.accuracy == Catch::Approx(3.0 / 5.0).epsilon(1e-12));
    CHECK(got.precision == Catch::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(got.recall == Catch::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(got.loss > 0.0);

    // Reordering the split does not change the metrics.
    std::vector<TceRecord> shuffled{recs[3], recs[0], recs[4], recs[2], recs[1]};
    Metrics again = tnet::evaluate(m, shuffled);
    CHECK(again.accuracy == got.accuracy);
    CHECK(again.precision == got.precision);
    CHECK(again.recall == got.recall);
    CHECK(again.loss == Catch::Approx(got.loss).epsilon(1e-12));

    CHECK_THROWS_AS(tnet::evaluate(m, std::vector<TceRecord>{}), Error);
}

TEST_CASE("an all-negative predictor scores the negative fraction") {
    // Zero weights yield probability exactly 0.5 everywhere, and the
    // strict > 0.5 threshold therefore predicts negative on every
    // record. On a 1574-record split with 360 positives the accuracy is
    // 1214/1574.
    Model zero = Model::build_uninitialized(micro_spec());
    std::vector<TceRecord> recs;
    Rng rng(8);
    for (int i = 0; i < 1574; ++i) {
        TceRecord r;
        r.id = "r" + std::to_string(i);
        r.label = i < 360 ? 1 : 0;
        r.label_raw = r.label ? LabelRaw::PC : LabelRaw::AFP;
        r.views.global.resize(16);
        for (double& v : r.views.global) v = rng.uniform(-1.0, 1.0);
        recs.push_back(std::move(r));
    }
    Metrics m = tnet::evaluate(zero, recs);
    CHECK(m.tp == 0);
    CHECK(m.fp == 0);
    CHECK(m.fn == 360);
    CHECK(m.tn == 1214);
    CHECK(m.accuracy == Catch::Approx(1214.0 / 1574.0).epsilon(1e-12));
    CHECK(m.accuracy == Catch::Approx(0.7713).margin(5e-5));
    // Precision and recall fall back to 0 when their denominators are 0.
    CHECK(m.precision == 0.0);
    CHECK(m.recall == 360.0 * 0.0);
}

TEST_CASE("epoch arithmetic and rendering") {
    CHECK(tnet::epochs_for(10000, 64, 12592) == Catch::Approx(50.8259).margin(1e-3));
    CHECK(tnet::format_epochs(tnet::epochs_for(10000, 64, 12592)) == "50.8");
    CHECK(tnet::format_epochs(40.0) == "40.0");
    CHECK(tnet::format_epochs(0.04) == "0.0");
    CHECK_THROWS_AS(tnet::epochs_for(1, 1, 0), Error);
}

TEST_CASE("metrics csv layout") {
    TrainHistory h;
    h.entries.push_back({1, 0.75, false, 0.0, 0.01});
    h.entries.push_back({2, 0.5, true, 0.875, 0.01});
    h.entries.push_back({3, 0.25, false, 0.0, 0.01});
    const std::filesystem::path path =
        std::filesystem::temp_directory_path() / "tnet_test_metrics.csv";
    tnet::write_metrics_csv(h, path);
    std::string text = tnet::read_file(path);
    CHECK(text == "step,loss,val_accuracy\n1,0.75,\n2,0.5,0.875\n3,0.25,\n");
    std::filesystem::remove(path);

    CHECK(h.final_val_accuracy() == 0.875);
    TrainHistory none;
    CHECK(none.final_val_accuracy() == 0.0);
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    cfg.dropout_rate = 0.2;
    tnet::validate_train_config(cfg);  // no throw

    TrainConfig bad = cfg;
    bad.dropout_rate = 0.15;
    CHECK_THROWS_AS(tnet::validate_train_config(bad), Error);
    bad = cfg;
    bad.steps = 0;
    CHECK_THROWS_AS(tnet::validate_train_config(bad), Error);
    bad = cfg;
    bad.batch_size = 0;
    CHECK_THROWS_AS(tnet::validate_train_config(bad), Error);
    bad = cfg;
    bad.val_interval = 0;
    CHECK_THROWS_AS(tnet::validate_train_config(bad), Error);
}

TEST_CASE("training is deterministic and makes progress on separable data") {
    Rng data_rng(40);
    ShardSet set = tnet::split_shards(separable_records(80, data_rng), 3);
    REQUIRE(set.train().size() == 64);

    TrainConfig cfg;
    cfg.steps = 500;
    cfg.batch_size = 16;
    cfg.seed = 7;
    cfg.val_interval = 100;
    cfg.adam.alpha = 1e-3;  // desk-scale problem, larger steps converge fast

    auto run = [&] {
        Rng init(tnet::Rng::mix(cfg.seed, 0x17));
        Model m = Model::build(micro_spec(), init);
        TrainHistory h = tnet::train(m, set, cfg);
        return std::pair<std::vector<double>, TrainHistory>(m.flatten_params(),
                                                            std::move(h));
    };
    auto [params_a, hist_a] = run();
    auto [params_b, hist_b] = run();

    // Bitwise determinism of both the weights and the recorded history.
    CHECK(params_a == params_b);
    REQUIRE(hist_a.entries.size() == cfg.steps);
    REQUIRE(hist_b.entries.size() == cfg.steps);
    for (std::size_t i = 0; i < hist_a.entries.size(); ++i) {
        CHECK(hist_a.entries[i].loss == hist_b.entries[i].loss);
        CHECK(hist_a.entries[i].step == i + 1);
        CHECK(hist_a.entries[i].loss >= 0.0);
    }

    // Validation runs on the configured cadence plus the final step.
    for (const auto& e : hist_a.entries) {
        bool expect_val = e.step % cfg.val_interval == 0 || e.step == cfg.steps;
        CHECK(e.has_val == expect_val);
    }

    // Loss over the last fifth is below the first fifth: the task is
    // linearly separable, so a correct optimizer must make progress.
    auto mean_loss = [&](std::size_t lo, std::size_t hi) {
        double s = 0.0;
        for (std::size_t i = lo; i < hi; ++i) s += hist_a.entries[i].loss;
        return s / double(hi - lo);
    };
    CHECK(mean_loss(400, 500) < mean_loss(0, 100));
    CHECK(hist_a.final_val_accuracy() >= 0.9);
    CHECK(hist_a.train_seconds > 0.0);
}

TEST_CASE("train rejects unusable inputs") {
    Rng data_rng(41);
    ShardSet set = tnet::split_shards(separable_records(20, data_rng), 3);
    Rng init(1);
    Model m = Model::build(micro_spec(), init);

    TrainConfig cfg;
    cfg.steps = 1;
    cfg.batch_size = 64;  // larger than the 16-record training split
    try {
        tnet::train(m, set, cfg);
        FAIL("expected an argument error");
    } catch (const Error& e) {
        CHECK(e.category() == ErrorCategory::argument);
    }

    // A record whose view length disagrees with the spec is reported
    // before any training step, naming the record.
    ShardSet bad = set;
    bad.shards[0][0].views.global.resize(9);
    cfg.batch_size = 8;
    try {
        tnet::train(m, bad, cfg);
        FAIL("expected a dimension error");
    } catch (const Error& e) {
        CHECK(e.category() == ErrorCategory::dimension);
        CHECK(std::string(e.what()).find(bad.shards[0][0].id) != std::string::npos);
    }
}

TEST_CASE("dropout-enabled training stays deterministic") {
    Rng data_rng(50);
    ShardSet set = tnet::split_shards(separable_records(40, data_rng), 5);

    TrainConfig cfg;
    cfg.steps = 50;
    cfg.batch_size = 8;
    cfg.seed = 11;
    cfg.dropout_rate = 0.3;
    cfg.val_interval = 25;

    auto run = [&] {
        Rng init(tnet::Rng::mix(cfg.seed, 0x17));
        Model m = Model::build(micro_spec(), init);
        tnet::train(m, set, cfg);
        return m.flatten_params();
    };
    CHECK(run() == run());

    // The dropout rate flows into the model so later checkpointing
    // records it.
    Rng init(tnet::Rng::mix(cfg.seed, 0x17));
    Model m = Model::build(micro_spec(), init);
    tnet::train(m, set, cfg);
    CHECK(m.arch.dropout_rate == 0.3);
}
