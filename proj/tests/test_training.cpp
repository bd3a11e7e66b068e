#include <doctest.h>
#include <json.hpp>

#include <cmath>
#include <limits>
#include <sstream>

#include "oracles/classifiers.hpp"
#include "speakerprof/errors.hpp"
#include "speakerprof/report.hpp"
#include "speakerprof/training.hpp"

using namespace spkr::training;
using spkr::models::ModelKind;
using spkr::models::ModelSpec;
using spkr::models::Task;
namespace models = spkr::models;

namespace {

// Gaussian blobs: the accent class moves the mean along one direction,
// gender along another, age shifts a third.
std::vector<Sample> blobs(std::size_t n, std::size_t dim, std::size_t frames, std::uint64_t seed, double spread = 0.3) {
    spkr::Rng rng(seed);
    std::vector<Sample> out;
    for (std::size_t i = 0; i < n; ++i) {
        Sample s;
        s.path = "s" + std::to_string(i);
        s.dim = dim;
        s.frames = frames;
        s.labels.accent = rng.index(8);
        s.labels.gender = rng.index(2);
        s.labels.speaker = rng.index(4);
        s.labels.age = 20.0 + rng.uniform(0.0, 40.0);
        for (std::size_t d = 0; d < dim; ++d)
            for (std::size_t t = 0; t < frames; ++t) {
                double v = spread * rng.normal();
                if (d == s.labels.accent % dim) v += 2.0;
                if (d == (dim - 1)) v += s.labels.gender ? 1.5 : -1.5;
                if (d == (dim - 2)) v += (s.labels.age - 40.0) / 10.0;
                if (d == (dim - 3)) v += static_cast<double>(s.labels.speaker);
                s.values.push_back(static_cast<float>(v));
            }
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<oracle::Vec> as_vectors(const std::vector<Sample> &set) {
    std::vector<oracle::Vec> out;
    for (const auto &s : set) out.emplace_back(s.values.begin(), s.values.end());
    return out;
}

std::vector<const Sample *> pointers(const std::vector<Sample> &set) {
    std::vector<const Sample *> out;
    for (const auto &s : set) out.push_back(&s);
    return out;
}

std::vector<std::vector<float>> parameter_values(const models::Model &m) {
    std::vector<std::vector<float>> out;
    for (const auto &p : m.parameters()) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    return out;
}

TrainConfig quick(std::size_t epochs = 15) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = 16;
    cfg.learning_rate = 1e-2;
    cfg.patience = 0;
    return cfg;
}

}  // namespace

TEST_CASE("pad_batch zero-pads on the time axis") {
    Sample a{"a", 2, 2, {1, 2, 3, 4}, {}};
    Sample b{"b", 2, 3, {5, 6, 7, 8, 9, 10}, {}};
    std::vector<const Sample *> items{&a, &b};
    const auto batch = pad_batch(items);
    CHECK(batch.input.shape() == spkr::ad::Shape{2, 2, 3});
    CHECK(batch.lengths == std::vector<std::size_t>{2, 3});
    const std::vector<float> expected{1, 2, 0, 3, 4, 0, 5, 6, 7, 8, 9, 10};
    CHECK(std::vector<float>(batch.input.data().begin(), batch.input.data().end()) == expected);
}

TEST_CASE("padding does not change sequential model outputs") {
    auto set = blobs(4, 5, 1, 1);
    const std::size_t lengths[] = {8, 5, 6, 4};
    spkr::Rng rng(2);
    for (std::size_t i = 0; i < set.size(); ++i) {
        set[i].frames = lengths[i];
        set[i].values.resize(5 * lengths[i]);
        for (auto &v : set[i].values) v = static_cast<float>(rng.normal());
    }
    auto lstm = models::lstm_spec(5, Task::accent);
    lstm.lstm_hidden = 6;
    auto cnn = models::cnn_spec(5, Task::gender);
    cnn.conv_channels = {4, 6};
    auto mtl = models::multitask_cnn_lstm_spec(5);
    mtl.conv_channels = {4, 6};
    mtl.lstm_hidden = 6;
    for (const auto &spec : {lstm, cnn, mtl}) {
        INFO(models::to_string(spec.kind));
        models::Model m(spec);
        const auto all = pointers(set);
        const auto batched = m.forward(make_batch(spec, all), false);
        for (std::size_t i = 0; i < set.size(); ++i) {
            const Sample *one[] = {&set[i]};
            const auto solo = m.forward(make_batch(spec, one), false);
            for (std::size_t k = 0; k < solo.size(); ++k) {
                const std::size_t w = solo[k].dim(1);
                for (std::size_t j = 0; j < w; ++j)
                    CHECK(std::abs(solo[k].data()[j] - batched[k].data()[i * w + j]) < 1e-6);
            }
        }
    }
}

TEST_CASE("global standardization") {
    auto set = blobs(30, 4, 3, 3);
    for (auto &s : set)
        for (std::size_t t = 0; t < s.frames; ++t) s.values[1 * s.frames + t] = 7.5f;  // constant coefficient
    const auto z = global_standardize(set);
    z.apply(set);
    for (std::size_t d = 0; d < 4; ++d) {
        double sum = 0, sq = 0, n = 0;
        for (const auto &s : set)
            for (std::size_t t = 0; t < s.frames; ++t) {
                const double v = s.values[d * s.frames + t];
                sum += v;
                sq += v * v;
                n += 1;
            }
        const double mean = sum / n, var = sq / n - mean * mean;
        INFO(d);
        CHECK(std::abs(mean) < 1e-5);
        if (d == 1) {
            for (const auto &s : set) CHECK(s.values[s.frames] == 0.0f);
        } else {
            CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-4);
        }
    }
}

TEST_CASE("age scaler round trip") {
    auto set = blobs(10, 4, 1, 4);
    const auto scaler = TargetScaler::fit(set);
    double sum = 0;
    for (const auto &s : set) sum += scaler.forward(s.labels.age);
    CHECK(std::abs(sum) < 1e-9);
    CHECK(scaler.inverse(scaler.forward(33.0)) == doctest::Approx(33.0));
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
    auto train_set = blobs(40, 6, 1, 5), val_set = blobs(10, 6, 1, 6);
    auto spec = models::mlp_spec(6, Task::gender);
    spec.hidden = {8};
    models::Model m(spec);
    const auto before = parameter_values(m);
    auto cfg = quick(3);
    cfg.learning_rate = 0.0;
    train(m, train_set, val_set, cfg, TargetScaler::fit(train_set));
    CHECK(parameter_values(m) == before);
}

TEST_CASE("separable data is learned") {
    auto train_set = blobs(200, 6, 1, 7), test_set = blobs(100, 6, 1, 8), val_set = blobs(40, 6, 1, 9);
    std::vector<std::size_t> y;
    for (const auto &s : train_set) y.push_back(s.labels.gender);
    REQUIRE(oracle::logistic_regression_train_accuracy(as_vectors(train_set), y) >= 0.99);

    auto spec = models::mlp_spec(6, Task::gender);
    spec.hidden = {16};
    models::Model m(spec);
    train(m, train_set, val_set, quick(20), TargetScaler::fit(train_set));
    CHECK(evaluate_classification(m, test_set, Task::gender).accuracy >= 0.99);
}

TEST_CASE("training is deterministic for a fixed seed") {
    auto train_set = blobs(50, 6, 1, 10), val_set = blobs(12, 6, 1, 11);
    auto spec = models::multitask_mlp_spec(6);
    spec.hidden = {12, 8};
    const auto scaler = TargetScaler::fit(train_set);
    models::Model a(spec), b(spec);
    const auto ha = train(a, train_set, val_set, quick(4), scaler);
    const auto hb = train(b, train_set, val_set, quick(4), scaler);
    CHECK(parameter_values(a) == parameter_values(b));
    CHECK(history_jsonl(ha) == history_jsonl(hb));
}

TEST_CASE("early stopping restores the best epoch") {
    auto train_set = blobs(24, 6, 1, 12, 2.0), val_set = blobs(24, 6, 1, 13, 2.0);
    auto spec = models::mlp_spec(6, Task::accent);
    spec.hidden = {64, 64};
    models::Model m(spec);
    auto cfg = quick(200);
    cfg.patience = 3;
    cfg.learning_rate = 3e-2;
    const auto h = train(m, train_set, val_set, cfg, TargetScaler::fit(train_set));
    CHECK(h.early_stopped);
    CHECK(h.epochs.size() < 200);
    CHECK(h.epochs.size() == h.best_epoch + 3);
    double best = std::numeric_limits<double>::infinity();
    for (const auto &e : h.epochs) best = std::min(best, e.val_loss);
    CHECK(h.epochs[h.best_epoch - 1].val_loss == best);
}

TEST_CASE("training errors") {
    auto set = blobs(10, 4, 1, 14);
    models::Model m(models::mlp_spec(4, Task::gender));
    const auto scaler = TargetScaler::fit(set);
    CHECK_THROWS_AS(train(m, {}, set, quick(1), scaler), spkr::ConfigError);
    CHECK_THROWS_AS(train(m, set, {}, quick(1), scaler), spkr::ConfigError);
    auto poisoned = set;
    poisoned[3].values[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(train(m, poisoned, set, quick(1), scaler), spkr::NumericError);
}

TEST_CASE("classification metrics worked example") {
    const std::vector<std::size_t> truth{0, 0, 1, 1}, pred{0, 1, 1, 1};
    const auto m = classification_metrics(truth, pred, 2);
    CHECK(m.confusion == std::vector<std::vector<std::size_t>>{{1, 1}, {0, 2}});
    CHECK(m.accuracy == doctest::Approx(0.75));
    CHECK(m.precision == doctest::Approx(5.0 / 6.0));
    CHECK(m.recall == doctest::Approx(0.75));
    CHECK(m.f1 == doctest::Approx(oracle::macro_f1(truth, pred)));
    CHECK(m.f1 == doctest::Approx((2.0 / 3.0 + 0.8) / 2.0));
}

TEST_CASE("classes absent from truth and predictions are excluded") {
    const std::vector<std::size_t> truth{0, 2, 2, 5}, pred{0, 2, 5, 5};
    const auto m = classification_metrics(truth, pred, 8);
    CHECK(m.excluded_classes == std::vector<std::size_t>{1, 3, 4, 6, 7});
    CHECK(m.f1 == doctest::Approx(oracle::macro_f1(truth, pred)));
    CHECK(m.accuracy == doctest::Approx(oracle::accuracy(truth, pred)));
}

TEST_CASE("regression metrics") {
    const std::vector<double> truth{0, 0}, pred{3, 4};
    const auto m = regression_metrics(truth, pred);
    CHECK(m.mae == doctest::Approx(3.5));
    CHECK(m.rmse == doctest::Approx(std::sqrt(12.5)));
    spkr::Rng rng(15);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> a(7), b(7);
        for (auto &x : a) x = rng.uniform(-10, 10);
        for (auto &x : b) x = rng.uniform(-10, 10);
        const auto r = regression_metrics(a, b);
        CHECK(r.mae <= r.rmse + 1e-12);
    }
}

TEST_CASE("comparison with a degenerate multitask weighting") {
    DataSplits data;
    data.train = blobs(60, 10, 1, 16);
    data.val = blobs(16, 10, 1, 17);
    data.test = blobs(24, 10, 1, 18);
    data.age_scaler = TargetScaler::fit(data.train);

    auto mtl = models::multitask_mlp_spec(10);
    mtl.hidden = {16, 8};
    std::vector<ModelSpec> stl;
    for (auto t : mtl.tasks) {
        auto s = mtl;
        s.kind = ModelKind::mlp;
        s.tasks = {t};
        stl.push_back(s);
    }
    auto cfg = quick(4);
    cfg.loss_weights = models::LossWeights{1, 0, 0};
    const auto report = run_comparison(stl, mtl, data, cfg, 2);
    REQUIRE(report.rows.size() == 6);
    const Task order[] = {Task::accent, Task::gender, Task::age};
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(report.rows[i].arm == (i < 3 ? "STL" : "MTL"));
        CHECK(report.rows[i].task == order[i % 3]);
    }
    CHECK(report.rows[2].metrics.regression);
    CHECK(report.rows[0].metrics.confusion == report.rows[3].metrics.confusion);

    const models::Model *accent_stl = nullptr, *multitask = nullptr;
    for (const auto &r : report.runs) {
        if (r.spec.kind == ModelKind::multitask_mlp) multitask = r.model.get();
        if (r.spec.kind == ModelKind::mlp && r.spec.tasks.front() == Task::accent) accent_stl = r.model.get();
    }
    REQUIRE(accent_stl);
    REQUIRE(multitask);
    for (const auto &p : accent_stl->parameters())
        for (const auto &q : multitask->parameters())
            if (p.name == q.name) {
                INFO(p.name);
                CHECK(std::vector<float>(p.tensor.data().begin(), p.tensor.data().end()) ==
                      std::vector<float>(q.tensor.data().begin(), q.tensor.data().end()));
            }
}

TEST_CASE("history and metrics serialize as one JSON object per line") {
    History h;
    h.run_id = "r1";
    h.epochs.push_back({1, 0.9, 1.1, {{Task::accent, 0.5}, {Task::age, 0.6}}});
    h.epochs.push_back({2, 0.7, 1.0, {{Task::accent, 0.4}, {Task::age, 0.6}}});
    std::istringstream lines(history_jsonl(h));
    std::string line;
    std::size_t n = 0;
    while (std::getline(lines, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.at("run") == "r1");
        CHECK(j.at("epoch") == n + 1);
        CHECK(j.at("val_task_losses").contains("accent"));
        ++n;
    }
    CHECK(n == 2);

    const std::vector<std::size_t> truth{0, 1, 1}, pred{0, 1, 0};
    const auto cls = nlohmann::json::parse(metrics_jsonl("r1", "test", Task::gender, classification_metrics(truth, pred, 2)));
    CHECK(cls.at("task") == "gender");
    CHECK(cls.at("split") == "test");
    CHECK(cls.at("count") == 3);
    CHECK(cls.at("accuracy").get<double>() == doctest::Approx(2.0 / 3.0));
    CHECK(cls.at("confusion") == nlohmann::json::array({{1, 0}, {1, 1}}));
    const std::vector<double> at{30, 40}, ap{32, 37};
    const auto reg = nlohmann::json::parse(metrics_jsonl("r1", "test", Task::age, regression_metrics(at, ap)));
    CHECK(reg.at("mae").get<double>() == doctest::Approx(2.5));
    CHECK_FALSE(reg.contains("accuracy"));
}

TEST_CASE("summary table and csv") {
    const std::vector<std::size_t> truth{0, 1}, pred{0, 1};
    const std::vector<double> at{30}, ap{31};
    const std::vector<SummaryRow> rows{{"STL", Task::gender, classification_metrics(truth, pred, 2)},
                                       {"MTL", Task::age, regression_metrics(at, ap)}};
    const auto csv = summary_csv(rows);
    CHECK(csv.rfind("run,task,n,accuracy,precision,recall,f1_macro,mae,rmse\n", 0) == 0);
    CHECK(csv.find("MTL,age,1,,,,,") != std::string::npos);
    CHECK(summary_text(rows).find("gender") != std::string::npos);
}
