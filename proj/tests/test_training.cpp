#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "osr/evaluation.hpp"
#include "osr/training.hpp"
#include "osr/tuning.hpp"
#include "support/toy_data.hpp"

using namespace osr;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {

const std::vector<ClassRole> three_known_one_ignored{ClassRole::known, ClassRole::known, ClassRole::known,
                                                      ClassRole::ignored};

TrainConfig quick(Strategy s, std::size_t known, std::size_t epochs = 4) {
    TrainConfig c;
    c.epochs = epochs;
    c.batch_size = 8;
    c.ensemble_size = 1;
    c.seed = 5;
    c.loss = LossSpec{s, 0.1, 2.0, known};
    return c;
}

}  // namespace

TEST_CASE("training separates a linearly separable two-class set") {
    const auto data = testing::toy_samples({ClassRole::known, ClassRole::known}, 20, 32, 1);
    TrainConfig config;
    config.ensemble_size = 1;
    config.loss = LossSpec{Strategy::softmax_threshold, 0, 0, 2};
    auto result = train(Model(testing::toy_network(32, 2), 2), config, data);
    REQUIRE(result.history.size() == config.epochs);
    CHECK(result.history.back().train_accuracy >= 0.99);

    std::vector<Model> models;
    models.push_back(std::move(result.model));
    const auto batch = make_batch(data, [](const Sample& s) -> const std::vector<double>& { return s.x; });
    const auto p = ensemble_predict(models, batch);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) correct += (p.scores[i * 2 + 1] > 0.5) == (data[i].label == 1);
    CHECK(static_cast<double>(correct) / static_cast<double>(data.size()) >= 0.99);
    for (const auto* param : models.front().parameters())
        for (double v : param->value.values()) CHECK(std::isfinite(v));
}

TEST_CASE("first loss with fresh weights is close to ln C") {
    std::vector<ClassRole> roles(20, ClassRole::known);
    const auto data = testing::toy_samples(roles, 3, 64, 2);
    auto c = quick(Strategy::softmax_threshold, 20, 1);
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto r = train(Model(testing::toy_network(64, 20), seed), c, data);
        CHECK_THAT(r.initial_loss, WithinAbs(std::log(20.0), 0.5));
        CHECK_THAT(r.history.front().loss, WithinAbs(std::log(20.0), 0.5));
    }
}

TEST_CASE("same seed gives a bitwise identical loss history") {
    const auto data = testing::toy_samples(three_known_one_ignored, 6, 32, 3);
    for (auto s : all_strategies) {
        auto c = quick(s, 3, 3);
        const auto net = testing::toy_network(32, c.loss.output_count());
        const auto a = train(Model(net, 7), c, data);
        const auto b = train(Model(net, 7), c, data);
        REQUIRE(a.history.size() == b.history.size());
        for (std::size_t e = 0; e < a.history.size(); ++e) {
            CHECK(a.history[e].loss == b.history[e].loss);
            CHECK(a.history[e].train_accuracy == b.history[e].train_accuracy);
        }
        CHECK(a.model.state() == b.model.state());
        c.seed = 6;
        CHECK(train(Model(net, 7), c, data).history.back().loss != a.history.back().loss);
    }
}

TEST_CASE("a NaN loss aborts training with the epoch") {
    auto data = testing::toy_samples({ClassRole::known, ClassRole::known}, 4, 32, 4);
    Model model(testing::toy_network(32, 2), 1);
    model.head().value[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_WITH(train(model, quick(Strategy::softmax_threshold, 2), data), ContainsSubstring("diverged at epoch 0"));

    data[3].x[5] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_WITH(train(Model(testing::toy_network(32, 2), 1), quick(Strategy::softmax_threshold, 2), data),
                      ContainsSubstring("diverged at epoch 0"));
}

TEST_CASE("training refuses never-seen samples before the first epoch") {
    auto data = testing::toy_samples({ClassRole::known, ClassRole::known, ClassRole::never_seen}, 3, 32, 5);
    AccessLog log;
    for (auto s : all_strategies) {
        auto c = quick(s, 2);
        CHECK_THROWS_AS(train(Model(testing::toy_network(32, c.loss.output_count()), 1), c, data, &log), DatasetError);
    }
    CHECK(log.entries().empty());
}

TEST_CASE("training checks the model output count against the strategy") {
    const auto data = testing::toy_samples(three_known_one_ignored, 2, 32, 6);
    CHECK_THROWS_AS(train(Model(testing::toy_network(32, 3), 1), quick(Strategy::background_class, 3), data),
                    TrainingError);
    CHECK_THROWS_AS(train(Model(testing::toy_network(32, 4), 1), quick(Strategy::entropic_open_set, 3), data),
                    TrainingError);
}

TEST_CASE("softmax thresholding trains on known samples only") {
    const auto data = testing::toy_samples(three_known_one_ignored, 4, 32, 7);
    AccessLog log;
    train(Model(testing::toy_network(32, 3), 1), quick(Strategy::softmax_threshold, 3, 1), data, &log);
    for (const auto& e : log.entries()) CHECK(data[e.record_id].role == ClassRole::known);
    AccessLog all;
    train(Model(testing::toy_network(32, 3), 1), quick(Strategy::entropic_open_set, 3, 1), data, &all);
    CHECK(all.entries().size() == data.size());
}

TEST_CASE("train config validation and ini round trip") {
    TrainConfig c;
    c.ensemble_size = 0;
    CHECK_THROWS_AS(c.validate(), TrainingError);
    c = TrainConfig{};
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), TrainingError);

    c = TrainConfig{};
    c.epochs = 12;
    c.learning_rate = 3e-3;
    c.schedule = Schedule::constant;
    c.optimizer = OptimizerKind::sgd;
    c.ensemble_size = 3;
    const auto back = TrainConfig::from_ini(c.to_ini());
    CHECK(back.epochs == 12);
    CHECK(back.learning_rate == 3e-3);
    CHECK(back.schedule == Schedule::constant);
    CHECK(back.optimizer == OptimizerKind::sgd);
    CHECK(back.ensemble_size == 3);
}

TEST_CASE("cosine schedule runs from the initial to the final rate") {
    TrainConfig c;
    CHECK(c.learning_rate_at(0, 100) == 1e-3);
    CHECK_THAT(c.learning_rate_at(99, 100), WithinAbs(1e-5, 1e-18));
    double last = 1.0;
    for (std::size_t s = 0; s < 100; ++s) {
        CHECK(c.learning_rate_at(s, 100) <= last);
        last = c.learning_rate_at(s, 100);
    }
}

TEST_CASE("ensemble seeds differ per run") {
    CHECK(derive_seed(1, 0) != derive_seed(1, 1));
    CHECK(derive_seed(1, 0) != derive_seed(2, 0));
    CHECK(derive_seed(9, 4) == derive_seed(9, 4));
}

TEST_CASE("mean of run scores") {
    const std::vector<Tensor> runs{Tensor({1, 2}, {1.0, 0.0}), Tensor({1, 2}, {0.0, 1.0})};
    const auto m = mean_scores(runs);
    CHECK(m[0] == 0.5);
    CHECK(m[1] == 0.5);
    const std::vector<Tensor> bad{Tensor({1, 2}), Tensor({1, 3})};
    CHECK_THROWS_AS(mean_scores(bad), TrainingError);
}

TEST_CASE("ensemble prediction averages per-run softmax") {
    const auto data = testing::toy_samples(three_known_one_ignored, 3, 32, 8);
    const auto batch = make_batch(data, [](const Sample& s) -> const std::vector<double>& { return s.x; });
    std::vector<Model> models;
    for (std::uint64_t seed : {1u, 2u, 3u}) models.emplace_back(testing::toy_network(32, 3), seed);

    const auto one = ensemble_predict(std::span(models).first(1), batch);
    CHECK(one.scores == softmax_rows(models[0].predict(batch).logits));

    const auto all = ensemble_predict(models, batch);
    for (std::size_t i = 0; i < data.size(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < 3; ++j) {
            const double v = all.scores[i * 3 + j];
            CHECK(v >= 0.0);
            CHECK_THAT(v, WithinAbs((all.run_scores[0][i * 3 + j] + all.run_scores[1][i * 3 + j] +
                                     all.run_scores[2][i * 3 + j]) / 3.0, 1e-15));
            sum += v;
        }
        CHECK_THAT(sum, WithinAbs(1.0, 1e-12));
    }

    std::vector<Model> reversed{models[2], models[0], models[1]};
    const auto perm = ensemble_predict(reversed, batch);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double* a = all.scores.data() + i * 3;
        const double* b = perm.scores.data() + i * 3;
        CHECK(std::max_element(a, a + 3) - a == std::max_element(b, b + 3) - b);
    }

    models.emplace_back(testing::toy_network(32, 4), 4);
    CHECK_THROWS_AS(ensemble_predict(models, batch), TrainingError);
    CHECK_THROWS_AS(ensemble_predict(std::span<const Model>{}, batch), TrainingError);
}

TEST_CASE("train_ensemble runs differ only by seed") {
    const auto data = testing::toy_samples(three_known_one_ignored, 4, 32, 9);
    auto c = quick(Strategy::background_class, 3, 2);
    c.ensemble_size = 2;
    const auto runs = train_ensemble(testing::toy_network(32, 99), c, data);
    REQUIRE(runs.size() == 2);
    CHECK(runs[0].model.output_count() == 4);
    CHECK(runs[0].model.state() != runs[1].model.state());
    const auto again = train_ensemble(testing::toy_network(32, 99), c, data);
    CHECK(again[1].model.state() == runs[1].model.state());
}

TEST_CASE("smoothed loss increases") {
    std::vector<EpochLog> h;
    for (std::size_t e = 0; e < 10; ++e) h.push_back({e, 10.0 - static_cast<double>(e), 0.0});
    CHECK(smoothed_loss_increases(h).empty());
    h[9].loss = 100.0;
    CHECK(smoothed_loss_increases(h) == std::vector<std::size_t>{9});
    CHECK(smoothed_loss_increases(std::span(h).first(5)).empty());
}

TEST_CASE("alpha-beta tuning") {
    const auto train_set = testing::toy_samples(three_known_one_ignored, 6, 32, 10);
    const auto validation = testing::toy_samples(three_known_one_ignored, 3, 32, 11);
    const auto grid = default_threshold_grid();
    const auto net = testing::toy_network(32, 3);
    auto c = quick(Strategy::objectosphere, 3, 3);

    SECTION("a single point is returned") {
        const std::vector<GridPoint> one{{0.5, 3.0}};
        const auto r = tune_alpha_beta(one, net, c, train_set, validation, grid);
        CHECK(r.best == 0);
        CHECK(r.best_row().point.alpha == 0.5);
        CHECK(r.table.size() == 1);
    }

    SECTION("alpha 0 reproduces an entropic open set run") {
        const std::vector<GridPoint> points{{0.0, 3.0}, {0.2, 3.0}};
        const auto r = tune_alpha_beta(points, net, c, train_set, validation, grid);
        REQUIRE(r.table.size() == 2);

        auto e = c;
        e.loss.strategy = Strategy::entropic_open_set;
        e.loss.alpha = 0.0;
        auto runs = train_ensemble(net, e, train_set);
        std::vector<Model> models;
        for (auto& run : runs) models.push_back(std::move(run.model));
        const auto op = select_operating_point(threshold_sweep(score(models, validation, Strategy::entropic_open_set), grid));
        const auto& at0 = r.table[0].operating;
        CHECK(at0.index == op.index);
        CHECK(at0.fp_free == op.fp_free);
        CHECK(at0.row.inconclusive_rate == op.row.inconclusive_rate);
        CHECK(at0.row.fp_ignored == op.row.fp_ignored);
        CHECK(at0.row.accuracy == op.row.accuracy);
    }

    SECTION("errors") {
        CHECK_THROWS_AS(tune_alpha_beta({}, net, c, train_set, validation, grid), std::invalid_argument);
        const std::vector<GridPoint> one{{0.5, 3.0}};
        auto tainted = validation;
        tainted[0].role = ClassRole::never_seen;
        CHECK_THROWS_AS(tune_alpha_beta(one, net, c, train_set, tainted, grid), DatasetError);
    }
}

TEST_CASE("tuning prefers zero ignored FP, then fewer inconclusive, then smaller alpha and beta") {
    auto row = [](double a, double b, bool free, double inc, double fp) {
        TuningRow r;
        r.point = {a, b};
        r.operating.fp_free = free;
        r.operating.row.inconclusive_rate = inc;
        r.operating.row.fp_ignored = fp;
        return r;
    };
    CHECK(detail::tuning_better(row(1, 1, true, 0.5, 0), row(0, 0, false, 0.0, 0.01)));
    CHECK(detail::tuning_better(row(1, 1, true, 0.01, 0), row(0, 0, true, 0.02, 0)));
    CHECK(detail::tuning_better(row(0.1, 9, true, 0.01, 0), row(0.2, 1, true, 0.01, 0)));
    CHECK(detail::tuning_better(row(0.1, 1, true, 0.01, 0), row(0.1, 2, true, 0.01, 0)));
    CHECK(detail::tuning_better(row(1, 1, false, 0.5, 0.01), row(0, 0, false, 0.0, 0.02)));
    CHECK(!detail::tuning_better(row(0.1, 1, true, 0.01, 0), row(0.1, 1, true, 0.01, 0)));
}
