#include <cmath>
#include <random>

#include <doctest.h>

#include "csisense/train.hpp"
#include "mini_model.hpp"

using namespace csisense;

TEST_SUITE("train") {

TEST_CASE("joint loss on uniform logits is ln3 + ln5") {
    Tensor rod = Tensor::zeros({4, 3});
    Tensor har = Tensor::zeros({4, 5});
    auto [loss, report] = joint_loss(rod, har, {0, 1, 2, 0}, {0, 1, 2, 3});
    CHECK(report.total ==
          doctest::Approx(std::log(3.0) + std::log(5.0)).epsilon(1e-6));
    CHECK(loss.item64() == doctest::Approx(report.total).epsilon(1e-9));
    CHECK(report.rod_ce == doctest::Approx(std::log(3.0)).epsilon(1e-6));
    CHECK(report.har_ce == doctest::Approx(std::log(5.0)).epsilon(1e-6));
}

TEST_CASE("har term is averaged over the labeled subset only") {
    Tensor rod = Tensor::zeros({3, 3});
    Tensor har = Tensor::zeros({3, 5});
    auto [loss, report] = joint_loss(rod, har, {0, 1, 2}, {-1, 2, -1});
    CHECK(report.har_ce == doctest::Approx(std::log(5.0)).epsilon(1e-6));
    auto [loss2, report2] = joint_loss(rod, har, {0, 1, 2}, {-1, -1, -1});
    CHECK(report2.har_ce == doctest::Approx(0.0));
    CHECK(report2.total == doctest::Approx(std::log(3.0)).epsilon(1e-6));
    (void)loss;
    (void)loss2;
}

TEST_CASE("har loss term never reaches early-branch parameters") {
    BranchyModel m = csisense::testing::make_mini_model(1);
    std::mt19937 rng{2};
    Tensor x = Tensor::randn({2, 3, 16, 20}, rng, 0.5f);
    auto [rod_logits, har_logits] = m.forward_full(x, true);
    // har term only: rod weight 0
    auto [loss, report] = joint_loss(rod_logits, har_logits, {1, 1}, {0, 3}, 0.0f, 1.0f);
    backward(loss);
    for (size_t i = 0; i < m.early_fc_w.size(); ++i)
        CHECK(m.early_fc_w.grad_values()[i] == 0.0f);
    bool final_touched = false;
    for (size_t i = 0; i < m.final_fc_w.size(); ++i)
        final_touched = final_touched || m.final_fc_w.grad_values()[i] != 0.0f;
    CHECK(final_touched);
    (void)report;
}

TEST_CASE("AdamW first step follows the hand computation") {
    Tensor p = Tensor::from_data({2}, {1.0f, -2.0f}, true);
    AdamW opt({p}, 0.9f, 0.999f, 0.0f);
    p.grad()[0] = 0.5f;
    p.grad()[1] = -0.25f;
    opt.step(0.1f);
    // bias-corrected mhat = g, vhat = g^2 -> update = lr * g/(|g|+eps) = lr*sign(g)
    CHECK(p.values()[0] == doctest::Approx(1.0 - 0.1).epsilon(1e-4));
    CHECK(p.values()[1] == doctest::Approx(-2.0 + 0.1).epsilon(1e-4));
}

TEST_CASE("weight decay is decoupled from the moments") {
    Tensor p = Tensor::from_data({1}, {4.0f}, true);
    AdamW opt({p}, 0.9f, 0.999f, 0.1f);
    // zero gradient: moments must stay zero, parameter still decays
    opt.zero_grad();
    opt.step(0.5f);
    CHECK(opt.first_moments()[0][0] == 0.0f);
    CHECK(opt.second_moments()[0][0] == 0.0f);
    CHECK(p.values()[0] == doctest::Approx(4.0 * (1.0 - 0.5 * 0.1)).epsilon(1e-6));
}

TEST_CASE("cosine schedule endpoints and midpoint") {
    CHECK(cosine_lr(0, 400, 1e-3, 1e-5) == doctest::Approx(1e-3));
    CHECK(cosine_lr(400, 400, 1e-3, 1e-5) == doctest::Approx(1e-5));
    CHECK(cosine_lr(200, 400, 1e-3, 1e-5) ==
          doctest::Approx((1e-3 + 1e-5) / 2).epsilon(1e-9));
    CHECK_THROWS_AS(cosine_lr(-1, 400, 1e-3, 1e-5), ValueError);
    CHECK_THROWS_AS(cosine_lr(401, 400, 1e-3, 1e-5), ValueError);
}

TEST_CASE("augmentation") {
    RadioImage img = synth_generate(1, 1, 3, 1)[0];
    SUBCASE("deterministic per seed") {
        AugmentConfig cfg;
        RadioImage a = augment(img, 77, cfg);
        RadioImage b = augment(img, 77, cfg);
        CHECK(a.values == b.values);
        RadioImage c = augment(img, 78, cfg);
        CHECK(a.values != c.values);
    }
    SUBCASE("identity configuration is a no-op") {
        AugmentConfig cfg;
        cfg.crop_scale_min = cfg.crop_scale_max = 1.0f;
        cfg.flip = false;
        cfg.jitter_brightness = cfg.jitter_contrast = 0.0f;
        RadioImage a = augment(img, 5, cfg);
        CHECK(a.values == img.values);
    }
    SUBCASE("shape and range preserved") {
        RadioImage a = augment(img, 9);
        CHECK(a.rows == img.rows);
        CHECK(a.cols == img.cols);
        for (float v : a.values) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
        CHECK(a.rod_label == img.rod_label);
        CHECK(a.har_label == img.har_label);
    }
}

TEST_CASE("metrics from a hand confusion matrix") {
    // true rows, predicted cols
    MetricsReport r = metrics_from_confusion({{2, 1}, {0, 3}});
    CHECK(r.accuracy == doctest::Approx(5.0 / 6.0));
    CHECK(r.macro_precision == doctest::Approx((2.0 / 2 + 3.0 / 4) / 2));
    CHECK(r.macro_recall == doctest::Approx((2.0 / 3 + 3.0 / 3) / 2));
    CHECK(r.micro_precision == doctest::Approx(5.0 / 6.0));
    const double p0 = 1.0, r0 = 2.0 / 3, p1 = 0.75, r1 = 1.0;
    const double f0 = 2 * p0 * r0 / (p0 + r0), f1 = 2 * p1 * r1 / (p1 + r1);
    CHECK(r.macro_f1 == doctest::Approx((f0 + f1) / 2));
}

TEST_CASE("training is deterministic and reduces the loss") {
    std::vector<RadioImage> data;
    for (int rod = 0; rod < 3; ++rod) {
        auto s = synth_generate(rod, rod == 1 ? std::optional<int>(2) : std::nullopt,
                                400 + rod, 6);
        data.insert(data.end(), s.begin(), s.end());
    }
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 6;
    cfg.seed = 11;
    cfg.augment = false;
    cfg.base_lr = 3e-3f;

    BranchyModel m1 = csisense::testing::make_mini_model(11);
    TrainResult r1 = train(m1, data, cfg);
    BranchyModel m2 = csisense::testing::make_mini_model(11);
    TrainResult r2 = train(m2, data, cfg);

    REQUIRE(r1.history.size() == 3);
    for (size_t e = 0; e < r1.history.size(); ++e)
        CHECK(r1.history[e].loss.total == r2.history[e].loss.total);
    CHECK(m1.early_fc_w.values() == m2.early_fc_w.values());
    CHECK(r1.history.back().loss.total < r1.history.front().loss.total);
}

TEST_CASE("training config JSON round trip") {
    TrainConfig cfg;
    cfg.epochs = 42;
    cfg.base_lr = 2.5e-4f;
    cfg.augment = false;
    TrainConfig back = TrainConfig::from_json(cfg.to_json());
    CHECK(back.epochs == 42);
    CHECK(back.base_lr == doctest::Approx(2.5e-4));
    CHECK(back.augment == false);
    CHECK(back.batch_size == cfg.batch_size);
}

}  // TEST_SUITE
