#include <doctest.h>
#include <json.hpp>

#include "csisense/bench.hpp"
#include "csisense/csi.hpp"
#include "csisense/train.hpp"
#include "mini_model.hpp"

using namespace csisense;

namespace {

std::vector<Tensor> synth_inputs(int n, int h = 16, int w = 20) {
    std::vector<Tensor> out;
    std::mt19937 rng{99};
    for (int i = 0; i < n; ++i)
        out.push_back(Tensor::randn({1, 3, h, w}, rng, 0.5f));
    return out;
}

}  // namespace

TEST_SUITE("bench") {

TEST_CASE("measure validates its repetition counts") {
    BranchyModel m = csisense::testing::make_mini_model(1);
    auto inputs = synth_inputs(2);
    CHECK_THROWS_AS(measure(m, inputs, BenchPath::full, 0, 0), ValueError);
    CHECK_THROWS_AS(measure(m, inputs, BenchPath::full, -1, 5), ValueError);
    CHECK_THROWS_AS(measure(m, std::vector<Tensor>{}, BenchPath::full, 0, 5), ValueError);
}

TEST_CASE("forced paths populate their side of the report") {
    BranchyModel m = csisense::testing::make_mini_model(2);
    auto inputs = synth_inputs(3);
    LatencyReport early = measure(m, inputs, BenchPath::early, 1, 12);
    CHECK(early.samples == 12);
    CHECK(early.mean_early_ns > 0.0);
    CHECK(early.p95_early_ns >= early.median_early_ns);
    CHECK(early.early_fraction == 1.0);
    LatencyReport full = measure(m, inputs, BenchPath::full, 1, 12);
    CHECK(full.mean_full_ns > 0.0);
    CHECK(full.early_fraction == 0.0);
    CHECK(full.mac_ratio > 0.0);
    CHECK(full.mac_ratio < 1.0);
    LatencyReport autop = measure(m, inputs, BenchPath::automatic, 1, 12);
    CHECK(autop.early_fraction >= 0.0);
    CHECK(autop.early_fraction <= 1.0);
}

TEST_CASE("forced-early path reproduces the auto-path rod probabilities") {
    BranchyModel m = csisense::testing::make_mini_model(3);
    auto inputs = synth_inputs(4);
    for (const Tensor& x : inputs) {
        InferenceOutcome out = m.forward_with_exit(x);
        std::vector<float> forced = softmax_rows(m.forward_early_only(x));
        REQUIRE(forced.size() == out.rod_probs.size());
        for (size_t i = 0; i < forced.size(); ++i)
            CHECK(forced[i] == out.rod_probs[i]);
    }
}

TEST_CASE("analytic mac ratio of the mini model matches its layer counts") {
    BranchyModel m = csisense::testing::make_mini_model(4);
    const double r = mac_ratio(m);
    LayerCounts full = m.count(m.input_shape());
    LayerCounts early = m.count_early(m.input_shape());
    CHECK(r == doctest::Approx(double(early.macs) / double(full.macs)).epsilon(1e-12));
}

TEST_CASE("json report round trip") {
    BranchyModel m = csisense::testing::make_mini_model(5);
    auto inputs = synth_inputs(2);
    LatencyReport r = measure(m, inputs, BenchPath::full, 1, 6);
    nlohmann::json j = nlohmann::json::parse(report_json(r));
    CHECK(j["samples"] == 6);
    CHECK(j["schema_version"] == 1);
    CHECK(j["full"]["mean_ns"].get<double>() > 0.0);
    CHECK(j["early"].contains("p95_ns"));
    CHECK(j.contains("speedup_reduction"));
    CHECK(j.contains("mac_ratio"));
    LatencyReport empty;
    CHECK_THROWS_AS(report_json(empty), ValueError);
    CHECK_THROWS_AS(report_table(empty), ValueError);
}

}  // TEST_SUITE
