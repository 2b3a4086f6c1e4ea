#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include <doctest.h>

#include "csisense/ghostnet.hpp"
#include "mini_model.hpp"

using namespace csisense;
namespace fs = std::filesystem;

namespace {

Tensor randx(Shape shape, uint32_t seed) {
    std::mt19937 rng{seed};
    return Tensor::randn(std::move(shape), rng, 0.5f);
}

std::string tmp_path(const char* name) {
    return (fs::temp_directory_path() / name).string();
}

}  // namespace

TEST_SUITE("ghostnet") {

TEST_CASE("default build hits the structural budget") {
    BranchyModel m = build_branchy_ghostnet(BranchyConfig{});
    LayerCounts c = m.count(m.input_shape());
    CHECK(c.conv == 97);
    CHECK(c.fc == 2);
    CHECK(c.macs >= 310'000'000LL);
    CHECK(c.macs <= 430'000'000LL);
    LayerCounts e = m.count_early(m.input_shape());
    CHECK(double(e.macs) / double(c.macs) <= 0.60);
}

TEST_CASE("conv MAC accounting matches hand arithmetic") {
    std::mt19937 rng{0};
    // 3->8 channels, 3x3, pad 1 stride 1 on 10x10: 8*10*10 outputs x 3*3*3 each
    Conv2d conv(3, 8, 3, 1, 1, false, rng);
    LayerCounts c;
    Shape3 out = conv.account({3, 10, 10}, c);
    CHECK(out.c == 8);
    CHECK(out.h == 10);
    CHECK(c.conv == 1);
    CHECK(c.macs == 8LL * 10 * 10 * 3 * 3 * 3);

    Conv2d dw(8, 8, 3, 2, 1, true, rng);
    LayerCounts cd;
    Shape3 outd = dw.account({8, 10, 10}, cd);
    CHECK(outd.c == 8);
    CHECK(outd.h == 5);
    CHECK(cd.macs == 8LL * 5 * 5 * 3 * 3);
}

TEST_CASE("ghost module doubles intrinsic channels and keeps spatial dims") {
    std::mt19937 rng{1};
    GhostModule g(8, 16, 2, 1, 3, 1, true, rng);
    Tensor y = g.forward(randx({1, 8, 6, 6}, 2), false);
    CHECK(y.shape() == Shape{1, 16, 6, 6});
}

TEST_CASE("SE block with zeroed gate weights halves activations") {
    std::mt19937 rng{3};
    SEBlock se(4, 4, rng);
    std::fill(se.reduce->weight.values().begin(), se.reduce->weight.values().end(), 0.f);
    std::fill(se.expand->weight.values().begin(), se.expand->weight.values().end(), 0.f);
    Tensor x = Tensor::full({1, 4, 2, 2}, 2.0f);
    Tensor y = se.forward(x, false);  // gate = hard_sigmoid(0) = 0.5
    for (float v : y.values()) CHECK(v == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("bottleneck shapes: identity and strided shortcut") {
    std::mt19937 rng{4};
    GhostBottleneck same(8, 16, 8, 3, 1, false, rng);
    CHECK(same.forward(randx({1, 8, 8, 8}, 5), false).shape() == Shape{1, 8, 8, 8});
    GhostBottleneck down(8, 24, 12, 3, 2, true, rng);
    CHECK(down.forward(randx({1, 8, 8, 8}, 6), false).shape() == Shape{1, 12, 4, 4});
}

TEST_CASE("early exit fires exactly for occupancy labels 0 and 2") {
    BranchyModel m = testing::make_mini_model(7);
    // zero the early FC weight so the bias alone decides the label
    std::fill(m.early_fc_w.values().begin(), m.early_fc_w.values().end(), 0.f);
    Tensor x = randx({1, 3, 16, 20}, 8);
    for (int label = 0; label < 3; ++label) {
        std::fill(m.early_fc_b.values().begin(), m.early_fc_b.values().end(), 0.f);
        m.early_fc_b.values()[size_t(label)] = 5.0f;
        InferenceOutcome out = m.forward_with_exit(x);
        CHECK(out.rod_label == label);
        if (label == 1) {
            CHECK_FALSE(out.exited_early);
            REQUIRE(out.har_probs.has_value());
            CHECK(out.har_label.has_value());
        } else {
            CHECK(out.exited_early);
            CHECK_FALSE(out.har_probs.has_value());
            CHECK_FALSE(out.har_label.has_value());
        }
    }
}

TEST_CASE("forward_full evaluates the shared trunk once") {
    BranchyModel m = testing::make_mini_model(9);
    Tensor x = randx({1, 3, 16, 20}, 10);
    NoGradGuard ng;

    reset_op_stats();
    m.forward_full(x, false);
    OpStats full = op_stats();

    reset_op_stats();
    Tensor at_branch = m.trunk_to(x, 0, m.branch_index, false);
    m.early_branch(at_branch, false);
    Tensor trunk_out = m.trunk_to(at_branch, m.branch_index, int(m.trunk.size()), false);
    m.final_branch(trunk_out, false);
    OpStats staged = op_stats();

    CHECK(full.conv2d == staged.conv2d);
    CHECK(full.depthwise == staged.depthwise);
    CHECK(full.linear == staged.linear);
    CHECK(full.total() == staged.total());
}

TEST_CASE("rod logits agree between the forced-early helper and forward_full") {
    BranchyModel m = testing::make_mini_model(11);
    Tensor x = randx({1, 3, 16, 20}, 12);
    NoGradGuard ng;
    Tensor from_full = m.forward_full(x, false).first;
    Tensor early = m.forward_early_only(x);
    CHECK(from_full.values() == early.values());
}

TEST_CASE("replicate_channels copies the plane") {
    Tensor x = Tensor::from_data({1, 1, 1, 3}, {1.f, 2.f, 3.f});
    Tensor y = replicate_channels(x);
    REQUIRE(y.shape() == Shape{1, 3, 1, 3});
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 3; ++i)
            CHECK(y.values()[size_t(c * 3 + i)] == float(i + 1));
}

TEST_CASE("checkpoint round trip is bit exact") {
    const std::string path = tmp_path("csisense-ckpt-roundtrip.bgcn");
    BranchyModel m = build_branchy_ghostnet(0.25f, 3, 13);
    save_weights(m, path);
    BranchyModel loaded = load_weights(path);
    CHECK(loaded.topology_hash() == m.topology_hash());
    Tensor x = randx({1, 3, 64, 80}, 14);
    NoGradGuard ng;
    auto [rod_a, har_a] = m.forward_full(x, false);
    auto [rod_b, har_b] = loaded.forward_full(x, false);
    CHECK(rod_a.values() == rod_b.values());
    CHECK(har_a.values() == har_b.values());
    fs::remove(path);
}

TEST_CASE("checkpoint loader rejects corruption") {
    const std::string good = tmp_path("csisense-ckpt-good.bgcn");
    BranchyModel m = build_branchy_ghostnet(0.25f, 3, 15);
    save_weights(m, good);

    SUBCASE("truncated file") {
        const std::string bad = tmp_path("csisense-ckpt-truncated.bgcn");
        std::ifstream in(good, std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
        std::ofstream out(bad, std::ios::binary);
        out.write(bytes.data(), std::streamsize(bytes.size() / 2));
        out.close();
        CHECK_THROWS_AS(load_weights(bad), FormatError);
        fs::remove(bad);
    }
    SUBCASE("bad magic") {
        const std::string bad = tmp_path("csisense-ckpt-magic.bgcn");
        std::ifstream in(good, std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
        bytes[0] = 'X';
        std::ofstream out(bad, std::ios::binary);
        out.write(bytes.data(), std::streamsize(bytes.size()));
        out.close();
        CHECK_THROWS_AS(load_weights(bad), FormatError);
        fs::remove(bad);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_weights(tmp_path("csisense-ckpt-nonexistent.bgcn")),
                        FormatError);
    }
    fs::remove(good);
}

TEST_CASE("build rejects invalid configurations") {
    CHECK_THROWS_AS(build_branchy_ghostnet(0.0f, 3), BuildError);
    CHECK_THROWS_AS(build_branchy_ghostnet(1.0f, 0), BuildError);
    CHECK_THROWS_AS(build_branchy_ghostnet(1.0f, 17), BuildError);
}

}  // TEST_SUITE
