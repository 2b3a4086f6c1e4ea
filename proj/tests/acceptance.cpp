// Acceptance gate: one line of output per criterion, nonzero exit if any fail.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <httplib.h>

#include "csisense/bench.hpp"
#include "csisense/csi.hpp"
#include "csisense/ghostnet.hpp"
#include "csisense/monitor.hpp"
#include "csisense/train.hpp"
#include "mini_model.hpp"

using namespace csisense;
namespace fs = std::filesystem;

namespace {

struct Criterion {
    int id;
    const char* name;
    std::function<bool(std::string&)> run;
};

std::string tmp_path(const std::string& name) {
    return (fs::temp_directory_path() / name).string();
}

std::vector<char> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::vector<char>((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
}

// balanced scenario mix: nobody, one person x five activities, two persons
std::vector<RadioImage> make_synth_dataset(int count, uint64_t seed) {
    struct S {
        int rod;
        std::optional<int> har;
    };
    const std::vector<S> scenarios = {{0, std::nullopt}, {1, 0}, {1, 1}, {1, 2},
                                      {1, 3},            {1, 4}, {2, std::nullopt}};
    std::vector<RadioImage> all;
    const int per = count / int(scenarios.size());
    for (size_t s = 0; s < scenarios.size(); ++s) {
        const int n = s + 1 == scenarios.size() ? count - per * int(scenarios.size() - 1)
                                                : per;
        auto batch = synth_generate(scenarios[s].rod, scenarios[s].har,
                                    seed * 977 + s, n);
        all.insert(all.end(), batch.begin(), batch.end());
    }
    return all;
}

bool structural_fidelity(std::string& detail) {
    BranchyModel m = build_branchy_ghostnet(BranchyConfig{});
    LayerCounts c = m.count(m.input_shape());
    std::ostringstream os;
    os << "conv=" << c.conv << " fc=" << c.fc;
    detail = os.str();
    return c.conv == 97 && c.fc == 2;
}

bool mac_budget(std::string& detail) {
    BranchyModel m = build_branchy_ghostnet(BranchyConfig{});
    LayerCounts c = m.count(m.input_shape());
    std::ostringstream os;
    os << "macs=" << c.macs << " at 3x234x300";
    detail = os.str();
    return c.macs >= 310'000'000LL && c.macs <= 430'000'000LL;
}

bool early_exit_latency(std::string& detail) {
#ifdef _OPENMP
    omp_set_num_threads(1);
#endif
    BranchyModel m = build_branchy_ghostnet(BranchyConfig{});
    std::mt19937 rng{5};
    std::vector<Tensor> inputs;
    for (int i = 0; i < 4; ++i)
        inputs.push_back(Tensor::randn({1, 3, 234, 300}, rng, 0.5f));
    LatencyReport early = measure(m, inputs, BenchPath::early, 2, 30);
    LatencyReport full = measure(m, inputs, BenchPath::full, 2, 30);
    const double latency_ratio = early.mean_early_ns / full.mean_full_ns;
    const double mr = mac_ratio(m);
    std::ostringstream os;
    os << "mean early " << early.mean_early_ns / 1e6 << " ms / full "
       << full.mean_full_ns / 1e6 << " ms = " << latency_ratio << " (<=0.65), mac_ratio "
       << mr << " (<=0.60), 30 reps each";
    detail = os.str();
    return latency_ratio <= 0.65 && mr <= 0.60;
}

bool exit_criterion(std::string& detail) {
    BranchyModel m = csisense::testing::make_mini_model(3);
    std::fill(m.early_fc_w.values().begin(), m.early_fc_w.values().end(), 0.f);
    std::mt19937 rng{4};
    Tensor x = Tensor::randn({1, 3, 16, 20}, rng, 0.5f);
    bool ok = true;
    for (int label = 0; label < 3; ++label) {
        std::fill(m.early_fc_b.values().begin(), m.early_fc_b.values().end(), 0.f);
        m.early_fc_b.values()[size_t(label)] = 4.0f;
        InferenceOutcome out = m.forward_with_exit(x);
        ok = ok && out.rod_label == label;
        if (label == 0 || label == 2)
            ok = ok && out.exited_early && !out.har_probs.has_value();
        else
            ok = ok && !out.exited_early && out.har_probs.has_value() &&
                 out.har_label.has_value();
    }
    detail = "exits for argmax 0 and 2, full path with HAR output for argmax 1";
    return ok;
}

bool joint_loss_correctness(std::string& detail) {
    Tensor rod = Tensor::zeros({6, 3});
    Tensor har = Tensor::zeros({6, 5});
    auto [loss, report] =
        joint_loss(rod, har, {0, 1, 2, 0, 1, 2}, {0, 1, 2, 3, 4, 0});
    const double expected = std::log(3.0) + std::log(5.0);
    const double err = std::abs(report.total - expected);

    // branch exclusivity: each loss term leaves the other head's params untouched
    BranchyModel m = csisense::testing::make_mini_model(6);
    std::mt19937 rng{7};
    Tensor x = Tensor::randn({2, 3, 16, 20}, rng, 0.5f);
    auto [rl, hl] = m.forward_full(x, true);
    auto [har_only, rep1] = joint_loss(rl, hl, {1, 1}, {0, 2}, 0.0f, 1.0f);
    backward(har_only);
    bool exclusive = true;
    for (float g : m.early_fc_w.grad_values()) exclusive = exclusive && g == 0.0f;
    m.early_fc_w.zero_grad();
    m.final_fc_w.zero_grad();
    auto [rl2, hl2] = m.forward_full(x, true);
    auto [rod_only, rep2] = joint_loss(rl2, hl2, {1, 1}, {0, 2}, 1.0f, 0.0f);
    backward(rod_only);
    for (float g : m.final_fc_w.grad_values()) exclusive = exclusive && g == 0.0f;
    bool early_touched = false;
    for (float g : m.early_fc_w.grad_values()) early_touched = early_touched || g != 0.0f;

    std::ostringstream os;
    os << "uniform-logits total=" << report.total << " (ln3+ln5=" << expected
       << ", err=" << err << "), branch-exclusive gradients "
       << (exclusive && early_touched ? "hold" : "VIOLATED");
    detail = os.str();
    return err <= 1e-4 && exclusive && early_touched;
}

bool gradient_fidelity(std::string& detail) {
    double worst = 0.0;
    auto probe = [&](double err) { worst = std::max(worst, err); };
    std::mt19937 rng{11};
    auto rt = [&](Shape s) { return Tensor::randn(std::move(s), rng, 0.5f, true); };

    {
        Tensor x = rt({1, 2, 6, 7}), w = rt({3, 2, 3, 3});
        probe(finite_diff_check([&] { return sum(conv2d(x, w, 1, 1)); }, {x, w}, 1e-2));
    }
    {
        Tensor x = rt({1, 4, 6, 6}), w = rt({4, 1, 3, 3});
        probe(finite_diff_check([&] { return sum(depthwise_conv2d(x, w, 2, 1)); },
                                {x, w}, 1e-2));
    }
    {
        Tensor x = rt({3, 2, 4, 4});
        Tensor gamma = Tensor::full({2}, 1.1f, true), beta = Tensor::full({2}, 0.2f, true);
        Tensor k = rt({3, 2, 4, 4});  // random weighting keeps the x-grad nonzero
        k.set_requires_grad(false);
        probe(finite_diff_check(
            [&] {
                Tensor rm = Tensor::zeros({2}), rv = Tensor::full({2}, 1.f);
                Tensor y = batch_norm(x, gamma, beta, rm, rv, true, 0.1f, 1e-5f);
                return sum(mul(mul(y, k), y));
            },
            {x, gamma, beta}, 1e-3));
    }
    {
        Tensor x = Tensor::from_data({2, 3}, {-1.f, 2.f, -0.6f, 0.8f, 1.4f, -2.f}, true);
        probe(finite_diff_check([&] { return sum(mul(relu(x), relu(x))); }, {x}, 1e-2));
        probe(finite_diff_check(
            [&] { return sum(mul(hard_sigmoid(x), hard_sigmoid(x))); }, {x}, 1e-2));
    }
    {
        Tensor x = rt({2, 3, 4, 5});
        probe(finite_diff_check(
            [&] {
                Tensor p = global_avg_pool(x);
                return sum(mul(p, p));
            },
            {x}, 1e-2));
    }
    {
        Tensor x = rt({3, 4}), w = rt({2, 4}), b = rt({2});
        probe(finite_diff_check(
            [&] {
                Tensor y = linear(x, w, b);
                return sum(mul(y, y));
            },
            {x, w, b}, 1e-2));
    }
    {
        Tensor logits = rt({4, 5});
        probe(finite_diff_check(
            [&] { return softmax_cross_entropy(logits, {0, -1, 4, 2}); }, {logits},
            1e-3));
    }
    {
        Tensor a = rt({2, 2, 3, 3}), b = rt({2, 2, 3, 3}), g = rt({2, 4});
        probe(finite_diff_check(
            [&] {
                Tensor c = concat_channels(add(a, b), mul(a, b));
                Tensor s = scale_channels(c, hard_sigmoid(g));
                Tensor f = reshape(s, {2, 36});
                return sum(mul(f, f));
            },
            {a, b, g}, 1e-3));
    }

    // two-bottleneck model end to end under the joint loss
    BranchyModel m = csisense::testing::make_mini_model(12);
    Tensor x = Tensor::randn({2, 3, 16, 20}, rng, 0.5f);
    probe(finite_diff_check(
        [&] {
            auto [rl, hl] = m.forward_full(x, true);
            return joint_loss(rl, hl, {1, 2}, {0, -1}).first;
        },
        m.parameters(), 1e-3, 3));

    std::ostringstream os;
    os << "max relative error " << worst << " (< 1e-4) across ops and the "
          "two-bottleneck model";
    detail = os.str();
    return worst < 1e-4;
}

bool desk_scale_learning(std::string& detail) {
    std::vector<RadioImage> all = make_synth_dataset(600, 31);
    std::vector<RadioImage> train_set, test_set;
    for (size_t i = 0; i < all.size(); ++i)
        (i % 5 == 0 ? test_set : train_set).push_back(all[i]);

    BranchyConfig bc;
    bc.width_multiplier = 0.25f;
    bc.branch_after_bottleneck = 3;
    bc.seed = 17;
    BranchyModel model = build_branchy_ghostnet(bc);

    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.batch_size = 24;
    cfg.base_lr = 2e-3f;
    cfg.min_lr = 2e-4f;
    cfg.weight_decay = 1e-4f;
    cfg.seed = 17;
    cfg.augment = false;

    double rod_acc = 0.0, har_acc = 0.0;
    int epochs_run = 0;
    train(model, train_set, cfg, [&](const EpochRecord& r) {
        epochs_run = r.epoch + 1;
        MetricsReport rod = evaluate(model, test_set, EvalMode::rod);
        MetricsReport har = evaluate(model, test_set, EvalMode::har);
        rod_acc = rod.accuracy;
        har_acc = har.accuracy;
        std::fprintf(stderr,
                     "  epoch %d: loss %.4f, held-out rod %.3f har %.3f\n", r.epoch,
                     r.loss.total, rod_acc, har_acc);
        return !(rod_acc >= 0.95 && har_acc >= 0.90);  // stop once both hold
    });

    // evaluate() must agree with a hand confusion matrix on a 20-sample subset
    std::vector<RadioImage> subset(test_set.begin(), test_set.begin() + 20);
    std::vector<std::vector<long>> hand(3, std::vector<long>(3, 0));
    {
        NoGradGuard ng;
        for (const RadioImage& img : subset) {
            std::vector<const RadioImage*> one = {&img};
            Tensor rod_logits = model.forward_full(batch_input(one), false).first;
            std::vector<float> probs = softmax_rows(rod_logits);
            int pred = 0;
            for (int k = 1; k < 3; ++k)
                if (probs[size_t(k)] > probs[size_t(pred)]) pred = k;
            ++hand[size_t(*img.rod_label)][size_t(pred)];
        }
    }
    MetricsReport sub = evaluate(model, subset, EvalMode::rod);
    const bool confusion_match = sub.confusion == hand;

    std::ostringstream os;
    os << "rod " << rod_acc << " (>=0.95), har " << har_acc << " (>=0.90) after "
       << epochs_run << " epochs (<=50); 20-sample confusion "
       << (confusion_match ? "matches" : "MISMATCH");
    detail = os.str();
    return rod_acc >= 0.95 && har_acc >= 0.90 && epochs_run <= 50 && confusion_match;
}

bool pipeline_shape_chain(std::string& detail) {
    const std::string pcap = tmp_path("csisense-acc-shape.pcap");
    write_csi_pcap(pcap, synth_frames(1, 2, 19, 300), 5500);
    ParseStats stats;
    std::vector<CsiFrame> frames = parse_csi_pcap_file(pcap, 5500, stats);
    size_t dropped = 0;
    std::vector<CsiMatrix> mats = assemble_matrices(frames, 300, dropped);
    bool ok = mats.size() == 1 && mats[0].rows == 256 && mats[0].cols == 300;
    CsiMatrix filtered = filter_subcarriers(mats[0], SubcarrierMask::vht80_default());
    RadioImage img = to_radio_image(moving_average(filtered, 5));
    ok = ok && filtered.rows == 234 && img.rows == 234 && img.cols == 300 &&
         (mats[0].rows - filtered.rows) == 22;
    std::ostringstream os;
    os << "300 frames -> " << mats[0].rows << "x" << mats[0].cols << " -> " << img.rows
       << "x" << img.cols << " (removed " << mats[0].rows - filtered.rows << " = 8+14)";
    detail = os.str();
    fs::remove(pcap);
    return ok;
}

bool preprocessing_oracles(std::string& detail) {
    CsiMatrix m;
    m.rows = 1;
    m.cols = 4;
    m.amp = {0.f, 3.f, 6.f, 9.f};
    CsiMatrix id = moving_average(m, 1);
    CsiMatrix w3 = moving_average(m, 3);
    const std::vector<float> expect = {0.f, 1.5f, 3.f, 6.f};
    bool ok = id.amp == m.amp;
    for (int i = 0; i < 4; ++i) ok = ok && std::abs(w3.amp[size_t(i)] - expect[size_t(i)]) < 1e-6f;
    CsiMatrix flat;
    flat.rows = 2;
    flat.cols = 2;
    flat.amp = {5.f, 5.f, 5.f, 5.f};
    RadioImage img = to_radio_image(flat);
    for (float v : img.values) ok = ok && v == 0.0f;
    detail = "window-1 identity, [0,3,6,9]@w3 -> [0,1.5,3,6], constant image -> zeros";
    return ok;
}

bool robust_ingestion(std::string& detail) {
    std::mt19937 rng{4242};
    std::uniform_int_distribution<int> len_dist(0, 600);
    std::uniform_int_distribution<int> byte_dist(0, 255);
    const uint8_t magic_le[4] = {0xd4, 0xc3, 0xb2, 0xa1};
    const uint8_t magic_be[4] = {0xa1, 0xb2, 0xc3, 0xd4};

    // seed corpus: valid captures truncated at random points
    const std::string pcap = tmp_path("csisense-acc-fuzz.pcap");
    write_csi_pcap(pcap, synth_frames(1, 0, 5, 3), 5500);
    std::vector<char> valid = slurp(pcap);
    fs::remove(pcap);

    int crashes = 0;
    for (int i = 0; i < 10000; ++i) {
        std::vector<uint8_t> buf;
        if (i % 3 == 0) {
            const size_t cut = size_t(rng()) % (valid.size() + 1);
            buf.assign(valid.begin(), valid.begin() + long(cut));
            if (buf.size() > 40) buf[40 + size_t(rng()) % (buf.size() - 40)] ^= 0xff;
        } else {
            buf.resize(size_t(len_dist(rng)));
            for (uint8_t& b : buf) b = uint8_t(byte_dist(rng));
            if (buf.size() >= 4 && i % 2 == 0)
                std::memcpy(buf.data(), i % 4 == 0 ? magic_le : magic_be, 4);
        }
        ParseStats stats;
        try {
            parse_csi_pcap(buf.data(), buf.size(), 5500, stats);
        } catch (const FormatError&) {
        } catch (...) {
            ++crashes;
        }
    }
    std::ostringstream os;
    os << "10000 fuzzed inputs, " << crashes << " crashes";
    detail = os.str();
    return crashes == 0;
}

bool monitor_semantics(std::string& detail) {
    const std::string pcap = tmp_path("csisense-acc-monitor.pcap");
    write_csi_pcap(pcap, synth_frames(0, std::nullopt, 101, 900), 5500);
    const int expected_windows = (900 - 300) / 100 + 1;

    httplib::Server server;
    std::atomic<int> posts{0};
    server.Post("/telemetry", [&](const httplib::Request&, httplib::Response& res) {
        ++posts;
        res.status = 200;
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread server_thread([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    MonitorConfig cfg;
    cfg.pcap_path = pcap;
    cfg.window = 300;
    cfg.hop = 100;
    cfg.debounce = 2;
    cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/telemetry";

    BranchyModel model = csisense::testing::make_mini_model(8);
    std::atomic<bool> stop{false};
    std::vector<TelemetryRecord> seen;
    MonitorCounters c = run_monitor(cfg, model, stop,
                                    [&](const TelemetryRecord& r) { seen.push_back(r); });
    server.stop();
    server_thread.join();
    fs::remove(pcap);

    bool ok = c.windows == expected_windows && int(seen.size()) == expected_windows &&
              posts.load() == expected_windows && c.records_dropped == 0 &&
              c.delivery_failures == 0;
    for (int i = 0; i < int(seen.size()); ++i) ok = ok && seen[size_t(i)].window_id == i;

    // recompute the debounced edge-triggered rule over the emitted label stream
    AlarmDecider ref(cfg.debounce);
    long expected_alarms = 0;
    for (const TelemetryRecord& r : seen) {
        auto fire = ref.feed(r.rod_label, r.timestamp_us, r.window_id, r.rod_probs);
        if (fire.has_value() != r.alarm.has_value()) ok = false;
        if (fire) ++expected_alarms;
        if (r.rod_label == 1 && r.alarm) ok = false;  // alarms only for states {0,2}
    }
    ok = ok && c.alarms == expected_alarms;
    std::ostringstream os;
    os << c.windows << "/" << expected_windows << " windows, " << posts.load()
       << " records posted, " << c.alarms << " edge-triggered alarms, 0 dropped";
    detail = os.str();
    return ok;
}

bool determinism(std::string& detail) {
    bool ok = true;
    // synth datasets: byte-identical files
    const std::string d1 = tmp_path("csisense-acc-det1");
    const std::string d2 = tmp_path("csisense-acc-det2");
    fs::remove_all(d1);
    fs::remove_all(d2);
    std::vector<RadioImage> s1 = make_synth_dataset(42, 7);
    std::vector<RadioImage> s2 = make_synth_dataset(42, 7);
    dataset_write(s1, d1);
    dataset_write(s2, d2);
    for (const auto& entry : fs::directory_iterator(d1)) {
        const std::string name = entry.path().filename().string();
        ok = ok && slurp(entry.path().string()) == slurp((fs::path(d2) / name).string());
    }
    fs::remove_all(d1);
    fs::remove_all(d2);

    // training trajectory: identical histories and weights
    std::vector<RadioImage> data = make_synth_dataset(28, 9);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 7;
    cfg.seed = 13;
    BranchyModel m1 = csisense::testing::make_mini_model(13);
    BranchyModel m2 = csisense::testing::make_mini_model(13);
    TrainResult r1 = train(m1, data, cfg);
    TrainResult r2 = train(m2, data, cfg);
    ok = ok && r1.history.size() == r2.history.size();
    for (size_t e = 0; e < r1.history.size() && ok; ++e)
        ok = r1.history[e].loss.total == r2.history[e].loss.total;
    ok = ok && m1.early_fc_w.values() == m2.early_fc_w.values() &&
         m1.final_fc_w.values() == m2.final_fc_w.values();

    // checkpoint round trip: save -> load -> save is byte-identical
    const std::string c1 = tmp_path("csisense-acc-ckpt1.bgcn");
    const std::string c2 = tmp_path("csisense-acc-ckpt2.bgcn");
    BranchyModel built = build_branchy_ghostnet(0.25f, 3, 21);
    save_weights(built, c1);
    BranchyModel loaded = load_weights(c1);
    save_weights(loaded, c2);
    ok = ok && slurp(c1) == slurp(c2);
    fs::remove(c1);
    fs::remove(c2);

    detail = "synth datasets, training trajectories, checkpoint round trips bit-identical";
    return ok;
}

}  // namespace

int main() {
#ifdef _OPENMP
    omp_set_num_threads(1);
#endif
    const std::vector<Criterion> criteria = {
        {1, "structural layer counts", structural_fidelity},
        {2, "multiply-accumulate budget", mac_budget},
        {3, "early-exit latency and mac ratio", early_exit_latency},
        {4, "exit-criterion conformance", exit_criterion},
        {5, "joint-loss correctness", joint_loss_correctness},
        {6, "gradient fidelity (finite differences)", gradient_fidelity},
        {7, "desk-scale learning on synthetic data", desk_scale_learning},
        {8, "pipeline shape chain", pipeline_shape_chain},
        {9, "preprocessing oracles", preprocessing_oracles},
        {10, "robust ingestion under fuzzing", robust_ingestion},
        {11, "monitor semantics", monitor_semantics},
        {12, "determinism", determinism},
    };

    int failures = 0;
    for (const Criterion& c : criteria) {
        std::string detail;
        bool pass = false;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            pass = c.run(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("[%s] %2d: %s — %s (%.1fs)\n", pass ? "PASS" : "FAIL", c.id, c.name,
                    detail.c_str(), secs);
        std::fflush(stdout);
        failures += !pass;
    }
    if (failures) std::printf("%d of %zu criteria failed\n", failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
