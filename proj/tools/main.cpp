// csisense command-line front end: ingest, synth, train, eval, bench, monitor.

#include <atomic>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <CLI11.hpp>
#include <json.hpp>

#include "csisense/bench.hpp"
#include "csisense/csi.hpp"
#include "csisense/errors.hpp"
#include "csisense/ghostnet.hpp"
#include "csisense/monitor.hpp"
#include "csisense/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace csisense;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitRuntime = 4;

int g_log_level = 1;  // 0 quiet, 1 info, 2 debug

void log_info(const std::string& msg) {
    if (g_log_level >= 1) std::cerr << msg << "\n";
}

std::atomic<bool> g_stop{false};
void handle_signal(int) { g_stop.store(true); }

struct Scenario {
    int rod;
    std::optional<int> har;
};

// nobody, one person x five activities, two persons
const std::vector<Scenario> kScenarios = {
    {0, std::nullopt}, {1, 0}, {1, 1}, {1, 2}, {1, 3}, {1, 4}, {2, std::nullopt}};

int cmd_ingest(const std::string& pcap_path, const std::string& out_dir, int window,
               int port, int ma_window, bool json_out) {
    if (!fs::exists(pcap_path)) {
        std::cerr << "ingest: no such file: " << pcap_path << "\n";
        return kExitRuntime;
    }
    ParseStats stats;
    std::vector<CsiFrame> frames;
    try {
        frames = parse_csi_pcap_file(pcap_path, uint16_t(port), stats);
    } catch (const FormatError& e) {
        std::cerr << "ingest: stage parse_pcap failed: " << e.what() << "\n";
        return kExitData;
    }
    size_t dropped = 0;
    std::vector<CsiMatrix> mats = assemble_matrices(frames, window, dropped);
    SubcarrierMask mask = SubcarrierMask::vht80_default();
    std::vector<RadioImage> samples;
    samples.reserve(mats.size());
    for (const CsiMatrix& m : mats)
        samples.push_back(
            to_radio_image(moving_average(filter_subcarriers(m, mask), ma_window)));
    if (samples.empty()) {
        std::cerr << "ingest: stage assemble produced no complete window ("
                  << frames.size() << " frames, window " << window << ")\n";
        return kExitData;
    }
    dataset_write(samples, out_dir);
    if (json_out) {
        json j = {{"frames", stats.frames},
                  {"skipped_non_csi", stats.skipped_non_csi},
                  {"skipped_truncated", stats.skipped_truncated},
                  {"skipped_magic", stats.skipped_magic},
                  {"windows", mats.size()},
                  {"dropped_frames", dropped},
                  {"samples", samples.size()},
                  {"out", out_dir}};
        std::cout << j.dump(2) << "\n";
    } else {
        std::cout << "parse_pcap: " << stats.frames << " frames, "
                  << stats.total_skipped() << " skipped\n"
                  << "assemble:   " << mats.size() << " windows, " << dropped
                  << " leftover frames dropped\n"
                  << "preprocess: " << samples.size() << " radio images ("
                  << kImageRows << "x" << window << ")\n"
                  << "dataset:    " << out_dir << "\n";
    }
    return kExitOk;
}

int cmd_synth(const std::string& out_dir, const std::string& pcap_out, int count,
              uint64_t seed, int rod, int har, bool json_out) {
    if (!pcap_out.empty()) {
        std::optional<int> har_label = har >= 0 ? std::optional<int>(har) : std::nullopt;
        std::vector<CsiFrame> frames = synth_frames(rod, har_label, seed, count);
        write_csi_pcap(pcap_out, frames, 5500);
        if (json_out)
            std::cout << json{{"frames", count}, {"out", pcap_out}}.dump(2) << "\n";
        else
            std::cout << "wrote " << count << " synthetic frames to " << pcap_out << "\n";
        return kExitOk;
    }
    std::vector<RadioImage> samples;
    samples.reserve(size_t(count));
    const int per = count / int(kScenarios.size());
    for (size_t s = 0; s < kScenarios.size(); ++s) {
        const int n = int(s) + 1 == int(kScenarios.size())
                          ? count - per * int(kScenarios.size() - 1)
                          : per;
        auto batch = synth_generate(kScenarios[s].rod, kScenarios[s].har,
                                    seed * 1000 + s, n);
        samples.insert(samples.end(), batch.begin(), batch.end());
    }
    dataset_write(samples, out_dir);
    if (json_out)
        std::cout << json{{"samples", samples.size()}, {"out", out_dir}}.dump(2) << "\n";
    else
        std::cout << "wrote " << samples.size() << " samples to " << out_dir << "\n";
    return kExitOk;
}

int cmd_train(const std::string& data_dir, const std::string& out_path,
              const std::string& config_path, float width, int branch,
              std::optional<int> epochs, std::optional<int> batch,
              std::optional<double> lr, uint64_t seed, bool json_out) {
    TrainConfig cfg;
    if (!config_path.empty()) cfg = TrainConfig::from_json_file(config_path);
    if (epochs) cfg.epochs = *epochs;
    if (batch) cfg.batch_size = *batch;
    if (lr) cfg.base_lr = float(*lr);
    cfg.seed = seed;
    std::vector<RadioImage> dataset = dataset_read(data_dir);
    BranchyConfig bc;
    bc.width_multiplier = width;
    bc.branch_after_bottleneck = branch;
    bc.seed = uint32_t(seed);
    BranchyModel model = build_branchy_ghostnet(bc);
    TrainResult result = train(model, dataset, cfg, [&](const EpochRecord& r) {
        log_info("epoch " + std::to_string(r.epoch) + " total " +
                 std::to_string(r.loss.total) + " rod " + std::to_string(r.loss.rod_ce) +
                 " har " + std::to_string(r.loss.har_ce) + " lr " +
                 std::to_string(r.lr));
        return !g_stop.load();
    });
    if (!out_path.empty()) save_weights(model, out_path);
    if (json_out) {
        json hist = json::array();
        for (const EpochRecord& r : result.history)
            hist.push_back({{"epoch", r.epoch},
                            {"lr", r.lr},
                            {"rod_ce", r.loss.rod_ce},
                            {"har_ce", r.loss.har_ce},
                            {"total", r.loss.total}});
        std::cout << json{{"epochs", result.history.size()},
                          {"checkpoint", out_path},
                          {"history", hist}}
                         .dump(2)
                  << "\n";
    } else if (!result.history.empty()) {
        std::cout << "trained " << result.history.size() << " epochs, final loss "
                  << result.history.back().loss.total << "\n";
        if (!out_path.empty()) std::cout << "checkpoint: " << out_path << "\n";
    }
    return kExitOk;
}

int cmd_eval(const std::string& data_dir, const std::string& model_path,
             const std::string& mode, bool json_out) {
    BranchyModel model = load_weights(model_path);
    std::vector<RadioImage> dataset = dataset_read(data_dir);
    const EvalMode m = mode == "har" ? EvalMode::har : EvalMode::rod;
    MetricsReport report = evaluate(model, dataset, m);
    if (json_out)
        std::cout << report.to_json() << "\n";
    else
        std::cout << report.to_table(m == EvalMode::har ? kHarClassNames
                                                        : kRodClassNames);
    return kExitOk;
}

int cmd_bench(const std::string& model_path, float width, int branch, int reps,
              int warmup, int sample_count, const std::string& path_name,
              uint64_t seed, bool json_out) {
    BranchyModel model = model_path.empty()
                             ? build_branchy_ghostnet(width, branch, uint32_t(seed))
                             : load_weights(model_path);
    std::vector<Tensor> inputs;
    inputs.reserve(size_t(sample_count));
    for (size_t s = 0; size_t(inputs.size()) < size_t(sample_count); ++s) {
        const Scenario& sc = kScenarios[s % kScenarios.size()];
        auto imgs = synth_generate(sc.rod, sc.har, seed + s, 1);
        std::vector<const RadioImage*> one = {&imgs[0]};
        inputs.push_back(batch_input(one));
    }
    BenchPath path = BenchPath::automatic;
    if (path_name == "early") path = BenchPath::early;
    else if (path_name == "full") path = BenchPath::full;
    LatencyReport report = measure(model, inputs, path, warmup, reps);
    std::cout << (json_out ? report_json(report) + "\n" : report_table(report));
    return kExitOk;
}

int cmd_monitor(const std::string& config_path, bool json_out) {
    MonitorConfig cfg = MonitorConfig::from_json_file(config_path);
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    TelemetrySink sink;
    if (cfg.endpoint.empty())
        sink = [](const TelemetryRecord& rec) { std::cout << rec.to_json() << "\n"; };
    MonitorCounters c = run_monitor(cfg, g_stop, sink);
    json j = {{"frames_in", c.frames_in},
              {"windows", c.windows},
              {"records_delivered", c.records_delivered},
              {"records_dropped", c.records_dropped},
              {"delivery_failures", c.delivery_failures},
              {"alarms", c.alarms},
              {"parse_skips", c.parse_skips}};
    if (json_out)
        std::cout << j.dump(2) << "\n";
    else
        std::cerr << "monitor done: " << j.dump() << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Wi-Fi CSI sensing toolkit: occupancy and activity from packet captures"};
    app.require_subcommand(1);
    app.fallthrough();  // accept global options after the subcommand name too

    uint64_t seed = 0;
    int threads = 0;
    std::string format = "table";
    app.add_option("--seed", seed, "global RNG seed")->capture_default_str();
    app.add_option("--threads", threads, "kernel thread cap (0 = library default)");
    app.add_option("--log-level", g_log_level, "0 quiet, 1 info, 2 debug")
        ->capture_default_str();
    app.add_option("--format", format, "output format")
        ->check(CLI::IsMember({"table", "json"}));

    auto* ingest = app.add_subcommand("ingest", "decode a pcap capture into a dataset");
    std::string in_pcap, out_dir, mask_file;
    int window = kWindowPackets, port = 5500, ma_window = 5;
    ingest->add_option("--pcap", in_pcap, "input capture")->required();
    ingest->add_option("--out", out_dir, "output dataset directory")->required();
    ingest->add_option("--window", window, "packets per window")->check(CLI::PositiveNumber);
    ingest->add_option("--port", port, "CSI extractor UDP port");
    ingest->add_option("--ma-window", ma_window, "moving-average window")
        ->check(CLI::PositiveNumber);

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset or capture");
    std::string synth_out, synth_pcap;
    int count = 600, rod = 1, har = 0;
    synth->add_option("--out", synth_out, "output dataset directory");
    synth->add_option("--pcap", synth_pcap, "write raw frames to a pcap instead");
    synth->add_option("--count", count, "samples (or frames with --pcap)")
        ->check(CLI::PositiveNumber);
    synth->add_option("--rod", rod, "occupancy label for --pcap mode")
        ->check(CLI::Range(0, 2));
    synth->add_option("--har", har, "activity label for --pcap mode, -1 = none")
        ->check(CLI::Range(-1, 4));

    auto* trainc = app.add_subcommand("train", "train a model on a dataset");
    std::string train_data, train_out, train_cfg;
    float width = 1.4f;
    int branch = 6;
    std::optional<int> epochs_opt, batch_opt;
    std::optional<double> lr_opt;
    trainc->add_option("--data", train_data, "dataset directory")->required();
    trainc->add_option("--out", train_out, "checkpoint path");
    trainc->add_option("--config", train_cfg, "training config JSON");
    trainc->add_option("--width", width, "width multiplier")->check(CLI::PositiveNumber);
    trainc->add_option("--branch", branch, "early branch attachment point")
        ->check(CLI::Range(1, 16));
    trainc->add_option("--epochs", epochs_opt, "override epoch count")
        ->check(CLI::PositiveNumber);
    trainc->add_option("--batch", batch_opt, "override batch size")
        ->check(CLI::PositiveNumber);
    trainc->add_option("--lr", lr_opt, "override base learning rate");

    auto* evalc = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    std::string eval_data, eval_model, eval_mode = "rod";
    evalc->add_option("--data", eval_data, "dataset directory")->required();
    evalc->add_option("--model", eval_model, "checkpoint path")->required();
    evalc->add_option("--mode", eval_mode, "task head")->check(CLI::IsMember({"rod", "har"}));

    auto* benchc = app.add_subcommand("bench", "measure early-exit latency");
    std::string bench_model, bench_path = "auto";
    int reps = 30, warmup = 5, samples = 7;
    benchc->add_option("--model", bench_model, "checkpoint (default: fresh build)");
    benchc->add_option("--width", width, "width multiplier")->check(CLI::PositiveNumber);
    benchc->add_option("--branch", branch, "early branch attachment point")
        ->check(CLI::Range(1, 16));
    benchc->add_option("--reps", reps, "timed repetitions");
    benchc->add_option("--warmup", warmup, "untimed warmup runs");
    benchc->add_option("--samples", samples, "distinct synthetic inputs")
        ->check(CLI::PositiveNumber);
    benchc->add_option("--path", bench_path, "forced path")
        ->check(CLI::IsMember({"early", "full", "auto"}));

    auto* monitorc = app.add_subcommand("monitor", "run the streaming alarm daemon");
    std::string monitor_cfg;
    monitorc->add_option("--config", monitor_cfg, "monitor config JSON")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
#endif
    const bool json_out = format == "json";

    try {
        if (*ingest)
            return cmd_ingest(in_pcap, out_dir, window, port, ma_window, json_out);
        if (*synth) {
            if (synth_out.empty() && synth_pcap.empty()) {
                std::cerr << "synth: one of --out or --pcap is required\n";
                return kExitUsage;
            }
            return cmd_synth(synth_out, synth_pcap, count, seed, rod, har, json_out);
        }
        if (*trainc)
            return cmd_train(train_data, train_out, train_cfg, width, branch,
                             epochs_opt, batch_opt, lr_opt, seed, json_out);
        if (*evalc) return cmd_eval(eval_data, eval_model, eval_mode, json_out);
        if (*benchc) {
            if (reps < 1 || warmup < 0) {
                std::cerr << "bench: --reps must be >= 1 and --warmup >= 0\n";
                return kExitUsage;
            }
            return cmd_bench(bench_model, width, branch, reps, warmup, samples,
                             bench_path, seed, json_out);
        }
        if (*monitorc) return cmd_monitor(monitor_cfg, json_out);
    } catch (const FormatError& e) {
        std::cerr << "error (format): " << e.what() << "\n";
        return kExitData;
    } catch (const ValueError& e) {
        std::cerr << "error (value): " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
