#include "csisense/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include <json.hpp>

using json = nlohmann::json;

namespace csisense {

namespace {

int64_t now_ns() {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

struct Stats {
    double mean = 0.0, median = 0.0, p95 = 0.0;
};

Stats summarize(std::vector<int64_t> ns) {
    Stats s;
    if (ns.empty()) return s;
    double sum = 0.0;
    for (int64_t v : ns) sum += double(v);
    s.mean = sum / double(ns.size());
    std::sort(ns.begin(), ns.end());
    s.median = double(ns[ns.size() / 2]);
    s.p95 = double(ns[std::min(ns.size() - 1, size_t(std::ceil(0.95 * double(ns.size())) - 1))]);
    return s;
}

}  // namespace

double mac_ratio(const BranchyModel& model) {
    const Shape3 in = model.input_shape();
    const LayerCounts full = model.count(in);
    const LayerCounts early = model.count_early(in);
    return double(early.macs) / double(full.macs);
}

LatencyReport measure(BranchyModel& model, const std::vector<Tensor>& inputs,
                      BenchPath path, int warmup, int reps) {
    if (reps < 1) throw ValueError("measure: reps must be >= 1");
    if (warmup < 0) throw ValueError("measure: warmup must be >= 0");
    if (inputs.empty()) throw ValueError("measure: no inputs");
    NoGradGuard ng;

    auto run_early = [&](const Tensor& x) { (void)model.forward_early_only(x); };
    auto run_full = [&](const Tensor& x) { (void)model.forward_full(x, false); };

    LatencyReport rep;
    rep.samples = reps;
    rep.mac_ratio = mac_ratio(model);

    for (int i = 0; i < warmup; ++i) {
        const Tensor& x = inputs[size_t(i) % inputs.size()];
        if (path == BenchPath::full)
            run_full(x);
        else
            run_early(x);
    }

    std::vector<int64_t> early_ns, full_ns;
    int early_exits = 0;
    for (int i = 0; i < reps; ++i) {
        const Tensor& x = inputs[size_t(i) % inputs.size()];
        switch (path) {
            case BenchPath::early: {
                const int64_t t0 = now_ns();
                run_early(x);
                early_ns.push_back(now_ns() - t0);
                break;
            }
            case BenchPath::full: {
                const int64_t t0 = now_ns();
                run_full(x);
                full_ns.push_back(now_ns() - t0);
                break;
            }
            case BenchPath::automatic: {
                const int64_t t0 = now_ns();
                InferenceOutcome out = model.forward_with_exit(x);
                const int64_t dt = now_ns() - t0;
                if (out.exited_early) {
                    early_ns.push_back(dt);
                    ++early_exits;
                } else {
                    full_ns.push_back(dt);
                }
                break;
            }
        }
    }
    const Stats es = summarize(early_ns), fs = summarize(full_ns);
    rep.mean_early_ns = es.mean;
    rep.median_early_ns = es.median;
    rep.p95_early_ns = es.p95;
    rep.mean_full_ns = fs.mean;
    rep.median_full_ns = fs.median;
    rep.p95_full_ns = fs.p95;
    rep.early_fraction = path == BenchPath::automatic
                             ? double(early_exits) / double(reps)
                             : (path == BenchPath::early ? 1.0 : 0.0);
    if (fs.mean > 0.0 && es.mean > 0.0)
        rep.speedup_reduction = 1.0 - es.mean / fs.mean;
    return rep;
}

std::string report_json(const LatencyReport& r) {
    if (r.samples == 0) throw ValueError("report: empty latency report");
    json j = {{"schema_version", 1},
              {"samples", r.samples},
              {"early", {{"mean_ns", r.mean_early_ns},
                         {"median_ns", r.median_early_ns},
                         {"p95_ns", r.p95_early_ns}}},
              {"full", {{"mean_ns", r.mean_full_ns},
                        {"median_ns", r.median_full_ns},
                        {"p95_ns", r.p95_full_ns}}},
              {"early_fraction", r.early_fraction},
              {"speedup_reduction", r.speedup_reduction},
              {"mac_ratio", r.mac_ratio}};
    return j.dump(2);
}

std::string report_table(const LatencyReport& r) {
    if (r.samples == 0) throw ValueError("report: empty latency report");
    std::ostringstream os;
    char buf[160];
    auto ms = [](double ns) { return ns / 1e6; };
    os << "path    mean(ms)  median(ms)  p95(ms)\n";
    std::snprintf(buf, sizeof(buf), "early  %9.3f  %9.3f  %8.3f\n", ms(r.mean_early_ns),
                  ms(r.median_early_ns), ms(r.p95_early_ns));
    os << buf;
    std::snprintf(buf, sizeof(buf), "full   %9.3f  %9.3f  %8.3f\n", ms(r.mean_full_ns),
                  ms(r.median_full_ns), ms(r.p95_full_ns));
    os << buf;
    std::snprintf(buf, sizeof(buf),
                  "samples %d | early_fraction %.3f | time reduction %.2f%% | mac ratio %.3f\n",
                  r.samples, r.early_fraction, 100.0 * r.speedup_reduction, r.mac_ratio);
    os << buf;
    return os.str();
}

}  // namespace csisense
