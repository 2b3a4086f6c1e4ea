#pragma once

#include <string>
#include <vector>

#include "csisense/ghostnet.hpp"

namespace csisense {

enum class BenchPath { early, full, automatic };

struct LatencyReport {
    int samples = 0;
    double mean_early_ns = 0.0, median_early_ns = 0.0, p95_early_ns = 0.0;
    double mean_full_ns = 0.0, median_full_ns = 0.0, p95_full_ns = 0.0;
    double early_fraction = 0.0;   // of `auto` runs that exited early
    double speedup_reduction = 0.0;  // 1 - mean(early)/mean(full)
    double mac_ratio = 0.0;          // analytic counterpart, topology-only
};

// Monotonic-clock timing of the forward pass only. `early`/`full` force the
// respective path on every input; `automatic` follows the exit criterion.
LatencyReport measure(BranchyModel& model, const std::vector<Tensor>& inputs,
                      BenchPath path, int warmup, int reps);

// executed-MACs(early path) / executed-MACs(full path); input-independent.
double mac_ratio(const BranchyModel& model);

std::string report_json(const LatencyReport& r);
std::string report_table(const LatencyReport& r);

}  // namespace csisense
