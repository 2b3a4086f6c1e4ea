#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "csisense/csi.hpp"
#include "csisense/ghostnet.hpp"

namespace csisense {

struct MonitorConfig {
    std::string pcap_path;        // file replay source
    double replay_rate = 0.0;     // 0 = as fast as possible; 1 = real time
    uint16_t csi_port = 5500;
    int window = kWindowPackets;
    int hop = 100;                // packets between window starts
    int moving_average_window = 5;
    std::string model_path;
    int debounce = 3;             // consecutive windows before an alarm
    std::string endpoint;         // http://host:port/path ; empty = log only
    std::string auth_token;
    int retry_max = 3;
    int backoff_initial_ms = 100;
    int buffer_cap = 100;         // telemetry buffer; oldest dropped beyond this

    std::string to_json() const;
    static MonitorConfig from_json(const std::string& text);
    static MonitorConfig from_json_file(const std::string& path);
};

enum class AlarmKind { room_empty, contact_detected };

struct AlarmEvent {
    AlarmKind kind;
    uint64_t timestamp_us = 0;
    long window_id = 0;
    std::vector<float> rod_probs;
};

struct TelemetryRecord {
    uint64_t timestamp_us = 0;
    long window_id = 0;
    int rod_label = -1;
    std::vector<float> rod_probs;
    std::optional<int> har_label;
    std::optional<std::vector<float>> har_probs;
    bool exited_early = false;
    int64_t latency_ns = 0;
    std::optional<AlarmEvent> alarm;

    std::string to_json() const;
};

// Edge-triggered debounced alarm state machine: fires when the rod label has
// been 0 (or 2) for `debounce` consecutive windows, then stays silent until
// the state is left and re-entered.
class AlarmDecider {
public:
    explicit AlarmDecider(int debounce);
    std::optional<AlarmEvent> feed(int rod_label, uint64_t ts_us, long window_id,
                                   const std::vector<float>& rod_probs);

private:
    int debounce_;
    int run_label_ = -1;
    int run_length_ = 0;
    int alarmed_label_ = -1;  // label currently in alarmed state, -1 if none
};

struct MonitorCounters {
    long frames_in = 0;
    long windows = 0;
    long records_delivered = 0;
    long records_dropped = 0;   // telemetry buffer overflow
    long delivery_failures = 0; // exhausted retries (dead-lettered)
    long alarms = 0;
    long parse_skips = 0;
};

// Runs the full pipeline over the configured source until it is exhausted or
// `stop` becomes true. Collected telemetry is POSTed to the endpoint; when
// `sink` is set it receives every record as well (used by tests).
using TelemetrySink = std::function<void(const TelemetryRecord&)>;
MonitorCounters run_monitor(const MonitorConfig& cfg, std::atomic<bool>& stop,
                            const TelemetrySink& sink = nullptr);
MonitorCounters run_monitor(const MonitorConfig& cfg, BranchyModel& model,
                            std::atomic<bool>& stop, const TelemetrySink& sink = nullptr);

}  // namespace csisense
