#include "csisense/monitor.hpp"

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

using json = nlohmann::json;

namespace csisense {

// --- config -----------------------------------------------------------------

std::string MonitorConfig::to_json() const {
    json j = {{"pcap_path", pcap_path},
              {"replay_rate", replay_rate},
              {"csi_port", csi_port},
              {"window", window},
              {"hop", hop},
              {"moving_average_window", moving_average_window},
              {"model_path", model_path},
              {"debounce", debounce},
              {"endpoint", endpoint},
              {"auth_token", auth_token},
              {"retry_max", retry_max},
              {"backoff_initial_ms", backoff_initial_ms},
              {"buffer_cap", buffer_cap}};
    return j.dump(2);
}

MonitorConfig MonitorConfig::from_json(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw FormatError("monitor config: invalid JSON");
    MonitorConfig c;
    c.pcap_path = j.value("pcap_path", c.pcap_path);
    c.replay_rate = j.value("replay_rate", c.replay_rate);
    c.csi_port = uint16_t(j.value("csi_port", int(c.csi_port)));
    c.window = j.value("window", c.window);
    c.hop = j.value("hop", c.hop);
    c.moving_average_window = j.value("moving_average_window", c.moving_average_window);
    c.model_path = j.value("model_path", c.model_path);
    c.debounce = j.value("debounce", c.debounce);
    c.endpoint = j.value("endpoint", c.endpoint);
    c.auth_token = j.value("auth_token", c.auth_token);
    c.retry_max = j.value("retry_max", c.retry_max);
    c.backoff_initial_ms = j.value("backoff_initial_ms", c.backoff_initial_ms);
    c.buffer_cap = j.value("buffer_cap", c.buffer_cap);
    if (c.hop < 1 || c.debounce < 1)
        throw ValueError("monitor config: hop and debounce must be >= 1");
    return c;
}

MonitorConfig MonitorConfig::from_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open monitor config: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return from_json(ss.str());
}

// --- telemetry record ----------------------------------------------------------

std::string TelemetryRecord::to_json() const {
    json j = {{"ts", timestamp_us},
              {"window_id", window_id},
              {"rod_label", rod_label},
              {"rod_probs", rod_probs},
              {"exited_early", exited_early},
              {"latency_ns", latency_ns}};
    if (har_label) j["har_label"] = *har_label;
    if (har_probs) j["har_probs"] = *har_probs;
    if (alarm) {
        j["alarm"] = {{"kind", alarm->kind == AlarmKind::room_empty ? "room-empty"
                                                                    : "contact-detected"},
                      {"window_id", alarm->window_id}};
    }
    return j.dump();
}

// --- alarm state machine ----------------------------------------------------------

AlarmDecider::AlarmDecider(int debounce) : debounce_(debounce) {
    if (debounce < 1) throw ValueError("alarm debounce must be >= 1");
}

std::optional<AlarmEvent> AlarmDecider::feed(int rod_label, uint64_t ts_us,
                                             long window_id,
                                             const std::vector<float>& rod_probs) {
    if (rod_label == run_label_)
        ++run_length_;
    else {
        run_label_ = rod_label;
        run_length_ = 1;
    }
    if (rod_label != alarmed_label_) alarmed_label_ = -1;  // left the alarmed state
    if ((rod_label == 0 || rod_label == 2) && run_length_ >= debounce_ &&
        alarmed_label_ != rod_label) {
        alarmed_label_ = rod_label;
        AlarmEvent e;
        e.kind = rod_label == 0 ? AlarmKind::room_empty : AlarmKind::contact_detected;
        e.timestamp_us = ts_us;
        e.window_id = window_id;
        e.rod_probs = rod_probs;
        return e;
    }
    return std::nullopt;
}

// --- pipeline ---------------------------------------------------------------------

namespace {

template <typename T>
class BoundedQueue {
public:
    explicit BoundedQueue(size_t cap) : cap_(cap) {}

    // blocks when full (backpressure); returns false if closed
    bool push(T item) {
        std::unique_lock lk(mu_);
        cv_push_.wait(lk, [&] { return q_.size() < cap_ || closed_; });
        if (closed_) return false;
        q_.push_back(std::move(item));
        cv_pop_.notify_one();
        return true;
    }

    // never blocks; evicts the oldest entry when full, returns dropped count
    size_t push_drop_oldest(T item) {
        std::lock_guard lk(mu_);
        if (closed_) return 0;
        size_t dropped = 0;
        while (q_.size() >= cap_) {
            q_.pop_front();
            ++dropped;
        }
        q_.push_back(std::move(item));
        cv_pop_.notify_one();
        return dropped;
    }

    bool pop(T& out) {
        std::unique_lock lk(mu_);
        cv_pop_.wait(lk, [&] { return !q_.empty() || closed_; });
        if (q_.empty()) return false;
        out = std::move(q_.front());
        q_.pop_front();
        cv_push_.notify_one();
        return true;
    }

    void close() {
        std::lock_guard lk(mu_);
        closed_ = true;
        cv_pop_.notify_all();
        cv_push_.notify_all();
    }

private:
    std::mutex mu_;
    std::condition_variable cv_push_, cv_pop_;
    std::deque<T> q_;
    size_t cap_;
    bool closed_ = false;
};

struct WindowItem {
    long id = 0;
    uint64_t ts_us = 0;
    RadioImage image;
    int64_t preprocess_ns = 0;
};

int64_t now_ns() {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

// Splits "http://host:port/path" into base and path.
std::pair<std::string, std::string> split_endpoint(const std::string& url) {
    const auto scheme = url.find("://");
    if (scheme == std::string::npos) throw ValueError("endpoint URL needs a scheme");
    const auto slash = url.find('/', scheme + 3);
    if (slash == std::string::npos) return {url, "/"};
    return {url.substr(0, slash), url.substr(slash)};
}

}  // namespace

MonitorCounters run_monitor(const MonitorConfig& cfg, std::atomic<bool>& stop,
                            const TelemetrySink& sink) {
    BranchyModel model = load_weights(cfg.model_path);
    return run_monitor(cfg, model, stop, sink);
}

MonitorCounters run_monitor(const MonitorConfig& cfg, BranchyModel& model,
                            std::atomic<bool>& stop, const TelemetrySink& sink) {
    if (cfg.hop < 1 || cfg.debounce < 1)
        throw ValueError("monitor: hop and debounce must be >= 1");
    MonitorCounters counters;
    std::mutex counters_mu;

    BoundedQueue<CsiFrame> frame_q(1024);
    BoundedQueue<WindowItem> window_q(8);
    BoundedQueue<TelemetryRecord> telemetry_q(size_t(std::max(cfg.buffer_cap, 1)));

    // stage 1: frame ingestion (file replay)
    std::thread ingest([&] {
        try {
            ParseStats stats;
            std::vector<CsiFrame> frames =
                parse_csi_pcap_file(cfg.pcap_path, cfg.csi_port, stats);
            {
                std::lock_guard lk(counters_mu);
                counters.parse_skips = long(stats.total_skipped());
            }
            uint64_t prev_ts = frames.empty() ? 0 : frames[0].timestamp_us;
            for (CsiFrame& f : frames) {
                if (stop.load()) break;
                if (cfg.replay_rate > 0.0 && f.timestamp_us > prev_ts) {
                    const auto wait_us =
                        uint64_t(double(f.timestamp_us - prev_ts) / cfg.replay_rate);
                    std::this_thread::sleep_for(std::chrono::microseconds(wait_us));
                }
                prev_ts = f.timestamp_us;
                {
                    std::lock_guard lk(counters_mu);
                    ++counters.frames_in;
                }
                if (!frame_q.push(std::move(f))) break;
            }
        } catch (...) {
            // source failure ends ingestion; downstream drains what arrived
        }
        frame_q.close();
    });

    // stage 2: sliding-window assembly + preprocessing
    std::thread windower([&] {
        SubcarrierMask mask = SubcarrierMask::vht80_default();
        std::deque<CsiFrame> buf;
        long skip = 0;  // frames to discard before buffering (hop > window)
        long window_id = 0;
        CsiFrame f;
        while (frame_q.pop(f)) {
            if (skip > 0) {
                --skip;
                continue;
            }
            buf.push_back(std::move(f));
            if (long(buf.size()) < cfg.window) continue;
            const int64_t t0 = now_ns();
            std::vector<CsiFrame> wframes(buf.begin(), buf.begin() + cfg.window);
            size_t dropped = 0;
            std::vector<CsiMatrix> mats = assemble_matrices(wframes, cfg.window, dropped);
            WindowItem item;
            item.id = window_id++;
            item.ts_us = wframes.back().timestamp_us;
            item.image = to_radio_image(
                moving_average(filter_subcarriers(mats[0], mask),
                               cfg.moving_average_window));
            item.preprocess_ns = now_ns() - t0;
            const long pop = std::min<long>(cfg.hop, long(buf.size()));
            buf.erase(buf.begin(), buf.begin() + pop);
            skip = cfg.hop - pop;
            if (!window_q.push(std::move(item))) return;
        }
        window_q.close();
    });

    // stage 3: inference + alarm decision
    std::thread inference([&] {
        AlarmDecider decider(cfg.debounce);
        WindowItem item;
        while (window_q.pop(item)) {
            Tensor x({1, 1, item.image.rows, item.image.cols});
            std::copy(item.image.values.begin(), item.image.values.end(), x.data());
            Tensor x3 = replicate_channels(x);
            InferenceOutcome out = model.forward_with_exit(x3);
            TelemetryRecord rec;
            rec.timestamp_us = item.ts_us;
            rec.window_id = item.id;
            rec.rod_label = out.rod_label;
            rec.rod_probs = out.rod_probs;
            rec.har_label = out.har_label;
            rec.har_probs = out.har_probs;
            rec.exited_early = out.exited_early;
            const int64_t inference_ns =
                out.timings.trunk_to_branch_ns + out.timings.early_head_ns +
                out.timings.trunk_rest_ns + out.timings.final_head_ns;
            rec.latency_ns = item.preprocess_ns + inference_ns;
            rec.alarm = decider.feed(out.rod_label, item.ts_us, item.id, out.rod_probs);
            const bool alarmed = rec.alarm.has_value();
            const size_t dropped = telemetry_q.push_drop_oldest(std::move(rec));
            {
                std::lock_guard lk(counters_mu);
                ++counters.windows;
                counters.records_dropped += long(dropped);
                if (alarmed) ++counters.alarms;
            }
        }
        telemetry_q.close();
    });

    // stage 4: telemetry dispatch; endpoint stalls never block inference
    std::thread dispatcher([&] {
        std::unique_ptr<httplib::Client> client;
        std::string path;
        if (!cfg.endpoint.empty()) {
            auto [base, p] = split_endpoint(cfg.endpoint);
            client = std::make_unique<httplib::Client>(base);
            client->set_connection_timeout(2, 0);
            client->set_read_timeout(2, 0);
            path = p;
        }
        TelemetryRecord rec;
        while (telemetry_q.pop(rec)) {
            if (sink) sink(rec);
            if (!client) {
                std::lock_guard lk(counters_mu);
                ++counters.records_delivered;
                continue;
            }
            httplib::Headers headers;
            if (!cfg.auth_token.empty())
                headers.emplace("Authorization", "Bearer " + cfg.auth_token);
            bool delivered = false;
            int backoff_ms = cfg.backoff_initial_ms;
            for (int attempt = 0; attempt <= cfg.retry_max && !stop.load(); ++attempt) {
                auto res = client->Post(path, headers, rec.to_json(), "application/json");
                if (res && res->status >= 200 && res->status < 300) {
                    delivered = true;
                    break;
                }
                if (attempt < cfg.retry_max) {
                    std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms));
                    backoff_ms *= 2;
                }
            }
            std::lock_guard lk(counters_mu);
            if (delivered)
                ++counters.records_delivered;
            else
                ++counters.delivery_failures;
        }
    });

    ingest.join();
    windower.join();
    inference.join();
    dispatcher.join();
    return counters;
}

}  // namespace csisense
