#include "csisense/csi.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include <json.hpp>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace csisense {

const char* const kRodClassNames[3] = {"nobody", "one-person", "two-persons"};
const char* const kHarClassNames[5] = {"sit", "stand", "walk", "stand-up", "sit-down"};

// --- subcarrier mask ----------------------------------------------------------

SubcarrierMask SubcarrierMask::vht80_default() {
    // VHT-80 tone plan in shifted indexing (DC at 128): edge guards + DC
    // neighbourhood as nulls, pilots at +-11, +-39, +-75, +-103.
    SubcarrierMask m;
    m.nulls = {0, 1, 2, 3, 4, 5, 127, 128, 129, 251, 252, 253, 254, 255};
    m.pilots = {25, 53, 89, 117, 139, 167, 203, 231};
    return m;
}

void SubcarrierMask::validate() const {
    if (nulls.size() != 14) throw ValueError("subcarrier mask: expected 14 null tones");
    if (pilots.size() != 8) throw ValueError("subcarrier mask: expected 8 pilot tones");
    std::vector<int> all(nulls);
    all.insert(all.end(), pilots.begin(), pilots.end());
    std::sort(all.begin(), all.end());
    if (std::adjacent_find(all.begin(), all.end()) != all.end())
        throw ValueError("subcarrier mask: null/pilot sets overlap");
    for (int i : all)
        if (i < 0 || i >= kSubcarriers)
            throw ValueError("subcarrier mask: tone index out of range");
}

// --- pcap parsing ---------------------------------------------------------------

namespace {

constexpr uint32_t kPcapMagic = 0xa1b2c3d4;
constexpr uint32_t kPcapMagicSwapped = 0xd4c3b2a1;
constexpr uint16_t kCsiPayloadMagic = 0x1111;
constexpr size_t kCsiPayloadBytes = 18 + size_t(kSubcarriers) * 4;

uint16_t rd16le(const uint8_t* p) { return uint16_t(p[0] | (p[1] << 8)); }
uint16_t rd16be(const uint8_t* p) { return uint16_t((p[0] << 8) | p[1]); }
uint32_t rd32le(const uint8_t* p) {
    return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 |
           uint32_t(p[3]) << 24;
}
uint32_t bswap32(uint32_t v) {
    return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

// Returns nullptr if the packet is not an IPv4/UDP datagram on `port`.
const uint8_t* udp_payload(const uint8_t* pkt, size_t len, uint16_t port,
                           size_t& payload_len) {
    if (len < 14 + 20 + 8) return nullptr;
    if (rd16be(pkt + 12) != 0x0800) return nullptr;  // not IPv4
    const uint8_t* ip = pkt + 14;
    if ((ip[0] >> 4) != 4) return nullptr;
    const size_t ihl = size_t(ip[0] & 0x0f) * 4;
    if (ihl < 20 || 14 + ihl + 8 > len) return nullptr;
    if (ip[9] != 17) return nullptr;  // not UDP
    const uint8_t* udp = ip + ihl;
    if (rd16be(udp + 2) != port) return nullptr;
    const size_t udp_len = rd16be(udp + 4);
    if (udp_len < 8 || 14 + ihl + udp_len > len) {
        payload_len = len - 14 - ihl - 8;  // header claims more than captured
        return udp + 8;
    }
    payload_len = udp_len - 8;
    return udp + 8;
}

}  // namespace

std::vector<CsiFrame> parse_csi_pcap(const uint8_t* bytes, size_t len,
                                     uint16_t udp_port, ParseStats& stats) {
    if (len < 24) throw FormatError("pcap: file shorter than global header");
    uint32_t magic = rd32le(bytes);
    bool swapped = false;
    if (magic == kPcapMagicSwapped)
        swapped = true;
    else if (magic != kPcapMagic)
        throw FormatError("pcap: bad magic");
    auto field32 = [&](const uint8_t* p) {
        uint32_t v = rd32le(p);
        return swapped ? bswap32(v) : v;
    };

    std::vector<CsiFrame> frames;
    size_t off = 24;
    while (off + 16 <= len) {
        const uint32_t ts_sec = field32(bytes + off);
        const uint32_t ts_usec = field32(bytes + off + 4);
        const uint32_t incl = field32(bytes + off + 8);
        off += 16;
        if (incl > len - off) {  // truncated final record
            ++stats.skipped_truncated;
            break;
        }
        const uint8_t* pkt = bytes + off;
        off += incl;

        size_t plen = 0;
        const uint8_t* payload = udp_payload(pkt, incl, udp_port, plen);
        if (!payload) {
            ++stats.skipped_non_csi;
            continue;
        }
        if (plen < 2) {
            ++stats.skipped_truncated;
            continue;
        }
        if (rd16le(payload) != kCsiPayloadMagic) {
            ++stats.skipped_magic;
            continue;
        }
        if (plen < kCsiPayloadBytes || payload + kCsiPayloadBytes > bytes + len) {
            ++stats.skipped_truncated;
            continue;
        }
        CsiFrame f;
        f.timestamp_us = uint64_t(ts_sec) * 1000000ull + ts_usec;
        f.rssi = int8_t(payload[2]);
        std::memcpy(f.source.data(), payload + 4, 6);
        f.sequence = rd16le(payload + 10);
        f.chanspec = rd16le(payload + 14);
        f.csi.resize(kSubcarriers);
        const uint8_t* p = payload + 18;
        for (int i = 0; i < kSubcarriers; ++i) {
            const int16_t re = int16_t(rd16le(p + size_t(i) * 4));
            const int16_t im = int16_t(rd16le(p + size_t(i) * 4 + 2));
            f.csi[size_t(i)] = {float(re), float(im)};
        }
        frames.push_back(std::move(f));
        ++stats.frames;
    }
    if (off < len && off + 16 > len && len - off > 0) ++stats.skipped_truncated;
    return frames;
}

std::vector<CsiFrame> parse_csi_pcap_file(const std::string& path,
                                          uint16_t udp_port, ParseStats& stats) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open pcap file: " + path);
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(is)),
                             std::istreambuf_iterator<char>());
    return parse_csi_pcap(buf.data(), buf.size(), udp_port, stats);
}

void write_csi_pcap(const std::string& path, const std::vector<CsiFrame>& frames,
                    uint16_t udp_port) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open pcap for writing: " + path);
    auto w16 = [&](uint16_t v) { os.put(char(v & 0xff)); os.put(char(v >> 8)); };
    auto w16be = [&](uint16_t v) { os.put(char(v >> 8)); os.put(char(v & 0xff)); };
    auto w32 = [&](uint32_t v) {
        for (int i = 0; i < 4; ++i) os.put(char((v >> (8 * i)) & 0xff));
    };
    w32(kPcapMagic);
    w16(2); w16(4);       // version 2.4
    w32(0); w32(0);       // thiszone, sigfigs
    w32(262144);          // snaplen
    w32(1);               // linktype: Ethernet

    const size_t payload = kCsiPayloadBytes;
    const size_t udp_len = 8 + payload;
    const size_t ip_len = 20 + udp_len;
    const size_t pkt_len = 14 + ip_len;
    for (const CsiFrame& f : frames) {
        if (f.csi.size() != kSubcarriers)
            throw ValueError("write_csi_pcap: frame must carry 256 csi values");
        w32(uint32_t(f.timestamp_us / 1000000ull));
        w32(uint32_t(f.timestamp_us % 1000000ull));
        w32(uint32_t(pkt_len));
        w32(uint32_t(pkt_len));
        // ethernet
        for (int i = 0; i < 6; ++i) os.put(char(0xff));
        for (int i = 0; i < 6; ++i) os.put(char(f.source[size_t(i)]));
        w16be(0x0800);
        // ipv4, checksum left zero
        os.put(0x45); os.put(0);
        w16be(uint16_t(ip_len));
        w16be(0); w16be(0);
        os.put(64); os.put(17);
        w16be(0);
        w32(0x0100000au); w32(0x0200000au);  // 10.0.0.1 -> 10.0.0.2
        // udp
        w16be(udp_port); w16be(udp_port);
        w16be(uint16_t(udp_len)); w16be(0);
        // csi payload
        w16(kCsiPayloadMagic);
        os.put(char(f.rssi));
        os.put(0);  // frame control
        for (int i = 0; i < 6; ++i) os.put(char(f.source[size_t(i)]));
        w16(f.sequence);
        w16(0);  // core/spatial stream
        w16(f.chanspec);
        w16(0);  // chip version
        for (const auto& z : f.csi) {
            w16(uint16_t(int16_t(std::lround(z.real()))));
            w16(uint16_t(int16_t(std::lround(z.imag()))));
        }
    }
    if (!os) throw FormatError("pcap write failed: " + path);
}

// --- assembly and preprocessing ---------------------------------------------------

std::vector<CsiMatrix> assemble_matrices(const std::vector<CsiFrame>& frames,
                                         int window, size_t& dropped_frames) {
    if (window < 1) throw ValueError("assemble_matrices: window must be >= 1");
    std::vector<CsiMatrix> out;
    const size_t complete = frames.size() / size_t(window);
    dropped_frames = frames.size() - complete * size_t(window);
    for (size_t m = 0; m < complete; ++m) {
        CsiMatrix mat;
        mat.rows = kSubcarriers;
        mat.cols = window;
        mat.amp.resize(size_t(kSubcarriers) * window);
        for (int t = 0; t < window; ++t) {
            const CsiFrame& f = frames[m * size_t(window) + size_t(t)];
            if (f.csi.size() != kSubcarriers)
                throw DimensionError("assemble_matrices: frame without 256 csi values");
            for (int s = 0; s < kSubcarriers; ++s)
                mat.at(s, t) = std::abs(f.csi[size_t(s)]);
        }
        out.push_back(std::move(mat));
    }
    return out;
}

CsiMatrix filter_subcarriers(const CsiMatrix& m, const SubcarrierMask& mask) {
    mask.validate();
    if (m.rows != kSubcarriers)
        throw DimensionError("filter_subcarriers: expected 256 rows, got " +
                             std::to_string(m.rows));
    std::vector<bool> drop(size_t(kSubcarriers), false);
    for (int i : mask.nulls) drop[size_t(i)] = true;
    for (int i : mask.pilots) drop[size_t(i)] = true;
    CsiMatrix out;
    out.rows = kImageRows;
    out.cols = m.cols;
    out.amp.reserve(size_t(kImageRows) * m.cols);
    for (int r = 0; r < kSubcarriers; ++r) {
        if (drop[size_t(r)]) continue;
        out.amp.insert(out.amp.end(), m.amp.begin() + size_t(r) * m.cols,
                       m.amp.begin() + size_t(r + 1) * m.cols);
    }
    return out;
}

CsiMatrix moving_average(const CsiMatrix& m, int window) {
    if (window < 1) throw ValueError("moving_average: window must be >= 1");
    CsiMatrix out = m;
    if (window == 1) return out;
    for (int r = 0; r < m.rows; ++r) {
        double running = 0.0;
        for (int t = 0; t < m.cols; ++t) {
            running += m.at(r, t);
            if (t >= window) running -= m.at(r, t - window);
            const int n = std::min(window, t + 1);
            out.at(r, t) = float(running / n);
        }
    }
    return out;
}

RadioImage to_radio_image(const CsiMatrix& m) {
    float lo = m.amp.empty() ? 0.0f : m.amp[0], hi = lo;
    for (float v : m.amp) {
        if (!std::isfinite(v)) throw ValueError("to_radio_image: non-finite amplitude");
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    RadioImage img;
    img.rows = m.rows;
    img.cols = m.cols;
    img.values.resize(m.amp.size());
    const float range = hi - lo;
    if (range > 0.0f)
        for (size_t i = 0; i < m.amp.size(); ++i)
            img.values[i] = (m.amp[i] - lo) / range;
    return img;
}

// --- synthetic data ------------------------------------------------------------------

namespace {

struct SynthProfile {
    int band_center;
    int band_width;
    // temporal activity profile in [0,1]
    float activity(int t, float phase, int t0) const {
        switch (kind) {
            case 0: return 1.0f;                                       // sit
            case 1: return 1.0f;                                       // stand
            case 2: return 0.6f + 0.4f * std::sin(2.0f * float(M_PI) * float(t) / 25.0f + phase);  // walk
            case 3: return 1.0f / (1.0f + std::exp(-(float(t - t0)) / 8.0f));   // stand-up
            case 4: return 1.0f - 1.0f / (1.0f + std::exp(-(float(t - t0)) / 8.0f));  // sit-down
        }
        return 0.0f;
    }
    int kind;
};

SynthProfile har_profile(int har) {
    switch (har) {
        case 0: return {55, 12, 0};
        case 1: return {100, 12, 1};
        case 2: return {75, 20, 2};
        case 3: return {75, 12, 3};
        case 4: return {75, 12, 4};
    }
    throw ValueError("har label out of range");
}

void add_signature(std::vector<float>& img, int rows, int cols,
                   const SynthProfile& p, float strength, float phase, int t0) {
    for (int s = 0; s < rows; ++s) {
        const float d = float(s - p.band_center) / float(p.band_width);
        const float band = std::exp(-0.5f * d * d);
        if (band < 1e-3f) continue;
        for (int t = 0; t < cols; ++t)
            img[size_t(s) * cols + t] += strength * band * p.activity(t, phase, t0);
    }
}

void check_labels(int rod_label, std::optional<int> har_label) {
    if (rod_label < 0 || rod_label > 2) throw ValueError("rod label must be 0..2");
    if (rod_label == 1) {
        if (!har_label || *har_label < 0 || *har_label > 4)
            throw ValueError("one-person scenario requires a har label 0..4");
    } else if (har_label) {
        throw ValueError("har label only valid for the one-person scenario");
    }
}

// One 234x300 sample in [0,1]; shared by the image and frame generators.
std::vector<float> synth_sample(int rod_label, std::optional<int> har_label,
                                int rows, int cols, std::mt19937& rng) {
    std::uniform_real_distribution<float> uphase(0.0f, 2.0f * float(M_PI));
    std::uniform_real_distribution<float> ujit(-1.0f, 1.0f);
    std::uniform_int_distribution<int> ut0(cols / 3, 2 * cols / 3);
    std::normal_distribution<float> noise(0.0f, 1.0f);

    // shared multipath baseline with mild per-capture jitter; the class
    // signatures must dominate the between-sample variation
    const float f1 = 2.0f + 0.1f * ujit(rng), f2 = 4.3f + 0.2f * ujit(rng);
    const float p1 = 0.7f + 0.25f * ujit(rng), p2 = 1.9f + 0.25f * ujit(rng);
    std::vector<float> img(size_t(rows) * cols);
    for (int s = 0; s < rows; ++s) {
        const float base = 0.45f + 0.15f * std::sin(2.0f * float(M_PI) * f1 * float(s) / float(rows) + p1) +
                           0.07f * std::sin(2.0f * float(M_PI) * f2 * float(s) / float(rows) + p2);
        for (int t = 0; t < cols; ++t) img[size_t(s) * cols + t] = base;
    }

    float sigma = 0.01f;
    if (rod_label == 1) {
        sigma = 0.03f;
        add_signature(img, rows, cols, har_profile(*har_label), 0.3f, uphase(rng), ut0(rng));
    } else if (rod_label == 2) {
        sigma = 0.05f;
        SynthProfile a{70, 16, 2}, b{160, 16, 2};
        add_signature(img, rows, cols, a, 0.28f, uphase(rng), 0);
        add_signature(img, rows, cols, b, 0.28f, uphase(rng), 0);
    }
    for (float& v : img) {
        v += sigma * noise(rng);
        v = std::clamp(v, 0.0f, 1.0f);
    }
    return img;
}

}  // namespace

std::vector<RadioImage> synth_generate(int rod_label, std::optional<int> har_label,
                                       uint64_t seed, int count) {
    check_labels(rod_label, har_label);
    if (count < 0) throw ValueError("synth_generate: negative count");
    std::vector<RadioImage> out;
    out.reserve(size_t(count));
    for (int i = 0; i < count; ++i) {
        std::mt19937 rng{uint32_t(seed * 0x9e3779b9u + uint64_t(i) * 2654435761u + 1u)};
        RadioImage img;
        img.values = synth_sample(rod_label, har_label, img.rows, img.cols, rng);
        img.rod_label = rod_label;
        img.har_label = har_label;
        out.push_back(std::move(img));
    }
    return out;
}

std::vector<CsiFrame> synth_frames(int rod_label, std::optional<int> har_label,
                                   uint64_t seed, int count, uint64_t start_ts_us,
                                   uint64_t interval_us) {
    check_labels(rod_label, har_label);
    std::mt19937 rng{uint32_t(seed * 0x9e3779b9u + 7u)};
    // 256-row variant of the same signature generator; band centers sit inside
    // the kept subcarrier range either way.
    std::vector<float> amp = synth_sample(rod_label, har_label, kSubcarriers, count, rng);
    std::uniform_real_distribution<float> uphase(0.0f, 2.0f * float(M_PI));
    std::vector<CsiFrame> frames{size_t(count)};
    for (int t = 0; t < count; ++t) {
        CsiFrame& f = frames[size_t(t)];
        f.timestamp_us = start_ts_us + uint64_t(t) * interval_us;
        f.source = {0x02, 0x11, 0x22, 0x33, 0x44, 0x55};
        f.sequence = uint16_t(t);
        f.rssi = -42;
        f.chanspec = 0xe02a;  // channel 36, 80 MHz
        f.csi.resize(kSubcarriers);
        for (int s = 0; s < kSubcarriers; ++s) {
            const float a = amp[size_t(s) * count + t] * 8000.0f;
            const float ph = uphase(rng);
            f.csi[size_t(s)] = {std::round(a * std::cos(ph)), std::round(a * std::sin(ph))};
        }
    }
    return frames;
}

// --- dataset files ---------------------------------------------------------------------

namespace {
constexpr char kSampleMagic[4] = {'C', 'S', 'I', 'R'};
constexpr uint32_t kSampleVersion = 1;
constexpr int kTaxonomyVersion = 1;
}  // namespace

void dataset_write(const std::vector<RadioImage>& samples, const std::string& dir) {
    fs::create_directories(dir);
    std::ofstream manifest(fs::path(dir) / "manifest");
    if (!manifest) throw FormatError("cannot write dataset manifest in " + dir);
    json header = {{"format", "csisense-dataset"}, {"taxonomy_version", kTaxonomyVersion}};
    manifest << header.dump() << "\n";
    for (size_t i = 0; i < samples.size(); ++i) {
        const RadioImage& img = samples[i];
        char name[32];
        std::snprintf(name, sizeof(name), "sample_%06zu.csir", i);
        std::ofstream os(fs::path(dir) / name, std::ios::binary);
        os.write(kSampleMagic, 4);
        const uint32_t meta[3] = {kSampleVersion, uint32_t(img.rows), uint32_t(img.cols)};
        os.write(reinterpret_cast<const char*>(meta), 12);
        os.write(reinterpret_cast<const char*>(img.values.data()),
                 std::streamsize(img.values.size() * 4));
        if (!os) throw FormatError("dataset sample write failed");
        json line = {{"file", name}};
        line["rod_label"] = img.rod_label ? json(*img.rod_label) : json(nullptr);
        line["har_label"] = img.har_label ? json(*img.har_label) : json(nullptr);
        manifest << line.dump() << "\n";
    }
    if (!manifest) throw FormatError("dataset manifest write failed");
}

std::vector<RadioImage> dataset_read(const std::string& dir) {
    std::ifstream manifest(fs::path(dir) / "manifest");
    if (!manifest) throw FormatError("dataset manifest not found in " + dir);
    std::string line;
    if (!std::getline(manifest, line)) throw FormatError("empty dataset manifest");
    json header = json::parse(line, nullptr, false);
    if (header.is_discarded() || header.value("format", "") != "csisense-dataset")
        throw FormatError("dataset manifest: bad header line");
    if (header.value("taxonomy_version", -1) != kTaxonomyVersion)
        throw FormatError("dataset manifest: taxonomy version mismatch");

    std::vector<RadioImage> out;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) throw FormatError("dataset manifest: bad JSON line");
        RadioImage img;
        if (!j["rod_label"].is_null()) {
            img.rod_label = j["rod_label"].get<int>();
            if (*img.rod_label < 0 || *img.rod_label > 2)
                throw FormatError("dataset manifest: rod label outside taxonomy");
        }
        if (!j["har_label"].is_null()) {
            img.har_label = j["har_label"].get<int>();
            if (*img.har_label < 0 || *img.har_label > 4)
                throw FormatError("dataset manifest: har label outside taxonomy");
        }
        const std::string file = j.value("file", "");
        std::ifstream is(fs::path(dir) / file, std::ios::binary);
        if (!is) throw FormatError("dataset sample missing: " + file);
        char magic[4];
        is.read(magic, 4);
        if (!is || std::memcmp(magic, kSampleMagic, 4) != 0)
            throw FormatError("dataset sample has bad magic: " + file);
        uint32_t meta[3];
        is.read(reinterpret_cast<char*>(meta), 12);
        if (!is || meta[0] != kSampleVersion)
            throw FormatError("dataset sample has bad version: " + file);
        img.rows = int(meta[1]);
        img.cols = int(meta[2]);
        img.values.resize(size_t(img.rows) * img.cols);
        is.read(reinterpret_cast<char*>(img.values.data()),
                std::streamsize(img.values.size() * 4));
        if (!is) throw FormatError("dataset sample truncated: " + file);
        out.push_back(std::move(img));
    }
    return out;
}

}  // namespace csisense
