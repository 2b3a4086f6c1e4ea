#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "csisense/errors.hpp"

namespace csisense {

constexpr int kSubcarriers = 256;   // VHT-80 tone count
constexpr int kWindowPackets = 300;
constexpr int kImageRows = 234;     // 256 - 8 pilots - 14 nulls

struct CsiFrame {
    uint64_t timestamp_us = 0;
    std::array<uint8_t, 6> source{};
    uint16_t sequence = 0;
    int8_t rssi = 0;
    uint16_t chanspec = 0;
    std::vector<std::complex<float>> csi;  // exactly 256 entries
};

struct ParseStats {
    size_t frames = 0;
    size_t skipped_non_csi = 0;   // wrong protocol/port/too short to be CSI
    size_t skipped_truncated = 0; // CSI-shaped but payload cut off
    size_t skipped_magic = 0;     // UDP on the CSI port with a bad payload magic
    size_t total_skipped() const { return skipped_non_csi + skipped_truncated + skipped_magic; }
};

// Row-major matrix, rows = subcarriers, cols = packets.
struct CsiMatrix {
    int rows = 0, cols = 0;
    std::vector<float> amp;
    float& at(int r, int c) { return amp[size_t(r) * cols + c]; }
    float at(int r, int c) const { return amp[size_t(r) * cols + c]; }
};

struct RadioImage {
    int rows = kImageRows, cols = kWindowPackets;
    std::vector<float> values;  // [0,1], row-major
    std::optional<int> rod_label;  // 0 nobody, 1 one person, 2 two persons
    std::optional<int> har_label;  // 0 sit, 1 stand, 2 walk, 3 stand-up, 4 sit-down
};

extern const char* const kRodClassNames[3];
extern const char* const kHarClassNames[5];

// Tone indices in fft-shifted order (tone -128 at row 0, DC at row 128).
struct SubcarrierMask {
    std::vector<int> nulls;   // 14 entries
    std::vector<int> pilots;  // 8 entries
    static SubcarrierMask vht80_default();
    void validate() const;  // sizes, disjointness, keep-set = 234
};

// --- pcap ingestion ---------------------------------------------------------

// Parses an in-memory pcap byte buffer. Throws FormatError if the global
// header is invalid; any malformed packet after that is a counted skip.
std::vector<CsiFrame> parse_csi_pcap(const uint8_t* bytes, size_t len,
                                     uint16_t udp_port, ParseStats& stats);
std::vector<CsiFrame> parse_csi_pcap_file(const std::string& path,
                                          uint16_t udp_port, ParseStats& stats);

// Writes frames back out as a pcap of UDP datagrams in the extractor layout;
// used by capture replay tests and the synth tooling.
void write_csi_pcap(const std::string& path, const std::vector<CsiFrame>& frames,
                    uint16_t udp_port);

// --- matrix assembly and preprocessing --------------------------------------

// Groups consecutive frames into non-overlapping windows; |.| amplitudes,
// orientation subcarriers x packets. Leftover partial window -> dropped_frames.
std::vector<CsiMatrix> assemble_matrices(const std::vector<CsiFrame>& frames,
                                         int window, size_t& dropped_frames);

CsiMatrix filter_subcarriers(const CsiMatrix& m, const SubcarrierMask& mask);

// Trailing (causal) mean over the last min(w, t+1) columns, per row.
CsiMatrix moving_average(const CsiMatrix& m, int window);

// Per-image min-max normalization to [0,1]; a constant matrix maps to zeros.
RadioImage to_radio_image(const CsiMatrix& m);

// --- synthetic data -----------------------------------------------------------

// Class-separable synthetic radio images: static multipath baseline plus
// class-dependent temporal signatures, deterministic per seed.
std::vector<RadioImage> synth_generate(int rod_label, std::optional<int> har_label,
                                       uint64_t seed, int count);

// Synthetic raw CSI frames whose pipeline output carries the same signatures;
// feeds pcap-level end-to-end tests and monitor replay captures.
std::vector<CsiFrame> synth_frames(int rod_label, std::optional<int> har_label,
                                   uint64_t seed, int count, uint64_t start_ts_us = 0,
                                   uint64_t interval_us = 10000);

// --- dataset files --------------------------------------------------------------

// Directory of one binary file per sample ("CSIR" header + f32 payload) plus a
// JSON-lines manifest whose first line carries the taxonomy version.
void dataset_write(const std::vector<RadioImage>& samples, const std::string& dir);
std::vector<RadioImage> dataset_read(const std::string& dir);

}  // namespace csisense
