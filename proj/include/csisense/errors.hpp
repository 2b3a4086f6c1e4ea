#pragma once

#include <stdexcept>
#include <string>

namespace csisense {

// Shape/channel mismatches between tensors or layer configs.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad argument values (negative window, h=0, label out of range, ...).
struct ValueError : std::runtime_error {
    explicit ValueError(const std::string& msg) : std::runtime_error(msg) {}
};

// Autograd misuse: backward on a detached tensor, empty tape.
struct TapeError : std::runtime_error {
    explicit TapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed files: pcap headers, checkpoints, dataset manifests.
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Model assembly violated a structural constraint.
struct BuildError : std::runtime_error {
    explicit BuildError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace csisense
