#pragma once

#include <stdexcept>
#include <string>

namespace dca {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Protocol violations raised by the channel model. These signal an agent
// bug, not a recoverable simulation condition.
struct TransmitWhileBusy : Error {
    explicit TransmitWhileBusy(int station)
        : Error("station " + std::to_string(station) + " transmitted on a busy channel") {}
};

struct TransmitWithEmptyBuffer : Error {
    explicit TransmitWithEmptyBuffer(int station)
        : Error("station " + std::to_string(station) + " transmitted with an empty buffer") {}
};

struct NumericalError : Error {
    explicit NumericalError(const std::string& msg) : Error(msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

struct MetricsError : Error {
    explicit MetricsError(const std::string& msg) : Error(msg) {}
};

}  // namespace dca
