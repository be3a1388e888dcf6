#pragma once

#include <stdexcept>
#include <string>

namespace vhgnn {

/// Shape or axis disagreement between tensors.
class DimensionError : public std::runtime_error {
public:
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid configuration value (bad hyperparameter, mode, flag combination).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Problem with external inputs: dataset folders, image files, checkpoints.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace vhgnn
