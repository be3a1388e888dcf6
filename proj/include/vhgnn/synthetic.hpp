#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vhgnn/image.hpp"

namespace vhgnn {

struct SyntheticOptions {
    std::size_t image_size = 64;
    std::size_t per_class = 32;
    std::uint64_t seed = 0;
    double noise = 0.05;
};

/// Oriented sinusoidal gratings at 0, 45, 90, and 135 degrees.
std::vector<std::string> synthetic_class_names();

/// One grating instance; frequency and phase jitter plus pixel noise are
/// fully determined by (cls, instance_seed).
Micrograph synthetic_grating(std::size_t image_size, std::size_t cls, std::uint64_t instance_seed,
                             double noise);

struct SyntheticSet {
    std::vector<Micrograph> images; // class-major order
    std::vector<int> labels;
    std::vector<std::string> class_names;
};

SyntheticSet make_synthetic_set(const SyntheticOptions& opt);

/// Materializes the set as <root>/<class>/<class>_<index>.png.
void write_synthetic_dataset(const std::string& root, const SyntheticOptions& opt);

} // namespace vhgnn
