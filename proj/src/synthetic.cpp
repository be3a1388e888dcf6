#include "vhgnn/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "vhgnn/errors.hpp"
#include "vhgnn/util.hpp"

namespace {
constexpr double kPi = 3.14159265358979323846;
}

namespace vhgnn {

std::vector<std::string> synthetic_class_names() {
    return {"deg0", "deg45", "deg90", "deg135"};
}

Micrograph synthetic_grating(std::size_t image_size, std::size_t cls, std::uint64_t instance_seed,
                             double noise) {
    if (cls >= 4) throw ConfigError("synthetic_grating: class must be < 4");
    if (image_size == 0) throw ConfigError("synthetic_grating: image size must be positive");

    std::mt19937_64 rng(splitmix64(instance_seed * 4ull + cls));
    std::uniform_real_distribution<double> freq_dist(4.0, 8.0);
    std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * kPi);
    std::normal_distribution<double> noise_dist(0.0, 1.0);

    const double theta = static_cast<double>(cls) * kPi / 4.0;
    const double cx = std::cos(theta), sy = std::sin(theta);
    const double freq = freq_dist(rng);
    const double phase = phase_dist(rng);
    const double inv = 1.0 / static_cast<double>(image_size);

    Micrograph img = make_micrograph(image_size, image_size);
    for (std::size_t y = 0; y < image_size; ++y) {
        for (std::size_t x = 0; x < image_size; ++x) {
            const double u = (cx * static_cast<double>(x) + sy * static_cast<double>(y)) * inv;
            double v = 0.5 + 0.4 * std::sin(2.0 * kPi * freq * u + phase);
            v += noise * noise_dist(rng);
            v = std::clamp(v, 0.0, 1.0);
            for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(v);
        }
    }
    return img;
}

SyntheticSet make_synthetic_set(const SyntheticOptions& opt) {
    if (opt.per_class == 0) throw ConfigError("synthetic set: per_class must be >= 1");
    SyntheticSet set;
    set.class_names = synthetic_class_names();
    for (std::size_t cls = 0; cls < set.class_names.size(); ++cls) {
        for (std::size_t i = 0; i < opt.per_class; ++i) {
            const std::uint64_t inst = splitmix64(opt.seed ^ (cls * 1000003ull + i));
            set.images.push_back(synthetic_grating(opt.image_size, cls, inst, opt.noise));
            set.labels.push_back(static_cast<int>(cls));
        }
    }
    return set;
}

void write_synthetic_dataset(const std::string& root, const SyntheticOptions& opt) {
    SyntheticSet set = make_synthetic_set(opt);
    const auto names = set.class_names;
    std::filesystem::create_directories(root);
    std::size_t idx = 0;
    for (std::size_t cls = 0; cls < names.size(); ++cls) {
        const std::filesystem::path dir = std::filesystem::path(root) / names[cls];
        std::filesystem::create_directories(dir);
        for (std::size_t i = 0; i < opt.per_class; ++i, ++idx) {
            char name[64];
            std::snprintf(name, sizeof(name), "%s_%03zu.png", names[cls].c_str(), i);
            write_png((dir / name).string(), set.images[idx]);
        }
    }
}

} // namespace vhgnn
