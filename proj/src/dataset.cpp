#include "vhgnn/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <random>

#include "vhgnn/errors.hpp"

namespace fs = std::filesystem;

namespace vhgnn {

namespace {

bool has_image_extension(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

} // namespace

DatasetIndex load_dataset(const std::string& root) {
    const fs::path base(root);
    if (!fs::exists(base)) throw DataError("dataset root does not exist: " + root);
    if (!fs::is_directory(base)) throw DataError("dataset root is not a directory: " + root);

    std::vector<std::string> classes;
    for (const auto& entry : fs::directory_iterator(base)) {
        if (!entry.is_directory()) continue;
        const std::string name = entry.path().filename().string();
        if (name.empty() || name[0] == '.') continue;
        classes.push_back(name);
    }
    if (classes.empty()) {
        throw DataError("no classes found under " + root +
                        " (expected one subdirectory per class)");
    }
    std::sort(classes.begin(), classes.end());

    DatasetIndex index;
    index.class_names = classes;
    for (std::size_t label = 0; label < classes.size(); ++label) {
        std::vector<std::string> files;
        for (const auto& entry : fs::directory_iterator(base / classes[label])) {
            if (!entry.is_regular_file()) continue;
            const fs::path& p = entry.path();
            if (p.filename().string().starts_with(".")) continue;
            if (!has_image_extension(p)) continue;
            files.push_back(p.string());
        }
        if (files.empty()) {
            throw DataError("class '" + classes[label] + "' under " + root +
                            " contains no images (.png/.jpg/.jpeg/.bmp)");
        }
        std::sort(files.begin(), files.end());
        for (auto& f : files) index.samples.push_back({std::move(f), static_cast<int>(label)});
    }
    return index;
}

std::vector<std::vector<std::size_t>> kfold_split(std::size_t n, std::size_t k,
                                                  std::uint64_t seed) {
    if (k < 3) throw ConfigError("k-fold split needs k >= 3 (train/val/test are distinct folds)");
    if (n < k) {
        throw DataError("cannot split " + std::to_string(n) + " samples into " +
                        std::to_string(k) + " folds");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<std::vector<std::size_t>> folds(k);
    const std::size_t base = n / k, extra = n % k;
    std::size_t pos = 0;
    for (std::size_t f = 0; f < k; ++f) {
        const std::size_t len = base + (f < extra ? 1 : 0);
        folds[f].assign(order.begin() + pos, order.begin() + pos + len);
        pos += len;
    }
    return folds;
}

SplitIndices assemble_split(const std::vector<std::vector<std::size_t>>& folds,
                            std::size_t test_fold) {
    const std::size_t k = folds.size();
    if (test_fold >= k) {
        throw ConfigError("test fold " + std::to_string(test_fold) + " out of range for k=" +
                          std::to_string(k));
    }
    SplitIndices split;
    const std::size_t val_fold = (test_fold + 1) % k;
    split.test = folds[test_fold];
    split.val = folds[val_fold];
    for (std::size_t f = 0; f < k; ++f) {
        if (f == test_fold || f == val_fold) continue;
        split.train.insert(split.train.end(), folds[f].begin(), folds[f].end());
    }
    return split;
}

} // namespace vhgnn
