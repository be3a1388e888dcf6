#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vhgnn {

struct Sample {
    std::string path;
    int label = -1;
};

/// Directory-per-class dataset layout. Class names and file lists are sorted
/// so the index is stable across filesystems.
struct DatasetIndex {
    std::vector<std::string> class_names;
    std::vector<Sample> samples;
};

DatasetIndex load_dataset(const std::string& root);

/// Shuffled contiguous fold assignment: fold f owns indices[f]. The first
/// (n % k) folds receive one extra element.
std::vector<std::vector<std::size_t>> kfold_split(std::size_t n, std::size_t k,
                                                  std::uint64_t seed);

struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
};

/// Fold t is the test split, fold (t+1) mod k validates, the rest train.
SplitIndices assemble_split(const std::vector<std::vector<std::size_t>>& folds,
                            std::size_t test_fold);

} // namespace vhgnn
