#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "vhgnn/errors.hpp"

namespace vhgnn {

struct ClassMetrics {
    std::string name;
    std::size_t support = 0;
    double precision = 0.0; // 0 when the class was never predicted
    double recall = 0.0;    // 0 when the class has no samples
    double f1 = 0.0;
    bool precision_defined = false;
    bool recall_defined = false;
};

/// Classification quality over one evaluation split. Macro averages count
/// undefined per-class values as zero, so a class that is never predicted
/// (or absent from the split) drags the average down instead of vanishing.
struct EvalReport {
    std::size_t num_samples = 0;
    std::size_t num_classes = 0;
    std::map<std::size_t, double> top_n; // hit rate for each reported N
    std::vector<ClassMetrics> per_class;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    std::vector<std::vector<std::size_t>> confusion; // [true][predicted]
};

/// `probs[i]` holds one probability (or score) per class for sample i; the
/// ranking breaks ties toward the smaller class index. Reported N are
/// {1,2,3,5} clamped to the class count.
EvalReport evaluate(const std::vector<std::vector<double>>& probs, const std::vector<int>& labels,
                    std::size_t num_classes, const std::vector<std::string>& class_names = {});

nlohmann::json report_to_json(const EvalReport& r);

/// Aligned, human-readable rendering of the same numbers.
std::string report_to_table(const EvalReport& r);

} // namespace vhgnn
