#include "vhgnn/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace vhgnn {

EvalReport evaluate(const std::vector<std::vector<double>>& probs, const std::vector<int>& labels,
                    std::size_t num_classes, const std::vector<std::string>& class_names) {
    if (probs.empty()) throw DataError("evaluate: no samples");
    if (probs.size() != labels.size()) {
        throw DimensionError("evaluate: " + std::to_string(probs.size()) + " probability rows vs " +
                             std::to_string(labels.size()) + " labels");
    }
    if (num_classes < 2) throw ConfigError("evaluate: need at least 2 classes");
    if (!class_names.empty() && class_names.size() != num_classes) {
        throw ConfigError("evaluate: class name count does not match num_classes");
    }

    EvalReport r;
    r.num_samples = probs.size();
    r.num_classes = num_classes;
    r.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));

    std::vector<std::size_t> ns;
    for (std::size_t n : {std::size_t{1}, std::size_t{2}, std::size_t{3}, std::size_t{5}}) {
        if (n <= num_classes) ns.push_back(n);
    }
    std::map<std::size_t, std::size_t> hits;
    for (std::size_t n : ns) hits[n] = 0;

    std::vector<std::size_t> order(num_classes);
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const auto& p = probs[i];
        if (p.size() != num_classes) {
            throw DimensionError("evaluate: sample " + std::to_string(i) + " has " +
                                 std::to_string(p.size()) + " scores for " +
                                 std::to_string(num_classes) + " classes");
        }
        const int label = labels[i];
        if (label < 0 || static_cast<std::size_t>(label) >= num_classes) {
            throw DataError("evaluate: label " + std::to_string(label) + " out of range at sample " +
                            std::to_string(i));
        }
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (p[a] != p[b]) return p[a] > p[b];
            return a < b;
        });
        r.confusion[static_cast<std::size_t>(label)][order[0]] += 1;
        for (std::size_t n : ns) {
            for (std::size_t j = 0; j < n; ++j) {
                if (order[j] == static_cast<std::size_t>(label)) {
                    hits[n] += 1;
                    break;
                }
            }
        }
    }
    for (std::size_t n : ns) {
        r.top_n[n] = static_cast<double>(hits[n]) / static_cast<double>(r.num_samples);
    }

    r.per_class.resize(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) {
        ClassMetrics& m = r.per_class[c];
        m.name = class_names.empty() ? "class_" + std::to_string(c) : class_names[c];
        std::size_t tp = r.confusion[c][c], row = 0, col = 0;
        for (std::size_t j = 0; j < num_classes; ++j) {
            row += r.confusion[c][j];
            col += r.confusion[j][c];
        }
        m.support = row;
        m.precision_defined = col > 0;
        m.recall_defined = row > 0;
        m.precision = col > 0 ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
        m.recall = row > 0 ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
        m.f1 = (m.precision + m.recall) > 0.0
                   ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                   : 0.0;
        r.macro_precision += m.precision;
        r.macro_recall += m.recall;
        r.macro_f1 += m.f1;
    }
    r.macro_precision /= static_cast<double>(num_classes);
    r.macro_recall /= static_cast<double>(num_classes);
    r.macro_f1 /= static_cast<double>(num_classes);
    return r;
}

nlohmann::json report_to_json(const EvalReport& r) {
    nlohmann::json top;
    for (const auto& [n, v] : r.top_n) top["top_" + std::to_string(n)] = v;
    nlohmann::json classes = nlohmann::json::array();
    for (const auto& m : r.per_class) {
        classes.push_back({{"name", m.name},
                           {"support", m.support},
                           {"precision", m.precision},
                           {"recall", m.recall},
                           {"f1", m.f1},
                           {"precision_defined", m.precision_defined},
                           {"recall_defined", m.recall_defined}});
    }
    return nlohmann::json{{"num_samples", r.num_samples},
                          {"num_classes", r.num_classes},
                          {"accuracy", top},
                          {"per_class", classes},
                          {"macro_precision", r.macro_precision},
                          {"macro_recall", r.macro_recall},
                          {"macro_f1", r.macro_f1},
                          {"confusion", r.confusion}};
}

std::string report_to_table(const EvalReport& r) {
    std::ostringstream out;
    char buf[160];
    out << "samples: " << r.num_samples << "\n";
    for (const auto& [n, v] : r.top_n) {
        std::snprintf(buf, sizeof(buf), "top-%zu accuracy: %.4f\n", n, v);
        out << buf;
    }
    std::size_t width = 5;
    for (const auto& m : r.per_class) width = std::max(width, m.name.size());
    std::snprintf(buf, sizeof(buf), "%-*s %9s %9s %9s %8s\n", static_cast<int>(width), "class",
                  "precision", "recall", "f1", "support");
    out << buf;
    for (const auto& m : r.per_class) {
        std::snprintf(buf, sizeof(buf), "%-*s %9.4f %9.4f %9.4f %8zu\n", static_cast<int>(width),
                      m.name.c_str(), m.precision, m.recall, m.f1, m.support);
        out << buf;
    }
    std::snprintf(buf, sizeof(buf), "%-*s %9.4f %9.4f %9.4f %8zu\n", static_cast<int>(width),
                  "macro", r.macro_precision, r.macro_recall, r.macro_f1, r.num_samples);
    out << buf;
    return out.str();
}

} // namespace vhgnn
