#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "finsent/data.hpp"

namespace finsent {

/// 3x3 count matrix indexed [true][predicted] over the fixed class order
/// [positive, negative, neutral].
class ConfusionMatrix {
public:
    long at(Label truth, Label predicted) const {
        return counts_[static_cast<size_t>(truth)][static_cast<size_t>(predicted)];
    }
    long& cell(Label truth, Label predicted) {
        return counts_[static_cast<size_t>(truth)][static_cast<size_t>(predicted)];
    }
    long total() const;
    long trace() const;

private:
    std::array<std::array<long, 3>, 3> counts_ = {};
};

/// Exact tally; lengths must match and be non-empty.
ConfusionMatrix confusion(const std::vector<Label>& truth, const std::vector<Label>& predicted);

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct MetricsReport {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    std::array<ClassMetrics, 3> per_class;   // [positive, negative, neutral]
    std::array<long, 3> support = {0, 0, 0}; // true-class counts
    long total = 0;
    std::optional<double> mean_ce;
    std::optional<double> mse;

    std::string to_json() const;  // schema documented in docs/formats.md
};

/// Precision/recall/F1 per class with the zero-denominator convention
/// (undefined ratios count as 0); macro-F1 averages all three classes;
/// accuracy = trace/total. The optional per-example cross-entropy losses fill
/// mean_ce.
MetricsReport summarize(const ConfusionMatrix& cm, const std::vector<double>& losses);

/// Mean squared error, accumulated in double.
double regression_eval(const std::vector<double>& predictions,
                       const std::vector<double>& targets);

/// Pearson correlation of two equally long, non-constant series.
double loss_accuracy_correlation(const std::vector<double>& losses,
                                 const std::vector<double>& accuracies);

}  // namespace finsent
