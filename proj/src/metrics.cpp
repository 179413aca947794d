#include "finsent/metrics.hpp"

#include <cmath>

#include <json.hpp>

#include "finsent/errors.hpp"

namespace finsent {

long ConfusionMatrix::total() const {
    long n = 0;
    for (const auto& row : counts_) {
        for (long c : row) n += c;
    }
    return n;
}

long ConfusionMatrix::trace() const {
    return counts_[0][0] + counts_[1][1] + counts_[2][2];
}

ConfusionMatrix confusion(const std::vector<Label>& truth, const std::vector<Label>& predicted) {
    if (truth.size() != predicted.size()) {
        throw ContractError("confusion: " + std::to_string(truth.size()) + " true labels vs " +
                            std::to_string(predicted.size()) + " predictions");
    }
    if (truth.empty()) throw ContractError("confusion: no examples");
    ConfusionMatrix cm;
    for (size_t i = 0; i < truth.size(); ++i) {
        cm.cell(truth[i], predicted[i]) += 1;
    }
    return cm;
}

MetricsReport summarize(const ConfusionMatrix& cm, const std::vector<double>& losses) {
    const long total = cm.total();
    if (total <= 0) throw ContractError("summarize: empty confusion matrix");

    MetricsReport report;
    report.total = total;
    report.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);

    double f1_sum = 0.0;
    for (int c = 0; c < 3; ++c) {
        const Label label = static_cast<Label>(c);
        const long tp = cm.at(label, label);
        long fp = 0, fn = 0;
        for (int other = 0; other < 3; ++other) {
            const Label o = static_cast<Label>(other);
            if (other != c) {
                fp += cm.at(o, label);
                fn += cm.at(label, o);
            }
        }
        report.support[c] = tp + fn;
        ClassMetrics& m = report.per_class[c];
        m.precision = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
        m.recall = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
        m.f1 = (m.precision + m.recall) > 0.0
                   ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                   : 0.0;
        f1_sum += m.f1;
    }
    report.macro_f1 = f1_sum / 3.0;

    if (!losses.empty()) {
        double sum = 0.0;
        for (double v : losses) sum += v;
        report.mean_ce = sum / static_cast<double>(losses.size());
    }
    return report;
}

std::string MetricsReport::to_json() const {
    static const char* kNames[3] = {"positive", "negative", "neutral"};
    nlohmann::json per;
    for (int c = 0; c < 3; ++c) {
        per[kNames[c]] = {{"precision", per_class[c].precision},
                          {"recall", per_class[c].recall},
                          {"f1", per_class[c].f1},
                          {"support", support[c]}};
    }
    nlohmann::json doc = {{"accuracy", accuracy},
                          {"macro_f1", macro_f1},
                          {"per_class", per},
                          {"total", total}};
    if (mean_ce) doc["mean_ce"] = *mean_ce;
    if (mse) doc["mse"] = *mse;
    return doc.dump(2);
}

double regression_eval(const std::vector<double>& predictions,
                       const std::vector<double>& targets) {
    if (predictions.size() != targets.size()) {
        throw ContractError("regression_eval: " + std::to_string(predictions.size()) +
                            " predictions vs " + std::to_string(targets.size()) + " targets");
    }
    if (predictions.empty()) throw ContractError("regression_eval: no examples");
    double sum = 0.0;
    for (size_t i = 0; i < predictions.size(); ++i) {
        const double d = predictions[i] - targets[i];
        sum += d * d;
    }
    return sum / static_cast<double>(predictions.size());
}

double loss_accuracy_correlation(const std::vector<double>& losses,
                                 const std::vector<double>& accuracies) {
    if (losses.size() != accuracies.size()) {
        throw ContractError("loss_accuracy_correlation: series lengths differ");
    }
    const size_t n = losses.size();
    if (n < 2) throw ContractError("loss_accuracy_correlation: need at least 2 points");

    double mean_x = 0.0, mean_y = 0.0;
    for (size_t i = 0; i < n; ++i) {
        mean_x += losses[i];
        mean_y += accuracies[i];
    }
    mean_x /= static_cast<double>(n);
    mean_y /= static_cast<double>(n);

    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double dx = losses[i] - mean_x;
        const double dy = accuracies[i] - mean_y;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0 || syy == 0.0) {
        throw ContractError("loss_accuracy_correlation: undefined for a constant series");
    }
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace finsent
