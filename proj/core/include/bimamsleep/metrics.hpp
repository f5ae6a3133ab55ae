#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace bimamsleep {

/// Rows are the true class, columns the predicted class.
class ConfusionMatrix {
public:
    ConfusionMatrix() = default;
    explicit ConfusionMatrix(std::size_t classes);

    std::size_t classes() const noexcept { return classes_; }
    std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * classes_ + pred]; }
    std::uint64_t& at(std::size_t truth, std::size_t pred) { return counts_[truth * classes_ + pred]; }

    void add(std::size_t truth, std::size_t pred, std::uint64_t count = 1);
    ConfusionMatrix& operator+=(const ConfusionMatrix& other);

    std::uint64_t total() const noexcept;
    std::uint64_t trace() const noexcept;
    std::uint64_t row_sum(std::size_t c) const;
    std::uint64_t col_sum(std::size_t c) const;

    bool operator==(const ConfusionMatrix&) const = default;

private:
    std::size_t classes_ = 0;
    std::vector<std::uint64_t> counts_;
};

ConfusionMatrix confusion(std::span<const std::size_t> y_true, std::span<const std::size_t> y_pred, std::size_t classes);

// All scores are fractions in [0,1] (kappa in [-1,1]). Zero denominators give
// 0 and raise a warning.
double accuracy(const ConfusionMatrix& cm);
std::vector<double> per_class_f1(const ConfusionMatrix& cm);
std::vector<double> per_class_recall(const ConfusionMatrix& cm);
double mf1(const ConfusionMatrix& cm);
double kappa(const ConfusionMatrix& cm);
double mgm(const ConfusionMatrix& cm);

struct MetricsSummary {
    double acc = 0.0;
    double mf1 = 0.0;
    double kappa = 0.0;
    double mgm = 0.0;
    std::vector<double> f1;
};

MetricsSummary summarize(const ConfusionMatrix& cm);

// Free-form key/value lines printed above the table.
using ReportMeta = std::vector<std::pair<std::string, std::string>>;

/// Table layout: per-class F1 (W, N1, N2, N3, REM) then ACC, MF1, kappa, MGm,
/// all as percentages with two decimals, followed by the confusion matrix.
std::string report_text(const ConfusionMatrix& cm, const ReportMeta& meta = {});

/// CSV with header `metric,class,value`: `f1,<stage>,<pct>` rows, then
/// `overall,acc|mf1|kappa|mgm,<pct>` and `overall,kappa_raw,<fraction>`.
std::string report_csv(const ConfusionMatrix& cm);

} // namespace bimamsleep
