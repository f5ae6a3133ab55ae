#include "bimamsleep/metrics.hpp"

#include "bimamsleep/error.hpp"
#include "bimamsleep/log.hpp"
#include "bimamsleep/signal_io.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace bimamsleep {

ConfusionMatrix::ConfusionMatrix(std::size_t classes)
    : classes_(classes)
    , counts_(classes * classes, 0)
{
}

void ConfusionMatrix::add(std::size_t truth, std::size_t pred, std::uint64_t count)
{
    if (truth >= classes_ || pred >= classes_) {
        throw ShapeError("ConfusionMatrix::add: class index out of range");
    }
    counts_[truth * classes_ + pred] += count;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other)
{
    if (other.classes_ != classes_) {
        throw ShapeError("ConfusionMatrix: cannot add matrices with different class counts");
    }
    for (std::size_t i = 0; i < counts_.size(); ++i) {
        counts_[i] += other.counts_[i];
    }
    return *this;
}

std::uint64_t ConfusionMatrix::total() const noexcept
{
    std::uint64_t s = 0;
    for (auto v : counts_) {
        s += v;
    }
    return s;
}

std::uint64_t ConfusionMatrix::trace() const noexcept
{
    std::uint64_t s = 0;
    for (std::size_t c = 0; c < classes_; ++c) {
        s += counts_[c * classes_ + c];
    }
    return s;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t c) const
{
    std::uint64_t s = 0;
    for (std::size_t j = 0; j < classes_; ++j) {
        s += at(c, j);
    }
    return s;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t c) const
{
    std::uint64_t s = 0;
    for (std::size_t i = 0; i < classes_; ++i) {
        s += at(i, c);
    }
    return s;
}

ConfusionMatrix confusion(std::span<const std::size_t> y_true, std::span<const std::size_t> y_pred, std::size_t classes)
{
    if (y_true.size() != y_pred.size()) {
        throw ShapeError("confusion: " + std::to_string(y_true.size()) + " true labels vs "
            + std::to_string(y_pred.size()) + " predictions");
    }
    ConfusionMatrix cm(classes);
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        cm.add(y_true[i], y_pred[i]);
    }
    return cm;
}

namespace {

void require_nonempty(const ConfusionMatrix& cm, const char* who)
{
    if (cm.classes() == 0 || cm.total() == 0) {
        throw EmptyDatasetError(std::string(who) + ": empty confusion matrix");
    }
}

} // namespace

double accuracy(const ConfusionMatrix& cm)
{
    require_nonempty(cm, "accuracy");
    return static_cast<double>(cm.trace()) / static_cast<double>(cm.total());
}

std::vector<double> per_class_recall(const ConfusionMatrix& cm)
{
    std::vector<double> r(cm.classes(), 0.0);
    for (std::size_t c = 0; c < cm.classes(); ++c) {
        const auto support = cm.row_sum(c);
        if (support == 0) {
            warn("recall undefined for class " + std::to_string(c) + " (no true samples); using 0");
            continue;
        }
        r[c] = static_cast<double>(cm.at(c, c)) / static_cast<double>(support);
    }
    return r;
}

std::vector<double> per_class_f1(const ConfusionMatrix& cm)
{
    std::vector<double> f(cm.classes(), 0.0);
    for (std::size_t c = 0; c < cm.classes(); ++c) {
        const auto tp = static_cast<double>(cm.at(c, c));
        const auto predicted = static_cast<double>(cm.col_sum(c));
        const auto actual = static_cast<double>(cm.row_sum(c));
        // 2PR/(P+R) == 2TP/(predicted + actual)
        if (predicted + actual == 0.0) {
            warn("F1 undefined for class " + std::to_string(c) + " (never true, never predicted); using 0");
            continue;
        }
        f[c] = 2.0 * tp / (predicted + actual);
    }
    return f;
}

double mf1(const ConfusionMatrix& cm)
{
    require_nonempty(cm, "mf1");
    const auto f = per_class_f1(cm);
    double s = 0.0;
    for (double v : f) {
        s += v;
    }
    return s / static_cast<double>(f.size());
}

double kappa(const ConfusionMatrix& cm)
{
    require_nonempty(cm, "kappa");
    const auto total = static_cast<double>(cm.total());
    const double po = static_cast<double>(cm.trace()) / total;
    double pe = 0.0;
    for (std::size_t c = 0; c < cm.classes(); ++c) {
        pe += static_cast<double>(cm.row_sum(c)) * static_cast<double>(cm.col_sum(c));
    }
    pe /= total * total;
    if (pe == 1.0) {
        warn("kappa undefined (chance agreement is 1); using 0");
        return 0.0;
    }
    return (po - pe) / (1.0 - pe);
}

double mgm(const ConfusionMatrix& cm)
{
    require_nonempty(cm, "mgm");
    const auto r = per_class_recall(cm);
    double log_sum = 0.0;
    for (double v : r) {
        if (v == 0.0) {
            return 0.0;
        }
        log_sum += std::log(v);
    }
    return std::exp(log_sum / static_cast<double>(r.size()));
}

MetricsSummary summarize(const ConfusionMatrix& cm)
{
    return MetricsSummary{accuracy(cm), mf1(cm), kappa(cm), mgm(cm), per_class_f1(cm)};
}

namespace {

std::string class_label(std::size_t c, std::size_t classes)
{
    if (classes == kNumStages) {
        return std::string(kStageNames[c]);
    }
    return "c" + std::to_string(c);
}

std::string fixed(double v, int digits)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

} // namespace

std::string report_text(const ConfusionMatrix& cm, const ReportMeta& meta)
{
    const auto s = summarize(cm);
    std::ostringstream out;
    for (const auto& [k, v] : meta) {
        out << k << ": " << v << '\n';
    }
    out << "epochs scored: " << cm.total() << "\n\n";

    char line[256];
    out << "Per-class F1 (%)";
    out << std::string(8 * cm.classes() > 16 ? 8 * cm.classes() - 16 : 0, ' ') << " | Overall (%)\n";
    for (std::size_t c = 0; c < cm.classes(); ++c) {
        std::snprintf(line, sizeof line, "%8s", class_label(c, cm.classes()).c_str());
        out << line;
    }
    out << " |      ACC      MF1        k      MGm\n";
    for (double f : s.f1) {
        std::snprintf(line, sizeof line, "%8.2f", 100.0 * f);
        out << line;
    }
    std::snprintf(line, sizeof line, " | %8.2f %8.2f %8.2f %8.2f\n", 100.0 * s.acc, 100.0 * s.mf1, 100.0 * s.kappa,
        100.0 * s.mgm);
    out << line;
    out << "kappa (raw): " << fixed(s.kappa, 4) << "\n\n";

    out << "Confusion matrix (rows = true, cols = predicted)\n";
    out << "      ";
    for (std::size_t c = 0; c < cm.classes(); ++c) {
        std::snprintf(line, sizeof line, "%8s", class_label(c, cm.classes()).c_str());
        out << line;
    }
    out << '\n';
    for (std::size_t i = 0; i < cm.classes(); ++i) {
        std::snprintf(line, sizeof line, "%6s", class_label(i, cm.classes()).c_str());
        out << line;
        for (std::size_t j = 0; j < cm.classes(); ++j) {
            std::snprintf(line, sizeof line, "%8llu", static_cast<unsigned long long>(cm.at(i, j)));
            out << line;
        }
        out << '\n';
    }
    return out.str();
}

std::string report_csv(const ConfusionMatrix& cm)
{
    const auto s = summarize(cm);
    std::ostringstream out;
    out << "metric,class,value\n";
    for (std::size_t c = 0; c < cm.classes(); ++c) {
        out << "f1," << class_label(c, cm.classes()) << ',' << fixed(100.0 * s.f1[c], 2) << '\n';
    }
    out << "overall,acc," << fixed(100.0 * s.acc, 2) << '\n';
    out << "overall,mf1," << fixed(100.0 * s.mf1, 2) << '\n';
    out << "overall,kappa," << fixed(100.0 * s.kappa, 2) << '\n';
    out << "overall,mgm," << fixed(100.0 * s.mgm, 2) << '\n';
    out << "overall,kappa_raw," << fixed(s.kappa, 4) << '\n';
    return out.str();
}

} // namespace bimamsleep
