#pragma once

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "di3cl/core/error.hpp"
#include "di3cl/datapipe/raster_io.hpp"

namespace di3cl {

/// Rows are ground truth, columns are predictions.
class ConfusionMatrix {
public:
    ConfusionMatrix() = default;
    explicit ConfusionMatrix(int classes) : k_(classes), counts_(static_cast<std::size_t>(classes) * classes, 0) {
        if (classes < 1) throw ConfigError("confusion matrix needs >= 1 class");
    }
    static ConfusionMatrix from_rows(const std::vector<std::vector<std::int64_t>>& rows) {
        ConfusionMatrix m(static_cast<int>(rows.size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != rows.size()) throw ShapeError("confusion matrix must be square");
            for (std::size_t j = 0; j < rows.size(); ++j) {
                if (rows[i][j] < 0) throw ShapeError("confusion counts must be non-negative");
                m.at(static_cast<int>(i), static_cast<int>(j)) = rows[i][j];
            }
        }
        return m;
    }

    int classes() const { return k_; }
    std::int64_t& at(int truth, int pred) { return counts_[static_cast<std::size_t>(truth) * k_ + pred]; }
    std::int64_t at(int truth, int pred) const { return counts_[static_cast<std::size_t>(truth) * k_ + pred]; }

    /// Counts every non-ignored pixel; labels >= classes() are rejected.
    void add(const LabelMap& truth, const LabelMap& pred) {
        if (truth.height != pred.height || truth.width != pred.width) throw ShapeError("confusion: label map size mismatch");
        for (std::size_t i = 0; i < truth.data.size(); ++i) {
            const int t = truth.data[i];
            if (t == LabelMap::kIgnore) continue;
            const int p = pred.data[i];
            if (t >= k_ || p >= k_) throw DataError("label index exceeds class count");
            ++at(t, p);
        }
    }

    std::int64_t total() const {
        std::int64_t s = 0;
        for (auto c : counts_) s += c;
        return s;
    }

private:
    int k_ = 0;
    std::vector<std::int64_t> counts_;
};

/// Per-class values are NaN for a class absent from both truth and prediction;
/// mIoU averages the classes where it is defined.
struct MetricsReport {
    ConfusionMatrix confusion;
    double oa = 0, kappa = 0, miou = 0;
    std::vector<double> per_class_f1, per_class_iou;
    // Binary tasks: positive class = 1.
    bool binary = false;
    double precision = 0, recall = 0, f1 = 0, iou = 0;
};

inline MetricsReport compute_metrics(const ConfusionMatrix& cm) {
    const int k = cm.classes();
    const double total = static_cast<double>(cm.total());
    if (total <= 0) throw StateError("metrics undefined for an all-zero confusion matrix");
    MetricsReport r;
    r.confusion = cm;
    std::vector<double> row(static_cast<std::size_t>(k), 0.0), col(static_cast<std::size_t>(k), 0.0);
    double trace = 0;
    for (int i = 0; i < k; ++i) {
        trace += static_cast<double>(cm.at(i, i));
        for (int j = 0; j < k; ++j) {
            row[static_cast<std::size_t>(i)] += static_cast<double>(cm.at(i, j));
            col[static_cast<std::size_t>(j)] += static_cast<double>(cm.at(i, j));
        }
    }
    r.oa = trace / total;
    double pe = 0;
    for (int i = 0; i < k; ++i) pe += row[static_cast<std::size_t>(i)] * col[static_cast<std::size_t>(i)];
    pe /= total * total;
    r.kappa = pe < 1.0 ? (r.oa - pe) / (1.0 - pe) : 1.0;  // pe == 1 only for a single occupied diagonal cell

    const double nan = std::numeric_limits<double>::quiet_NaN();
    double iou_sum = 0;
    int defined = 0;
    for (int c = 0; c < k; ++c) {
        const double tp = static_cast<double>(cm.at(c, c));
        const double fn = row[static_cast<std::size_t>(c)] - tp;
        const double fp = col[static_cast<std::size_t>(c)] - tp;
        const double uni = tp + fp + fn;
        if (uni > 0) {
            r.per_class_iou.push_back(tp / uni);
            r.per_class_f1.push_back(2 * tp / (2 * tp + fp + fn));
            iou_sum += tp / uni;
            ++defined;
        } else {
            r.per_class_iou.push_back(nan);
            r.per_class_f1.push_back(nan);
        }
    }
    r.miou = iou_sum / defined;

    if (k == 2) {
        r.binary = true;
        const double tp = static_cast<double>(cm.at(1, 1));
        const double fp = static_cast<double>(cm.at(0, 1));
        const double fn = static_cast<double>(cm.at(1, 0));
        r.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
        r.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
        r.f1 = 2 * tp + fp + fn > 0 ? 2 * tp / (2 * tp + fp + fn) : 0.0;
        r.iou = tp + fp + fn > 0 ? tp / (tp + fp + fn) : 0.0;
    }
    return r;
}

/// Human-readable table (percentages).
inline void print_metrics_table(std::ostream& os, const MetricsReport& r) {
    os << std::fixed << std::setprecision(2);
    os << "OA(%)    Kappa(%)  mIoU(%)\n";
    os << std::setw(6) << 100 * r.oa << "   " << std::setw(7) << 100 * r.kappa << "   " << std::setw(7) << 100 * r.miou << '\n';
    os << "class  F1(%)    IoU(%)\n";
    for (std::size_t c = 0; c < r.per_class_f1.size(); ++c)
        os << std::setw(5) << c << "  " << std::setw(6) << 100 * r.per_class_f1[c] << "   " << std::setw(6) << 100 * r.per_class_iou[c]
           << '\n';
    if (r.binary) {
        os << "Precision(%)  Recall(%)  F1(%)  IoU(%)\n";
        os << std::setw(12) << 100 * r.precision << "  " << std::setw(9) << 100 * r.recall << "  " << std::setw(5) << 100 * r.f1
           << "  " << std::setw(6) << 100 * r.iou << '\n';
    }
    os.unsetf(std::ios::fixed);
}

/// Machine-readable record: one `name<TAB>value` per line.
inline void write_metrics_record(std::ostream& os, const MetricsReport& r) {
    os << std::setprecision(10);
    os << "oa\t" << r.oa << "\nkappa\t" << r.kappa << "\nmiou\t" << r.miou << '\n';
    for (std::size_t c = 0; c < r.per_class_f1.size(); ++c) {
        os << "f1_class_" << c << '\t' << r.per_class_f1[c] << '\n';
        os << "iou_class_" << c << '\t' << r.per_class_iou[c] << '\n';
    }
    if (r.binary)
        os << "precision\t" << r.precision << "\nrecall\t" << r.recall << "\nf1\t" << r.f1 << "\niou\t" << r.iou << '\n';
}

}  // namespace di3cl
