#pragma once

#include <cmath>
#include <cstddef>

#include "di3cl/core/error.hpp"
#include "di3cl/core/tensor.hpp"

namespace di3cl {

/// FIFO queue of unit-norm negative embeddings stored as a ring buffer.
template <typename T>
class MemoryBank {
public:
    MemoryBank() = default;
    MemoryBank(int capacity, int dim) : capacity_(capacity), dim_(dim), entries_(capacity, dim) {
        if (capacity < 1 || dim < 1) throw ConfigError("memory bank capacity and dim must be >= 1");
        entries_.setZero();
    }

    int capacity() const { return capacity_; }
    int dim() const { return dim_; }
    int filled() const { return filled_; }
    int head() const { return head_; }
    std::size_t renormalized() const { return renormalized_; }

    /// Overwrites the oldest rows with `batch` (N x D), preserving row order.
    /// Rows that are not unit length are normalized and counted.
    void enqueue(const RowMatrix<T>& batch) {
        if (batch.rows() > capacity_) throw ConfigError("memory bank: batch larger than capacity");
        if (batch.cols() != dim_) throw ShapeError("memory bank: embedding dimension mismatch");
        for (Eigen::Index r = 0; r < batch.rows(); ++r) {
            auto row = entries_.row(head_);
            row = batch.row(r);
            const T n = row.norm();
            if (std::abs(n - T(1)) > T(1e-5)) {
                row /= (n + T(1e-12));
                ++renormalized_;
            }
            head_ = (head_ + 1) % capacity_;
            if (filled_ < capacity_) ++filled_;
        }
    }

    /// Snapshot of the stored rows, oldest first.
    RowMatrix<T> negatives() const {
        if (filled_ == 0) throw StateError("memory bank is empty (not warmed up)");
        RowMatrix<T> out(filled_, dim_);
        const int start = filled_ < capacity_ ? 0 : head_;
        for (int i = 0; i < filled_; ++i) out.row(i) = entries_.row((start + i) % capacity_);
        return out;
    }

    /// Raw ring storage, for serialization.
    const RowMatrix<T>& storage() const { return entries_; }
    void restore(const RowMatrix<T>& entries, int head, int filled) {
        if (entries.rows() != capacity_ || entries.cols() != dim_ || head < 0 || head >= capacity_ || filled < 0 ||
            filled > capacity_)
            throw ShapeError("memory bank restore: inconsistent state");
        entries_ = entries;
        head_ = head;
        filled_ = filled;
    }

private:
    int capacity_ = 0;
    int dim_ = 0;
    RowMatrix<T> entries_;
    int head_ = 0;
    int filled_ = 0;
    std::size_t renormalized_ = 0;
};

}  // namespace di3cl
