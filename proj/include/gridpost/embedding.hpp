#pragma once

#include <span>

#include "gridpost/tensor.hpp"

namespace gridpost {

/// Learned lookup table mapping an integer id to a dense vector.
template <typename Scalar>
struct Embedding {
  Tensor<Scalar> table;  // [count, dim]

  Embedding() = default;
  Embedding(Index count, Index dim) : table({count, dim}) {}

  Index count() const { return table.dim(0); }
  Index dim() const { return table.dim(1); }

  /// dim x batch
  Batch<Scalar> forward(std::span<const Index> ids) const {
    const auto t = table.matrix(count(), dim());
    Batch<Scalar> out(dim(), static_cast<Index>(ids.size()));
    for (std::size_t n = 0; n < ids.size(); ++n) {
      if (ids[n] < 0 || ids[n] >= count()) throw DomainError("embedding id out of range");
      out.col(static_cast<Index>(n)) = t.row(ids[n]).transpose();
    }
    return out;
  }

  /// Scatter-adds grad (dim x batch) into grad_table.
  void backward(std::span<const Index> ids, const Batch<Scalar>& grad, Tensor<Scalar>& grad_table) const {
    if (grad_table.shape() != table.shape()) grad_table = Tensor<Scalar>(table.shape());
    auto gt = grad_table.matrix(count(), dim());
    for (std::size_t n = 0; n < ids.size(); ++n) {
      gt.row(ids[n]) += grad.col(static_cast<Index>(n)).transpose();
    }
  }
};

}  // namespace gridpost
