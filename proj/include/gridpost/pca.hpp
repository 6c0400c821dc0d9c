#pragma once

#include "gridpost/tensor.hpp"

namespace gridpost {

/// Principal components of flattened fields.
struct PcaModel {
  Vec<double> mean;            // [d]
  RowMat<double> components;   // [h, d], orthonormal rows, descending eigenvalue
  Vec<double> eigenvalues;     // [h], covariance eigenvalues (1/N normalization)
  double total_variance = 0;   // sum of all eigenvalues of the training data

  Index latent_dim() const { return components.rows(); }
  Index input_dim() const { return components.cols(); }
  /// Sum of eigenvalues beyond the retained h.
  double tail_variance() const { return total_variance - eigenvalues.sum(); }
};

/// Fits on rows of data (N x d) via a thin SVD of the centered matrix. Each
/// component's largest-magnitude entry is made positive.
PcaModel pca_fit(const Eigen::Ref<const RowMat<double>>& data, Index h);

Vec<double> pca_encode(const PcaModel& model, const Eigen::Ref<const Vec<double>>& x);
Vec<double> pca_decode(const PcaModel& model, const Eigen::Ref<const Vec<double>>& code);

/// Mean over rows and columns of (x - decode(encode(x)))^2.
double pca_reconstruction_mse(const PcaModel& model, const Eigen::Ref<const RowMat<double>>& data);

}  // namespace gridpost
