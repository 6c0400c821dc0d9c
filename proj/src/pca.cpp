#include "gridpost/pca.hpp"

#include <Eigen/SVD>

namespace gridpost {

PcaModel pca_fit(const Eigen::Ref<const RowMat<double>>& data, Index h) {
  const Index n = data.rows(), d = data.cols();
  if (h < 1) throw ConfigError("pca: latent dimension must be >= 1");
  if (h >= n) throw ConfigError("pca: latent dimension must be smaller than the sample count");
  if (h > d) throw ConfigError("pca: latent dimension exceeds input dimension");
  if (!data.allFinite()) throw DataError("pca: non-finite input");

  PcaModel m;
  m.mean = data.colwise().mean().transpose();
  const Eigen::MatrixXd centered = data.rowwise() - m.mean.transpose();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Vec<double> sv = svd.singularValues();
  const double nn = static_cast<double>(n);

  m.components = svd.matrixV().leftCols(h).transpose();
  m.eigenvalues = sv.head(h).cwiseAbs2() / nn;
  m.total_variance = centered.squaredNorm() / nn;
  for (Index k = 0; k < h; ++k) {
    Index arg = 0;
    m.components.row(k).cwiseAbs().maxCoeff(&arg);
    if (m.components(k, arg) < 0) m.components.row(k) *= -1.0;
  }
  return m;
}

Vec<double> pca_encode(const PcaModel& model, const Eigen::Ref<const Vec<double>>& x) {
  if (x.size() != model.input_dim()) throw DimensionError("pca_encode: input length mismatch");
  return model.components * (x - model.mean);
}

Vec<double> pca_decode(const PcaModel& model, const Eigen::Ref<const Vec<double>>& code) {
  if (code.size() != model.latent_dim()) throw DimensionError("pca_decode: code length mismatch");
  return model.mean + model.components.transpose() * code;
}

double pca_reconstruction_mse(const PcaModel& model, const Eigen::Ref<const RowMat<double>>& data) {
  if (data.cols() != model.input_dim()) throw DimensionError("pca: input length mismatch");
  const RowMat<double> centered = data.rowwise() - model.mean.transpose();
  const RowMat<double> codes = centered * model.components.transpose();
  const RowMat<double> recon = codes * model.components;
  return (centered - recon).squaredNorm() / static_cast<double>(data.size());
}

}  // namespace gridpost
