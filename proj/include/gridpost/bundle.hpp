#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>

#include <json.hpp>

#include "gridpost/postproc.hpp"

namespace gridpost {

/// Typed array stored in a bundle payload (little-endian).
struct Blob {
  std::string dtype;  // f32 | f64
  Shape shape;
  std::string bytes;
};

/// Container: "MBD1", u32 version, u64 header length, JSON header, payload.
/// The header holds the kind, creation time, metadata and the blob table.
struct Bundle {
  std::string kind;
  std::string created;  // ISO-8601 UTC
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Blob> blobs;

  void put(const std::string& name, const Tensor<float>& t);
  void put(const std::string& name, const Eigen::Ref<const RowMat<double>>& m);
  Tensor<float> tensor(const std::string& name) const;
  RowMat<double> matrix(const std::string& name) const;
  const Blob& blob(const std::string& name) const;
};

void save_bundle(const std::filesystem::path& path, const Bundle& bundle);
Bundle load_bundle(const std::filesystem::path& path);

/// Throws BundleError unless the bundle has the given kind.
void expect_kind(const Bundle& bundle, const std::string& kind);

Bundle emos_bundle(const EmosModel& model);
EmosModel emos_from_bundle(const Bundle& bundle);

Bundle pca_bundle(const PcaModel& model, const std::string& variable, Index height, Index width);
PcaModel pca_from_bundle(const Bundle& bundle);

Bundle convae_bundle(const ConvAeModel& model, const std::string& variable);
ConvAeModel convae_from_bundle(const Bundle& bundle);

/// convae or pca bundle -> frozen encoder.
Bundle encoder_bundle(const SpatialEncoder& encoder);
SpatialEncoder encoder_from_bundle(const Bundle& bundle);

/// Carries its encoders, so a DRN bundle predicts on its own.
Bundle drn_bundle(const DrnModel& model, std::span<const SpatialEncoder> encoders);
DrnModel drn_from_bundle(const Bundle& bundle, std::vector<SpatialEncoder>* encoders = nullptr);

nlohmann::json to_json(const ConvAeConfig& c);
ConvAeConfig convae_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DrnConfig& c);
DrnConfig drn_config_from_json(const nlohmann::json& j);

/// Notes on choices that depart from the literal reference models.
std::vector<std::string> drn_deviations();
std::vector<std::string> emos_deviations();

}  // namespace gridpost
