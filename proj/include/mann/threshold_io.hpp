// Copyright 2026 The mannflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <string>

#include <nlohmann/json.hpp>

#include "mann/binary_io.hpp"
#include "mann/thresholding.hpp"

namespace mann {

inline constexpr int kThresholdTableVersion = 1;
inline constexpr const char* kThresholdTableFormat = "mann-threshold-table";

namespace detail {

inline nlohmann::json real_to_json(double v) {
  if (v == kInf) return "inf";
  if (v == -kInf) return "-inf";
  return v;
}

inline double real_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return kInf;
    if (s == "-inf") return -kInf;
    fail(ErrorCode::kFormat, "unrecognised threshold value '" + s + "'");
  }
  require(j.is_number(), ErrorCode::kFormat, "threshold value must be a number or \"inf\"");
  return j.get<double>();
}

}  // namespace detail

inline std::string serialize_table(const ThresholdTable& t) {
  t.validate();
  nlohmann::json j;
  j["format"] = kThresholdTableFormat;
  j["version"] = kThresholdTableVersion;
  j["rho"] = t.rho;
  j["ordering"] = t.ordering == IndexOrdering::kSilhouette ? "silhouette" : "identity";
  auto& theta = j["theta"] = nlohmann::json::array();
  for (double v : t.theta) theta.push_back(detail::real_to_json(v));
  j["order"] = t.order;
  j["silhouette"] = t.silhouette;
  j["calibration"] = {{"total_samples", t.calibration.total_samples},
                      {"correct_samples", t.calibration.correct_samples},
                      {"positive_counts", t.calibration.positive_counts}};
  return j.dump(2) + "\n";
}

inline ThresholdTable deserialize_table(const std::string& text) {
  ThresholdTable t;
  try {
    const auto j = nlohmann::json::parse(text);
    require(j.value("format", "") == kThresholdTableFormat, ErrorCode::kFormat, "not a threshold table");
    const int version = j.at("version").get<int>();
    require(version == kThresholdTableVersion, ErrorCode::kFormat,
            "unsupported threshold table version " + std::to_string(version));
    t.rho = j.at("rho").get<double>();
    const auto ordering = j.value("ordering", "silhouette");
    require(ordering == "silhouette" || ordering == "identity", ErrorCode::kFormat, "unknown ordering " + ordering);
    t.ordering = ordering == "silhouette" ? IndexOrdering::kSilhouette : IndexOrdering::kIdentity;
    for (const auto& v : j.at("theta")) t.theta.push_back(detail::real_from_json(v));
    t.order = j.at("order").get<std::vector<std::size_t>>();
    t.silhouette = j.at("silhouette").get<std::vector<double>>();
    if (j.contains("calibration")) {
      const auto& c = j["calibration"];
      t.calibration.total_samples = c.at("total_samples").get<std::uint64_t>();
      t.calibration.correct_samples = c.at("correct_samples").get<std::uint64_t>();
      t.calibration.positive_counts = c.at("positive_counts").get<std::vector<std::uint64_t>>();
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("threshold table: ") + e.what());
  }
  try {
    t.validate();
  } catch (const Error& e) {
    fail(ErrorCode::kFormat, std::string("threshold table: ") + e.what());
  }
  return t;
}

inline void save_table(const ThresholdTable& t, const std::string& path) { io::write_file(path, serialize_table(t)); }

inline ThresholdTable load_table(const std::string& path) { return deserialize_table(io::read_file(path)); }

}  // namespace mann
