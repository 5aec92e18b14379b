// SPDX-License-Identifier: Apache-2.0
//
// Artifact writers: CSV tables, JSON documents and dependency-free SVG
// line plots.

#pragma once

#include "gridpinn/core.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace gridpinn::io {

/// Creates `dir` and its parents; throws IoError on failure.
void ensure_directory(const std::filesystem::path& dir);

void write_json(const nlohmann::json& j, const std::filesystem::path& path);
nlohmann::json read_json(const std::filesystem::path& path);

/// Column table with a header row, 17 significant digits, LF endings.
void write_table(const std::vector<std::string>& header,
                 const std::vector<Vector>& columns,
                 const std::filesystem::path& path);

/// Header `t,<name>_true...,<name>_pred...`: 1 + 2 n columns.
void write_side_by_side(const Vector& times, const Matrix& truth, const Matrix& pred,
                        const std::vector<std::string>& names,
                        const std::filesystem::path& path);

struct Series {
  std::string label;
  Vector y;
  bool dashed = false;
};

/// Line plot of several series against a shared x axis.
void write_svg_plot(const Vector& x, const std::vector<Series>& series,
                    const std::string& title, const std::string& x_label,
                    const std::filesystem::path& path);

}  // namespace gridpinn::io
