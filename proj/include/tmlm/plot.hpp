#pragma once

#include <filesystem>
#include <string>

namespace tmlm {

/// Renders a sweep or patch CSV as a standalone SVG line chart: x = layer,
/// y = metric clamped to [0, 1]. Sweep CSVs get one polyline per
/// manipulation (per metric, if several) and a dashed line per baseline
/// row; patch CSVs get one polyline per outcome fraction. Throws
/// ParseError on an empty or unrecognised CSV.
std::string render_plot(const std::string& csv_text, const std::string& title = "");

void emit_plot(const std::filesystem::path& csv_path, const std::filesystem::path& out_path);

}  // namespace tmlm
