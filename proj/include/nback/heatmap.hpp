#pragma once

#include <filesystem>
#include <string>

#include "nback/matrix.hpp"

namespace nback {

// SVG rendering of an attention matrix: one cell per entry, row = query
// position from the top, colour linear in the value over [0, 1].
std::string heatmap_svg(const Matrix<float>& attention, const std::string& title = "");
void render_heatmap(const Matrix<float>& attention, const std::filesystem::path& path, const std::string& title = "");

}  // namespace nback
