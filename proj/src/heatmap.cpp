#include "nback/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <fmt/format.h>

#include "nback/attention_metrics.hpp"

namespace nback {
namespace {

constexpr int kCell = 16;
constexpr int kMargin = 28;

// 0 -> near-white grey, 1 -> dark blue.
std::string colour(double v) {
  v = std::clamp(v, 0.0, 1.0);
  constexpr double lo[3] = {247, 247, 247};
  constexpr double hi[3] = {8, 48, 107};
  int c[3];
  for (int i = 0; i < 3; ++i) c[i] = static_cast<int>(std::lround(lo[i] + (hi[i] - lo[i]) * v));
  return fmt::format("#{:02x}{:02x}{:02x}", c[0], c[1], c[2]);
}

std::string escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out.push_back(ch);
    }
  }
  return out;
}

}  // namespace

std::string heatmap_svg(const Matrix<float>& a, const std::string& title) {
  check_attention(a);
  const int n = static_cast<int>(a.rows());
  const int side = 2 * kMargin + n * kCell;
  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{0}\" viewBox=\"0 0 {0} {0}\">\n", side);
  svg += fmt::format("<rect width=\"{0}\" height=\"{0}\" fill=\"#ffffff\"/>\n", side);
  if (!title.empty()) {
    svg += fmt::format("<text x=\"{}\" y=\"18\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n", kMargin,
                       escape(title));
  }
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double v = a(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
      svg += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"><title>{},{}: {:.4f}</title></rect>\n",
                         kMargin + j * kCell, kMargin + i * kCell, kCell, kCell, colour(v), i, j, v);
    }
  }
  svg += "</svg>\n";
  return svg;
}

void render_heatmap(const Matrix<float>& a, const std::filesystem::path& path, const std::string& title) {
  const auto svg = heatmap_svg(a, title);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot open {} for writing", path.string()));
  out << svg;
  if (!out) throw std::runtime_error(fmt::format("write failed: {}", path.string()));
}

}  // namespace nback
