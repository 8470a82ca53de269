// Minimal deterministic SVG scatter plot for Bland-Altman figures.

#pragma once

#include <string>

#include "cacdec/stats.hpp"

namespace cacdec::svgplot {

// Scatter of (mean, diff), the bias line, and the nonuniform limits of
// agreement evaluated across the mean axis.
std::string bland_altman_svg(const stats::BlandAltman& ba, const std::string& title);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace cacdec::svgplot
