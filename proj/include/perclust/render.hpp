#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "perclust/dataset.hpp"
#include "perclust/metrics.hpp"

namespace perclust {

// Categorical palette for cluster ids >= 1 (cycled); label 0 renders black.
inline const char* cluster_color(int label) {
  static const char* palette[20] = {
      "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1",
      "#ff9da7", "#9c755f", "#bab0ac", "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
      "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  if (label <= 0) return "#000000";
  return palette[(label - 1) % 20];
}

// 500 x 500 unit viewport with radius-5 circular markers, matching the
// canvas the annotations were collected on. Agreement, when given, maps to
// marker opacity on [0.2, 1.0].
inline std::string render_svg(const std::vector<Point2>& points, const std::vector<int>& labels,
                              const AgreementVector* agreement = nullptr) {
  if (points.size() != labels.size())
    throw Error::data("render: labels length does not match point count");
  if (agreement && agreement->size() != points.size())
    throw Error::data("render: agreement length does not match point count");
  const double size = 500.0;
  const double radius = 5.0;
  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"500\" height=\"500\" "
         "viewBox=\"0 0 500 500\">\n";
  svg += "<rect width=\"500\" height=\"500\" fill=\"#ffffff\"/>\n";
  char buf[160];
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double px = (points[i].x + 1.0) / 2.0 * size;
    const double py = (1.0 - points[i].y) / 2.0 * size;  // SVG y grows downward
    if (agreement) {
      const double opacity = 0.2 + 0.8 * (*agreement)[i];
      std::snprintf(buf, sizeof(buf),
                    "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"%.1f\" fill=\"%s\" fill-opacity=\"%.3f\"/>\n",
                    px, py, radius, cluster_color(labels[i]), opacity);
    } else {
      std::snprintf(buf, sizeof(buf), "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"%.1f\" fill=\"%s\"/>\n", px,
                    py, radius, cluster_color(labels[i]));
    }
    svg += buf;
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace perclust
