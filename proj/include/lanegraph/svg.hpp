#pragma once

#include <string>

#include "lanegraph/datagen.hpp"
#include "lanegraph/graph.hpp"

namespace lanegraph {

/// SVG drawing of predicted (red) over ground-truth (green) centerlines,
/// optionally on top of the raster in grayscale. Either graph may be null.
std::string render_overlay(const LaneGraph* pred, const LaneGraph* gt, const BevExtent& extent,
                           const Raster* raster = nullptr, double pixels_per_meter = 8.0);

}  // namespace lanegraph
