#include "lanegraph/svg.hpp"

#include <cstdio>
#include <sstream>

namespace lanegraph {

namespace {

struct Frame {
  BevExtent extent;
  double scale;
  double sx(double x) const { return (x - extent.x_min) * scale; }
  double sy(double y) const { return (extent.y_max - y) * scale; }
};

void draw_graph(std::ostringstream& out, const LaneGraph& g, const Frame& f, const char* color, double width) {
  char buf[128];
  for (const Edge& e : g.edges) {
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"" << width << "\" points=\"";
    for (Vec2 p : sample_edge(g, e)) {
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", f.sx(p.x), f.sy(p.y));
      out << buf;
    }
    out << "\"/>\n";
  }
  for (Vec2 v : g.vertices) {
    std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"%.1f\" fill=\"%s\"/>\n", f.sx(v.x), f.sy(v.y),
                  1.5 * width, color);
    out << buf;
  }
}

}  // namespace

std::string render_overlay(const LaneGraph* pred, const LaneGraph* gt, const BevExtent& extent, const Raster* raster,
                           double pixels_per_meter) {
  const Frame f{extent, pixels_per_meter};
  const double w = (extent.x_max - extent.x_min) * pixels_per_meter;
  const double h = (extent.y_max - extent.y_min) * pixels_per_meter;
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
      << ' ' << h << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"black\"/>\n";
  if (raster != nullptr && raster->height > 0 && raster->width > 0) {
    const double cw = w / static_cast<double>(raster->width);
    const double ch = h / static_cast<double>(raster->height);
    char buf[160];
    for (std::size_t r = 0; r < raster->height; ++r) {
      for (std::size_t c = 0; c < raster->width; ++c) {
        const int v = static_cast<int>(raster->at(r, c) * 255.0f + 0.5f);
        if (v <= 0) continue;
        std::snprintf(buf, sizeof buf, "<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"rgb(%d,%d,%d)\"/>\n",
                      static_cast<double>(c) * cw, static_cast<double>(r) * ch, cw, ch, v, v, v);
        out << buf;
      }
    }
  }
  if (gt != nullptr) draw_graph(out, *gt, f, "#2ecc40", 3.0);
  if (pred != nullptr) draw_graph(out, *pred, f, "#ff4136", 1.5);
  out << "</svg>\n";
  return out.str();
}

}  // namespace lanegraph
