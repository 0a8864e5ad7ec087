#include "lanegraph/graph_io.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace lanegraph {

using nlohmann::json;

std::string graph_to_string(const LaneGraph& g) {
  json doc;
  doc["extent"] = {{"x_min", g.extent.x_min},
                   {"x_max", g.extent.x_max},
                   {"y_min", g.extent.y_min},
                   {"y_max", g.extent.y_max},
                   {"sample_interval", g.extent.sample_interval}};
  json vertices = json::array();
  for (const Vec2& v : g.vertices) vertices.push_back({v.x, v.y});
  doc["vertices"] = std::move(vertices);
  json edges = json::array();
  for (const Edge& e : g.edges) edges.push_back({{"src", e.src}, {"tgt", e.tgt}, {"mid", {e.mid.x, e.mid.y}}});
  doc["edges"] = std::move(edges);
  return doc.dump(1) + "\n";
}

namespace {

Vec2 parse_point(const json& j) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    throw FormatError("graph: point must be a [x, y] pair of numbers");
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace

LaneGraph graph_from_string(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("graph: ") + e.what());
  }
  try {
    LaneGraph g;
    const json& ext = doc.at("extent");
    g.extent.x_min = ext.at("x_min").get<double>();
    g.extent.x_max = ext.at("x_max").get<double>();
    g.extent.y_min = ext.at("y_min").get<double>();
    g.extent.y_max = ext.at("y_max").get<double>();
    g.extent.sample_interval = ext.at("sample_interval").get<double>();
    for (const json& v : doc.at("vertices")) g.vertices.push_back(parse_point(v));
    for (const json& e : doc.at("edges")) {
      g.edges.push_back({e.at("src").get<std::size_t>(), e.at("tgt").get<std::size_t>(), parse_point(e.at("mid"))});
    }
    return g;
  } catch (const json::exception& e) {
    throw FormatError(std::string("graph: ") + e.what());
  }
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError("cannot read " + path.string());
  return buf.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  if (!out) throw IoError("write failed for " + path.string());
}

void write_graph(const std::filesystem::path& path, const LaneGraph& g) { write_text_file(path, graph_to_string(g)); }

LaneGraph read_graph(const std::filesystem::path& path) { return graph_from_string(read_text_file(path)); }

}  // namespace lanegraph
