#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "lanegraph/graph.hpp"

namespace lanegraph {

/// Malformed file content.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File could not be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Graph files are JSON objects:
//   {"extent": {"x_min":..,"x_max":..,"y_min":..,"y_max":..,"sample_interval":..},
//    "vertices": [[x, y], ...],
//    "edges": [{"src": i, "tgt": j, "mid": [x, y]}, ...]}
std::string graph_to_string(const LaneGraph& g);
LaneGraph graph_from_string(const std::string& text);

void write_graph(const std::filesystem::path& path, const LaneGraph& g);
LaneGraph read_graph(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& content);

}  // namespace lanegraph
