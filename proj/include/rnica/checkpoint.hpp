#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "rnica/network.hpp"

namespace rnica {

using json = nlohmann::json;

// Checkpoint documents are JSON. Doubles are written in shortest round-trip
// form, so save -> load -> save reproduces the text exactly.

inline json matrix_to_json(const Matrix& m) {
  return json{{"rows", m.rows()}, {"cols", m.cols()},
              {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

inline Matrix matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw ShapeError("matrix document: data length does not match rows x cols");
  Matrix m(rows, cols);
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

inline json vector_to_json(const Vector& v) {
  return json{{"size", v.size()}, {"data", std::vector<double>(v.data(), v.data() + v.size())}};
}

inline Vector vector_from_json(const json& j) {
  const auto size = j.at("size").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != size) throw ShapeError("vector document: size mismatch");
  return Eigen::Map<const Vector>(data.data(), size);
}

inline json network_to_json(const FeatureNetwork& net) {
  json layers = json::array();
  for (const auto& l : net.layers) {
    layers.push_back({{"activation", to_string(l.activation)},
                      {"slope", l.slope},
                      {"weight", matrix_to_json(l.weight)},
                      {"bias", vector_to_json(l.bias)}});
  }
  return json{{"kind", "feature_network"},
              {"input_dim", net.input_dim()},
              {"output_dim", net.output_dim()},
              {"layers", std::move(layers)}};
}

inline FeatureNetwork network_from_json(const json& j) {
  if (j.value("kind", std::string{}) != "feature_network")
    throw InputError("checkpoint: not a feature_network document");
  FeatureNetwork net;
  for (const auto& lj : j.at("layers")) {
    Layer l;
    l.activation = activation_from_string(lj.at("activation").get<std::string>());
    l.slope = lj.at("slope").get<double>();
    l.weight = matrix_from_json(lj.at("weight"));
    l.bias = vector_from_json(lj.at("bias"));
    net.layers.push_back(std::move(l));
  }
  net.validate();
  if (net.input_dim() != j.at("input_dim").get<Eigen::Index>() ||
      net.output_dim() != j.at("output_dim").get<Eigen::Index>())
    throw ShapeError("checkpoint: header dims disagree with layers");
  return net;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  out << text;
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void save_json(const std::string& path, const json& j) { write_text(path, j.dump(1) + "\n"); }
inline json load_json(const std::string& path) { return json::parse(read_text(path)); }

}  // namespace rnica
