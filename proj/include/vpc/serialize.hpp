#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "vpc/circuit.hpp"

namespace vpc {

// Model document: {num_vars, root, var_centroids?, nodes:[{type, scope, ...}]}.
// ordered_json keeps field order stable and doubles use shortest
// round-trip formatting, so save -> load -> save is byte-identical.
using Json = nlohmann::ordered_json;

inline Json circuit_to_json(const Circuit& c) {
  Json doc;
  doc["num_vars"] = c.num_vars;
  doc["root"] = c.root;
  if (!c.var_centroids.empty()) doc["var_centroids"] = c.var_centroids;
  Json nodes = Json::array();
  for (std::size_t id = 0; id < c.nodes.size(); ++id) {
    Json rec;
    std::visit(
        [&](const auto& node) {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, GaussianLeaf>) {
            rec["type"] = "gaussian";
            rec["scope"] = Json::array({node.var});
            rec["var"] = node.var;
            rec["mean"] = node.mean;
            rec["log_stddev"] = node.log_stddev;
          } else if constexpr (std::is_same_v<T, ProductNode>) {
            rec["type"] = "product";
            rec["scope"] = c.scopes.empty() ? Json::array() : Json(c.scopes[id]);
            rec["children"] = node.children;
          } else if constexpr (std::is_same_v<T, SumNode>) {
            rec["type"] = "sum";
            rec["scope"] = c.scopes.empty() ? Json::array() : Json(c.scopes[id]);
            rec["children"] = node.children;
            rec["log_weights"] = node.log_weights;
          } else if constexpr (std::is_same_v<T, VTSumNode>) {
            rec["type"] = "vt_sum";
            rec["scope"] = node.scope;
            rec["centroids"] = node.centroids;
            rec["log_mixture"] = node.log_mixture;
            rec["experts"] = node.experts;
          } else {
            rec["type"] = "hfv_sum";
            rec["scope"] = c.scopes.empty() ? Json::array() : Json(c.scopes[id]);
            Json blocks = Json::array();
            for (const auto& b : node.blocks) {
              Json jb;
              jb["vars"] = b.vars;
              jb["experts"] = b.experts;
              blocks.push_back(std::move(jb));
            }
            rec["blocks"] = std::move(blocks);
            rec["log_joint"] = node.log_joint;
          }
        },
        c.nodes[id]);
    nodes.push_back(std::move(rec));
  }
  doc["nodes"] = std::move(nodes);
  return doc;
}

inline Circuit circuit_from_json(const Json& doc) {
  Circuit c;
  try {
    c.num_vars = doc.at("num_vars").get<std::uint32_t>();
    c.root = doc.at("root").get<NodeId>();
    if (doc.contains("var_centroids"))
      c.var_centroids = doc.at("var_centroids").get<std::vector<std::vector<double>>>();
    for (const Json& rec : doc.at("nodes")) {
      const std::string type = rec.at("type").get<std::string>();
      if (type == "gaussian") {
        GaussianLeaf leaf;
        leaf.var = rec.at("var").get<VariableId>();
        leaf.mean = rec.at("mean").get<double>();
        leaf.log_stddev = rec.at("log_stddev").get<double>();
        c.add(leaf);
      } else if (type == "product") {
        ProductNode node;
        node.children = rec.at("children").get<std::vector<NodeId>>();
        c.add(std::move(node));
      } else if (type == "sum") {
        SumNode node;
        node.children = rec.at("children").get<std::vector<NodeId>>();
        node.log_weights = rec.at("log_weights").get<std::vector<double>>();
        c.add(std::move(node));
      } else if (type == "vt_sum") {
        VTSumNode node;
        node.scope = rec.at("scope").get<std::vector<VariableId>>();
        node.centroids = rec.at("centroids").get<std::vector<std::vector<double>>>();
        node.log_mixture = rec.at("log_mixture").get<std::vector<double>>();
        node.experts = rec.at("experts").get<std::vector<NodeId>>();
        c.add(std::move(node));
      } else if (type == "hfv_sum") {
        HFVSumNode node;
        const Json& blocks = rec.at("blocks");
        if (blocks.size() != 2) throw StructureError("hfv_sum node needs exactly two blocks");
        for (std::size_t i = 0; i < 2; ++i) {
          node.blocks[i].vars = blocks[i].at("vars").get<std::vector<VariableId>>();
          node.blocks[i].experts = blocks[i].at("experts").get<std::vector<NodeId>>();
        }
        node.log_joint = rec.at("log_joint").get<std::vector<double>>();
        c.add(std::move(node));
      } else {
        throw StructureError("unknown node type '" + type + "'");
      }
    }
  } catch (const Json::exception& e) {
    throw IoError(std::string("malformed model document: ") + e.what());
  }
  c.finalize();
  return c;
}

inline void save_circuit(const std::string& path, const Circuit& c) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open model file for writing: " + path);
  os << circuit_to_json(c).dump(2) << '\n';
  if (!os) throw IoError("write failure: " + path);
}

inline Circuit load_circuit(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open model file: " + path);
  Json doc;
  try {
    is >> doc;
  } catch (const Json::exception& e) {
    throw IoError("cannot parse model file " + path + ": " + e.what());
  }
  return circuit_from_json(doc);
}

}  // namespace vpc
