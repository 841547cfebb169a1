#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "trix/errors.hpp"
#include "trix/kg.hpp"

namespace trix {

/**
 * A dataset directory. Inductive layout: `train/` (train.txt, valid.txt) and
 * `inference/` (observed.txt, valid.txt, test.txt). Transductive layout:
 * train.txt, valid.txt, test.txt, all evaluated against the training graph.
 */
struct Dataset {
  std::string name;
  std::filesystem::path root;
  bool inductive = false;
  KnowledgeGraph train_graph;
  std::vector<Triple> train_valid;
  KnowledgeGraph eval_graph;
  std::vector<Triple> valid;
  std::vector<Triple> test;
  /// Transductive queries dropped for naming unseen tokens or observed edges.
  std::size_t dropped_queries = 0;
};

/// `name_or_path` as given if it exists, else relative to $TRIX_DATA_DIR.
inline std::filesystem::path resolve_dataset_path(const std::string& name_or_path) {
  namespace fs = std::filesystem;
  if (fs::exists(name_or_path)) return name_or_path;
  if (const char* root = std::getenv("TRIX_DATA_DIR"); root && *root) {
    const fs::path p = fs::path(root) / name_or_path;
    if (fs::exists(p)) return p;
  }
  throw config_error("dataset '" + name_or_path + "' not found (also looked under TRIX_DATA_DIR)");
}

inline Dataset load_dataset(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  Dataset d;
  d.root = root;
  d.name = root.filename().empty() ? root.parent_path().filename().string() : root.filename().string();
  if (fs::is_directory(root / "train") && fs::is_directory(root / "inference")) {
    InductiveSplit s = load_inductive_split(root / "train", root / "inference");
    d.inductive = true;
    d.train_graph = std::move(s.train_graph);
    d.train_valid = std::move(s.train_valid_queries);
    d.eval_graph = std::move(s.inference_graph);
    d.valid = std::move(s.valid_queries);
    d.test = std::move(s.test_queries);
    return d;
  }
  if (!fs::exists(root / "train.txt"))
    throw config_error("'" + root.string() + "' has neither train.txt nor train/ and inference/ subdirectories");
  d.train_graph = load_graph(root, {"train.txt"});
  auto lenient = [&](const char* file, std::vector<Triple>& out) {
    if (!fs::exists(root / file)) return;
    const auto named = detail::read_triples(root / file);
    out = resolve_queries_lenient(d.train_graph, named);
    d.dropped_queries += named.size() - out.size();
  };
  lenient("valid.txt", d.valid);
  lenient("test.txt", d.test);
  d.train_valid = d.valid;
  d.eval_graph = d.train_graph;
  return d;
}

}  // namespace trix
