#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trix/config.hpp"
#include "trix/errors.hpp"
#include "trix/model.hpp"
#include "trix/training.hpp"

namespace trix {

/**
 * Everything a command needs besides its flags:
 *
 *   {"model": {...}, "train": {...},
 *    "datasets": {"train": ["fb_v1", ...], "eval": "fb_v1"},
 *    "output": {"dir": "runs/x", "checkpoint": "init.bin"}}
 *
 * Dataset entries are paths or names under $TRIX_DATA_DIR.
 */
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::vector<std::string> train_datasets;
  std::string eval_dataset;
  std::string output_dir;
  /// Initial checkpoint for finetune, or the model for eval and export-sim.
  std::string checkpoint;
};

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["model"] = to_json(c.model);
  j["train"] = to_json(c.train);
  j["datasets"] = {{"train", c.train_datasets}, {"eval", c.eval_dataset}};
  j["output"] = {{"dir", c.output_dir}, {"checkpoint", c.checkpoint}};
  return j;
}

inline void apply_json(const nlohmann::json& j, RunConfig& c) {
  if (!j.is_object()) throw config_error("run config must be a JSON object");
  detail::reject_unknown(j, {"model", "train", "datasets", "output"}, "run config");
  if (j.contains("model")) apply_json(j["model"], c.model);
  if (j.contains("train")) apply_json(j["train"], c.train);
  if (j.contains("datasets")) {
    const auto& d = j["datasets"];
    if (!d.is_object()) throw config_error("'datasets' must be an object");
    detail::reject_unknown(d, {"train", "eval"}, "datasets");
    detail::read(d, "train", c.train_datasets);
    detail::read(d, "eval", c.eval_dataset);
  }
  if (j.contains("output")) {
    const auto& o = j["output"];
    if (!o.is_object()) throw config_error("'output' must be an object");
    detail::reject_unknown(o, {"dir", "checkpoint"}, "output");
    detail::read(o, "dir", c.output_dir);
    detail::read(o, "checkpoint", c.checkpoint);
  }
  c.model.validate();
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw config_error("'" + path.string() + "': " + e.what());
  }
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw config_error("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
  if (!out) throw config_error("write failed for '" + path.string() + "'");
}

}  // namespace trix
