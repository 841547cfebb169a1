#pragma once

#include <array>
#include <set>
#include <string>
#include <utility>

#include <nlohmann/json.hpp>

#include "trix/errors.hpp"
#include "trix/model.hpp"
#include "trix/training.hpp"

namespace trix {

namespace detail {

template <class E, std::size_t N>
using EnumNames = std::array<std::pair<E, const char*>, N>;

inline constexpr EnumNames<RelGraphMode, 3> kRelGraphModeNames{
    {{RelGraphMode::TRIX, "trix"}, {RelGraphMode::ULTRA, "ultra"}, {RelGraphMode::INGRAM, "ingram"}}};
inline constexpr EnumNames<UpdateMode, 2> kUpdateModeNames{
    {{UpdateMode::ITERATIVE, "iterative"}, {UpdateMode::SEQUENTIAL, "sequential"}}};
inline constexpr EnumNames<MessageWeighting, 2> kWeightingNames{
    {{MessageWeighting::BINARY, "binary"}, {MessageWeighting::LOG_COUNT, "log_count"}}};
inline constexpr EnumNames<Task, 2> kTaskNames{{{Task::ENTITY, "entity"}, {Task::RELATION, "relation"}}};

template <class E, std::size_t N>
const char* enum_name(const EnumNames<E, N>& names, E value) {
  for (const auto& [v, n] : names)
    if (v == value) return n;
  throw config_error("unnamed enum value");
}

template <class E, std::size_t N>
E enum_value(const EnumNames<E, N>& names, const std::string& text, const char* key) {
  for (const auto& [v, n] : names)
    if (text == n) return v;
  std::string allowed;
  for (const auto& [v, n] : names) allowed += (allowed.empty() ? "" : ", ") + std::string(n);
  throw config_error(std::string(key) + ": '" + text + "' is not one of " + allowed);
}

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const char* section) {
  if (!j.is_object()) throw config_error(std::string(section) + " must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) throw config_error(std::string("unknown key '") + k + "' in " + section);
}

template <class V>
void read(const nlohmann::json& j, const char* key, V& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string(key) + ": " + e.what());
  }
}

template <class E, std::size_t N>
void read_enum(const nlohmann::json& j, const char* key, const EnumNames<E, N>& names, E& out) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_string()) throw config_error(std::string(key) + " must be a string");
  out = enum_value(names, j.at(key).get<std::string>(), key);
}

}  // namespace detail

inline const char* to_string(RelGraphMode m) { return detail::enum_name(detail::kRelGraphModeNames, m); }
inline const char* to_string(UpdateMode m) { return detail::enum_name(detail::kUpdateModeNames, m); }
inline const char* to_string(MessageWeighting m) { return detail::enum_name(detail::kWeightingNames, m); }
inline const char* to_string(Task t) { return detail::enum_name(detail::kTaskNames, t); }

inline RelGraphMode parse_relgraph_mode(const std::string& s) {
  return detail::enum_value(detail::kRelGraphModeNames, s, "relgraph_mode");
}
inline UpdateMode parse_update_mode(const std::string& s) {
  return detail::enum_value(detail::kUpdateModeNames, s, "update_mode");
}
inline MessageWeighting parse_weighting(const std::string& s) {
  return detail::enum_value(detail::kWeightingNames, s, "message_weighting");
}
inline Task parse_task(const std::string& s) { return detail::enum_value(detail::kTaskNames, s, "task"); }

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"hidden_dim", c.hidden_dim},
          {"rounds_entity", c.rounds_entity},
          {"rounds_relation", c.rounds_relation},
          {"relgraph_mode", to_string(c.relgraph_mode)},
          {"update_mode", to_string(c.update_mode)},
          {"message_weighting", to_string(c.message_weighting)},
          {"layer_norm", c.layer_norm}};
}

/// Overlays the keys present in `j` onto `c`. Unknown keys are rejected.
inline void apply_json(const nlohmann::json& j, ModelConfig& c) {
  detail::reject_unknown(j,
                         {"hidden_dim", "rounds_entity", "rounds_relation", "relgraph_mode", "update_mode",
                          "message_weighting", "layer_norm"},
                         "model config");
  detail::read(j, "hidden_dim", c.hidden_dim);
  detail::read(j, "rounds_entity", c.rounds_entity);
  detail::read(j, "rounds_relation", c.rounds_relation);
  detail::read_enum(j, "relgraph_mode", detail::kRelGraphModeNames, c.relgraph_mode);
  detail::read_enum(j, "update_mode", detail::kUpdateModeNames, c.update_mode);
  detail::read_enum(j, "message_weighting", detail::kWeightingNames, c.message_weighting);
  detail::read(j, "layer_norm", c.layer_norm);
  c.validate();
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  apply_json(j, c);
  return c;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"task", to_string(c.task)},
          {"negatives", c.negatives},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epsilon", c.epsilon},
          {"weight_decay", c.weight_decay},
          {"epochs", c.epochs},
          {"steps_per_epoch", c.steps_per_epoch},
          {"early_stop_patience", c.early_stop_patience},
          {"seed", c.seed},
          {"validation_queries", c.validation_queries},
          {"remove_targets", c.remove_targets},
          {"threads", c.threads}};
}

inline void apply_json(const nlohmann::json& j, TrainConfig& c) {
  detail::reject_unknown(j,
                         {"task", "negatives", "batch_size", "learning_rate", "beta1", "beta2", "epsilon",
                          "weight_decay", "epochs", "steps_per_epoch", "early_stop_patience", "seed",
                          "validation_queries", "remove_targets", "threads"},
                         "train config");
  detail::read_enum(j, "task", detail::kTaskNames, c.task);
  detail::read(j, "negatives", c.negatives);
  detail::read(j, "batch_size", c.batch_size);
  detail::read(j, "learning_rate", c.learning_rate);
  detail::read(j, "beta1", c.beta1);
  detail::read(j, "beta2", c.beta2);
  detail::read(j, "epsilon", c.epsilon);
  detail::read(j, "weight_decay", c.weight_decay);
  detail::read(j, "epochs", c.epochs);
  detail::read(j, "steps_per_epoch", c.steps_per_epoch);
  detail::read(j, "early_stop_patience", c.early_stop_patience);
  detail::read(j, "seed", c.seed);
  detail::read(j, "validation_queries", c.validation_queries);
  detail::read(j, "remove_targets", c.remove_targets);
  detail::read(j, "threads", c.threads);
  c.validate();
}

}  // namespace trix
