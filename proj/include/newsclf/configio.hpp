#pragma once

// JSON bindings for the config structs, shared by the experiment manifest
// writers and the command-line front end. Parsing is strict: unknown keys
// are rejected so config typos surface as errors instead of silent
// defaults, and absent keys keep the struct's default value.

#include <json.hpp>

#include <string>

#include "newsclf/experiments.hpp"
#include "newsclf/model.hpp"
#include "newsclf/train.hpp"

namespace newsclf {

void to_json(nlohmann::json& j, const OptimConfig& c);
void from_json(const nlohmann::json& j, OptimConfig& c);

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

void to_json(nlohmann::json& j, const AdapterConfig& c);
void from_json(const nlohmann::json& j, AdapterConfig& c);

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

void to_json(nlohmann::json& j, const TaptConfig& c);
void from_json(const nlohmann::json& j, TaptConfig& c);

void to_json(nlohmann::json& j, const SyntheticConfig& c);
void from_json(const nlohmann::json& j, SyntheticConfig& c);

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

// Parses JSON text into a config struct, mapping malformed JSON and type
// mismatches to validation errors tagged with `what`.
template <typename T>
T parse_config(const std::string& text, const std::string& what);

nlohmann::json parse_json_text(const std::string& text, const std::string& what);

}  // namespace newsclf
