// JSON (de)serialization of environments. Doubles round-trip bit-exactly.
#pragma once

#include "qhmm/env.hpp"

#include <json.hpp>

namespace qhmm {

nlohmann::json matrix_to_json(const Mat& m);
Mat matrix_from_json(const nlohmann::json& j);
nlohmann::json channel_to_json(const Channel& ch);
Channel channel_from_json(const nlohmann::json& j);

nlohmann::json env_to_json(const QhmmEnvironment& env);
QhmmEnvironment env_from_json(const nlohmann::json& j);

void save_env(const QhmmEnvironment& env, const std::string& path);
QhmmEnvironment load_env(const std::string& path);

}  // namespace qhmm
