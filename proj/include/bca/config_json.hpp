#pragma once

#include <json.hpp>

#include "bca/backbone.hpp"
#include "bca/cdis.hpp"
#include "bca/grade_head.hpp"

// JSON forms of the configuration structs. Missing keys keep their defaults;
// unknown keys are rejected.
namespace bca {

void to_json(nlohmann::json& j, const MixingConfig& c);
void from_json(const nlohmann::json& j, MixingConfig& c);

void to_json(nlohmann::json& j, const BackboneConfig& c);
void from_json(const nlohmann::json& j, BackboneConfig& c);

void to_json(nlohmann::json& j, const PretrainConfig& c);
void from_json(const nlohmann::json& j, PretrainConfig& c);

void to_json(nlohmann::json& j, const HeadConfig& c);
void from_json(const nlohmann::json& j, HeadConfig& c);

std::string_view to_string(ClassWeighting w);
ClassWeighting parse_class_weighting(std::string_view s);

/// Throws Error naming the first key of `j` not in `allowed`.
void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                         std::string_view context);

}  // namespace bca
