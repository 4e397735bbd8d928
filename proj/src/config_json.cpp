#include "bca/config_json.hpp"

#include <algorithm>

#include "bca/errors.hpp"

namespace bca {

using nlohmann::json;

void reject_unknown_keys(const json& j, std::initializer_list<std::string_view> allowed, std::string_view context) {
    if (!j.is_object()) throw Error(std::string(context) + " must be a JSON object");
    for (const auto& [key, _] : j.items())
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw Error("unknown key \"" + key + "\" in " + std::string(context));
}

namespace {

template <class T>
void read_if(const json& j, const char* key, T& out) {
    if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

}  // namespace

void to_json(json& j, const MixingConfig& c) {
    j = json{{"synthetic_b_values", c.synthetic_b_values}, {"coefficients", c.coefficients}};
}

void from_json(const json& j, MixingConfig& c) {
    reject_unknown_keys(j, {"synthetic_b_values", "coefficients"}, "mixing_config");
    read_if(j, "synthetic_b_values", c.synthetic_b_values);
    read_if(j, "coefficients", c.coefficients);
}

void to_json(json& j, const BackboneConfig& c) {
    j = json{{"block_counts", c.block_counts}, {"stage_channels", c.stage_channels},
             {"input_channels", c.input_channels}, {"feature_dim", c.feature_dim}, {"seed", c.seed}};
}

void from_json(const json& j, BackboneConfig& c) {
    reject_unknown_keys(j, {"block_counts", "stage_channels", "input_channels", "feature_dim", "seed"}, "backbone_config");
    read_if(j, "block_counts", c.block_counts);
    read_if(j, "stage_channels", c.stage_channels);
    read_if(j, "input_channels", c.input_channels);
    read_if(j, "feature_dim", c.feature_dim);
    read_if(j, "seed", c.seed);
}

void to_json(json& j, const PretrainConfig& c) {
    j = json{{"epochs", c.epochs}, {"learning_rate", c.learning_rate}, {"batch_size", c.batch_size}, {"seed", c.seed}};
}

void from_json(const json& j, PretrainConfig& c) {
    reject_unknown_keys(j, {"epochs", "learning_rate", "batch_size", "seed"}, "pretrain");
    read_if(j, "epochs", c.epochs);
    read_if(j, "learning_rate", c.learning_rate);
    read_if(j, "batch_size", c.batch_size);
    read_if(j, "seed", c.seed);
}

std::string_view to_string(ClassWeighting w) {
    return w == ClassWeighting::None ? "none" : "inverse_frequency";
}

ClassWeighting parse_class_weighting(std::string_view s) {
    if (s == "none") return ClassWeighting::None;
    if (s == "inverse_frequency") return ClassWeighting::InverseFrequency;
    throw Error("unknown class weighting \"" + std::string(s) + "\"");
}

void to_json(json& j, const HeadConfig& c) {
    j = json{{"layer_dims", c.layer_dims}, {"dropout_rate", c.dropout_rate}, {"learning_rate", c.learning_rate},
             {"epochs", c.epochs}, {"batch_size", c.batch_size}, {"class_weighting", to_string(c.class_weighting)},
             {"threshold", c.threshold}, {"seed", c.seed}};
}

void from_json(const json& j, HeadConfig& c) {
    reject_unknown_keys(
        j, {"layer_dims", "dropout_rate", "learning_rate", "epochs", "batch_size", "class_weighting", "threshold", "seed"},
        "head_config");
    read_if(j, "layer_dims", c.layer_dims);
    read_if(j, "dropout_rate", c.dropout_rate);
    read_if(j, "learning_rate", c.learning_rate);
    read_if(j, "epochs", c.epochs);
    read_if(j, "batch_size", c.batch_size);
    if (auto it = j.find("class_weighting"); it != j.end()) c.class_weighting = parse_class_weighting(it->get<std::string>());
    read_if(j, "threshold", c.threshold);
    read_if(j, "seed", c.seed);
}

}  // namespace bca
