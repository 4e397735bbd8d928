#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <span>
#include <string>
#include <vector>

#include "bca/backbone.hpp"
#include "bca/grade_head.hpp"

namespace bca {

enum class TensorDtype : std::uint8_t { F32, F64 };

struct StoredTensor {
    std::string name;
    std::vector<std::size_t> shape;
    TensorDtype dtype = TensorDtype::F32;
    std::vector<unsigned char> bytes;

    std::size_t count() const noexcept;

    static StoredTensor from(std::string name, std::vector<std::size_t> shape, std::span<const float> values);
    static StoredTensor from(std::string name, std::vector<std::size_t> shape, std::span<const double> values);
    /// Copies into `out`; throws ShapeError if the element count or dtype differ.
    void copy_to(std::span<float> out) const;
    void copy_to(std::span<double> out) const;
};

/// Container layout:
///   "BCACKPT1" | header length u64 LE | header JSON | tensor payloads | CRC-32 u32 LE
/// The header carries `meta` plus a table of {name, dtype, shape, offset, size}.
/// The CRC covers every preceding byte.
struct Checkpoint {
    nlohmann::json meta = nlohmann::json::object();
    std::vector<StoredTensor> tensors;

    const StoredTensor& find(const std::string& name) const;
};

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws ChecksumError on truncation or corruption.
Checkpoint read_checkpoint(const std::filesystem::path& path);

void save_weights(Backbone& net, const std::filesystem::path& path);
Backbone load_weights(const std::filesystem::path& path);
/// Throws ConfigMismatchError when the stored architecture differs from `expected`.
Backbone load_weights(const std::filesystem::path& path, const BackboneConfig& expected);

/// CRC-32 over every parameter and running statistic, in registry order.
std::uint32_t weights_checksum(Backbone& net);

void save_head(const TrainedHead& head, const std::filesystem::path& path);
TrainedHead load_head(const std::filesystem::path& path);

}  // namespace bca
