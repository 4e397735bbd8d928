#include "bca/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "bca/config_json.hpp"
#include "bca/errors.hpp"
#include "bca/hashing.hpp"

namespace bca {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'B', 'C', 'A', 'C', 'K', 'P', 'T', '1'};

std::string_view dtype_name(TensorDtype d) { return d == TensorDtype::F32 ? "f32" : "f64"; }

TensorDtype parse_dtype(const std::string& s) {
    if (s == "f32") return TensorDtype::F32;
    if (s == "f64") return TensorDtype::F64;
    throw FormatError("unknown tensor dtype " + s);
}

std::size_t elem_size(TensorDtype d) { return d == TensorDtype::F32 ? 4 : 8; }

std::size_t product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    return n;
}

template <class T>
StoredTensor make_tensor(std::string name, std::vector<std::size_t> shape, std::span<const T> values) {
    static_assert(std::endian::native == std::endian::little, "checkpoint payloads are little-endian");
    StoredTensor t{std::move(name), std::move(shape), sizeof(T) == 4 ? TensorDtype::F32 : TensorDtype::F64, {}};
    if (product(t.shape) != values.size()) throw ShapeError("tensor " + t.name + ": shape does not match values");
    t.bytes.resize(values.size_bytes());
    std::memcpy(t.bytes.data(), values.data(), values.size_bytes());
    return t;
}

template <class T>
void copy_tensor(const StoredTensor& t, std::span<T> out) {
    if (elem_size(t.dtype) != sizeof(T)) throw ShapeError("tensor " + t.name + " has dtype " + std::string(dtype_name(t.dtype)));
    if (t.count() != out.size())
        throw ShapeError("tensor " + t.name + " holds " + std::to_string(t.count()) + " values, expected " +
                         std::to_string(out.size()));
    std::memcpy(out.data(), t.bytes.data(), t.bytes.size());
}

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

std::uint32_t get_u32(const unsigned char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

}  // namespace

std::size_t StoredTensor::count() const noexcept { return bytes.size() / elem_size(dtype); }

StoredTensor StoredTensor::from(std::string name, std::vector<std::size_t> shape, std::span<const float> values) {
    return make_tensor(std::move(name), std::move(shape), values);
}
StoredTensor StoredTensor::from(std::string name, std::vector<std::size_t> shape, std::span<const double> values) {
    return make_tensor(std::move(name), std::move(shape), values);
}
void StoredTensor::copy_to(std::span<float> out) const { copy_tensor(*this, out); }
void StoredTensor::copy_to(std::span<double> out) const { copy_tensor(*this, out); }

const StoredTensor& Checkpoint::find(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return t;
    throw FormatError("checkpoint has no tensor named " + name);
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    json table = json::array();
    std::size_t offset = 0;
    for (const auto& t : ckpt.tensors) {
        table.push_back({{"name", t.name}, {"dtype", dtype_name(t.dtype)}, {"shape", t.shape}, {"offset", offset},
                         {"size", t.bytes.size()}});
        offset += t.bytes.size();
    }
    const std::string header = json{{"meta", ckpt.meta}, {"tensors", table}}.dump();

    std::vector<unsigned char> out(std::begin(kMagic), std::end(kMagic));
    put_u64(out, header.size());
    out.insert(out.end(), header.begin(), header.end());
    out.reserve(out.size() + offset + 4);
    for (const auto& t : ckpt.tensors) out.insert(out.end(), t.bytes.begin(), t.bytes.end());
    const std::uint32_t crc = crc32(out);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(crc >> (8 * i)));

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < sizeof(kMagic) + 8 + 4) throw ChecksumError("checkpoint truncated: " + path.string());
    const std::size_t body = bytes.size() - 4;
    if (crc32(std::span<const unsigned char>(bytes.data(), body)) != get_u32(bytes.data() + body))
        throw ChecksumError("checkpoint checksum mismatch: " + path.string());
    if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) throw FormatError("not a checkpoint: " + path.string());

    const std::uint64_t hlen = get_u64(bytes.data() + sizeof(kMagic));
    const std::size_t hstart = sizeof(kMagic) + 8;
    if (hlen > body - hstart) throw FormatError("checkpoint header overruns file");
    json header = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(hstart),
                              bytes.begin() + static_cast<std::ptrdiff_t>(hstart + hlen));
    Checkpoint ckpt;
    ckpt.meta = header.at("meta");
    const std::size_t payload = hstart + hlen;
    for (const auto& e : header.at("tensors")) {
        StoredTensor t;
        t.name = e.at("name").get<std::string>();
        t.dtype = parse_dtype(e.at("dtype").get<std::string>());
        t.shape = e.at("shape").get<std::vector<std::size_t>>();
        const auto off = e.at("offset").get<std::size_t>();
        const auto size = e.at("size").get<std::size_t>();
        if (payload + off + size > body || size != product(t.shape) * elem_size(t.dtype))
            throw FormatError("checkpoint tensor table is inconsistent: " + t.name);
        t.bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(payload + off),
                       bytes.begin() + static_cast<std::ptrdiff_t>(payload + off + size));
        ckpt.tensors.push_back(std::move(t));
    }
    return ckpt;
}

void save_weights(Backbone& net, const std::filesystem::path& path) {
    Checkpoint ckpt;
    ckpt.meta = {{"kind", "backbone"}, {"config", net.config()}};
    for (const auto& p : net.parameters()) ckpt.tensors.push_back(StoredTensor::from(p.name, p.shape, std::span<const float>(p.value)));
    for (const auto& b : net.buffers()) ckpt.tensors.push_back(StoredTensor::from(b.name, b.shape, std::span<const float>(b.value)));
    write_checkpoint(ckpt, path);
}

namespace {

Backbone restore_backbone(const Checkpoint& ckpt, const BackboneConfig& config) {
    Backbone net(config);
    for (auto& p : net.parameters()) ckpt.find(p.name).copy_to(p.value);
    for (auto& b : net.buffers()) ckpt.find(b.name).copy_to(b.value);
    return net;
}

BackboneConfig stored_config(const Checkpoint& ckpt) {
    if (ckpt.meta.value("kind", "") != "backbone") throw FormatError("checkpoint does not hold a backbone");
    return ckpt.meta.at("config").get<BackboneConfig>();
}

}  // namespace

Backbone load_weights(const std::filesystem::path& path) {
    const Checkpoint ckpt = read_checkpoint(path);
    return restore_backbone(ckpt, stored_config(ckpt));
}

Backbone load_weights(const std::filesystem::path& path, const BackboneConfig& expected) {
    const Checkpoint ckpt = read_checkpoint(path);
    const BackboneConfig stored = stored_config(ckpt);
    if (!stored.same_architecture(expected))
        throw ConfigMismatchError("checkpoint " + path.string() + " was built with " + json(stored).dump() +
                                  ", expected " + json(expected).dump());
    return restore_backbone(ckpt, stored);
}

std::uint32_t weights_checksum(Backbone& net) {
    std::uint32_t c = 0;
    auto add = [&c](std::span<const float> v) {
        c = crc32(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(v.data()), v.size_bytes()), c);
    };
    for (const auto& p : net.parameters()) add(p.value);
    for (const auto& b : net.buffers()) add(b.value);
    return c;
}

void save_head(const TrainedHead& head, const std::filesystem::path& path) {
    Checkpoint ckpt;
    ckpt.meta = {{"kind", "grade_head"}, {"config", head.config}, {"training_loss_curve", head.training_loss_curve}};
    auto vec = [](const Eigen::VectorXd& v) { return std::span<const double>(v.data(), static_cast<std::size_t>(v.size())); };
    ckpt.tensors.push_back(StoredTensor::from("input.mean", {static_cast<std::size_t>(head.feature_mean.size())}, vec(head.feature_mean)));
    ckpt.tensors.push_back(StoredTensor::from("input.scale", {static_cast<std::size_t>(head.feature_scale.size())}, vec(head.feature_scale)));
    for (std::size_t l = 0; l < head.layers.size(); ++l) {
        const auto& L = head.layers[l];
        // Eigen storage is column-major; the stored shape is [out, in] in that order.
        ckpt.tensors.push_back(StoredTensor::from(
            "dense" + std::to_string(l) + ".weight",
            {static_cast<std::size_t>(L.weight.rows()), static_cast<std::size_t>(L.weight.cols())},
            std::span<const double>(L.weight.data(), static_cast<std::size_t>(L.weight.size()))));
        ckpt.tensors.push_back(StoredTensor::from("dense" + std::to_string(l) + ".bias",
                                                  {static_cast<std::size_t>(L.bias.size())}, vec(L.bias)));
    }
    write_checkpoint(ckpt, path);
}

TrainedHead load_head(const std::filesystem::path& path) {
    const Checkpoint ckpt = read_checkpoint(path);
    if (ckpt.meta.value("kind", "") != "grade_head") throw FormatError("checkpoint does not hold a grade head");
    TrainedHead head;
    head.config = ckpt.meta.at("config").get<HeadConfig>();
    head.training_loss_curve = ckpt.meta.at("training_loss_curve").get<std::vector<double>>();
    const auto& dims = head.config.layer_dims;
    const auto f = static_cast<Eigen::Index>(dims.front());
    head.feature_mean.resize(f);
    head.feature_scale.resize(f);
    ckpt.find("input.mean").copy_to(std::span<double>(head.feature_mean.data(), dims.front()));
    ckpt.find("input.scale").copy_to(std::span<double>(head.feature_scale.data(), dims.front()));
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        DenseLayer L{Eigen::MatrixXd(static_cast<Eigen::Index>(dims[l + 1]), static_cast<Eigen::Index>(dims[l])),
                     Eigen::VectorXd(static_cast<Eigen::Index>(dims[l + 1]))};
        ckpt.find("dense" + std::to_string(l) + ".weight").copy_to(std::span<double>(L.weight.data(), static_cast<std::size_t>(L.weight.size())));
        ckpt.find("dense" + std::to_string(l) + ".bias").copy_to(std::span<double>(L.bias.data(), static_cast<std::size_t>(L.bias.size())));
        head.layers.push_back(std::move(L));
    }
    return head;
}

}  // namespace bca
