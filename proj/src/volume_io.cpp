#include "bca/volume_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "bca/errors.hpp"

namespace bca {

namespace {

using Bytes = std::vector<unsigned char>;

constexpr std::array<char, 4> kRawMagic{'V', 'O', 'L', '1'};
constexpr std::size_t kRawHeaderSize = 4 + 1 + 12 + 12;
constexpr std::size_t kNiftiHeaderSize = 348;

bool has_gz_suffix(const std::filesystem::path& p) { return p.extension() == ".gz"; }

Bytes read_plain(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed: " + path.string());
    return bytes;
}

Bytes gunzip(const std::filesystem::path& path) {
    gzFile f = gzopen(path.string().c_str(), "rb");
    if (!f) throw IoError("cannot open " + path.string());
    Bytes out;
    std::array<unsigned char, 1 << 16> buf{};
    for (;;) {
        int n = gzread(f, buf.data(), static_cast<unsigned>(buf.size()));
        if (n < 0) {
            gzclose(f);
            throw IoError("corrupt gzip stream: " + path.string());
        }
        if (n == 0) break;
        out.insert(out.end(), buf.begin(), buf.begin() + n);
    }
    gzclose(f);
    return out;
}

Bytes read_file(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
    Bytes bytes = read_plain(path);
    if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b) return gunzip(path);
    return bytes;
}

void write_file(const std::filesystem::path& path, const Bytes& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (has_gz_suffix(path)) {
        gzFile f = gzopen(path.string().c_str(), "wb");
        if (!f) throw IoError("cannot write " + path.string());
        int n = gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
        gzclose(f);
        if (n != static_cast<int>(bytes.size())) throw IoError("short write: " + path.string());
        return;
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write: " + path.string());
}

// Little-endian scalar codecs.
template <class T>
T get_le(const unsigned char* p, bool swap = false) {
    using U = std::conditional_t<sizeof(T) == 1, std::uint8_t,
              std::conditional_t<sizeof(T) == 2, std::uint16_t,
              std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;
    U u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(static_cast<U>(p[i]) << (8 * i));
    if (swap) {
        U r = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) r |= static_cast<U>(((u >> (8 * i)) & 0xff) << (8 * (sizeof(T) - 1 - i)));
        u = r;
    }
    return std::bit_cast<T>(u);
}

template <class T>
void put_le(Bytes& out, T value) {
    using U = std::conditional_t<sizeof(T) == 1, std::uint8_t,
              std::conditional_t<sizeof(T) == 2, std::uint16_t,
              std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;
    U u = std::bit_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<unsigned char>((u >> (8 * i)) & 0xff));
}

template <class T>
void put_le_at(Bytes& out, std::size_t offset, T value) {
    Bytes tmp;
    put_le(tmp, value);
    std::copy(tmp.begin(), tmp.end(), out.begin() + static_cast<std::ptrdiff_t>(offset));
}

void require_finite(const std::vector<double>& data, const std::filesystem::path& path) {
    auto it = std::find_if(data.begin(), data.end(), [](double v) { return !std::isfinite(v); });
    if (it != data.end())
        throw NonFiniteError("non-finite voxel at index " + std::to_string(it - data.begin()) + " in " +
                             path.string());
}

Volume3D decode_raw(const Bytes& bytes, const std::filesystem::path& path) {
    if (bytes.size() < kRawHeaderSize) throw FormatError("truncated raw tensor header: " + path.string());
    const unsigned char* p = bytes.data();
    const auto code = p[4];
    if (code > 1) throw FormatError("unknown raw tensor dtype code " + std::to_string(code));
    Dims dims{get_le<std::uint32_t>(p + 5), get_le<std::uint32_t>(p + 9), get_le<std::uint32_t>(p + 13)};
    Spacing sp{get_le<float>(p + 17), get_le<float>(p + 21), get_le<float>(p + 25)};
    const std::size_t elem = code == 0 ? 4 : 8;
    const std::size_t n = dims.voxels();
    if (bytes.size() != kRawHeaderSize + n * elem)
        throw FormatError("raw tensor payload size mismatch for grid " + to_string(dims) + ": " + path.string());
    std::vector<double> data(n);
    const unsigned char* payload = p + kRawHeaderSize;
    for (std::size_t i = 0; i < n; ++i)
        data[i] = code == 0 ? static_cast<double>(get_le<float>(payload + 4 * i)) : get_le<double>(payload + 8 * i);
    require_finite(data, path);
    return Volume3D(dims, sp, std::move(data));
}

Volume3D decode_nifti(const Bytes& bytes, const std::filesystem::path& path) {
    const unsigned char* h = bytes.data();
    bool swap = false;
    if (get_le<std::int32_t>(h) != static_cast<std::int32_t>(kNiftiHeaderSize)) {
        swap = true;
        if (get_le<std::int32_t>(h, true) != static_cast<std::int32_t>(kNiftiHeaderSize))
            throw FormatError("not a NIfTI-1 header: " + path.string());
    }
    if (std::memcmp(h + 344, "n+1", 4) != 0)
        throw FormatError("only single-file NIfTI-1 (n+1) is supported: " + path.string());

    std::array<std::int16_t, 8> dim{};
    for (int i = 0; i < 8; ++i) dim[i] = get_le<std::int16_t>(h + 40 + 2 * i, swap);
    if (dim[0] < 1 || dim[0] > 7) throw FormatError("invalid NIfTI dim[0]");
    for (int i = 4; i <= dim[0]; ++i)
        if (dim[i] > 1) throw FormatError("NIfTI images with more than 3 dimensions are not supported");
    auto extent = [&](int i) -> std::size_t { return i <= dim[0] && dim[i] > 0 ? static_cast<std::size_t>(dim[i]) : 1; };
    Dims dims{extent(1), extent(2), extent(3)};

    std::array<float, 8> pixdim{};
    for (int i = 0; i < 8; ++i) pixdim[i] = get_le<float>(h + 76 + 4 * i, swap);
    auto spacing_of = [&](int i) { return std::isfinite(pixdim[i]) && pixdim[i] > 0 ? static_cast<double>(pixdim[i]) : 1.0; };
    Spacing sp{spacing_of(1), spacing_of(2), spacing_of(3)};

    const auto datatype = get_le<std::int16_t>(h + 70, swap);
    const auto vox_offset = static_cast<std::size_t>(get_le<float>(h + 108, swap));
    float slope = get_le<float>(h + 112, swap);
    float inter = get_le<float>(h + 116, swap);
    const bool scaled = std::isfinite(slope) && slope != 0.0f;

    std::size_t elem = 0;
    switch (datatype) {
        case 2: case 256: elem = 1; break;             // uint8, int8
        case 4: case 512: elem = 2; break;             // int16, uint16
        case 8: case 768: case 16: elem = 4; break;    // int32, uint32, float32
        case 64: elem = 8; break;                      // float64
        default: throw FormatError("unsupported NIfTI datatype " + std::to_string(datatype));
    }
    const std::size_t n = dims.voxels();
    if (vox_offset < kNiftiHeaderSize || bytes.size() < vox_offset + n * elem)
        throw FormatError("truncated NIfTI payload: " + path.string());

    std::vector<double> data(n);
    const unsigned char* p = bytes.data() + vox_offset;
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned char* q = p + i * elem;
        double v = 0;
        switch (datatype) {
            case 2: v = q[0]; break;
            case 256: v = static_cast<std::int8_t>(q[0]); break;
            case 4: v = get_le<std::int16_t>(q, swap); break;
            case 512: v = get_le<std::uint16_t>(q, swap); break;
            case 8: v = get_le<std::int32_t>(q, swap); break;
            case 768: v = get_le<std::uint32_t>(q, swap); break;
            case 16: v = get_le<float>(q, swap); break;
            case 64: v = get_le<double>(q, swap); break;
        }
        data[i] = scaled ? v * slope + inter : v;
    }
    require_finite(data, path);
    Volume3D vol(dims, sp, std::move(data));
    vol.metadata()["format"] = "nifti1";
    return vol;
}

}  // namespace

Volume3D load_volume(const std::filesystem::path& path) {
    const Bytes bytes = read_file(path);
    if (bytes.size() >= 4 && std::equal(kRawMagic.begin(), kRawMagic.end(), bytes.begin(),
                                        [](char a, unsigned char b) { return static_cast<unsigned char>(a) == b; })) {
        return decode_raw(bytes, path);
    }
    if (bytes.size() >= kNiftiHeaderSize + 4) return decode_nifti(bytes, path);
    throw FormatError("unsupported volume format: " + path.string());
}

void save_volume(const Volume3D& volume, const std::filesystem::path& path, RawDtype dtype) {
    const auto& d = volume.dims();
    Bytes out;
    const std::size_t elem = dtype == RawDtype::Float32 ? 4 : 8;
    out.reserve(kRawHeaderSize + d.voxels() * elem);
    for (char c : kRawMagic) out.push_back(static_cast<unsigned char>(c));
    out.push_back(static_cast<unsigned char>(dtype));
    put_le(out, static_cast<std::uint32_t>(d.width));
    put_le(out, static_cast<std::uint32_t>(d.height));
    put_le(out, static_cast<std::uint32_t>(d.depth));
    put_le(out, static_cast<float>(volume.spacing().x));
    put_le(out, static_cast<float>(volume.spacing().y));
    put_le(out, static_cast<float>(volume.spacing().z));
    for (double v : volume.data()) {
        if (dtype == RawDtype::Float32)
            put_le(out, static_cast<float>(v));
        else
            put_le(out, v);
    }
    write_file(path, out);
}

void save_nifti(const Volume3D& volume, const std::filesystem::path& path) {
    const auto& d = volume.dims();
    if (d.width > 32767 || d.height > 32767 || d.depth > 32767)
        throw ShapeError("grid too large for NIfTI-1");
    Bytes out(kNiftiHeaderSize + 4, 0);
    put_le_at(out, 0, static_cast<std::int32_t>(kNiftiHeaderSize));
    const std::array<std::int16_t, 8> dim{3, static_cast<std::int16_t>(d.width), static_cast<std::int16_t>(d.height),
                                          static_cast<std::int16_t>(d.depth), 1, 1, 1, 1};
    for (int i = 0; i < 8; ++i) put_le_at(out, 40 + 2 * i, dim[i]);
    put_le_at(out, 70, static_cast<std::int16_t>(16));
    put_le_at(out, 72, static_cast<std::int16_t>(32));
    const std::array<float, 8> pixdim{1.0f, static_cast<float>(volume.spacing().x), static_cast<float>(volume.spacing().y),
                                      static_cast<float>(volume.spacing().z), 1, 1, 1, 1};
    for (int i = 0; i < 8; ++i) put_le_at(out, 76 + 4 * i, pixdim[i]);
    put_le_at(out, 108, static_cast<float>(kNiftiHeaderSize + 4));
    put_le_at(out, 112, 1.0f);
    put_le_at(out, 116, 0.0f);
    put_le_at(out, 123, static_cast<std::uint8_t>(2));  // xyzt_units: mm
    std::memcpy(out.data() + 344, "n+1", 4);
    out.reserve(out.size() + 4 * d.voxels());
    for (double v : volume.data()) put_le(out, static_cast<float>(v));
    write_file(path, out);
}

}  // namespace bca
