// NIfTI-1 single-file reader/writer. Reads dim, pixdim and qoffset; the
// orientation matrix is ignored.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "error.hpp"
#include "imaging.hpp"

namespace adasmtl::imaging {

namespace {

constexpr std::size_t header_size = 348;
constexpr std::size_t data_offset = 352;

enum : std::int16_t {
    dt_uint8 = 2,
    dt_int16 = 4,
    dt_int32 = 8,
    dt_float32 = 16,
    dt_float64 = 64,
    dt_int8 = 256,
    dt_uint16 = 512,
    dt_uint32 = 768,
};

template <typename T>
T byteswap_value(T v) {
    std::array<unsigned char, sizeof(T)> b;
    std::memcpy(b.data(), &v, sizeof(T));
    std::reverse(b.begin(), b.end());
    std::memcpy(&v, b.data(), sizeof(T));
    return v;
}

class HeaderReader {
public:
    HeaderReader(const std::vector<unsigned char>& bytes, bool swap) : bytes_(bytes), swap_(swap) {}

    template <typename T>
    T get(std::size_t offset) const {
        T v;
        std::memcpy(&v, bytes_.data() + offset, sizeof(T));
        return swap_ ? byteswap_value(v) : v;
    }

private:
    const std::vector<unsigned char>& bytes_;
    bool swap_;
};

template <typename T>
void put(std::vector<unsigned char>& bytes, std::size_t offset, T v) {
    std::memcpy(bytes.data() + offset, &v, sizeof(T));
}

template <typename T>
void convert(const unsigned char* src, std::size_t n, bool swap, std::span<double> dst) {
    for (std::size_t i = 0; i < n; ++i) {
        T v;
        std::memcpy(&v, src + i * sizeof(T), sizeof(T));
        if (swap) v = byteswap_value(v);
        dst[i] = static_cast<double>(v);
    }
}

}  // namespace

Volume load_volume(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open volume " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < header_size) fail(ErrorKind::io, "volume " + path.string() + ": truncated NIfTI header");

    std::int32_t sizeof_hdr;
    std::memcpy(&sizeof_hdr, bytes.data(), 4);
    bool swap = false;
    if (sizeof_hdr != static_cast<std::int32_t>(header_size)) {
        if (byteswap_value(sizeof_hdr) != static_cast<std::int32_t>(header_size)) {
            fail(ErrorKind::io, "volume " + path.string() + ": not a NIfTI-1 file (bad sizeof_hdr)");
        }
        swap = true;
    }
    if (std::memcmp(bytes.data() + 344, "n+1\0", 4) != 0) {
        fail(ErrorKind::io, "volume " + path.string() + ": unsupported NIfTI magic (single-file n+1 required)");
    }
    const HeaderReader h(bytes, swap);

    const auto ndim = h.get<std::int16_t>(40);
    if (ndim < 1 || ndim > 7) fail(ErrorKind::io, "volume " + path.string() + ": invalid dim[0]");
    std::array<std::int16_t, 8> dim{};
    for (int i = 0; i < 8; ++i) dim[static_cast<std::size_t>(i)] = h.get<std::int16_t>(40 + 2 * static_cast<std::size_t>(i));
    for (int i = 4; i <= ndim; ++i) {
        if (dim[static_cast<std::size_t>(i)] > 1) {
            fail(ErrorKind::unsupported, "volume " + path.string() + ": unsupported shape, only single-channel 3D volumes are accepted (dim[" +
                                          std::to_string(i) + "] = " + std::to_string(dim[static_cast<std::size_t>(i)]) + ")");
        }
    }
    Shape shape{1, 1, 1};
    for (int i = 1; i <= std::min<int>(3, ndim); ++i) {
        if (dim[static_cast<std::size_t>(i)] < 1) fail(ErrorKind::io, "volume " + path.string() + ": non-positive dimension");
        shape[static_cast<std::size_t>(i - 1)] = static_cast<std::size_t>(dim[static_cast<std::size_t>(i)]);
    }

    Vec3 spacing{};
    for (int i = 0; i < 3; ++i) {
        const float p = h.get<float>(76 + 4 * static_cast<std::size_t>(i + 1));
        spacing[static_cast<std::size_t>(i)] = (std::isfinite(p) && p > 0.0f) ? static_cast<double>(p) : 1.0;
    }
    const Vec3 origin{h.get<float>(268), h.get<float>(272), h.get<float>(276)};

    const auto datatype = h.get<std::int16_t>(70);
    const float vox_offset = h.get<float>(108);
    const float slope = h.get<float>(112);
    const float inter = h.get<float>(116);

    std::size_t elem = 0;
    switch (datatype) {
        case dt_uint8: case dt_int8: elem = 1; break;
        case dt_int16: case dt_uint16: elem = 2; break;
        case dt_int32: case dt_uint32: case dt_float32: elem = 4; break;
        case dt_float64: elem = 8; break;
        default: fail(ErrorKind::io, "volume " + path.string() + ": unsupported datatype " + std::to_string(datatype));
    }
    const auto offset = static_cast<std::size_t>(std::max(vox_offset, static_cast<float>(data_offset)));
    Volume vol(shape, spacing, origin);
    const std::size_t n = vol.size();
    if (bytes.size() < offset + n * elem) fail(ErrorKind::io, "volume " + path.string() + ": truncated voxel data");
    const unsigned char* src = bytes.data() + offset;
    auto dst = vol.voxels();
    switch (datatype) {
        case dt_uint8: convert<std::uint8_t>(src, n, swap, dst); break;
        case dt_int8: convert<std::int8_t>(src, n, swap, dst); break;
        case dt_int16: convert<std::int16_t>(src, n, swap, dst); break;
        case dt_uint16: convert<std::uint16_t>(src, n, swap, dst); break;
        case dt_int32: convert<std::int32_t>(src, n, swap, dst); break;
        case dt_uint32: convert<std::uint32_t>(src, n, swap, dst); break;
        case dt_float32: convert<float>(src, n, swap, dst); break;
        case dt_float64: convert<double>(src, n, swap, dst); break;
        default: break;
    }
    // scl_slope is the file's storage scaling, not an intensity normalization
    if (slope != 0.0f && std::isfinite(slope) && (slope != 1.0f || inter != 0.0f)) {
        for (double& v : dst) v = v * slope + inter;
    }
    for (double v : dst) {
        if (!std::isfinite(v)) fail(ErrorKind::io, "volume " + path.string() + ": non-finite voxel value");
    }
    return vol;
}

void save_volume(const std::filesystem::path& path, const Volume& volume) {
    for (auto d : volume.shape()) {
        require(d >= 1 && d <= 32767, "save_volume: dimension out of NIfTI-1 range");
    }
    std::vector<unsigned char> header(data_offset, 0);
    put<std::int32_t>(header, 0, static_cast<std::int32_t>(header_size));
    const std::array<std::int16_t, 8> dim{3,
                                          static_cast<std::int16_t>(volume.shape()[0]),
                                          static_cast<std::int16_t>(volume.shape()[1]),
                                          static_cast<std::int16_t>(volume.shape()[2]),
                                          1, 1, 1, 1};
    for (std::size_t i = 0; i < 8; ++i) put<std::int16_t>(header, 40 + 2 * i, dim[i]);
    put<std::int16_t>(header, 70, dt_float64);
    put<std::int16_t>(header, 72, 64);
    const std::array<float, 8> pixdim{1.0f,
                                      static_cast<float>(volume.spacing[0]),
                                      static_cast<float>(volume.spacing[1]),
                                      static_cast<float>(volume.spacing[2]),
                                      1.0f, 1.0f, 1.0f, 1.0f};
    for (std::size_t i = 0; i < 8; ++i) put<float>(header, 76 + 4 * i, pixdim[i]);
    put<float>(header, 108, static_cast<float>(data_offset));
    put<float>(header, 112, 1.0f);
    put<float>(header, 116, 0.0f);
    header[123] = 2;  // mm
    if (volume.subject_id) {
        const std::string& d = *volume.subject_id;
        std::memcpy(header.data() + 148, d.data(), std::min<std::size_t>(79, d.size()));
    }
    put<std::int16_t>(header, 252, 1);  // qform_code: scanner
    put<float>(header, 268, static_cast<float>(volume.origin_offset[0]));
    put<float>(header, 272, static_cast<float>(volume.origin_offset[1]));
    put<float>(header, 276, static_cast<float>(volume.origin_offset[2]));
    std::memcpy(header.data() + 344, "n+1\0", 4);

    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot write volume " + path.string());
    out.write(reinterpret_cast<const char*>(header.data()), static_cast<std::streamsize>(header.size()));
    static_assert(std::endian::native == std::endian::little, "writer assumes a little-endian host");
    const auto vox = volume.voxels();
    out.write(reinterpret_cast<const char*>(vox.data()), static_cast<std::streamsize>(vox.size() * sizeof(double)));
    if (!out) fail(ErrorKind::io, "failed writing volume " + path.string());
}

}  // namespace adasmtl::imaging
