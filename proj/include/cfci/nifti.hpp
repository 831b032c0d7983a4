#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>

#include <zlib.h>

#include "cfci/metrics.hpp" // Grid3 / Spacing3

namespace cfci {

#pragma pack(push, 1)
struct NiftiHeader {
    std::int32_t sizeof_hdr = 348;
    char data_type[10]{};
    char db_name[18]{};
    std::int32_t extents = 0;
    std::int16_t session_error = 0;
    char regular = 'r';
    char dim_info = 0;
    std::int16_t dim[8]{};
    float intent_p1 = 0, intent_p2 = 0, intent_p3 = 0;
    std::int16_t intent_code = 0;
    std::int16_t datatype = 0;
    std::int16_t bitpix = 0;
    std::int16_t slice_start = 0;
    float pixdim[8]{};
    float vox_offset = 352;
    float scl_slope = 0;
    float scl_inter = 0;
    std::int16_t slice_end = 0;
    char slice_code = 0;
    char xyzt_units = 0;
    float cal_max = 0, cal_min = 0;
    float slice_duration = 0;
    float toffset = 0;
    std::int32_t glmax = 0, glmin = 0;
    char descrip[80]{};
    char aux_file[24]{};
    std::int16_t qform_code = 0, sform_code = 0;
    float quatern_b = 0, quatern_c = 0, quatern_d = 0;
    float qoffset_x = 0, qoffset_y = 0, qoffset_z = 0;
    float srow_x[4]{}, srow_y[4]{}, srow_z[4]{};
    char intent_name[16]{};
    char magic[4]{};
};
#pragma pack(pop)
static_assert(sizeof(NiftiHeader) == 348, "NIfTI-1 header must be 348 bytes");

enum NiftiType : std::int16_t {
    kNiftiUint8 = 2,
    kNiftiInt16 = 4,
    kNiftiInt32 = 8,
    kNiftiFloat32 = 16,
    kNiftiFloat64 = 64,
};

/// Scalar 3-D volume in [D,H,W] layout (W fastest, matching NIfTI x).
struct NiftiVolume {
    Grid3 dims{};
    Spacing3 spacing{1.0, 1.0, 1.0};
    std::vector<double> data;
};

namespace detail {

// gzread handles both gzip and plain streams
class GzReader {
public:
    explicit GzReader(const std::string& path) : f_(gzopen(path.c_str(), "rb")) {
        if (!f_) throw std::runtime_error("cannot open '" + path + "'");
    }
    ~GzReader() { gzclose(f_); }
    void read(void* dst, std::size_t n, const std::string& what) {
        if (gzread(f_, dst, static_cast<unsigned>(n)) != static_cast<int>(n))
            throw std::runtime_error("truncated NIfTI file while reading " + what);
    }
    void skip(std::size_t n) {
        std::vector<char> junk(n);
        if (n) read(junk.data(), n, "padding");
    }

private:
    gzFile f_;
};

template <class T>
void convert_to_double(const std::vector<char>& raw, std::vector<double>& out) {
    const T* p = reinterpret_cast<const T*>(raw.data());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(p[i]);
}

} // namespace detail

inline NiftiVolume nifti_read(const std::string& path) {
    detail::GzReader in(path);
    NiftiHeader h;
    in.read(&h, sizeof(h), "header");
    if (h.sizeof_hdr != 348)
        throw std::runtime_error("'" + path + "': not a native-endian NIfTI-1 file (sizeof_hdr=" +
                                 std::to_string(h.sizeof_hdr) + ")");
    if (h.dim[0] < 3)
        throw std::runtime_error("'" + path + "': expected a 3-D volume, dim[0]=" + std::to_string(h.dim[0]));
    for (int d = 4; d <= h.dim[0]; ++d)
        if (h.dim[d] > 1)
            throw std::runtime_error("'" + path + "': higher dimensions not supported");

    NiftiVolume v;
    const std::int64_t nx = h.dim[1], ny = h.dim[2], nz = h.dim[3];
    v.dims = {nz, ny, nx};
    v.spacing = {h.pixdim[3], h.pixdim[2], h.pixdim[1]};
    for (auto& s : v.spacing)
        if (!(s > 0)) s = 1.0;

    const std::size_t n = static_cast<std::size_t>(nx) * ny * nz;
    const std::size_t bytes = n * (h.bitpix / 8);
    if (h.vox_offset > static_cast<float>(sizeof(h))) in.skip(static_cast<std::size_t>(h.vox_offset) - sizeof(h));

    std::vector<char> raw(bytes);
    in.read(raw.data(), bytes, "voxel data");
    v.data.resize(n);
    switch (h.datatype) {
        case kNiftiUint8: detail::convert_to_double<std::uint8_t>(raw, v.data); break;
        case kNiftiInt16: detail::convert_to_double<std::int16_t>(raw, v.data); break;
        case kNiftiInt32: detail::convert_to_double<std::int32_t>(raw, v.data); break;
        case kNiftiFloat32: detail::convert_to_double<float>(raw, v.data); break;
        case kNiftiFloat64: detail::convert_to_double<double>(raw, v.data); break;
        default:
            throw std::runtime_error("'" + path + "': unsupported NIfTI datatype " + std::to_string(h.datatype));
    }
    if (h.scl_slope != 0.0f && !(h.scl_slope == 1.0f && h.scl_inter == 0.0f))
        for (auto& x : v.data) x = x * h.scl_slope + h.scl_inter;
    return v;
}

inline void nifti_write(const std::string& path, const NiftiVolume& v, std::int16_t datatype = kNiftiFloat64) {
    NiftiHeader h;
    h.dim[0] = 3;
    h.dim[1] = static_cast<std::int16_t>(v.dims[2]);
    h.dim[2] = static_cast<std::int16_t>(v.dims[1]);
    h.dim[3] = static_cast<std::int16_t>(v.dims[0]);
    for (int d = 4; d < 8; ++d) h.dim[d] = 1;
    h.pixdim[0] = 1;
    h.pixdim[1] = static_cast<float>(v.spacing[2]);
    h.pixdim[2] = static_cast<float>(v.spacing[1]);
    h.pixdim[3] = static_cast<float>(v.spacing[0]);
    h.datatype = datatype;
    h.vox_offset = 352;
    h.scl_slope = 1;
    h.scl_inter = 0;
    std::memcpy(h.magic, "n+1", 4);

    const std::size_t n = v.data.size();
    std::vector<char> raw;
    switch (datatype) {
        case kNiftiUint8: {
            h.bitpix = 8;
            raw.resize(n);
            for (std::size_t i = 0; i < n; ++i) raw[i] = static_cast<char>(static_cast<std::uint8_t>(v.data[i]));
            break;
        }
        case kNiftiFloat32: {
            h.bitpix = 32;
            raw.resize(n * 4);
            float* p = reinterpret_cast<float*>(raw.data());
            for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<float>(v.data[i]);
            break;
        }
        case kNiftiFloat64: {
            h.bitpix = 64;
            raw.resize(n * 8);
            std::memcpy(raw.data(), v.data.data(), raw.size());
            break;
        }
        default: throw std::runtime_error("nifti_write: unsupported datatype " + std::to_string(datatype));
    }

    const char pad[4] = {0, 0, 0, 0};
    const bool gz = path.size() > 3 && path.substr(path.size() - 3) == ".gz";
    if (gz) {
        gzFile f = gzopen(path.c_str(), "wb");
        if (!f) throw std::runtime_error("cannot write '" + path + "'");
        bool ok = gzwrite(f, &h, sizeof(h)) == sizeof(h) && gzwrite(f, pad, 4) == 4 &&
                  gzwrite(f, raw.data(), static_cast<unsigned>(raw.size())) == static_cast<int>(raw.size());
        gzclose(f);
        if (!ok) throw std::runtime_error("failed writing '" + path + "'");
    } else {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot write '" + path + "'");
        f.write(reinterpret_cast<const char*>(&h), sizeof(h));
        f.write(pad, 4);
        f.write(raw.data(), static_cast<std::streamsize>(raw.size()));
        if (!f) throw std::runtime_error("failed writing '" + path + "'");
    }
}

} // namespace cfci
