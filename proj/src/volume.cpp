#include "volseg/volume.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace volseg {

namespace {

constexpr char kMagic[4] = {'M', 'V', 'F', '1'};
constexpr uint64_t kMaxVoxels = uint64_t(1) << 33;  // addressable-size cap

template <typename T>
void write_le(std::ostream& os, T value) {
    // Assumes little-endian host (checked nowhere else; all target platforms are LE).
    os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    T value;
    is.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!is) throw TruncatedFile("unexpected end of file");
    return value;
}

}  // namespace

Volume Volume::make_scalar(std::array<uint32_t, 3> dims, std::array<float, 3> spacing) {
    Volume v;
    v.dims = dims;
    v.spacing = spacing;
    v.dtype = Dtype::scalar32;
    v.scalars.assign(v.voxel_count(), 0.0f);
    return v;
}

Volume Volume::make_label(std::array<uint32_t, 3> dims, std::array<float, 3> spacing) {
    Volume v;
    v.dims = dims;
    v.spacing = spacing;
    v.dtype = Dtype::label8;
    v.labels.assign(v.voxel_count(), 0);
    return v;
}

void Volume::validate() const {
    uint64_t n = 1;
    for (int a = 0; a < 3; ++a) {
        if (dims[a] == 0) throw DimOverflow("volume dimension is zero");
        if (!(spacing[a] > 0.0f)) throw InvalidMask("non-positive voxel spacing");
        n *= dims[a];
    }
    if (n > kMaxVoxels) throw DimOverflow("volume exceeds addressable size");
    if (dtype == Dtype::scalar32) {
        if (scalars.size() != n) throw InvalidMask("scalar payload length mismatch");
    } else {
        if (labels.size() != n) throw InvalidMask("label payload length mismatch");
        for (uint8_t v : labels) {
            if (v > 1) throw InvalidMask("label8 volume contains value > 1");
        }
    }
}

Volume read_volume(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw TruncatedFile("cannot open " + path);

    char magic[4];
    is.read(magic, 4);
    if (!is) throw TruncatedFile(path + ": header too short");
    if (std::memcmp(magic, kMagic, 4) != 0) throw BadMagic(path + ": bad magic");

    Volume v;
    uint64_t n = 1;
    for (int a = 0; a < 3; ++a) {
        v.dims[a] = read_le<uint32_t>(is);
        if (v.dims[a] == 0) throw DimOverflow(path + ": zero dimension");
        n *= v.dims[a];
    }
    if (n > kMaxVoxels) throw DimOverflow(path + ": volume exceeds addressable size");

    uint8_t code = read_le<uint8_t>(is);
    if (code > 1) throw BadDtypeCode(path + ": unknown dtype code");
    v.dtype = static_cast<Dtype>(code);

    for (int a = 0; a < 3; ++a) v.spacing[a] = read_le<float>(is);

    if (v.dtype == Dtype::scalar32) {
        v.scalars.resize(n);
        is.read(reinterpret_cast<char*>(v.scalars.data()), std::streamsize(n * 4));
    } else {
        v.labels.resize(n);
        is.read(reinterpret_cast<char*>(v.labels.data()), std::streamsize(n));
    }
    if (!is) throw TruncatedFile(path + ": truncated payload");
    return v;
}

void write_volume(const Volume& v, const std::string& path) {
    v.validate();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoFailure("cannot open " + path + " for writing");

    os.write(kMagic, 4);
    for (int a = 0; a < 3; ++a) write_le(os, v.dims[a]);
    write_le(os, static_cast<uint8_t>(v.dtype));
    for (int a = 0; a < 3; ++a) write_le(os, v.spacing[a]);
    if (v.dtype == Dtype::scalar32) {
        os.write(reinterpret_cast<const char*>(v.scalars.data()),
                 std::streamsize(v.scalars.size() * 4));
    } else {
        os.write(reinterpret_cast<const char*>(v.labels.data()),
                 std::streamsize(v.labels.size()));
    }
    os.flush();
    if (!os) throw IoFailure("write failed for " + path);
}

Volume crop_window(const Volume& v, const Window& w, PadPolicy pad_policy) {
    for (int a = 0; a < 3; ++a) {
        if (w.size[a] <= 0) throw WindowOutOfBounds("window size must be positive");
    }
    if (pad_policy == PadPolicy::reject && !w.fits_in(v.dims)) {
        throw WindowOutOfBounds("window does not fit inside volume");
    }

    Volume out = (v.dtype == Dtype::scalar32)
                     ? Volume::make_scalar({uint32_t(w.size[0]), uint32_t(w.size[1]),
                                            uint32_t(w.size[2])},
                                           v.spacing)
                     : Volume::make_label({uint32_t(w.size[0]), uint32_t(w.size[1]),
                                           uint32_t(w.size[2])},
                                          v.spacing);

    for (int64_t z = 0; z < w.size[2]; ++z) {
        int64_t sz = z + w.offset[2];
        if (sz < 0 || sz >= v.dims[2]) continue;
        for (int64_t y = 0; y < w.size[1]; ++y) {
            int64_t sy = y + w.offset[1];
            if (sy < 0 || sy >= v.dims[1]) continue;
            for (int64_t x = 0; x < w.size[0]; ++x) {
                int64_t sx = x + w.offset[0];
                if (sx < 0 || sx >= v.dims[0]) continue;
                size_t si = v.index(size_t(sx), size_t(sy), size_t(sz));
                size_t di = out.index(size_t(x), size_t(y), size_t(z));
                if (v.dtype == Dtype::scalar32) {
                    out.scalars[di] = v.scalars[si];
                } else {
                    out.labels[di] = v.labels[si];
                }
            }
        }
    }
    return out;
}

void paste_window(Volume& dst, const Volume& patch, const Window& w) {
    if (dst.dtype != patch.dtype) throw ShapeMismatch("paste dtype mismatch");
    for (int64_t z = 0; z < w.size[2]; ++z) {
        int64_t dz = z + w.offset[2];
        if (dz < 0 || dz >= dst.dims[2]) continue;
        for (int64_t y = 0; y < w.size[1]; ++y) {
            int64_t dy = y + w.offset[1];
            if (dy < 0 || dy >= dst.dims[1]) continue;
            for (int64_t x = 0; x < w.size[0]; ++x) {
                int64_t dx = x + w.offset[0];
                if (dx < 0 || dx >= dst.dims[0]) continue;
                size_t si = patch.index(size_t(x), size_t(y), size_t(z));
                size_t di = dst.index(size_t(dx), size_t(dy), size_t(dz));
                if (dst.dtype == Dtype::scalar32) {
                    dst.scalars[di] = patch.scalars[si];
                } else {
                    dst.labels[di] = patch.labels[si];
                }
            }
        }
    }
}

Volume normalize_intensity(const Volume& v) {
    if (v.dtype != Dtype::scalar32) throw InvalidMask("normalize requires scalar32");
    Volume out = v;
    double sum = 0.0;
    for (float s : v.scalars) sum += s;
    double mean = sum / double(v.scalars.size());
    double var = 0.0;
    for (float s : v.scalars) {
        double d = s - mean;
        var += d * d;
    }
    double stddev = std::sqrt(var / double(v.scalars.size()));
    double denom = std::max(stddev, 1e-6);
    for (float& s : out.scalars) s = float((s - mean) / denom);
    return out;
}

}  // namespace volseg
