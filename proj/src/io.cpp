#include "ldreg/io.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include <zlib.h>

#include "ldreg/errors.hpp"
#include "ldreg/warp.hpp"

static_assert(std::endian::native == std::endian::little,
              "raw payloads are little-endian; big-endian hosts are unsupported");

namespace ldreg {

namespace {

// ---------------------------------------------------------------------------
// NIfTI-1 header (348 bytes, no padding on any sane ABI).

struct NiftiHeader {
    int32_t sizeof_hdr;
    char data_type[10];
    char db_name[18];
    int32_t extents;
    int16_t session_error;
    char regular;
    char dim_info;
    int16_t dim[8];
    float intent_p1, intent_p2, intent_p3;
    int16_t intent_code;
    int16_t datatype;
    int16_t bitpix;
    int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max, cal_min;
    float slice_duration;
    float toffset;
    int32_t glmax, glmin;
    char descrip[80];
    char aux_file[24];
    int16_t qform_code;
    int16_t sform_code;
    float quatern_b, quatern_c, quatern_d;
    float qoffset_x, qoffset_y, qoffset_z;
    float srow_x[4], srow_y[4], srow_z[4];
    char intent_name[16];
    char magic[4];
};
static_assert(sizeof(NiftiHeader) == 348, "NIfTI-1 header must pack to 348 bytes");

constexpr int16_t kDtUint8 = 2;
constexpr int16_t kDtInt16 = 4;
constexpr int16_t kDtInt32 = 8;
constexpr int16_t kDtFloat32 = 16;
constexpr int16_t kDtFloat64 = 64;
constexpr int16_t kDtUint16 = 512;

template <typename T> T bswap(T v) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (size_t i = 0; i < sizeof(T) / 2; ++i)
        std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
    return v;
}

void swap_header(NiftiHeader &h) {
    h.sizeof_hdr = bswap(h.sizeof_hdr);
    h.extents = bswap(h.extents);
    h.session_error = bswap(h.session_error);
    for (auto &d : h.dim)
        d = bswap(d);
    h.intent_p1 = bswap(h.intent_p1);
    h.intent_p2 = bswap(h.intent_p2);
    h.intent_p3 = bswap(h.intent_p3);
    h.intent_code = bswap(h.intent_code);
    h.datatype = bswap(h.datatype);
    h.bitpix = bswap(h.bitpix);
    h.slice_start = bswap(h.slice_start);
    for (auto &p : h.pixdim)
        p = bswap(p);
    h.vox_offset = bswap(h.vox_offset);
    h.scl_slope = bswap(h.scl_slope);
    h.scl_inter = bswap(h.scl_inter);
    h.slice_end = bswap(h.slice_end);
    h.cal_max = bswap(h.cal_max);
    h.cal_min = bswap(h.cal_min);
    h.slice_duration = bswap(h.slice_duration);
    h.toffset = bswap(h.toffset);
    h.glmax = bswap(h.glmax);
    h.glmin = bswap(h.glmin);
    h.qform_code = bswap(h.qform_code);
    h.sform_code = bswap(h.sform_code);
    h.quatern_b = bswap(h.quatern_b);
    h.quatern_c = bswap(h.quatern_c);
    h.quatern_d = bswap(h.quatern_d);
    h.qoffset_x = bswap(h.qoffset_x);
    h.qoffset_y = bswap(h.qoffset_y);
    h.qoffset_z = bswap(h.qoffset_z);
    for (int i = 0; i < 4; ++i) {
        h.srow_x[i] = bswap(h.srow_x[i]);
        h.srow_y[i] = bswap(h.srow_y[i]);
        h.srow_z[i] = bswap(h.srow_z[i]);
    }
}

bool ends_with(const std::string &s, const std::string &suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool is_nifti_path(const std::string &path) {
    return ends_with(path, ".nii") || ends_with(path, ".nii.gz");
}

// gzread handles plain files transparently, so one reader serves .nii and .nii.gz.
std::vector<unsigned char> read_file(const std::string &path) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f)
        throw DataError("cannot open " + path);
    std::vector<unsigned char> buf;
    std::vector<unsigned char> chunk(1 << 16);
    int n = 0;
    while ((n = gzread(f, chunk.data(), static_cast<unsigned>(chunk.size()))) > 0)
        buf.insert(buf.end(), chunk.begin(), chunk.begin() + n);
    const bool bad = n < 0;
    gzclose(f);
    if (bad)
        throw DataError("read error in " + path);
    return buf;
}

void write_file(const std::string &path, const void *bytes, size_t count) {
    if (ends_with(path, ".gz")) {
        gzFile f = gzopen(path.c_str(), "wb");
        if (!f)
            throw DataError("cannot open " + path + " for writing");
        const bool ok =
            gzwrite(f, bytes, static_cast<unsigned>(count)) == static_cast<int>(count);
        gzclose(f);
        if (!ok)
            throw DataError("short write to " + path);
        return;
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f)
        throw DataError("cannot open " + path + " for writing");
    f.write(static_cast<const char *>(bytes), static_cast<std::streamsize>(count));
    if (!f)
        throw DataError("short write to " + path);
}

struct Payload {
    std::vector<float> values;
    std::array<int64_t, 3> shape;
    std::array<double, 3> spacing;
    std::array<double, 3> origin;
};

template <typename T>
void decode_as(const unsigned char *src, int64_t count, bool swapped, double slope, double inter,
               std::vector<float> &out) {
    out.resize(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) {
        T raw;
        std::memcpy(&raw, src + static_cast<size_t>(i) * sizeof(T), sizeof(T));
        if (swapped)
            raw = bswap(raw);
        out[static_cast<size_t>(i)] = static_cast<float>(slope * static_cast<double>(raw) + inter);
    }
}

Payload load_nifti(const std::string &path) {
    const std::vector<unsigned char> buf = read_file(path);
    if (buf.size() < sizeof(NiftiHeader))
        throw FormatError(path + ": file shorter than a NIfTI-1 header (sizeof_hdr)");
    NiftiHeader h;
    std::memcpy(&h, buf.data(), sizeof h);
    bool swapped = false;
    if (h.sizeof_hdr != 348) {
        if (bswap(h.sizeof_hdr) != 348)
            throw FormatError(path + ": header field sizeof_hdr is " +
                              std::to_string(h.sizeof_hdr) + ", expected 348");
        swap_header(h);
        swapped = true;
    }
    if (std::memcmp(h.magic, "n+1", 4) != 0) {
        if (std::memcmp(h.magic, "ni1", 4) == 0)
            throw FormatError(path + ": magic 'ni1' (two-file NIfTI) is unsupported");
        throw FormatError(path + ": header field magic is not 'n+1'");
    }
    if (h.dim[0] < 3 || h.dim[0] > 7)
        throw FormatError(path + ": header field dim[0] is " + std::to_string(h.dim[0]) +
                          ", need a 3-D payload");
    for (int a = 4; a <= h.dim[0]; ++a)
        if (h.dim[a] > 1)
            throw FormatError(path + ": header field dim[" + std::to_string(a) + "] is " +
                              std::to_string(h.dim[a]) + ", need a 3-D payload");
    for (int a = 1; a <= 3; ++a)
        if (h.dim[a] < 1)
            throw FormatError(path + ": header field dim[" + std::to_string(a) +
                              "] must be positive");

    const int64_t nx = h.dim[1], ny = h.dim[2], nz = h.dim[3];
    const int64_t count = nx * ny * nz;
    size_t elem = 0;
    switch (h.datatype) {
    case kDtUint8:
        elem = 1;
        break;
    case kDtInt16:
    case kDtUint16:
        elem = 2;
        break;
    case kDtInt32:
    case kDtFloat32:
        elem = 4;
        break;
    case kDtFloat64:
        elem = 8;
        break;
    default:
        throw FormatError(path + ": header field datatype " + std::to_string(h.datatype) +
                          " is unsupported");
    }
    const size_t offset = static_cast<size_t>(h.vox_offset);
    if (h.vox_offset < 348.0f)
        throw FormatError(path + ": header field vox_offset " + std::to_string(h.vox_offset) +
                          " points inside the header");
    if (buf.size() < offset + static_cast<size_t>(count) * elem)
        throw FormatError(path + ": payload truncated (vox_offset + data exceeds file size)");

    double slope = static_cast<double>(h.scl_slope);
    double inter = static_cast<double>(h.scl_inter);
    if (slope == 0.0 || std::isnan(slope)) {
        slope = 1.0;
        inter = 0.0;
    }

    Payload p;
    p.shape = {nz, ny, nx};
    p.spacing = {static_cast<double>(h.pixdim[3]), static_cast<double>(h.pixdim[2]),
                 static_cast<double>(h.pixdim[1])};
    p.origin = {static_cast<double>(h.qoffset_z), static_cast<double>(h.qoffset_y),
                static_cast<double>(h.qoffset_x)};
    const unsigned char *src = buf.data() + offset;
    switch (h.datatype) {
    case kDtUint8:
        decode_as<uint8_t>(src, count, false, slope, inter, p.values);
        break;
    case kDtInt16:
        decode_as<int16_t>(src, count, swapped, slope, inter, p.values);
        break;
    case kDtUint16:
        decode_as<uint16_t>(src, count, swapped, slope, inter, p.values);
        break;
    case kDtInt32:
        decode_as<int32_t>(src, count, swapped, slope, inter, p.values);
        break;
    case kDtFloat32:
        decode_as<float>(src, count, swapped, slope, inter, p.values);
        break;
    case kDtFloat64:
        decode_as<double>(src, count, swapped, slope, inter, p.values);
        break;
    }
    return p;
}

void save_nifti(const std::string &path, const void *payload, size_t payload_bytes,
                int16_t datatype, int16_t bitpix, const std::array<int64_t, 3> &shape,
                const std::array<double, 3> &spacing, const std::array<double, 3> &origin) {
    NiftiHeader h;
    std::memset(&h, 0, sizeof h);
    h.sizeof_hdr = 348;
    h.dim[0] = 3;
    h.dim[1] = static_cast<int16_t>(shape[2]);
    h.dim[2] = static_cast<int16_t>(shape[1]);
    h.dim[3] = static_cast<int16_t>(shape[0]);
    for (int a = 4; a < 8; ++a)
        h.dim[a] = 1;
    h.datatype = datatype;
    h.bitpix = bitpix;
    h.pixdim[0] = 1.0f;
    h.pixdim[1] = static_cast<float>(spacing[2]);
    h.pixdim[2] = static_cast<float>(spacing[1]);
    h.pixdim[3] = static_cast<float>(spacing[0]);
    h.vox_offset = 352.0f;
    h.scl_slope = 1.0f;
    h.scl_inter = 0.0f;
    h.qform_code = 1;
    h.quatern_b = h.quatern_c = h.quatern_d = 0.0f;
    h.qoffset_x = static_cast<float>(origin[2]);
    h.qoffset_y = static_cast<float>(origin[1]);
    h.qoffset_z = static_cast<float>(origin[0]);
    h.srow_x[0] = static_cast<float>(spacing[2]);
    h.srow_y[1] = static_cast<float>(spacing[1]);
    h.srow_z[2] = static_cast<float>(spacing[0]);
    h.srow_x[3] = static_cast<float>(origin[2]);
    h.srow_y[3] = static_cast<float>(origin[1]);
    h.srow_z[3] = static_cast<float>(origin[0]);
    h.sform_code = 1;
    std::memcpy(h.magic, "n+1", 4);

    std::vector<unsigned char> out(352 + payload_bytes, 0);
    std::memcpy(out.data(), &h, sizeof h); // bytes 348..351 stay zero (no extensions)
    std::memcpy(out.data() + 352, payload, payload_bytes);
    write_file(path, out.data(), out.size());
}

// ---------------------------------------------------------------------------
// Raw payload + text sidecar.

struct Sidecar {
    std::vector<int64_t> shape;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::array<double, 3> origin{0.0, 0.0, 0.0};
    std::string dtype;
    std::string convention;
};

Sidecar read_sidecar(const std::string &payload_path) {
    const std::string path = payload_path + ".txt";
    std::ifstream f(path);
    if (!f)
        throw DataError("cannot open sidecar " + path);
    Sidecar sc;
    std::string line;
    while (std::getline(f, line)) {
        const size_t colon = line.find(':');
        if (colon == std::string::npos)
            continue;
        const std::string key = line.substr(0, colon);
        std::istringstream rest(line.substr(colon + 1));
        if (key == "shape") {
            int64_t d;
            while (rest >> d)
                sc.shape.push_back(d);
        } else if (key == "spacing") {
            rest >> sc.spacing[0] >> sc.spacing[1] >> sc.spacing[2];
        } else if (key == "origin") {
            rest >> sc.origin[0] >> sc.origin[1] >> sc.origin[2];
        } else if (key == "dtype") {
            rest >> sc.dtype;
        } else if (key == "convention") {
            rest >> sc.convention;
        }
    }
    if (sc.shape.empty())
        throw FormatError(path + ": sidecar is missing the shape field");
    if (sc.dtype.empty())
        throw FormatError(path + ": sidecar is missing the dtype field");
    return sc;
}

void write_sidecar(const std::string &payload_path, const std::vector<int64_t> &shape,
                   const std::array<double, 3> &spacing, const std::array<double, 3> &origin,
                   const std::string &dtype, const std::string &convention) {
    std::ostringstream out;
    out << "shape:";
    for (const int64_t d : shape)
        out << " " << d;
    char num[64];
    out << "\nspacing:";
    for (const double s : spacing) {
        std::snprintf(num, sizeof num, " %.17g", s);
        out << num;
    }
    out << "\norigin:";
    for (const double o : origin) {
        std::snprintf(num, sizeof num, " %.17g", o);
        out << num;
    }
    out << "\ndtype: " << dtype << "\n";
    if (!convention.empty())
        out << "convention: " << convention << "\n";
    const std::string text = out.str();
    write_file(payload_path + ".txt", text.data(), text.size());
}

void check_payload_size(const std::string &path, size_t got, size_t want) {
    if (got != want)
        throw FormatError(path + ": payload holds " + std::to_string(got) +
                          " bytes, sidecar shape implies " + std::to_string(want));
}

} // namespace

Volume load_volume(const std::string &path) {
    Volume v;
    if (is_nifti_path(path)) {
        Payload p = load_nifti(path);
        v.data = Tensor({p.shape[0], p.shape[1], p.shape[2]});
        std::memcpy(v.data.data(), p.values.data(), p.values.size() * sizeof(float));
        v.spacing = p.spacing;
        v.origin = p.origin;
        return v;
    }
    const Sidecar sc = read_sidecar(path);
    if (sc.shape.size() != 3)
        throw FormatError(path + ".txt: shape field has " + std::to_string(sc.shape.size()) +
                          " dims, a volume needs 3");
    if (sc.dtype != "float32")
        throw FormatError(path + ".txt: dtype is '" + sc.dtype + "', a volume needs float32");
    const std::vector<unsigned char> buf = read_file(path);
    v.data = Tensor({sc.shape[0], sc.shape[1], sc.shape[2]});
    check_payload_size(path, buf.size(), static_cast<size_t>(v.data.numel()) * sizeof(float));
    std::memcpy(v.data.data(), buf.data(), buf.size());
    v.spacing = sc.spacing;
    v.origin = sc.origin;
    return v;
}

void save_volume(const std::string &path, const Volume &v) {
    if (v.data.rank() != 3)
        throw ValidationError("save_volume expects (D,H,W) data, got " + v.data.shape_str());
    if (is_nifti_path(path)) {
        save_nifti(path, v.data.data(), static_cast<size_t>(v.data.numel()) * sizeof(float),
                   kDtFloat32, 32, {v.data.dim(0), v.data.dim(1), v.data.dim(2)}, v.spacing,
                   v.origin);
        return;
    }
    write_file(path, v.data.data(), static_cast<size_t>(v.data.numel()) * sizeof(float));
    write_sidecar(path, v.data.shape(), v.spacing, v.origin, "float32", "");
}

LabelMask load_mask(const std::string &path) {
    LabelMask m;
    if (is_nifti_path(path)) {
        Payload p = load_nifti(path);
        m.shape = {p.shape[0], p.shape[1], p.shape[2]};
        m.data.resize(p.values.size());
        for (size_t i = 0; i < p.values.size(); ++i)
            m.data[i] = static_cast<int32_t>(std::llround(static_cast<double>(p.values[i])));
        m.spacing = p.spacing;
        m.origin = p.origin;
        return m;
    }
    const Sidecar sc = read_sidecar(path);
    if (sc.shape.size() != 3)
        throw FormatError(path + ".txt: shape field has " + std::to_string(sc.shape.size()) +
                          " dims, a mask needs 3");
    if (sc.dtype != "int32")
        throw FormatError(path + ".txt: dtype is '" + sc.dtype + "', a mask needs int32");
    const std::vector<unsigned char> buf = read_file(path);
    const size_t count = static_cast<size_t>(sc.shape[0] * sc.shape[1] * sc.shape[2]);
    check_payload_size(path, buf.size(), count * sizeof(int32_t));
    m.shape = sc.shape;
    m.data.resize(count);
    std::memcpy(m.data.data(), buf.data(), buf.size());
    m.spacing = sc.spacing;
    m.origin = sc.origin;
    return m;
}

void save_mask(const std::string &path, const LabelMask &m) {
    if (m.shape.size() != 3)
        throw ValidationError("save_mask expects a 3-D mask");
    if (is_nifti_path(path)) {
        save_nifti(path, m.data.data(), m.data.size() * sizeof(int32_t), kDtInt32, 32,
                   {m.shape[0], m.shape[1], m.shape[2]}, m.spacing, m.origin);
        return;
    }
    write_file(path, m.data.data(), m.data.size() * sizeof(int32_t));
    write_sidecar(path, m.shape, m.spacing, m.origin, "int32", "");
}

Tensor load_field(const std::string &path) {
    const Sidecar sc = read_sidecar(path);
    if (sc.shape.size() != 4 || sc.shape[0] != 3)
        throw FormatError(path + ".txt: shape field must be 3-channel (3,D,H,W) for a field");
    if (sc.dtype != "float32")
        throw FormatError(path + ".txt: dtype is '" + sc.dtype + "', a field needs float32");
    if (sc.convention != "normalized-displacement")
        throw FormatError(path + ".txt: convention field is '" + sc.convention +
                          "', expected normalized-displacement");
    const std::vector<unsigned char> buf = read_file(path);
    Tensor f({sc.shape[0], sc.shape[1], sc.shape[2], sc.shape[3]});
    check_payload_size(path, buf.size(), static_cast<size_t>(f.numel()) * sizeof(float));
    std::memcpy(f.data(), buf.data(), buf.size());
    return f;
}

void save_field(const std::string &path, const Tensor &field) {
    check_is_field(field);
    write_file(path, field.data(), static_cast<size_t>(field.numel()) * sizeof(float));
    write_sidecar(path, field.shape(), {1.0, 1.0, 1.0}, {0.0, 0.0, 0.0}, "float32",
                  "normalized-displacement");
}

void save_png_rgb(const std::string &path, int64_t width, int64_t height,
                  const std::vector<uint8_t> &rgb) {
    if (width < 1 || height < 1)
        throw ValidationError("save_png_rgb needs positive dimensions");
    if (rgb.size() != static_cast<size_t>(3 * width * height))
        throw ValidationError("save_png_rgb buffer size does not match 3*width*height");

    // scanlines, each prefixed with filter byte 0 (None)
    std::vector<unsigned char> raw;
    raw.reserve(static_cast<size_t>(height * (1 + 3 * width)));
    for (int64_t y = 0; y < height; ++y) {
        raw.push_back(0);
        const uint8_t *row = rgb.data() + 3 * width * y;
        raw.insert(raw.end(), row, row + 3 * width);
    }
    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> comp(comp_len);
    if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
        throw DataError("PNG deflate failed for " + path);
    comp.resize(comp_len);

    std::vector<unsigned char> out;
    auto put_u32 = [&out](uint32_t v) {
        out.push_back(static_cast<unsigned char>(v >> 24));
        out.push_back(static_cast<unsigned char>(v >> 16));
        out.push_back(static_cast<unsigned char>(v >> 8));
        out.push_back(static_cast<unsigned char>(v));
    };
    auto put_chunk = [&](const char *type, const unsigned char *data, size_t n) {
        put_u32(static_cast<uint32_t>(n));
        const size_t body = out.size();
        out.insert(out.end(), type, type + 4);
        if (n > 0)
            out.insert(out.end(), data, data + n);
        put_u32(static_cast<uint32_t>(
            crc32(0L, out.data() + body, static_cast<uInt>(4 + n))));
    };

    static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    out.insert(out.end(), sig, sig + 8);
    unsigned char ihdr[13];
    ihdr[0] = static_cast<unsigned char>(width >> 24);
    ihdr[1] = static_cast<unsigned char>(width >> 16);
    ihdr[2] = static_cast<unsigned char>(width >> 8);
    ihdr[3] = static_cast<unsigned char>(width);
    ihdr[4] = static_cast<unsigned char>(height >> 24);
    ihdr[5] = static_cast<unsigned char>(height >> 16);
    ihdr[6] = static_cast<unsigned char>(height >> 8);
    ihdr[7] = static_cast<unsigned char>(height);
    ihdr[8] = 8;  // bit depth
    ihdr[9] = 2;  // truecolor
    ihdr[10] = ihdr[11] = ihdr[12] = 0;
    put_chunk("IHDR", ihdr, sizeof ihdr);
    put_chunk("IDAT", comp.data(), comp.size());
    put_chunk("IEND", nullptr, 0);
    write_file(path, out.data(), out.size());
}

} // namespace ldreg
