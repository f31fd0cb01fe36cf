#include "roimae/nifti_io.hpp"

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>
#include <vector>

namespace roimae {

namespace {

// zlib's gz* layer reads both plain and gzip files; gzip is detected from
// the 0x1F 0x8B leading bytes.
std::vector<std::uint8_t> read_all_bytes(const std::string& path) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw io_error(io_error::code::open_failed, "cannot open " + path);
    std::vector<std::uint8_t> out;
    std::uint8_t chunk[1 << 16];
    int n;
    while ((n = gzread(f, chunk, sizeof chunk)) > 0) {
        out.insert(out.end(), chunk, chunk + n);
    }
    bool bad = n < 0;
    gzclose(f);
    if (bad) throw io_error(io_error::code::truncated_data, "decompression failed for " + path);
    return out;
}

template <typename T>
T swap_bytes(T v) {
    auto bytes = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
}

template <typename T>
T read_field(const std::uint8_t* buf, std::size_t off, bool swap) {
    T v;
    std::memcpy(&v, buf + off, sizeof(T));
    return swap ? swap_bytes(v) : v;
}

constexpr std::size_t kHeaderSize = 348;

// NIfTI-1 field offsets.
constexpr std::size_t kOffSizeofHdr = 0;
constexpr std::size_t kOffDim = 40;
constexpr std::size_t kOffDatatype = 70;
constexpr std::size_t kOffBitpix = 72;
constexpr std::size_t kOffPixdim = 76;
constexpr std::size_t kOffVoxOffset = 108;
constexpr std::size_t kOffSclSlope = 112;
constexpr std::size_t kOffSclInter = 116;
constexpr std::size_t kOffSformCode = 254;
constexpr std::size_t kOffSrowX = 280;
constexpr std::size_t kOffMagic = 344;

NiftiHeader parse_header(const std::vector<std::uint8_t>& bytes, const std::string& path) {
    if (bytes.size() < kHeaderSize) {
        throw io_error(io_error::code::truncated_data,
                       path + ": file shorter than the 348-byte header");
    }
    const std::uint8_t* b = bytes.data();

    NiftiHeader h;
    std::memcpy(h.magic, b + kOffMagic, 4);
    if (std::memcmp(h.magic, "ni1\0", 4) == 0) {
        throw io_error(io_error::code::paired_file,
                       path + ": magic \"ni1\" (paired .hdr/.img) not supported");
    }
    if (std::memcmp(h.magic, "n+1\0", 4) != 0) {
        throw io_error(io_error::code::bad_magic, path + ": magic is not \"n+1\"");
    }

    // Endianness from dim[0]: a sane rank is 1..7 in native order.
    std::int16_t dim0 = read_field<std::int16_t>(b, kOffDim, false);
    h.swapped = (dim0 < 1 || dim0 > 7);

    if (read_field<std::int32_t>(b, kOffSizeofHdr, h.swapped) != 348) {
        throw io_error(io_error::code::bad_header_size, path + ": sizeof_hdr is not 348");
    }
    for (int i = 0; i < 8; ++i) {
        h.dim[i] = read_field<std::int16_t>(b, kOffDim + 2 * static_cast<std::size_t>(i), h.swapped);
        h.pixdim[i] = read_field<float>(b, kOffPixdim + 4 * static_cast<std::size_t>(i), h.swapped);
    }
    h.datatype = read_field<std::int16_t>(b, kOffDatatype, h.swapped);
    h.bitpix = read_field<std::int16_t>(b, kOffBitpix, h.swapped);
    h.vox_offset = read_field<float>(b, kOffVoxOffset, h.swapped);
    h.scl_slope = read_field<float>(b, kOffSclSlope, h.swapped);
    h.scl_inter = read_field<float>(b, kOffSclInter, h.swapped);
    h.sform_code = read_field<std::int16_t>(b, kOffSformCode, h.swapped);
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 4; ++c) {
            h.srow[r][c] = read_field<float>(
                b, kOffSrowX + 16 * static_cast<std::size_t>(r) + 4 * static_cast<std::size_t>(c),
                h.swapped);
        }
    }
    return h;
}

int element_size(std::int16_t datatype) {
    switch (datatype) {
        case 2: return 1;   // uint8
        case 4: return 2;   // int16
        case 16: return 4;  // float32
        case 64: return 8;  // float64
        case 512: return 2; // uint16
        default: return 0;
    }
}

struct Geometry {
    GridDims dims;
    std::array<double, 3> spacing;
    double tr;
    Affine affine;
};

Geometry check_geometry(const NiftiHeader& h, const std::string& path, bool allow_4d) {
    if (h.dim[0] != 3 && !(allow_4d && h.dim[0] == 4)) {
        throw io_error(io_error::code::bad_rank,
                       path + ": dim[0] = " + std::to_string(h.dim[0]) +
                           (allow_4d ? ", need rank 3 or 4" : ", need rank 3"));
    }
    if (element_size(h.datatype) == 0) {
        throw io_error(io_error::code::unsupported_datatype,
                       path + ": datatype code " + std::to_string(h.datatype));
    }
    if (h.vox_offset < 352.0f) {
        throw io_error(io_error::code::bad_vox_offset,
                       path + ": vox_offset " + std::to_string(h.vox_offset) + " < 352");
    }

    Geometry g;
    g.dims = GridDims{h.dim[1], h.dim[2], h.dim[3], h.dim[0] == 4 ? h.dim[4] : 1};
    if (!g.dims.valid()) {
        throw io_error(io_error::code::bad_rank, path + ": nonpositive entry in dim[]");
    }
    for (int i = 0; i < 3; ++i) {
        double s = h.pixdim[i + 1];
        g.spacing[static_cast<std::size_t>(i)] = s > 0.0 ? s : 1.0;
    }
    g.tr = h.pixdim[4] > 0.0f ? h.pixdim[4] : 1.0;

    if (h.sform_code > 0) {
        g.affine = Affine::identity();
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 4; ++c) g.affine.at(r, c) = h.srow[r][c];
        }
    } else {
        g.affine = Affine::scaling(g.spacing[0], g.spacing[1], g.spacing[2]);
    }
    return g;
}

const std::uint8_t* data_section(const std::vector<std::uint8_t>& bytes, const NiftiHeader& h,
                                 index_t count, const std::string& path) {
    const auto offset = static_cast<std::size_t>(h.vox_offset);
    const auto need = static_cast<std::size_t>(count) *
                      static_cast<std::size_t>(element_size(h.datatype));
    if (bytes.size() < offset + need) {
        throw io_error(io_error::code::truncated_data,
                       path + ": data section holds " +
                           std::to_string(bytes.size() > offset ? bytes.size() - offset : 0) +
                           " bytes, need " + std::to_string(need));
    }
    return bytes.data() + offset;
}

template <typename Raw>
void convert_to_float(const std::uint8_t* src, index_t count, bool swap, double slope,
                      double inter, bool apply_scale, std::vector<float>& out) {
    out.resize(static_cast<std::size_t>(count));
    for (index_t i = 0; i < count; ++i) {
        Raw raw;
        std::memcpy(&raw, src + static_cast<std::size_t>(i) * sizeof(Raw), sizeof(Raw));
        if (swap) raw = swap_bytes(raw);
        double v = static_cast<double>(raw);
        if (apply_scale) v = slope * v + inter;
        out[static_cast<std::size_t>(i)] = static_cast<float>(v);
    }
}

void append_field(std::vector<std::uint8_t>& buf, const void* p, std::size_t n) {
    const auto* c = static_cast<const std::uint8_t*>(p);
    buf.insert(buf.end(), c, c + n);
}

template <typename T>
void append_value(std::vector<std::uint8_t>& buf, T v) {
    append_field(buf, &v, sizeof v);
}

} // namespace

NiftiHeader read_nifti_header(const std::string& path) {
    return parse_header(read_all_bytes(path), path);
}

Volume4D read_volume(const std::string& path) {
    const auto bytes = read_all_bytes(path);
    const NiftiHeader h = parse_header(bytes, path);
    const Geometry g = check_geometry(h, path, /*allow_4d=*/true);

    Volume4D vol;
    vol.dims = g.dims;
    vol.spacing_mm = g.spacing;
    vol.tr_s = g.tr;
    vol.affine = g.affine;

    const index_t count = g.dims.total();
    const std::uint8_t* src = data_section(bytes, h, count, path);
    const bool scale = h.scl_slope != 0.0f;
    const double slope = h.scl_slope, inter = h.scl_inter;

    switch (h.datatype) {
        case 2: convert_to_float<std::uint8_t>(src, count, h.swapped, slope, inter, scale, vol.data); break;
        case 4: convert_to_float<std::int16_t>(src, count, h.swapped, slope, inter, scale, vol.data); break;
        case 16: convert_to_float<float>(src, count, h.swapped, slope, inter, scale, vol.data); break;
        case 64: convert_to_float<double>(src, count, h.swapped, slope, inter, scale, vol.data); break;
        case 512: convert_to_float<std::uint16_t>(src, count, h.swapped, slope, inter, scale, vol.data); break;
        default: break; // unreachable, check_geometry rejects others
    }
    validate(vol);
    return vol;
}

LabelVolume read_labels(const std::string& path) {
    const auto bytes = read_all_bytes(path);
    const NiftiHeader h = parse_header(bytes, path);

    if (h.datatype == 16 || h.datatype == 64) {
        throw io_error(io_error::code::label_datatype,
                       path + ": datatype " + std::to_string(h.datatype) +
                           " is floating point; labels must be integer");
    }
    const Geometry g = check_geometry(h, path, /*allow_4d=*/false);
    if (h.scl_slope != 0.0f && (h.scl_slope != 1.0f || h.scl_inter != 0.0f)) {
        std::cerr << "warning: " << path << ": scl_slope/scl_inter ignored for label data\n";
    }

    LabelVolume labels;
    labels.dims = g.dims;
    labels.spacing_mm = g.spacing;
    labels.affine = g.affine;

    const index_t count = g.dims.spatial();
    const std::uint8_t* src = data_section(bytes, h, count, path);
    labels.labels.resize(static_cast<std::size_t>(count));
    for (index_t i = 0; i < count; ++i) {
        std::int64_t v = 0;
        if (h.datatype == 2) {
            v = src[i];
        } else {
            std::uint16_t raw;
            std::memcpy(&raw, src + 2 * static_cast<std::size_t>(i), 2);
            if (h.swapped) raw = swap_bytes(raw);
            v = h.datatype == 4 ? static_cast<std::int16_t>(raw) : raw;
        }
        if (v < 0) {
            throw io_error(io_error::code::negative_label,
                           path + ": negative label " + std::to_string(v) + " at voxel " +
                               std::to_string(i));
        }
        labels.labels[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(v);
    }
    validate(labels);
    return labels;
}

void write_volume(const Volume4D& vol, const std::string& path) {
    validate(vol);

    std::vector<std::uint8_t> buf;
    buf.reserve(kHeaderSize + 4 + vol.data.size() * 4);

    append_value<std::int32_t>(buf, 348);              // sizeof_hdr
    buf.insert(buf.end(), 28, 0);                      // data_type, db_name
    append_value<std::int32_t>(buf, 0);                // extents
    append_value<std::int16_t>(buf, 0);                // session_error
    buf.push_back('r');                                // regular
    buf.push_back(0);                                  // dim_info
    const std::int16_t dim[8] = {4,
                                 static_cast<std::int16_t>(vol.dims.nx),
                                 static_cast<std::int16_t>(vol.dims.ny),
                                 static_cast<std::int16_t>(vol.dims.nz),
                                 static_cast<std::int16_t>(vol.dims.nt),
                                 0, 0, 0};
    append_field(buf, dim, sizeof dim);
    for (int i = 0; i < 3; ++i) append_value<float>(buf, 0); // intent_p1..p3
    append_value<std::int16_t>(buf, 0);                // intent_code
    append_value<std::int16_t>(buf, 16);               // datatype: float32
    append_value<std::int16_t>(buf, 32);               // bitpix
    append_value<std::int16_t>(buf, 0);                // slice_start
    const float pixdim[8] = {1.0f,
                             static_cast<float>(vol.spacing_mm[0]),
                             static_cast<float>(vol.spacing_mm[1]),
                             static_cast<float>(vol.spacing_mm[2]),
                             static_cast<float>(vol.tr_s),
                             0, 0, 0};
    append_field(buf, pixdim, sizeof pixdim);
    append_value<float>(buf, 352.0f);                  // vox_offset
    append_value<float>(buf, 1.0f);                    // scl_slope
    append_value<float>(buf, 0.0f);                    // scl_inter
    append_value<std::int16_t>(buf, 0);                // slice_end
    buf.push_back(0);                                  // slice_code
    buf.push_back(0x0a);                               // xyzt_units: mm | sec
    for (int i = 0; i < 4; ++i) append_value<float>(buf, 0); // cal_max..toffset
    append_value<std::int32_t>(buf, 0);                // glmax
    append_value<std::int32_t>(buf, 0);                // glmin
    buf.insert(buf.end(), 104, 0);                     // descrip, aux_file
    append_value<std::int16_t>(buf, 0);                // qform_code
    append_value<std::int16_t>(buf, 1);                // sform_code
    for (int i = 0; i < 6; ++i) append_value<float>(buf, 0); // quatern/qoffset
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 4; ++c) {
            append_value<float>(buf, static_cast<float>(vol.affine.at(r, c)));
        }
    }
    buf.insert(buf.end(), 16, 0);                      // intent_name
    append_field(buf, "n+1\0", 4);                     // magic
    buf.insert(buf.end(), 4, 0);                       // extension flag

    append_field(buf, vol.data.data(), vol.data.size() * 4);

    const bool gz = path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
    if (gz) {
        gzFile f = gzopen(path.c_str(), "wb");
        if (!f) throw io_error(io_error::code::write_failed, "cannot open " + path);
        const bool ok =
            gzwrite(f, buf.data(), static_cast<unsigned>(buf.size())) ==
            static_cast<int>(buf.size());
        gzclose(f);
        if (!ok) throw io_error(io_error::code::write_failed, "short write to " + path);
    } else {
        std::ofstream f(path, std::ios::binary);
        f.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size()));
        if (!f) throw io_error(io_error::code::write_failed, "short write to " + path);
    }
}

// ---------------------------------------------------------------------------
// .v4d raw interchange format
// ---------------------------------------------------------------------------

namespace {

struct V4dMeta {
    std::string kind;
    GridDims dims;
    std::array<double, 3> spacing{1, 1, 1};
    double tr = 1.0;
    Affine affine = Affine::identity();
};

V4dMeta read_v4d_meta(const std::string& path) {
    std::ifstream f(path + ".meta");
    if (!f) throw io_error(io_error::code::open_failed, "cannot open " + path + ".meta");

    V4dMeta m;
    std::string line, tag;
    int affine_row = 0;
    int version = 0;
    while (std::getline(f, line)) {
        std::istringstream is(line);
        if (!(is >> tag)) continue;
        if (tag == "v4d") {
            is >> version;
        } else if (tag == "kind") {
            is >> m.kind;
        } else if (tag == "dims") {
            is >> m.dims.nx >> m.dims.ny >> m.dims.nz >> m.dims.nt;
        } else if (tag == "spacing") {
            is >> m.spacing[0] >> m.spacing[1] >> m.spacing[2];
        } else if (tag == "tr") {
            is >> m.tr;
        } else if (tag == "affine") {
            if (affine_row < 4) {
                for (int c = 0; c < 4; ++c) is >> m.affine.at(affine_row, c);
                ++affine_row;
            }
        } else {
            throw io_error(io_error::code::bad_metadata,
                           path + ".meta: unknown field \"" + tag + "\"");
        }
        if (is.fail()) {
            throw io_error(io_error::code::bad_metadata,
                           path + ".meta: malformed \"" + tag + "\" line");
        }
    }
    if (version != 1) {
        throw io_error(io_error::code::bad_metadata, path + ".meta: missing or bad v4d version");
    }
    if (m.kind != "volume" && m.kind != "labels") {
        throw io_error(io_error::code::bad_metadata, path + ".meta: kind must be volume or labels");
    }
    if (!m.dims.valid()) {
        throw io_error(io_error::code::bad_metadata, path + ".meta: bad dims");
    }
    if (affine_row != 4) {
        throw io_error(io_error::code::bad_metadata, path + ".meta: need 4 affine rows");
    }
    return m;
}

void write_v4d_meta(const std::string& path, const V4dMeta& m) {
    std::ofstream f(path + ".meta");
    if (!f) throw io_error(io_error::code::write_failed, "cannot open " + path + ".meta");
    f.precision(17);
    f << "v4d 1\n";
    f << "kind " << m.kind << "\n";
    f << "dims " << m.dims.nx << " " << m.dims.ny << " " << m.dims.nz << " " << m.dims.nt << "\n";
    f << "spacing " << m.spacing[0] << " " << m.spacing[1] << " " << m.spacing[2] << "\n";
    f << "tr " << m.tr << "\n";
    for (int r = 0; r < 4; ++r) {
        f << "affine";
        for (int c = 0; c < 4; ++c) f << " " << m.affine.at(r, c);
        f << "\n";
    }
    if (!f) throw io_error(io_error::code::write_failed, "short write to " + path + ".meta");
}

std::vector<std::uint8_t> read_blob(const std::string& path, std::size_t expect) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error(io_error::code::open_failed, "cannot open " + path);
    std::vector<std::uint8_t> bytes(expect);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(expect));
    if (static_cast<std::size_t>(f.gcount()) != expect) {
        throw io_error(io_error::code::truncated_data,
                       path + ": blob holds " + std::to_string(f.gcount()) + " bytes, need " +
                           std::to_string(expect));
    }
    return bytes;
}

} // namespace

Volume4D read_v4d(const std::string& path) {
    const V4dMeta m = read_v4d_meta(path);
    if (m.kind != "volume") {
        throw io_error(io_error::code::bad_metadata, path + ": kind is not volume");
    }
    Volume4D vol;
    vol.dims = m.dims;
    vol.spacing_mm = m.spacing;
    vol.tr_s = m.tr;
    vol.affine = m.affine;
    const auto bytes = read_blob(path, static_cast<std::size_t>(m.dims.total()) * 4);
    vol.data.resize(static_cast<std::size_t>(m.dims.total()));
    std::memcpy(vol.data.data(), bytes.data(), bytes.size());
    validate(vol);
    return vol;
}

void write_v4d(const Volume4D& vol, const std::string& path) {
    validate(vol);
    V4dMeta m{"volume", vol.dims, vol.spacing_mm, vol.tr_s, vol.affine};
    write_v4d_meta(path, m);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error(io_error::code::write_failed, "cannot open " + path);
    f.write(reinterpret_cast<const char*>(vol.data.data()),
            static_cast<std::streamsize>(vol.data.size() * 4));
    if (!f) throw io_error(io_error::code::write_failed, "short write to " + path);
}

LabelVolume read_v4d_labels(const std::string& path) {
    const V4dMeta m = read_v4d_meta(path);
    if (m.kind != "labels") {
        throw io_error(io_error::code::bad_metadata, path + ": kind is not labels");
    }
    LabelVolume labels;
    labels.dims = m.dims;
    labels.spacing_mm = m.spacing;
    labels.affine = m.affine;
    const auto bytes = read_blob(path, static_cast<std::size_t>(m.dims.spatial()) * 2);
    labels.labels.resize(static_cast<std::size_t>(m.dims.spatial()));
    std::memcpy(labels.labels.data(), bytes.data(), bytes.size());
    validate(labels);
    return labels;
}

void write_v4d_labels(const LabelVolume& labels, const std::string& path) {
    validate(labels);
    V4dMeta m{"labels", labels.dims, labels.spacing_mm, 1.0, labels.affine};
    write_v4d_meta(path, m);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error(io_error::code::write_failed, "cannot open " + path);
    f.write(reinterpret_cast<const char*>(labels.labels.data()),
            static_cast<std::streamsize>(labels.labels.size() * 2));
    if (!f) throw io_error(io_error::code::write_failed, "short write to " + path);
}

namespace {
bool has_suffix(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() &&
           s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}
} // namespace

Volume4D load_volume(const std::string& path) {
    return has_suffix(path, ".v4d") ? read_v4d(path) : read_volume(path);
}

LabelVolume load_labels(const std::string& path) {
    return has_suffix(path, ".v4d") ? read_v4d_labels(path) : read_labels(path);
}

} // namespace roimae
