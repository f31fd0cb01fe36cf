#ifndef ROIMAE_NIFTI_IO_HPP
#define ROIMAE_NIFTI_IO_HPP

#include <cstdint>
#include <string>

#include "roimae/volume.hpp"

// NIfTI-1 single-file reader/writer (plain or gzip), plus the .v4d raw
// interchange format used by the synthetic benchmark and the tests.
//
// Supported NIfTI datatypes: uint8 (2), int16 (4), float32 (16),
// float64 (64), uint16 (512). Files are rank 3 or 4, magic "n+1\0";
// paired .hdr/.img ("ni1\0"), NIfTI-2 and extensions are rejected.
// The sform (when sform_code > 0) is the authoritative affine; qform
// quaternions are ignored.

namespace roimae {

// Parsed header subset, after endian correction.
struct NiftiHeader {
    std::int16_t dim[8] = {0};
    std::int16_t datatype = 0;
    std::int16_t bitpix = 0;
    float pixdim[8] = {0};
    float vox_offset = 0;
    float scl_slope = 0;
    float scl_inter = 0;
    std::int16_t sform_code = 0;
    float srow[3][4] = {{0}};
    char magic[4] = {0};
    bool swapped = false; // source file had opposite endianness
};

NiftiHeader read_nifti_header(const std::string& path);

Volume4D read_volume(const std::string& path);
LabelVolume read_labels(const std::string& path);

// Emits float32, scl_slope 1, scl_inter 0, vox_offset 352, sform from the
// affine. A ".gz" suffix selects gzip output.
void write_volume(const Volume4D& vol, const std::string& path);

// Raw interchange format: "<name>.v4d" is a little-endian blob (float32
// for volumes, uint16 for labels) and "<name>.v4d.meta" a text sidecar.
// Field order in the sidecar:
//   v4d 1
//   kind volume|labels
//   dims nx ny nz nt
//   spacing sx sy sz
//   tr <seconds>
//   affine <row 0: 4 numbers>   (four affine lines, row-major)
Volume4D read_v4d(const std::string& path);
void write_v4d(const Volume4D& vol, const std::string& path);
LabelVolume read_v4d_labels(const std::string& path);
void write_v4d_labels(const LabelVolume& labels, const std::string& path);

// Extension dispatch: .v4d -> raw format, anything else -> NIfTI.
Volume4D load_volume(const std::string& path);
LabelVolume load_labels(const std::string& path);

} // namespace roimae

#endif
