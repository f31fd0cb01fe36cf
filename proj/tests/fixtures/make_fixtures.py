#!/usr/bin/env python3
"""Regenerates the NIfTI-1 fixture corpus in this directory.

Files are assembled byte-by-byte from the NIfTI-1 header layout (348-byte
header, 4-byte extension flag, data at vox_offset) so they are independent
of the C++ reader under test. Each malformed file targets one specific
error path of the reader.
"""

import gzip
import struct
from pathlib import Path

HERE = Path(__file__).resolve().parent


def header(dim, datatype, bitpix, pixdim, vox_offset=352.0, scl_slope=1.0,
           scl_inter=0.0, sform_code=1, srow=None, magic=b"n+1\x00",
           sizeof_hdr=348, endian="<"):
    if srow is None:
        srow = [[pixdim[1], 0, 0, 0], [0, pixdim[2], 0, 0], [0, 0, pixdim[3], 0]]
    e = endian
    h = b""
    h += struct.pack(e + "i", sizeof_hdr)          # sizeof_hdr
    h += b"\x00" * 10                              # data_type
    h += b"\x00" * 18                              # db_name
    h += struct.pack(e + "i", 0)                   # extents
    h += struct.pack(e + "h", 0)                   # session_error
    h += b"r"                                      # regular
    h += b"\x00"                                   # dim_info
    h += struct.pack(e + "8h", *dim)               # dim
    h += struct.pack(e + "3f", 0, 0, 0)            # intent_p1..p3
    h += struct.pack(e + "h", 0)                   # intent_code
    h += struct.pack(e + "h", datatype)            # datatype
    h += struct.pack(e + "h", bitpix)              # bitpix
    h += struct.pack(e + "h", 0)                   # slice_start
    h += struct.pack(e + "8f", *pixdim)            # pixdim
    h += struct.pack(e + "f", vox_offset)          # vox_offset
    h += struct.pack(e + "f", scl_slope)           # scl_slope
    h += struct.pack(e + "f", scl_inter)           # scl_inter
    h += struct.pack(e + "h", 0)                   # slice_end
    h += b"\x00"                                   # slice_code
    h += b"\x0a"                                   # xyzt_units (mm | sec)
    h += struct.pack(e + "4f", 0, 0, 0, 0)         # cal_max..toffset
    h += struct.pack(e + "2i", 0, 0)               # glmax, glmin
    h += b"\x00" * 80                              # descrip
    h += b"\x00" * 24                              # aux_file
    h += struct.pack(e + "h", 0)                   # qform_code
    h += struct.pack(e + "h", sform_code)          # sform_code
    h += struct.pack(e + "6f", 0, 0, 0, 0, 0, 0)   # quatern/qoffset
    h += struct.pack(e + "4f", *srow[0])           # srow_x
    h += struct.pack(e + "4f", *srow[1])           # srow_y
    h += struct.pack(e + "4f", *srow[2])           # srow_z
    h += b"\x00" * 16                              # intent_name
    h += magic                                     # magic
    assert len(h) == 348, len(h)
    return h


def single_file(name, dim, datatype, bitpix, pixdim, payload, **kw):
    body = header(dim, datatype, bitpix, pixdim, **kw) + b"\x00" * 4 + payload
    (HERE / name).write_bytes(body)
    return body


def main():
    e = "<"

    # --- well-formed fixtures -------------------------------------------
    # 1x1x1x1 float32 volume holding 7.0, TR 0.8 s, 2 mm spacing.
    pix = [1.0, 2.0, 2.0, 2.0, 0.8, 0, 0, 0]
    v7 = single_file("value7.nii", [4, 1, 1, 1, 1, 0, 0, 0], 16, 32, pix,
                     payload=struct.pack(e + "f", 7.0))

    # Byte-swapped twin of value7.nii: every field and the data big-endian.
    big = header([4, 1, 1, 1, 1, 0, 0, 0], 16, 32, pix, endian=">")
    (HERE / "value7_bigendian.nii").write_bytes(big + b"\x00" * 4 + struct.pack(">f", 7.0))

    # Gzip-compressed copy (mtime pinned so the bytes are reproducible).
    (HERE / "value7.nii.gz").write_bytes(gzip.compress(v7, mtime=0))

    # Raw value 3.0 with slope 2, inter 1 -> reads as 7.0.
    single_file("value7_scaled.nii", [4, 1, 1, 1, 1, 0, 0, 0], 16, 32, pix,
                payload=struct.pack(e + "f", 3.0), scl_slope=2.0, scl_inter=1.0)

    # 2x2x2x2 float32 ramp 0..15 in on-disk order (x fastest).
    single_file("ramp_2x2x2x2.nii", [4, 2, 2, 2, 2, 0, 0, 0], 16, 32,
                [1, 1, 1, 1, 2.0, 0, 0, 0],
                payload=struct.pack(e + "16f", *range(16)))

    # Alternative voxel datatypes, all holding the single value 7.
    single_file("vol_i16.nii", [3, 1, 1, 1, 1, 0, 0, 0], 4, 16, pix,
                payload=struct.pack(e + "h", 7))
    single_file("vol_f64.nii", [3, 1, 1, 1, 1, 0, 0, 0], 64, 64, pix,
                payload=struct.pack(e + "d", 7.0))
    single_file("vol_u8.nii", [3, 1, 1, 1, 1, 0, 0, 0], 2, 8, pix,
                payload=struct.pack(e + "B", 7))

    # uint8 label volume over 2x2x1 with labels {0,1,2}.
    single_file("labels_u8.nii", [3, 2, 2, 1, 1, 0, 0, 0], 2, 8,
                [1, 1, 1, 1, 0, 0, 0, 0], payload=bytes([0, 1, 2, 1]))

    # uint16 labels, 6x6x6 grid, values 1..170 plus 46 zeros.
    vals = list(range(1, 171)) + [0] * 46
    single_file("labels_u16.nii", [3, 6, 6, 6, 1, 0, 0, 0], 512, 16,
                [1, 1, 1, 1, 0, 0, 0, 0], payload=struct.pack(e + "216H", *vals))

    # Labels with a stray scl_slope: must be ignored (values kept exact).
    single_file("labels_scl.nii", [3, 2, 2, 1, 1, 0, 0, 0], 2, 8,
                [1, 1, 1, 1, 0, 0, 0, 0], payload=bytes([0, 1, 2, 1]),
                scl_slope=2.0, scl_inter=5.0)

    # --- malformed fixtures, one per reader error path ------------------
    single_file("bad_magic.nii", [4, 1, 1, 1, 1, 0, 0, 0], 16, 32, pix,
                payload=struct.pack(e + "f", 7.0), magic=b"xyz\x00")
    single_file("paired_magic.nii", [4, 1, 1, 1, 1, 0, 0, 0], 16, 32, pix,
                payload=struct.pack(e + "f", 7.0), magic=b"ni1\x00")
    single_file("bad_header_size.nii", [4, 1, 1, 1, 1, 0, 0, 0], 16, 32, pix,
                payload=struct.pack(e + "f", 7.0), sizeof_hdr=340)
    single_file("bad_datatype.nii", [4, 1, 1, 1, 1, 0, 0, 0], 8, 32, pix,
                payload=struct.pack(e + "i", 7))      # int32: unsupported
    single_file("bad_rank2.nii", [2, 4, 4, 1, 1, 0, 0, 0], 16, 32, pix,
                payload=struct.pack(e + "16f", *range(16)))
    single_file("bad_rank7.nii", [7, 1, 1, 1, 1, 1, 1, 1], 16, 32, pix,
                payload=struct.pack(e + "f", 7.0))
    single_file("bad_voxoffset.nii", [4, 1, 1, 1, 1, 0, 0, 0], 16, 32, pix,
                payload=struct.pack(e + "f", 7.0), vox_offset=300.0)
    # Header promises 2x2x2 floats but ships only three.
    single_file("truncated.nii", [3, 2, 2, 2, 1, 0, 0, 0], 16, 32, pix,
                payload=struct.pack(e + "3f", 1, 2, 3))
    # File shorter than the header itself.
    (HERE / "truncated_header.nii").write_bytes(v7[:100])
    # int16 "labels" with a negative entry.
    single_file("neg_label.nii", [3, 2, 1, 1, 1, 0, 0, 0], 4, 16,
                [1, 1, 1, 1, 0, 0, 0, 0], payload=struct.pack(e + "2h", 3, -2))
    # float32 data where integer labels are required.
    single_file("float_label.nii", [3, 2, 1, 1, 1, 0, 0, 0], 16, 32,
                [1, 1, 1, 1, 0, 0, 0, 0], payload=struct.pack(e + "2f", 1.0, 2.0))
    # rank-4 integer data: labels must be rank 3.
    single_file("labels_rank4.nii", [4, 2, 1, 1, 2, 0, 0, 0], 2, 8,
                [1, 1, 1, 1, 0, 0, 0, 0], payload=bytes([1, 2, 3, 4]))

    print("fixture corpus written to", HERE)


if __name__ == "__main__":
    main()
