#include "roimae/volume.hpp"

#include <cmath>
#include <cstring>
#include <string>

namespace roimae {

index_t linear_index(index_t x, index_t y, index_t z, index_t t, const GridDims& dims) {
    if (x < 0 || x >= dims.nx || y < 0 || y >= dims.ny ||
        z < 0 || z >= dims.nz || t < 0 || t >= dims.nt) {
        throw invalid_argument("linear_index: coordinate (" + std::to_string(x) + "," +
                               std::to_string(y) + "," + std::to_string(z) + "," +
                               std::to_string(t) + ") out of range");
    }
    return flat_index(x, y, z, t, dims);
}

Affine Affine::identity() {
    Affine a;
    a.at(0, 0) = a.at(1, 1) = a.at(2, 2) = a.at(3, 3) = 1.0;
    return a;
}

Affine Affine::scaling(double sx, double sy, double sz) {
    Affine a = identity();
    a.at(0, 0) = sx;
    a.at(1, 1) = sy;
    a.at(2, 2) = sz;
    return a;
}

std::array<double, 3> Affine::apply(double x, double y, double z) const {
    std::array<double, 3> out;
    for (int r = 0; r < 3; ++r) {
        out[static_cast<std::size_t>(r)] =
            at(r, 0) * x + at(r, 1) * y + at(r, 2) * z + at(r, 3);
    }
    return out;
}

Affine affine_mul(const Affine& a, const Affine& b) {
    Affine c;
    for (int r = 0; r < 4; ++r) {
        for (int col = 0; col < 4; ++col) {
            double s = 0.0;
            for (int k = 0; k < 4; ++k) s += a.at(r, k) * b.at(k, col);
            c.at(r, col) = s;
        }
    }
    return c;
}

Affine affine_invert(const Affine& a) {
    // Upper 3x3 by cofactors, then the translation.
    const double m00 = a.at(0, 0), m01 = a.at(0, 1), m02 = a.at(0, 2);
    const double m10 = a.at(1, 0), m11 = a.at(1, 1), m12 = a.at(1, 2);
    const double m20 = a.at(2, 0), m21 = a.at(2, 1), m22 = a.at(2, 2);

    const double c00 = m11 * m22 - m12 * m21;
    const double c01 = m12 * m20 - m10 * m22;
    const double c02 = m10 * m21 - m11 * m20;
    const double det = m00 * c00 + m01 * c01 + m02 * c02;
    if (det == 0.0 || !std::isfinite(det)) {
        throw invalid_argument("affine_invert: singular matrix");
    }
    const double inv = 1.0 / det;

    Affine r = Affine::identity();
    r.at(0, 0) = c00 * inv;
    r.at(0, 1) = (m02 * m21 - m01 * m22) * inv;
    r.at(0, 2) = (m01 * m12 - m02 * m11) * inv;
    r.at(1, 0) = c01 * inv;
    r.at(1, 1) = (m00 * m22 - m02 * m20) * inv;
    r.at(1, 2) = (m02 * m10 - m00 * m12) * inv;
    r.at(2, 0) = c02 * inv;
    r.at(2, 1) = (m01 * m20 - m00 * m21) * inv;
    r.at(2, 2) = (m00 * m11 - m01 * m10) * inv;

    const double tx = a.at(0, 3), ty = a.at(1, 3), tz = a.at(2, 3);
    for (int row = 0; row < 3; ++row) {
        r.at(row, 3) = -(r.at(row, 0) * tx + r.at(row, 1) * ty + r.at(row, 2) * tz);
    }
    return r;
}

void validate(const Volume4D& vol) {
    if (!vol.dims.valid()) throw invalid_argument("volume: nonpositive dimension");
    if (vol.data.size() != static_cast<std::size_t>(vol.dims.total())) {
        throw invalid_argument("volume: data length " + std::to_string(vol.data.size()) +
                               " does not match dims product " + std::to_string(vol.dims.total()));
    }
    for (double s : vol.spacing_mm) {
        if (!(s > 0.0)) throw invalid_argument("volume: nonpositive spacing");
    }
    if (!(vol.tr_s > 0.0)) throw invalid_argument("volume: nonpositive TR");
    if (vol.affine.at(3, 0) != 0.0 || vol.affine.at(3, 1) != 0.0 ||
        vol.affine.at(3, 2) != 0.0 || vol.affine.at(3, 3) != 1.0) {
        throw invalid_argument("volume: affine last row must be (0,0,0,1)");
    }
}

void validate(const LabelVolume& labels) {
    if (!labels.dims.valid() || labels.dims.nt != 1) {
        throw invalid_argument("labels: dims must be a 3D grid (nt = 1)");
    }
    if (labels.labels.size() != static_cast<std::size_t>(labels.dims.spatial())) {
        throw invalid_argument("labels: label count does not match dims product");
    }
    for (double s : labels.spacing_mm) {
        if (!(s > 0.0)) throw invalid_argument("labels: nonpositive spacing");
    }
}

index_t MaskBits::recount() const {
    index_t n = 0;
    for (std::uint8_t b : bits_) n += (b != 0);
    return n;
}

Mask3D brain_mask(const Volume4D& vol) {
    validate(vol);
    Mask3D mask(vol.dims);
    const index_t ns = vol.dims.spatial();
    const index_t nt = vol.dims.nt;
    const float* data = vol.data.data();
    std::uint8_t* bits = mask.raw();

#pragma omp parallel for schedule(static)
    for (index_t s = 0; s < ns; ++s) {
        std::uint8_t any = 0;
        for (index_t t = 0; t < nt && !any; ++t) {
            any = (data[t * ns + s] != 0.0f);
        }
        bits[s] = any;
    }
    mask.rebuild_popcount();
    return mask;
}

Mask3D brain_mask(const LabelVolume& labels) {
    validate(labels);
    Mask3D mask(labels.dims);
    const index_t ns = labels.dims.spatial();
    std::uint8_t* bits = mask.raw();

#pragma omp parallel for schedule(static)
    for (index_t s = 0; s < ns; ++s) {
        bits[s] = (labels.labels[static_cast<std::size_t>(s)] != 0);
    }
    mask.rebuild_popcount();
    return mask;
}

Volume4D extract_frame(const Volume4D& vol, index_t t) {
    validate(vol);
    if (t < 0 || t >= vol.dims.nt) {
        throw invalid_argument("extract_frame: frame " + std::to_string(t) +
                               " out of range [0," + std::to_string(vol.dims.nt) + ")");
    }
    Volume4D out;
    out.dims = GridDims{vol.dims.nx, vol.dims.ny, vol.dims.nz, 1};
    out.spacing_mm = vol.spacing_mm;
    out.tr_s = vol.tr_s;
    out.affine = vol.affine;
    const index_t ns = vol.dims.spatial();
    out.data.assign(vol.data.begin() + static_cast<std::ptrdiff_t>(t * ns),
                    vol.data.begin() + static_cast<std::ptrdiff_t>((t + 1) * ns));
    return out;
}

} // namespace roimae
