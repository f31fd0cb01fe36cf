#ifndef ROIMAE_VOLUME_HPP
#define ROIMAE_VOLUME_HPP

#include <array>
#include <cstdint>
#include <vector>

#include "roimae/errors.hpp"

namespace roimae {

using index_t = std::int64_t;

struct GridDims {
    index_t nx = 0, ny = 0, nz = 0, nt = 1;

    index_t spatial() const { return nx * ny * nz; }
    index_t total() const { return spatial() * nt; }
    bool valid() const { return nx >= 1 && ny >= 1 && nz >= 1 && nt >= 1; }

    bool operator==(const GridDims&) const = default;
};

// Checked voxel -> flat index, x fastest, then y, z, t.
index_t linear_index(index_t x, index_t y, index_t z, index_t t, const GridDims& dims);

// Unchecked form for inner loops.
inline index_t flat_index(index_t x, index_t y, index_t z, index_t t, const GridDims& d) {
    return x + d.nx * (y + d.ny * (z + d.nz * t));
}

// 4x4 voxel-to-world transform, row-major. Last row is (0,0,0,1).
struct Affine {
    std::array<double, 16> m{};

    double& at(int r, int c) { return m[static_cast<std::size_t>(r * 4 + c)]; }
    double at(int r, int c) const { return m[static_cast<std::size_t>(r * 4 + c)]; }

    static Affine identity();
    static Affine scaling(double sx, double sy, double sz);

    // Maps homogeneous (x,y,z,1); returns the first three components.
    std::array<double, 3> apply(double x, double y, double z) const;

    bool operator==(const Affine&) const = default;
};

Affine affine_mul(const Affine& a, const Affine& b);
// Inverse assuming the last row is (0,0,0,1). Throws invalid_argument when
// the upper 3x3 block is singular.
Affine affine_invert(const Affine& a);

struct Volume4D {
    GridDims dims;
    std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
    double tr_s = 1.0;
    Affine affine = Affine::identity();
    std::vector<float> data; // length dims.total(), x fastest

    float at(index_t x, index_t y, index_t z, index_t t) const {
        return data[static_cast<std::size_t>(flat_index(x, y, z, t, dims))];
    }
    float& at(index_t x, index_t y, index_t z, index_t t) {
        return data[static_cast<std::size_t>(flat_index(x, y, z, t, dims))];
    }
};

struct LabelVolume {
    GridDims dims; // nt == 1
    std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
    Affine affine = Affine::identity();
    std::vector<std::uint16_t> labels; // length dims.spatial(), 0 = background

    std::uint16_t at(index_t x, index_t y, index_t z) const {
        return labels[static_cast<std::size_t>(flat_index(x, y, z, 0, dims))];
    }
};

// Throw invalid_argument when the structural invariants don't hold.
void validate(const Volume4D& vol);
void validate(const LabelVolume& labels);

// Boolean occupancy over a grid with an incrementally maintained popcount.
class MaskBits {
public:
    MaskBits() = default;
    explicit MaskBits(const GridDims& dims)
        : dims_(dims), bits_(static_cast<std::size_t>(dims.total()), 0) {}

    const GridDims& dims() const { return dims_; }
    index_t size() const { return dims_.total(); }

    bool test(index_t i) const { return bits_[static_cast<std::size_t>(i)] != 0; }

    void set(index_t i, bool value) {
        std::uint8_t& b = bits_[static_cast<std::size_t>(i)];
        popcount_ += static_cast<index_t>(value) - static_cast<index_t>(b != 0);
        b = value ? 1 : 0;
    }

    index_t popcount() const { return popcount_; }
    index_t recount() const;

    // Bulk access for kernels that fill a mask in parallel; the caller must
    // call rebuild_popcount() afterwards.
    std::uint8_t* raw() { return bits_.data(); }
    const std::uint8_t* raw() const { return bits_.data(); }
    void rebuild_popcount() { popcount_ = recount(); }

    bool operator==(const MaskBits&) const = default;

private:
    GridDims dims_;
    std::vector<std::uint8_t> bits_;
    index_t popcount_ = 0;
};

// Spatial mask (one bit per (x,y,z), nt forced to 1).
class Mask3D : public MaskBits {
public:
    Mask3D() = default;
    explicit Mask3D(GridDims dims) : MaskBits(GridDims{dims.nx, dims.ny, dims.nz, 1}) {}
    bool test_xyz(index_t x, index_t y, index_t z) const {
        return test(flat_index(x, y, z, 0, dims()));
    }
};

// Spatiotemporal mask (one bit per (x,y,z,t)).
class Mask4D : public MaskBits {
public:
    Mask4D() = default;
    explicit Mask4D(const GridDims& dims) : MaskBits(dims) {}
};

// Spatial voxels with a nonzero value at any frame (exact comparison;
// the z-score pipeline pads background with exact zeros).
Mask3D brain_mask(const Volume4D& vol);

// Atlas-derived alternative: every voxel with a nonzero label.
Mask3D brain_mask(const LabelVolume& labels);

// Copy of frame t with metadata preserved.
Volume4D extract_frame(const Volume4D& vol, index_t t);

} // namespace roimae

#endif
