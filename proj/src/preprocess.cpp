#include "roimae/preprocess.hpp"

#include <cmath>
#include <cstring>

#include "roimae/parallel.hpp"

namespace roimae {

namespace {

// Guard against representation fuzz in size arithmetic like 96*0.1/0.1;
// exact-equality fast paths keep the identity cases exact.
constexpr double kSizeEps = 1e-9;

index_t output_extent(index_t n_in, double spacing_in, double spacing_out) {
    if (spacing_in == spacing_out) return n_in;
    const double q = static_cast<double>(n_in) * spacing_in / spacing_out;
    const auto n = static_cast<index_t>(std::ceil(q - kSizeEps));
    return n < 1 ? 1 : n;
}

inline double sample_trilinear(const float* frame, const GridDims& d,
                               double ux, double uy, double uz) {
    const auto x0 = static_cast<index_t>(std::floor(ux));
    const auto y0 = static_cast<index_t>(std::floor(uy));
    const auto z0 = static_cast<index_t>(std::floor(uz));
    const double fx = ux - static_cast<double>(x0);
    const double fy = uy - static_cast<double>(y0);
    const double fz = uz - static_cast<double>(z0);

    double acc = 0.0;
    for (int dz = 0; dz < 2; ++dz) {
        const index_t z = z0 + dz;
        if (z < 0 || z >= d.nz) continue;
        const double wz = dz ? fz : 1.0 - fz;
        for (int dy = 0; dy < 2; ++dy) {
            const index_t y = y0 + dy;
            if (y < 0 || y >= d.ny) continue;
            const double wy = dy ? fy : 1.0 - fy;
            for (int dx = 0; dx < 2; ++dx) {
                const index_t x = x0 + dx;
                if (x < 0 || x >= d.nx) continue;
                const double wx = dx ? fx : 1.0 - fx;
                acc += wz * wy * wx *
                       static_cast<double>(frame[x + d.nx * (y + d.ny * z)]);
            }
        }
    }
    return acc;
}

} // namespace

Volume4D resample_spatial(const Volume4D& vol, const std::array<double, 3>& target_spacing_mm) {
    validate(vol);
    for (double s : target_spacing_mm) {
        if (!(s > 0.0)) throw invalid_argument("resample_spatial: nonpositive target spacing");
    }
    if (target_spacing_mm == vol.spacing_mm) return vol;

    const GridDims& din = vol.dims;
    const std::array<double, 3> scale{target_spacing_mm[0] / vol.spacing_mm[0],
                                      target_spacing_mm[1] / vol.spacing_mm[1],
                                      target_spacing_mm[2] / vol.spacing_mm[2]};

    Volume4D out;
    out.dims = GridDims{output_extent(din.nx, vol.spacing_mm[0], target_spacing_mm[0]),
                        output_extent(din.ny, vol.spacing_mm[1], target_spacing_mm[1]),
                        output_extent(din.nz, vol.spacing_mm[2], target_spacing_mm[2]),
                        din.nt};
    out.spacing_mm = target_spacing_mm;
    out.tr_s = vol.tr_s;
    out.affine = affine_mul(vol.affine, Affine::scaling(scale[0], scale[1], scale[2]));
    out.data.resize(static_cast<std::size_t>(out.dims.total()));

    const index_t ns_in = din.spatial();
    const index_t ns_out = out.dims.spatial();
    const GridDims dout = out.dims;

    for (index_t t = 0; t < din.nt; ++t) {
        const float* src = vol.data.data() + t * ns_in;
        float* dst = out.data.data() + t * ns_out;
#pragma omp parallel for schedule(static) collapse(2)
        for (index_t z = 0; z < dout.nz; ++z) {
            for (index_t y = 0; y < dout.ny; ++y) {
                float* row = dst + dout.nx * (y + dout.ny * z);
                const double uy = static_cast<double>(y) * scale[1];
                const double uz = static_cast<double>(z) * scale[2];
                for (index_t x = 0; x < dout.nx; ++x) {
                    const double ux = static_cast<double>(x) * scale[0];
                    row[x] = static_cast<float>(sample_trilinear(src, din, ux, uy, uz));
                }
            }
        }
    }
    return out;
}

Volume4D crop_or_pad(const Volume4D& vol, const std::array<index_t, 3>& target_shape) {
    validate(vol);
    for (index_t n : target_shape) {
        if (n < 1) throw invalid_argument("crop_or_pad: nonpositive target shape");
    }
    const GridDims& din = vol.dims;
    const GridDims dout{target_shape[0], target_shape[1], target_shape[2], din.nt};
    if (dout == din) return vol;

    // Per axis: where the copied box starts in the input and the output.
    std::array<index_t, 3> src0{}, dst0{}, len{};
    const std::array<index_t, 3> in{din.nx, din.ny, din.nz};
    for (int a = 0; a < 3; ++a) {
        const auto ia = static_cast<std::size_t>(a);
        if (in[ia] >= target_shape[ia]) {
            src0[ia] = (in[ia] - target_shape[ia]) / 2;
            dst0[ia] = 0;
            len[ia] = target_shape[ia];
        } else {
            src0[ia] = 0;
            dst0[ia] = (target_shape[ia] - in[ia]) / 2;
            len[ia] = in[ia];
        }
    }

    Volume4D out;
    out.dims = dout;
    out.spacing_mm = vol.spacing_mm;
    out.tr_s = vol.tr_s;
    // Output voxel v corresponds to input voxel v + (src0 - dst0).
    Affine shift = Affine::identity();
    for (int a = 0; a < 3; ++a) {
        shift.at(a, 3) = static_cast<double>(src0[static_cast<std::size_t>(a)] -
                                             dst0[static_cast<std::size_t>(a)]);
    }
    out.affine = affine_mul(vol.affine, shift);
    out.data.assign(static_cast<std::size_t>(dout.total()), 0.0f);

    const index_t ns_in = din.spatial();
    const index_t ns_out = dout.spatial();
    for (index_t t = 0; t < din.nt; ++t) {
        const float* src = vol.data.data() + t * ns_in;
        float* dst = out.data.data() + t * ns_out;
#pragma omp parallel for schedule(static) collapse(2)
        for (index_t z = 0; z < len[2]; ++z) {
            for (index_t y = 0; y < len[1]; ++y) {
                const float* s = src + src0[0] + din.nx * ((src0[1] + y) + din.ny * (src0[2] + z));
                float* d = dst + dst0[0] + dout.nx * ((dst0[1] + y) + dout.ny * (dst0[2] + z));
                std::memcpy(d, s, static_cast<std::size_t>(len[0]) * sizeof(float));
            }
        }
    }
    return out;
}

Volume4D resample_temporal(const Volume4D& vol, double target_tr_s) {
    validate(vol);
    if (!(target_tr_s > 0.0)) throw invalid_argument("resample_temporal: nonpositive target TR");
    if (vol.dims.nt < 2) throw invalid_argument("resample_temporal: need at least 2 frames");
    if (target_tr_s == vol.tr_s) return vol;

    const double duration = static_cast<double>(vol.dims.nt - 1) * vol.tr_s;
    const auto nt_out = static_cast<index_t>(std::floor(duration / target_tr_s + kSizeEps)) + 1;

    Volume4D out;
    out.dims = GridDims{vol.dims.nx, vol.dims.ny, vol.dims.nz, nt_out};
    out.spacing_mm = vol.spacing_mm;
    out.tr_s = target_tr_s;
    out.affine = vol.affine;
    out.data.resize(static_cast<std::size_t>(out.dims.total()));

    const index_t ns = vol.dims.spatial();
    const index_t nt_in = vol.dims.nt;

    for (index_t k = 0; k < nt_out; ++k) {
        double src = static_cast<double>(k) * target_tr_s / vol.tr_s;
        if (src > static_cast<double>(nt_in - 1)) src = static_cast<double>(nt_in - 1);
        auto t0 = static_cast<index_t>(std::floor(src));
        if (t0 > nt_in - 2) t0 = nt_in - 2;
        const double f = src - static_cast<double>(t0);
        const float* a = vol.data.data() + t0 * ns;
        const float* b = vol.data.data() + (t0 + 1) * ns;
        float* dst = out.data.data() + k * ns;
#pragma omp parallel for schedule(static)
        for (index_t s = 0; s < ns; ++s) {
            dst[s] = static_cast<float>((1.0 - f) * static_cast<double>(a[s]) +
                                        f * static_cast<double>(b[s]));
        }
    }
    return out;
}

Volume4D zscore_nonbackground(const Volume4D& vol, double epsilon, const Mask3D* brain) {
    validate(vol);
    if (!(epsilon > 0.0)) throw invalid_argument("zscore: nonpositive epsilon");

    Mask3D own;
    if (!brain) {
        own = brain_mask(vol);
        brain = &own;
    }
    if (brain->dims().nx != vol.dims.nx || brain->dims().ny != vol.dims.ny ||
        brain->dims().nz != vol.dims.nz) {
        throw invalid_argument("zscore: brain mask dims mismatch");
    }
    const index_t nb = brain->popcount();
    if (nb == 0) throw invalid_argument("zscore: volume is all background");

    // Ordered list of brain voxels so the reduction is independent of how
    // background voxels are laid out.
    std::vector<index_t> voxels;
    voxels.reserve(static_cast<std::size_t>(nb));
    const index_t ns = vol.dims.spatial();
    for (index_t s = 0; s < ns; ++s) {
        if (brain->test(s)) voxels.push_back(s);
    }

    const index_t nt = vol.dims.nt;
    const index_t n = nb * nt;
    const float* data = vol.data.data();
    const index_t* vx = voxels.data();

    const double mean =
        deterministic_sum(n, [&](index_t i) {
            return static_cast<double>(data[(i / nb) * ns + vx[i % nb]]);
        }) /
        static_cast<double>(n);
    const double var =
        deterministic_sum(n, [&](index_t i) {
            const double d = static_cast<double>(data[(i / nb) * ns + vx[i % nb]]) - mean;
            return d * d;
        }) /
        static_cast<double>(n);
    const double denom = std::sqrt(var) + epsilon;

    Volume4D out;
    out.dims = vol.dims;
    out.spacing_mm = vol.spacing_mm;
    out.tr_s = vol.tr_s;
    out.affine = vol.affine;
    out.data.assign(static_cast<std::size_t>(vol.dims.total()), 0.0f);

#pragma omp parallel for schedule(static) collapse(2)
    for (index_t t = 0; t < nt; ++t) {
        for (index_t b = 0; b < nb; ++b) {
            const index_t i = t * ns + vx[b];
            out.data[static_cast<std::size_t>(i)] =
                static_cast<float>((static_cast<double>(data[i]) - mean) / denom);
        }
    }
    return out;
}

LabelVolume align_atlas(const LabelVolume& atlas, const Volume4D& reference) {
    validate(atlas);
    validate(reference);

    Affine to_atlas;
    try {
        to_atlas = affine_mul(affine_invert(atlas.affine), reference.affine);
    } catch (const invalid_argument&) {
        throw invalid_argument("align_atlas: singular atlas affine");
    }

    LabelVolume out;
    out.dims = GridDims{reference.dims.nx, reference.dims.ny, reference.dims.nz, 1};
    out.spacing_mm = reference.spacing_mm;
    out.affine = reference.affine;
    out.labels.assign(static_cast<std::size_t>(out.dims.spatial()), 0);

    const GridDims da = atlas.dims;
    const GridDims dr = out.dims;

#pragma omp parallel for schedule(static) collapse(2)
    for (index_t z = 0; z < dr.nz; ++z) {
        for (index_t y = 0; y < dr.ny; ++y) {
            for (index_t x = 0; x < dr.nx; ++x) {
                const auto u = to_atlas.apply(static_cast<double>(x), static_cast<double>(y),
                                              static_cast<double>(z));
                const auto ax = static_cast<index_t>(std::floor(u[0] + 0.5));
                const auto ay = static_cast<index_t>(std::floor(u[1] + 0.5));
                const auto az = static_cast<index_t>(std::floor(u[2] + 0.5));
                std::uint16_t label = 0;
                if (ax >= 0 && ax < da.nx && ay >= 0 && ay < da.ny && az >= 0 && az < da.nz) {
                    label = atlas.labels[static_cast<std::size_t>(flat_index(ax, ay, az, 0, da))];
                }
                out.labels[static_cast<std::size_t>(flat_index(x, y, z, 0, dr))] = label;
            }
        }
    }
    return out;
}

PreprocessResult run_preprocess(const Volume4D& vol, const LabelVolume* atlas,
                                const PreprocessConfig& cfg) {
    Volume4D v = resample_spatial(vol, cfg.target_spacing_mm);
    v = crop_or_pad(v, cfg.target_shape);
    if (v.dims.nt >= 2) v = resample_temporal(v, cfg.target_tr_s);

    PreprocessResult result;
    if (atlas) result.aligned_atlas = align_atlas(*atlas, v);

    if (cfg.background_rule == BackgroundRule::atlas) {
        if (!result.aligned_atlas) {
            throw invalid_argument("preprocess: atlas background rule needs an atlas");
        }
        const Mask3D brain = brain_mask(*result.aligned_atlas);
        result.volume = zscore_nonbackground(v, cfg.zscore_epsilon, &brain);
    } else {
        result.volume = zscore_nonbackground(v, cfg.zscore_epsilon);
    }
    return result;
}

} // namespace roimae
