#include "roimae/reference.hpp"

#include <cmath>

#include "roimae/parallel.hpp"

namespace roimae::ref {

Mask3D brain_mask(const Volume4D& vol) {
    validate(vol);
    Mask3D mask(vol.dims);
    const index_t ns = vol.dims.spatial();
    for (index_t s = 0; s < ns; ++s) {
        bool any = false;
        for (index_t t = 0; t < vol.dims.nt && !any; ++t) {
            any = vol.data[static_cast<std::size_t>(t * ns + s)] != 0.0f;
        }
        mask.set(s, any);
    }
    return mask;
}

Volume4D apply_mask(const Volume4D& vol, const Mask4D& mask, float fill) {
    validate(vol);
    if (mask.dims() != vol.dims) throw invalid_argument("apply_mask: dims mismatch");
    Volume4D out = vol;
    for (index_t i = 0; i < vol.dims.total(); ++i) {
        if (mask.test(i)) out.data[static_cast<std::size_t>(i)] = fill;
    }
    return out;
}

Volume4D resample_spatial(const Volume4D& vol, const std::array<double, 3>& target_spacing_mm) {
    validate(vol);
    for (double s : target_spacing_mm) {
        if (!(s > 0.0)) throw invalid_argument("resample_spatial: nonpositive target spacing");
    }
    if (target_spacing_mm == vol.spacing_mm) return vol;

    const GridDims din = vol.dims;
    const std::array<double, 3> scale{target_spacing_mm[0] / vol.spacing_mm[0],
                                      target_spacing_mm[1] / vol.spacing_mm[1],
                                      target_spacing_mm[2] / vol.spacing_mm[2]};
    auto extent = [](index_t n, double sin_, double sout) {
        if (sin_ == sout) return n;
        const auto m = static_cast<index_t>(
            std::ceil(static_cast<double>(n) * sin_ / sout - 1e-9));
        return m < 1 ? static_cast<index_t>(1) : m;
    };

    Volume4D out;
    out.dims = GridDims{extent(din.nx, vol.spacing_mm[0], target_spacing_mm[0]),
                        extent(din.ny, vol.spacing_mm[1], target_spacing_mm[1]),
                        extent(din.nz, vol.spacing_mm[2], target_spacing_mm[2]), din.nt};
    out.spacing_mm = target_spacing_mm;
    out.tr_s = vol.tr_s;
    out.affine = affine_mul(vol.affine, Affine::scaling(scale[0], scale[1], scale[2]));
    out.data.resize(static_cast<std::size_t>(out.dims.total()));

    const index_t ns_in = din.spatial();
    for (index_t t = 0; t < din.nt; ++t) {
        const float* src = vol.data.data() + t * ns_in;
        for (index_t z = 0; z < out.dims.nz; ++z) {
            for (index_t y = 0; y < out.dims.ny; ++y) {
                for (index_t x = 0; x < out.dims.nx; ++x) {
                    const double ux = static_cast<double>(x) * scale[0];
                    const double uy = static_cast<double>(y) * scale[1];
                    const double uz = static_cast<double>(z) * scale[2];
                    const auto x0 = static_cast<index_t>(std::floor(ux));
                    const auto y0 = static_cast<index_t>(std::floor(uy));
                    const auto z0 = static_cast<index_t>(std::floor(uz));
                    const double fx = ux - static_cast<double>(x0);
                    const double fy = uy - static_cast<double>(y0);
                    const double fz = uz - static_cast<double>(z0);
                    double acc = 0.0;
                    for (int dz = 0; dz < 2; ++dz) {
                        const index_t zz = z0 + dz;
                        if (zz < 0 || zz >= din.nz) continue;
                        const double wz = dz ? fz : 1.0 - fz;
                        for (int dy = 0; dy < 2; ++dy) {
                            const index_t yy = y0 + dy;
                            if (yy < 0 || yy >= din.ny) continue;
                            const double wy = dy ? fy : 1.0 - fy;
                            for (int dx = 0; dx < 2; ++dx) {
                                const index_t xx = x0 + dx;
                                if (xx < 0 || xx >= din.nx) continue;
                                const double wx = dx ? fx : 1.0 - fx;
                                acc += wz * wy * wx *
                                       static_cast<double>(
                                           src[xx + din.nx * (yy + din.ny * zz)]);
                            }
                        }
                    }
                    out.data[static_cast<std::size_t>(
                        flat_index(x, y, z, t, out.dims))] = static_cast<float>(acc);
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
    const GridDims din = vol.dims;
    const GridDims dout{target_shape[0], target_shape[1], target_shape[2], din.nt};
    if (dout == din) return vol;

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
    Affine shift = Affine::identity();
    for (int a = 0; a < 3; ++a) {
        shift.at(a, 3) = static_cast<double>(src0[static_cast<std::size_t>(a)] -
                                             dst0[static_cast<std::size_t>(a)]);
    }
    out.affine = affine_mul(vol.affine, shift);
    out.data.assign(static_cast<std::size_t>(dout.total()), 0.0f);

    for (index_t t = 0; t < din.nt; ++t) {
        for (index_t z = 0; z < len[2]; ++z) {
            for (index_t y = 0; y < len[1]; ++y) {
                for (index_t x = 0; x < len[0]; ++x) {
                    out.data[static_cast<std::size_t>(flat_index(
                        dst0[0] + x, dst0[1] + y, dst0[2] + z, t, dout))] =
                        vol.data[static_cast<std::size_t>(flat_index(
                            src0[0] + x, src0[1] + y, src0[2] + z, t, din))];
                }
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
    const auto nt_out = static_cast<index_t>(std::floor(duration / target_tr_s + 1e-9)) + 1;

    Volume4D out;
    out.dims = GridDims{vol.dims.nx, vol.dims.ny, vol.dims.nz, nt_out};
    out.spacing_mm = vol.spacing_mm;
    out.tr_s = target_tr_s;
    out.affine = vol.affine;
    out.data.resize(static_cast<std::size_t>(out.dims.total()));

    const index_t ns = vol.dims.spatial();
    for (index_t k = 0; k < nt_out; ++k) {
        double src = static_cast<double>(k) * target_tr_s / vol.tr_s;
        if (src > static_cast<double>(vol.dims.nt - 1)) src = static_cast<double>(vol.dims.nt - 1);
        auto t0 = static_cast<index_t>(std::floor(src));
        if (t0 > vol.dims.nt - 2) t0 = vol.dims.nt - 2;
        const double f = src - static_cast<double>(t0);
        for (index_t s = 0; s < ns; ++s) {
            const double a = static_cast<double>(vol.data[static_cast<std::size_t>(t0 * ns + s)]);
            const double b =
                static_cast<double>(vol.data[static_cast<std::size_t>((t0 + 1) * ns + s)]);
            out.data[static_cast<std::size_t>(k * ns + s)] =
                static_cast<float>((1.0 - f) * a + f * b);
        }
    }
    return out;
}

Volume4D zscore_nonbackground(const Volume4D& vol, double epsilon, const Mask3D* brain) {
    validate(vol);
    if (!(epsilon > 0.0)) throw invalid_argument("zscore: nonpositive epsilon");
    Mask3D own;
    if (!brain) {
        own = ref::brain_mask(vol);
        brain = &own;
    }
    const index_t nb = brain->popcount();
    if (nb == 0) throw invalid_argument("zscore: volume is all background");

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

    const double mean = deterministic_sum_serial(n, [&](index_t i) {
                            return static_cast<double>(data[(i / nb) * ns + vx[i % nb]]);
                        }) /
                        static_cast<double>(n);
    const double var = deterministic_sum_serial(n, [&](index_t i) {
                           const double d =
                               static_cast<double>(data[(i / nb) * ns + vx[i % nb]]) - mean;
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

    for (index_t z = 0; z < out.dims.nz; ++z) {
        for (index_t y = 0; y < out.dims.ny; ++y) {
            for (index_t x = 0; x < out.dims.nx; ++x) {
                const auto u = to_atlas.apply(static_cast<double>(x), static_cast<double>(y),
                                              static_cast<double>(z));
                const auto ax = static_cast<index_t>(std::floor(u[0] + 0.5));
                const auto ay = static_cast<index_t>(std::floor(u[1] + 0.5));
                const auto az = static_cast<index_t>(std::floor(u[2] + 0.5));
                std::uint16_t label = 0;
                if (ax >= 0 && ax < atlas.dims.nx && ay >= 0 && ay < atlas.dims.ny && az >= 0 &&
                    az < atlas.dims.nz) {
                    label = atlas.at(ax, ay, az);
                }
                out.labels[static_cast<std::size_t>(flat_index(x, y, z, 0, out.dims))] = label;
            }
        }
    }
    return out;
}

double masked_mse(const Volume4D& recon, const Volume4D& target, const Mask4D& mask) {
    validate(recon);
    if (target.dims != recon.dims) throw invalid_argument("masked_mse: target dims mismatch");
    if (mask.dims() != recon.dims) throw invalid_argument("masked_mse: mask dims mismatch");
    if (mask.popcount() == 0) throw invalid_argument("masked_mse: empty mask");

    const double sum = deterministic_sum_serial(recon.dims.total(), [&](index_t i) {
        if (!mask.test(i)) return 0.0;
        const double d = static_cast<double>(recon.data[static_cast<std::size_t>(i)]) -
                         static_cast<double>(target.data[static_cast<std::size_t>(i)]);
        return d * d;
    });
    return sum / static_cast<double>(mask.popcount());
}

Volume4D forward(const MaeModel& model, const Volume4D& masked_vol) {
    const TokenMatrix tokens = patchify(masked_vol, model.spec);
    if (tokens.d_patch != model.d_patch) {
        throw invalid_argument("forward: patch size does not match the model");
    }
    const index_t dp = model.d_patch, dh = model.d_hidden, dl = model.d_latent;

    TokenMatrix recon;
    recon.n_tokens = tokens.n_tokens;
    recon.d_patch = dp;
    recon.values.resize(tokens.values.size());

    std::vector<double> h1(static_cast<std::size_t>(dh)), z(static_cast<std::size_t>(dl)),
        h2(static_cast<std::size_t>(dh)), y(static_cast<std::size_t>(dp));
    for (index_t tok = 0; tok < tokens.n_tokens; ++tok) {
        const float* x = tokens.row(tok);
        for (index_t h = 0; h < dh; ++h) {
            double acc = static_cast<double>(model.b_enc1[static_cast<std::size_t>(h)]);
            const float* w = model.w_enc1.data() + h * dp;
            for (index_t p = 0; p < dp; ++p) {
                acc += static_cast<double>(w[p]) * static_cast<double>(x[p]);
            }
            h1[static_cast<std::size_t>(h)] = std::tanh(acc);
        }
        for (index_t l = 0; l < dl; ++l) {
            double acc = static_cast<double>(model.b_enc2[static_cast<std::size_t>(l)]);
            const float* w = model.w_enc2.data() + l * dh;
            for (index_t h = 0; h < dh; ++h) acc += static_cast<double>(w[h]) * h1[static_cast<std::size_t>(h)];
            z[static_cast<std::size_t>(l)] = acc;
        }
        for (index_t h = 0; h < dh; ++h) {
            double acc = static_cast<double>(model.b_dec1[static_cast<std::size_t>(h)]);
            const float* w = model.w_dec1.data() + h * dl;
            for (index_t l = 0; l < dl; ++l) acc += static_cast<double>(w[l]) * z[static_cast<std::size_t>(l)];
            h2[static_cast<std::size_t>(h)] = std::tanh(acc);
        }
        float* out = recon.row(tok);
        for (index_t p = 0; p < dp; ++p) {
            double acc = static_cast<double>(model.b_dec2[static_cast<std::size_t>(p)]);
            const float* w = model.w_dec2.data() + p * dh;
            for (index_t h = 0; h < dh; ++h) acc += static_cast<double>(w[h]) * h2[static_cast<std::size_t>(h)];
            out[p] = static_cast<float>(acc);
        }
    }
    return unpatchify(recon, model.spec, masked_vol);
}

} // namespace roimae::ref
