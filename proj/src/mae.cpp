#include "roimae/mae.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "roimae/parallel.hpp"
#include "roimae/rng.hpp"

namespace roimae {

// ===========================================================================
// Patch tokenization
// ===========================================================================

GridDims PatchSpec::token_grid(const GridDims& dims) const {
    const std::array<index_t, 4> vol{dims.nx, dims.ny, dims.nz, dims.nt};
    const char* axis = "xyzt";
    for (int a = 0; a < 4; ++a) {
        const auto ia = static_cast<std::size_t>(a);
        if (patch[ia] < 1 || vol[ia] % patch[ia] != 0) {
            throw invalid_argument(std::string("patch extent along ") + axis[a] + " (" +
                                   std::to_string(patch[ia]) + ") does not divide volume extent " +
                                   std::to_string(vol[ia]));
        }
    }
    return GridDims{dims.nx / patch[0], dims.ny / patch[1], dims.nz / patch[2],
                    dims.nt / patch[3]};
}

namespace {

// Walks the voxels of one token in patch-element order (x fastest).
template <class Fn>
inline void for_each_token_voxel(const PatchSpec& spec, const GridDims& dims,
                                 const GridDims& grid, index_t token, Fn&& fn) {
    const auto [px, py, pz, pt] = spec.patch;
    const index_t tx = token % grid.nx;
    const index_t ty = (token / grid.nx) % grid.ny;
    const index_t tz = (token / (grid.nx * grid.ny)) % grid.nz;
    const index_t tt = token / (grid.nx * grid.ny * grid.nz);
    const index_t x0 = tx * px, y0 = ty * py, z0 = tz * pz, t0 = tt * pt;

    index_t e = 0;
    for (index_t dt = 0; dt < pt; ++dt) {
        for (index_t dz = 0; dz < pz; ++dz) {
            for (index_t dy = 0; dy < py; ++dy) {
                const index_t base = flat_index(x0, y0 + dy, z0 + dz, t0 + dt, dims);
                for (index_t dx = 0; dx < px; ++dx) {
                    fn(e++, base + dx);
                }
            }
        }
    }
}

} // namespace

TokenMatrix patchify(const Volume4D& vol, const PatchSpec& spec) {
    validate(vol);
    const GridDims grid = spec.token_grid(vol.dims);

    TokenMatrix tokens;
    tokens.n_tokens = grid.total();
    tokens.d_patch = spec.d_patch();
    tokens.values.resize(static_cast<std::size_t>(tokens.n_tokens * tokens.d_patch));

    const float* data = vol.data.data();
    const GridDims dims = vol.dims;
#pragma omp parallel for schedule(static)
    for (index_t tok = 0; tok < tokens.n_tokens; ++tok) {
        float* row = tokens.row(tok);
        for_each_token_voxel(spec, dims, grid, tok,
                             [&](index_t e, index_t v) { row[e] = data[v]; });
    }
    return tokens;
}

Volume4D unpatchify(const TokenMatrix& tokens, const PatchSpec& spec, const Volume4D& reference) {
    const GridDims grid = spec.token_grid(reference.dims);
    if (tokens.n_tokens != grid.total() || tokens.d_patch != spec.d_patch()) {
        throw invalid_argument("unpatchify: token matrix does not match the patch spec");
    }

    Volume4D out;
    out.dims = reference.dims;
    out.spacing_mm = reference.spacing_mm;
    out.tr_s = reference.tr_s;
    out.affine = reference.affine;
    out.data.resize(static_cast<std::size_t>(reference.dims.total()));

    float* data = out.data.data();
    const GridDims dims = out.dims;
#pragma omp parallel for schedule(static)
    for (index_t tok = 0; tok < tokens.n_tokens; ++tok) {
        const float* row = tokens.row(tok);
        for_each_token_voxel(spec, dims, grid, tok,
                             [&](index_t e, index_t v) { data[v] = row[e]; });
    }
    return out;
}

// ===========================================================================
// Model
// ===========================================================================

index_t MaeModel::param_count() const {
    return d_hidden * d_patch + d_hidden + d_latent * d_hidden + d_latent +
           d_hidden * d_latent + d_hidden + d_patch * d_hidden + d_patch;
}

namespace {

void init_matrix(std::vector<float>& w, index_t rows, index_t cols, CounterRng& rng) {
    w.resize(static_cast<std::size_t>(rows * cols));
    const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
    for (auto& v : w) v = static_cast<float>((2.0 * rng.next_double() - 1.0) * a);
}

} // namespace

MaeModel MaeModel::init(const PatchSpec& spec, index_t d_hidden, index_t d_latent,
                        std::uint64_t seed) {
    if (d_hidden < 1 || d_latent < 1) throw invalid_argument("model: nonpositive layer width");

    MaeModel m;
    m.spec = spec;
    m.d_patch = spec.d_patch();
    m.d_hidden = d_hidden;
    m.d_latent = d_latent;

    CounterRng rng(seed, "mae-init");
    init_matrix(m.w_enc1, d_hidden, m.d_patch, rng);
    init_matrix(m.w_enc2, d_latent, d_hidden, rng);
    init_matrix(m.w_dec1, d_hidden, d_latent, rng);
    init_matrix(m.w_dec2, m.d_patch, d_hidden, rng);
    m.b_enc1.assign(static_cast<std::size_t>(d_hidden), 0.0f);
    m.b_enc2.assign(static_cast<std::size_t>(d_latent), 0.0f);
    m.b_dec1.assign(static_cast<std::size_t>(d_hidden), 0.0f);
    m.b_dec2.assign(static_cast<std::size_t>(m.d_patch), 0.0f);
    return m;
}

Gradients Gradients::zeros_like(const MaeModel& model) {
    Gradients g;
    g.w_enc1.assign(model.w_enc1.size(), 0.0);
    g.b_enc1.assign(model.b_enc1.size(), 0.0);
    g.w_enc2.assign(model.w_enc2.size(), 0.0);
    g.b_enc2.assign(model.b_enc2.size(), 0.0);
    g.w_dec1.assign(model.w_dec1.size(), 0.0);
    g.b_dec1.assign(model.b_dec1.size(), 0.0);
    g.w_dec2.assign(model.w_dec2.size(), 0.0);
    g.b_dec2.assign(model.b_dec2.size(), 0.0);
    return g;
}

AdamWState AdamWState::init(const MaeModel& model, double lr, double weight_decay) {
    AdamWState s;
    s.lr = lr;
    s.weight_decay = weight_decay;
    s.m = Gradients::zeros_like(model);
    s.v = Gradients::zeros_like(model);
    return s;
}

// ===========================================================================
// Serialization: "RMAE" magic, version, dims, float32 parameter blob
// ===========================================================================

namespace {

template <typename T>
void put(std::ofstream& f, T v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::ifstream& f, const std::string& path) {
    T v;
    f.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!f) throw io_error(io_error::code::truncated_data, path + ": model file truncated");
    return v;
}

} // namespace

void save_model(const MaeModel& model, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error(io_error::code::write_failed, "cannot open " + path);
    f.write("RMAE", 4);
    put<std::uint32_t>(f, 1);
    for (index_t p : model.spec.patch) put<std::int64_t>(f, p);
    put<std::int64_t>(f, model.d_hidden);
    put<std::int64_t>(f, model.d_latent);
    for (const auto* t : {&model.w_enc1, &model.b_enc1, &model.w_enc2, &model.b_enc2,
                          &model.w_dec1, &model.b_dec1, &model.w_dec2, &model.b_dec2}) {
        f.write(reinterpret_cast<const char*>(t->data()),
                static_cast<std::streamsize>(t->size() * 4));
    }
    if (!f) throw io_error(io_error::code::write_failed, "short write to " + path);
}

MaeModel load_model(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error(io_error::code::open_failed, "cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "RMAE", 4) != 0) {
        throw io_error(io_error::code::bad_magic, path + ": not a model file");
    }
    if (get<std::uint32_t>(f, path) != 1) {
        throw io_error(io_error::code::bad_metadata, path + ": unsupported model version");
    }

    PatchSpec spec;
    for (auto& p : spec.patch) p = get<std::int64_t>(f, path);
    const auto d_hidden = get<std::int64_t>(f, path);
    const auto d_latent = get<std::int64_t>(f, path);
    if (spec.d_patch() < 1 || d_hidden < 1 || d_latent < 1) {
        throw io_error(io_error::code::bad_metadata, path + ": bad model dims");
    }

    MaeModel m;
    m.spec = spec;
    m.d_patch = spec.d_patch();
    m.d_hidden = d_hidden;
    m.d_latent = d_latent;
    auto read_tensor = [&](std::vector<float>& t, index_t n) {
        t.resize(static_cast<std::size_t>(n));
        f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(n * 4));
        if (!f) throw io_error(io_error::code::truncated_data, path + ": model file truncated");
    };
    read_tensor(m.w_enc1, m.d_hidden * m.d_patch);
    read_tensor(m.b_enc1, m.d_hidden);
    read_tensor(m.w_enc2, m.d_latent * m.d_hidden);
    read_tensor(m.b_enc2, m.d_latent);
    read_tensor(m.w_dec1, m.d_hidden * m.d_latent);
    read_tensor(m.b_dec1, m.d_hidden);
    read_tensor(m.w_dec2, m.d_patch * m.d_hidden);
    read_tensor(m.b_dec2, m.d_patch);
    return m;
}

// ===========================================================================
// Forward / loss / backward
// ===========================================================================

namespace {

// Per-token forward pass in double. Any of the output pointers may be null.
inline void token_forward(const MaeModel& m, const float* x, double* h1, double* z, double* h2,
                          double* y) {
    const index_t dp = m.d_patch, dh = m.d_hidden, dl = m.d_latent;

    for (index_t h = 0; h < dh; ++h) {
        double acc = static_cast<double>(m.b_enc1[static_cast<std::size_t>(h)]);
        const float* w = m.w_enc1.data() + h * dp;
        for (index_t p = 0; p < dp; ++p) acc += static_cast<double>(w[p]) * static_cast<double>(x[p]);
        h1[h] = std::tanh(acc);
    }
    for (index_t l = 0; l < dl; ++l) {
        double acc = static_cast<double>(m.b_enc2[static_cast<std::size_t>(l)]);
        const float* w = m.w_enc2.data() + l * dh;
        for (index_t h = 0; h < dh; ++h) acc += static_cast<double>(w[h]) * h1[h];
        z[l] = acc;
    }
    if (!h2) return;
    for (index_t h = 0; h < dh; ++h) {
        double acc = static_cast<double>(m.b_dec1[static_cast<std::size_t>(h)]);
        const float* w = m.w_dec1.data() + h * dl;
        for (index_t l = 0; l < dl; ++l) acc += static_cast<double>(w[l]) * z[l];
        h2[h] = std::tanh(acc);
    }
    for (index_t p = 0; p < dp; ++p) {
        double acc = static_cast<double>(m.b_dec2[static_cast<std::size_t>(p)]);
        const float* w = m.w_dec2.data() + p * dh;
        for (index_t h = 0; h < dh; ++h) acc += static_cast<double>(w[h]) * h2[h];
        y[p] = acc;
    }
}

void check_loss_args(const MaeModel& model, const Volume4D& vol, const Volume4D& target,
                     const Mask4D& mask) {
    if (target.dims != vol.dims) throw invalid_argument("masked loss: target dims mismatch");
    if (mask.dims() != vol.dims) throw invalid_argument("masked loss: mask dims mismatch");
    if (mask.popcount() == 0) throw invalid_argument("masked loss: empty mask");
    if (model.d_patch != model.spec.d_patch()) throw invalid_argument("masked loss: bad model");
}

} // namespace

std::vector<double> encode_tokens(const MaeModel& model, const TokenMatrix& tokens) {
    if (tokens.d_patch != model.d_patch) {
        throw invalid_argument("encode_tokens: token width does not match the model");
    }
    const index_t n = tokens.n_tokens, dh = model.d_hidden, dl = model.d_latent;
    std::vector<double> latents(static_cast<std::size_t>(n * dl));
#pragma omp parallel for schedule(static)
    for (index_t tok = 0; tok < n; ++tok) {
        std::vector<double> h1(static_cast<std::size_t>(dh));
        token_forward(model, tokens.row(tok), h1.data(), latents.data() + tok * dl, nullptr,
                      nullptr);
    }
    return latents;
}

Volume4D forward(const MaeModel& model, const Volume4D& masked_vol) {
    const TokenMatrix tokens = patchify(masked_vol, model.spec);
    if (tokens.d_patch != model.d_patch) {
        throw invalid_argument("forward: patch size does not match the model");
    }
    const index_t n = tokens.n_tokens;
    const index_t dp = model.d_patch, dh = model.d_hidden, dl = model.d_latent;

    TokenMatrix recon;
    recon.n_tokens = n;
    recon.d_patch = dp;
    recon.values.resize(tokens.values.size());

#pragma omp parallel for schedule(static)
    for (index_t tok = 0; tok < n; ++tok) {
        std::vector<double> h1(static_cast<std::size_t>(dh)), z(static_cast<std::size_t>(dl)),
            h2(static_cast<std::size_t>(dh)), y(static_cast<std::size_t>(dp));
        token_forward(model, tokens.row(tok), h1.data(), z.data(), h2.data(), y.data());
        float* out = recon.row(tok);
        for (index_t p = 0; p < dp; ++p) out[p] = static_cast<float>(y[p]);
    }
    return unpatchify(recon, model.spec, masked_vol);
}

double masked_mse(const Volume4D& recon, const Volume4D& target, const Mask4D& mask) {
    validate(recon);
    if (target.dims != recon.dims) throw invalid_argument("masked_mse: target dims mismatch");
    if (mask.dims() != recon.dims) throw invalid_argument("masked_mse: mask dims mismatch");
    if (mask.popcount() == 0) throw invalid_argument("masked_mse: empty mask");

    const std::uint8_t* bits = mask.raw();
    const float* r = recon.data.data();
    const float* t = target.data.data();
    const double sum = deterministic_sum(recon.dims.total(), [&](index_t i) {
        if (!bits[i]) return 0.0;
        const double d = static_cast<double>(r[i]) - static_cast<double>(t[i]);
        return d * d;
    });
    return sum / static_cast<double>(mask.popcount());
}

namespace {

// Shared by masked_loss and backward: double-precision reconstruction of
// the tokens that contain at least one masked voxel, plus the loss summed
// over the flat grid with the deterministic blocked scheme.
struct LossWorkspace {
    GridDims grid;
    std::vector<index_t> contributing;     // token ids with a masked voxel
    std::vector<double> recon;             // flat, zeros outside contributing tokens
    std::vector<double> h1, z, h2, y;      // per contributing token
    double loss = 0.0;
};

LossWorkspace run_masked_forward(const MaeModel& model, const Volume4D& masked_vol,
                                 const Volume4D& target, const Mask4D& mask, bool keep_acts) {
    check_loss_args(model, masked_vol, target, mask);
    const TokenMatrix tokens = patchify(masked_vol, model.spec);

    LossWorkspace ws;
    ws.grid = model.spec.token_grid(masked_vol.dims);
    const index_t n = tokens.n_tokens;
    const index_t dp = model.d_patch, dh = model.d_hidden, dl = model.d_latent;
    const GridDims dims = masked_vol.dims;
    const std::uint8_t* bits = mask.raw();

    std::vector<std::uint8_t> touches(static_cast<std::size_t>(n), 0);
#pragma omp parallel for schedule(static)
    for (index_t tok = 0; tok < n; ++tok) {
        std::uint8_t any = 0;
        for_each_token_voxel(model.spec, dims, ws.grid, tok, [&](index_t, index_t v) {
            any |= bits[v];
        });
        touches[static_cast<std::size_t>(tok)] = any;
    }
    for (index_t tok = 0; tok < n; ++tok) {
        if (touches[static_cast<std::size_t>(tok)]) ws.contributing.push_back(tok);
    }

    const auto nc = static_cast<index_t>(ws.contributing.size());
    ws.recon.assign(static_cast<std::size_t>(dims.total()), 0.0);
    if (keep_acts) {
        ws.h1.resize(static_cast<std::size_t>(nc * dh));
        ws.z.resize(static_cast<std::size_t>(nc * dl));
        ws.h2.resize(static_cast<std::size_t>(nc * dh));
        ws.y.resize(static_cast<std::size_t>(nc * dp));
    }

#pragma omp parallel for schedule(static)
    for (index_t c = 0; c < nc; ++c) {
        const index_t tok = ws.contributing[static_cast<std::size_t>(c)];
        std::vector<double> h1l, zl, h2l, yl;
        double *h1p, *zp, *h2p, *yp;
        if (keep_acts) {
            h1p = ws.h1.data() + c * dh;
            zp = ws.z.data() + c * dl;
            h2p = ws.h2.data() + c * dh;
            yp = ws.y.data() + c * dp;
        } else {
            h1l.resize(static_cast<std::size_t>(dh));
            zl.resize(static_cast<std::size_t>(dl));
            h2l.resize(static_cast<std::size_t>(dh));
            yl.resize(static_cast<std::size_t>(dp));
            h1p = h1l.data();
            zp = zl.data();
            h2p = h2l.data();
            yp = yl.data();
        }
        token_forward(model, tokens.row(tok), h1p, zp, h2p, yp);
        for_each_token_voxel(model.spec, dims, ws.grid, tok,
                             [&](index_t e, index_t v) { ws.recon[static_cast<std::size_t>(v)] = yp[e]; });
    }

    const float* tgt = target.data.data();
    const double* rec = ws.recon.data();
    const double sum = deterministic_sum(dims.total(), [&](index_t i) {
        if (!bits[i]) return 0.0;
        const double d = rec[i] - static_cast<double>(tgt[i]);
        return d * d;
    });
    ws.loss = sum / static_cast<double>(mask.popcount());
    return ws;
}

// Rows of dst (rows x cols) accumulate factor[c][row] * basis[c][cols] over
// the contributing tokens, token order fixed, rows in parallel.
void accumulate_outer(std::vector<double>& dst, index_t rows, index_t cols,
                      const std::vector<double>& factor, const std::vector<double>& basis,
                      index_t nc) {
#pragma omp parallel for schedule(static)
    for (index_t r = 0; r < rows; ++r) {
        double* out = dst.data() + r * cols;
        for (index_t c = 0; c < nc; ++c) {
            const double g = factor[static_cast<std::size_t>(c * rows + r)];
            if (g == 0.0) continue;
            const double* b = basis.data() + c * cols;
            for (index_t k = 0; k < cols; ++k) out[k] += g * b[k];
        }
    }
}

// Same, but the basis is the float token matrix restricted to contributing
// tokens.
void accumulate_outer_tokens(std::vector<double>& dst, index_t rows, index_t cols,
                             const std::vector<double>& factor, const TokenMatrix& tokens,
                             const std::vector<index_t>& contributing) {
    const auto nc = static_cast<index_t>(contributing.size());
#pragma omp parallel for schedule(static)
    for (index_t r = 0; r < rows; ++r) {
        double* out = dst.data() + r * cols;
        for (index_t c = 0; c < nc; ++c) {
            const double g = factor[static_cast<std::size_t>(c * rows + r)];
            if (g == 0.0) continue;
            const float* b = tokens.row(contributing[static_cast<std::size_t>(c)]);
            for (index_t k = 0; k < cols; ++k) out[k] += g * static_cast<double>(b[k]);
        }
    }
}

void accumulate_bias(std::vector<double>& dst, index_t rows, const std::vector<double>& factor,
                     index_t nc) {
#pragma omp parallel for schedule(static)
    for (index_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (index_t c = 0; c < nc; ++c) acc += factor[static_cast<std::size_t>(c * rows + r)];
        dst[static_cast<std::size_t>(r)] += acc;
    }
}

} // namespace

double masked_loss(const MaeModel& model, const Volume4D& masked_vol, const Volume4D& target,
                   const Mask4D& mask) {
    return run_masked_forward(model, masked_vol, target, mask, /*keep_acts=*/false).loss;
}

Gradients backward(const MaeModel& model, const Volume4D& masked_vol, const Volume4D& target,
                   const Mask4D& mask, double* loss_out) {
    LossWorkspace ws = run_masked_forward(model, masked_vol, target, mask, /*keep_acts=*/true);
    if (loss_out) *loss_out = ws.loss;

    const TokenMatrix tokens = patchify(masked_vol, model.spec);
    const index_t dp = model.d_patch, dh = model.d_hidden, dl = model.d_latent;
    const auto nc = static_cast<index_t>(ws.contributing.size());
    const GridDims dims = masked_vol.dims;
    const std::uint8_t* bits = mask.raw();
    const float* tgt = target.data.data();
    const double inv_count = 1.0 / static_cast<double>(mask.popcount());

    // Deltas per contributing token, w.r.t. pre-activations.
    std::vector<double> gy(static_cast<std::size_t>(nc * dp), 0.0);
    std::vector<double> gh2(static_cast<std::size_t>(nc * dh));
    std::vector<double> gz(static_cast<std::size_t>(nc * dl));
    std::vector<double> gh1(static_cast<std::size_t>(nc * dh));

#pragma omp parallel for schedule(static)
    for (index_t c = 0; c < nc; ++c) {
        const index_t tok = ws.contributing[static_cast<std::size_t>(c)];
        double* gyr = gy.data() + c * dp;
        const double* yr = ws.y.data() + c * dp;
        for_each_token_voxel(model.spec, dims, ws.grid, tok, [&](index_t e, index_t v) {
            if (bits[v]) {
                gyr[e] = 2.0 * (yr[e] - static_cast<double>(tgt[v])) * inv_count;
            }
        });

        const double* h2r = ws.h2.data() + c * dh;
        double* gh2r = gh2.data() + c * dh;
        for (index_t h = 0; h < dh; ++h) {
            double acc = 0.0;
            for (index_t p = 0; p < dp; ++p) {
                acc += static_cast<double>(model.w_dec2[static_cast<std::size_t>(p * dh + h)]) *
                       gyr[p];
            }
            gh2r[h] = acc * (1.0 - h2r[h] * h2r[h]);
        }

        double* gzr = gz.data() + c * dl;
        for (index_t l = 0; l < dl; ++l) {
            double acc = 0.0;
            for (index_t h = 0; h < dh; ++h) {
                acc += static_cast<double>(model.w_dec1[static_cast<std::size_t>(h * dl + l)]) *
                       gh2r[h];
            }
            gzr[l] = acc;
        }

        const double* h1r = ws.h1.data() + c * dh;
        double* gh1r = gh1.data() + c * dh;
        for (index_t h = 0; h < dh; ++h) {
            double acc = 0.0;
            for (index_t l = 0; l < dl; ++l) {
                acc += static_cast<double>(model.w_enc2[static_cast<std::size_t>(l * dh + h)]) *
                       gzr[l];
            }
            gh1r[h] = acc * (1.0 - h1r[h] * h1r[h]);
        }
    }

    Gradients g = Gradients::zeros_like(model);
    accumulate_outer(g.w_dec2, dp, dh, gy, ws.h2, nc);
    accumulate_bias(g.b_dec2, dp, gy, nc);
    accumulate_outer(g.w_dec1, dh, dl, gh2, ws.z, nc);
    accumulate_bias(g.b_dec1, dh, gh2, nc);
    accumulate_outer(g.w_enc2, dl, dh, gz, ws.h1, nc);
    accumulate_bias(g.b_enc2, dl, gz, nc);
    accumulate_outer_tokens(g.w_enc1, dh, dp, gh1, tokens, ws.contributing);
    accumulate_bias(g.b_enc1, dh, gh1, nc);
    return g;
}

// ===========================================================================
// AdamW
// ===========================================================================

namespace {

void adamw_tensor(std::vector<float>& theta, const std::vector<double>& grad,
                  std::vector<double>& m, std::vector<double>& v, const AdamWState& s,
                  double bc1, double bc2) {
    const auto n = static_cast<index_t>(theta.size());
    bool bad = false;
#pragma omp parallel for schedule(static) reduction(|| : bad)
    for (index_t i = 0; i < n; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        const double g = grad[ui];
        if (!std::isfinite(g)) {
            bad = true;
            continue;
        }
        m[ui] = s.beta1 * m[ui] + (1.0 - s.beta1) * g;
        v[ui] = s.beta2 * v[ui] + (1.0 - s.beta2) * g * g;
        const double mhat = m[ui] / bc1;
        const double vhat = v[ui] / bc2;
        const double theta_d = static_cast<double>(theta[ui]);
        const double next =
            theta_d - s.lr * (mhat / (std::sqrt(vhat) + s.epsilon) + s.weight_decay * theta_d);
        if (!std::isfinite(next)) {
            bad = true;
            continue;
        }
        theta[ui] = static_cast<float>(next);
    }
    if (bad) {
        throw numeric_error("adamw_step: non-finite gradient or parameter at step " +
                            std::to_string(s.step));
    }
}

} // namespace

void adamw_step(MaeModel& model, AdamWState& state, const Gradients& grads) {
    if (grads.w_enc1.size() != model.w_enc1.size() || grads.b_dec2.size() != model.b_dec2.size()) {
        throw invalid_argument("adamw_step: gradient shapes do not match the model");
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

    adamw_tensor(model.w_enc1, grads.w_enc1, state.m.w_enc1, state.v.w_enc1, state, bc1, bc2);
    adamw_tensor(model.b_enc1, grads.b_enc1, state.m.b_enc1, state.v.b_enc1, state, bc1, bc2);
    adamw_tensor(model.w_enc2, grads.w_enc2, state.m.w_enc2, state.v.w_enc2, state, bc1, bc2);
    adamw_tensor(model.b_enc2, grads.b_enc2, state.m.b_enc2, state.v.b_enc2, state, bc1, bc2);
    adamw_tensor(model.w_dec1, grads.w_dec1, state.m.w_dec1, state.v.w_dec1, state, bc1, bc2);
    adamw_tensor(model.b_dec1, grads.b_dec1, state.m.b_dec1, state.v.b_dec1, state, bc1, bc2);
    adamw_tensor(model.w_dec2, grads.w_dec2, state.m.w_dec2, state.v.w_dec2, state, bc1, bc2);
    adamw_tensor(model.b_dec2, grads.b_dec2, state.m.b_dec2, state.v.b_dec2, state, bc1, bc2);
}

// ===========================================================================
// Pretraining loop
// ===========================================================================

namespace {

void add_into(std::vector<double>& dst, const std::vector<double>& src) {
    const auto n = static_cast<index_t>(dst.size());
#pragma omp parallel for schedule(static)
    for (index_t i = 0; i < n; ++i) {
        dst[static_cast<std::size_t>(i)] += src[static_cast<std::size_t>(i)];
    }
}

void scale(std::vector<double>& dst, double s) {
    for (auto& v : dst) v *= s;
}

// Fixed pairwise tree over the per-sample gradient buffers.
Gradients reduce_mean(std::vector<Gradients>& per_sample) {
    std::size_t len = per_sample.size();
    const double inv = 1.0 / static_cast<double>(len);
    while (len > 1) {
        const std::size_t half = len / 2;
        for (std::size_t i = 0; i < half; ++i) {
            Gradients& a = per_sample[2 * i];
            const Gradients& b = per_sample[2 * i + 1];
            add_into(a.w_enc1, b.w_enc1);
            add_into(a.b_enc1, b.b_enc1);
            add_into(a.w_enc2, b.w_enc2);
            add_into(a.b_enc2, b.b_enc2);
            add_into(a.w_dec1, b.w_dec1);
            add_into(a.b_dec1, b.b_dec1);
            add_into(a.w_dec2, b.w_dec2);
            add_into(a.b_dec2, b.b_dec2);
            if (i != 0) per_sample[i] = std::move(per_sample[2 * i]);
        }
        if (len % 2 == 1) per_sample[half] = std::move(per_sample[len - 1]);
        len = half + (len % 2);
    }
    Gradients out = std::move(per_sample[0]);
    scale(out.w_enc1, inv);
    scale(out.b_enc1, inv);
    scale(out.w_enc2, inv);
    scale(out.b_enc2, inv);
    scale(out.w_dec1, inv);
    scale(out.b_dec1, inv);
    scale(out.w_dec2, inv);
    scale(out.b_dec2, inv);
    return out;
}

Mask4D full_mask(const GridDims& dims) {
    Mask4D m(dims);
    for (index_t i = 0; i < dims.total(); ++i) m.set(i, true);
    return m;
}

} // namespace

PretrainResult pretrain(const std::vector<Volume4D>& dataset, const MaskStrategy& strategy,
                        const TrainConfig& cfg, const LabelVolume* labels,
                        const GroupingTable* grouping) {
    if (dataset.empty()) throw invalid_argument("pretrain: empty dataset");
    if (cfg.epochs < 1 || cfg.batch_size < 1) {
        throw invalid_argument("pretrain: epochs and batch size must be >= 1");
    }
    const GridDims dims = dataset[0].dims;
    for (const auto& v : dataset) {
        if (v.dims != dims) throw invalid_argument("pretrain: mixed volume dims in dataset");
    }

    Mask3D brain;
    if (labels) brain = brain_mask(*labels);

    const auto n = static_cast<index_t>(dataset.size());
    MaeModel model = MaeModel::init(cfg.patch, cfg.d_hidden, cfg.d_latent, cfg.seed);
    AdamWState state = AdamWState::init(model, cfg.lr, cfg.weight_decay);

    // ROI masks with fraction 1 are the same for every (epoch, sample).
    const bool static_mask = strategy.variant == MaskVariant::roi_tube &&
                             strategy.fraction_per_group == 1.0;
    Mask4D cached_mask;
    if (static_mask) {
        cached_mask = generate_mask(strategy, dims, labels, brain, grouping, 0);
    }
    Mask4D loss_all;
    if (cfg.loss_all_voxels) loss_all = full_mask(dims);

    PretrainResult result;
    result.epoch_loss.reserve(static_cast<std::size_t>(cfg.epochs));

    std::vector<index_t> order(static_cast<std::size_t>(n));
    for (index_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

    for (index_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        CounterRng shuffle_rng(cfg.seed, "epoch-order", static_cast<std::uint64_t>(epoch));
        for (index_t i = 0; i < n - 1; ++i) {
            const index_t j = i + static_cast<index_t>(shuffle_rng.next_below(
                                      static_cast<std::uint64_t>(n - i)));
            std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
        }

        double epoch_sum = 0.0;
        for (index_t start = 0; start < n; start += cfg.batch_size) {
            const index_t stop = std::min(n, start + cfg.batch_size);
            std::vector<Gradients> batch_grads;
            batch_grads.reserve(static_cast<std::size_t>(stop - start));

            for (index_t b = start; b < stop; ++b) {
                const index_t sample = order[static_cast<std::size_t>(b)];
                const std::uint64_t stream =
                    cfg.resample_masks
                        ? static_cast<std::uint64_t>(epoch) * static_cast<std::uint64_t>(n) +
                              static_cast<std::uint64_t>(sample)
                        : static_cast<std::uint64_t>(sample);

                const Mask4D mask =
                    static_mask ? cached_mask
                                : generate_mask(strategy, dims, labels, brain, grouping, stream);
                const Volume4D& target = dataset[static_cast<std::size_t>(sample)];
                const Volume4D masked = apply_mask(target, mask, 0.0f);

                double loss = 0.0;
                batch_grads.push_back(backward(model, masked, target,
                                               cfg.loss_all_voxels ? loss_all : mask, &loss));
                epoch_sum += loss;
            }
            const Gradients mean_grads = reduce_mean(batch_grads);
            adamw_step(model, state, mean_grads);
        }
        result.epoch_loss.push_back(epoch_sum / static_cast<double>(n));
    }

    result.model = std::move(model);
    return result;
}

} // namespace roimae
