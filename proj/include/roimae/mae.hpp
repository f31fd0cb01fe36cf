#ifndef ROIMAE_MAE_HPP
#define ROIMAE_MAE_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "roimae/atlas.hpp"
#include "roimae/masking.hpp"
#include "roimae/volume.hpp"

// Desk-scale masked autoencoder over spatiotemporal patches: a shared
// two-layer tanh MLP encoder to a latent bottleneck and a mirrored decoder,
// trained with AdamW on masked-voxel MSE.
//
// Parameters are stored as float32; every forward/backward/optimizer
// computation runs in float64 with fixed reduction order, so training is
// bit-reproducible for any thread count and analytic gradients can be
// checked against central finite differences.

namespace roimae {

struct PatchSpec {
    // Patch extents (px,py,pz,pt); must divide the volume dims exactly.
    std::array<index_t, 4> patch{4, 4, 4, 6};

    index_t d_patch() const { return patch[0] * patch[1] * patch[2] * patch[3]; }
    // Token grid extents (volume dims / patch dims), x fastest ordering.
    GridDims token_grid(const GridDims& dims) const;
};

// Token matrix, one row per token. Within a row, patch elements are laid
// out x fastest, then y, z, t (same convention as Volume4D).
struct TokenMatrix {
    index_t n_tokens = 0;
    index_t d_patch = 0;
    std::vector<float> values;

    float* row(index_t i) { return values.data() + i * d_patch; }
    const float* row(index_t i) const { return values.data() + i * d_patch; }
};

TokenMatrix patchify(const Volume4D& vol, const PatchSpec& spec);
// Inverse of patchify; metadata is copied from `reference`.
Volume4D unpatchify(const TokenMatrix& tokens, const PatchSpec& spec, const Volume4D& reference);

struct MaeModel {
    PatchSpec spec;
    index_t d_patch = 0;
    index_t d_hidden = 0;
    index_t d_latent = 0;

    // Row-major weight matrices (rows x cols) and bias vectors.
    std::vector<float> w_enc1, b_enc1; // d_hidden x d_patch
    std::vector<float> w_enc2, b_enc2; // d_latent x d_hidden
    std::vector<float> w_dec1, b_dec1; // d_hidden x d_latent
    std::vector<float> w_dec2, b_dec2; // d_patch x d_hidden

    index_t param_count() const;

    // Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)) per matrix,
    // zero biases, drawn from a keyed counter stream.
    static MaeModel init(const PatchSpec& spec, index_t d_hidden, index_t d_latent,
                         std::uint64_t seed);
};

void save_model(const MaeModel& model, const std::string& path);
MaeModel load_model(const std::string& path);

struct Gradients {
    std::vector<double> w_enc1, b_enc1, w_enc2, b_enc2;
    std::vector<double> w_dec1, b_dec1, w_dec2, b_dec2;

    static Gradients zeros_like(const MaeModel& model);
};

struct AdamWState {
    double lr = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.01;
    std::int64_t step = 0;
    // First/second moments, one entry per parameter, same order as the
    // model tensors.
    Gradients m, v;

    static AdamWState init(const MaeModel& model, double lr, double weight_decay);
};

// Encoder latents for all tokens (n_tokens x d_latent, double).
std::vector<double> encode_tokens(const MaeModel& model, const TokenMatrix& tokens);

// Full reconstruction; output dims/metadata match the input.
Volume4D forward(const MaeModel& model, const Volume4D& masked_vol);

// Mean of (recon - target)^2 over masked voxels only, 64-bit accumulation.
double masked_mse(const Volume4D& recon, const Volume4D& target, const Mask4D& mask);

// Loss of forward(model, masked_vol) against target, evaluated without the
// float32 rounding of the reconstruction volume. This is the function
// backward() differentiates; the finite-difference oracle calls it.
double masked_loss(const MaeModel& model, const Volume4D& masked_vol, const Volume4D& target,
                   const Mask4D& mask);

// Analytic gradients of masked_loss w.r.t. every parameter.
Gradients backward(const MaeModel& model, const Volume4D& masked_vol, const Volume4D& target,
                   const Mask4D& mask, double* loss_out = nullptr);

// One decoupled-weight-decay Adam step; throws numeric_error on non-finite
// gradients or parameters.
void adamw_step(MaeModel& model, AdamWState& state, const Gradients& grads);

struct TrainConfig {
    index_t epochs = 20;
    index_t batch_size = 24;
    double lr = 5e-5;
    double weight_decay = 0.01;
    std::uint64_t seed = 0;
    index_t d_hidden = 48;
    index_t d_latent = 24;
    PatchSpec patch;
    bool loss_all_voxels = false; // ablation: MSE over every voxel
    bool resample_masks = true;   // fresh mask per (epoch, sample)
};

struct PretrainResult {
    MaeModel model;
    std::vector<double> epoch_loss; // mean training loss per epoch
};

// Masked-reconstruction pretraining. `labels`/`grouping` are required for
// ROI strategies and supply the atlas-derived brain mask.
PretrainResult pretrain(const std::vector<Volume4D>& dataset, const MaskStrategy& strategy,
                        const TrainConfig& cfg, const LabelVolume* labels,
                        const GroupingTable* grouping);

} // namespace roimae

#endif
