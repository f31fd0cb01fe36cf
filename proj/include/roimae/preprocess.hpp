#ifndef ROIMAE_PREPROCESS_HPP
#define ROIMAE_PREPROCESS_HPP

#include <array>
#include <optional>

#include "roimae/volume.hpp"

// Standardized per-subject pipeline: spatial resample, center crop/pad,
// temporal resample, z-score over non-background voxels, atlas alignment.

namespace roimae {

enum class BackgroundRule { intensity, atlas };

struct PreprocessConfig {
    std::array<double, 3> target_spacing_mm{2.0, 2.0, 2.0};
    std::array<index_t, 3> target_shape{96, 96, 96};
    double target_tr_s = 0.8;
    double zscore_epsilon = 1e-8;
    BackgroundRule background_rule = BackgroundRule::intensity;
};

// Trilinear resample onto a grid of ceil(n_in * spacing_in / spacing_out)
// voxels per axis. Output voxel centers are mapped into the input grid by
// axis scaling; samples outside the input read 0.
Volume4D resample_spatial(const Volume4D& vol, const std::array<double, 3>& target_spacing_mm);

// Centered crop/pad per spatial axis: crop removes floor(excess/2) from the
// low side, pad adds floor(deficit/2) zeros on the low side. Time untouched.
Volume4D crop_or_pad(const Volume4D& vol, const std::array<index_t, 3>& target_shape);

// Per-voxel linear interpolation onto frames at k * target_tr over
// [0, (nt-1) * tr_in]; output nt = floor((nt_in-1) * tr_in / tr_out) + 1.
Volume4D resample_temporal(const Volume4D& vol, double target_tr_s);

// (v - mean) / (std + epsilon) over all (brain voxel, frame) pairs jointly;
// background voxels forced to 0. `brain` defaults to the intensity rule
// (nonzero at any frame); pass an atlas-derived mask for the atlas rule.
Volume4D zscore_nonbackground(const Volume4D& vol, double epsilon = 1e-8,
                              const Mask3D* brain = nullptr);

// Nearest-neighbor relabeling of the reference grid: each reference voxel
// center is pushed through the atlas inverse affine; out of bounds -> 0.
LabelVolume align_atlas(const LabelVolume& atlas, const Volume4D& reference);

struct PreprocessResult {
    Volume4D volume;
    std::optional<LabelVolume> aligned_atlas;
};

// Full pipeline. The temporal stage is skipped for single-frame volumes.
PreprocessResult run_preprocess(const Volume4D& vol, const LabelVolume* atlas,
                                const PreprocessConfig& cfg);

} // namespace roimae

#endif
