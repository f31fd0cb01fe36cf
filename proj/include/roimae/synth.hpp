#ifndef ROIMAE_SYNTH_HPP
#define ROIMAE_SYNTH_HPP

#include <string>

#include "roimae/atlas.hpp"
#include "roimae/volume.hpp"

// Synthetic phantom: a central brain block parcellated into axis-aligned
// slabs, with a shared slow sinusoid plus AR(1) noise everywhere in the
// brain and a frequency-doubled component confined to one target region
// for class-1 subjects. The spectral (not amplitude) class difference
// survives per-subject z-scoring.

namespace roimae {

struct PhantomConfig {
    GridDims dims{16, 16, 16, 24};
    index_t n_regions = 7;        // 1..7, slabs along z inside the brain block
    index_t target_region = 6;    // label carrying the class signal
    double amplitude = 1.0;
    double base_frequency_hz = 0.1;
    // Calibrated so the probe task is learnable but not saturated; at low
    // noise every pretraining strategy reaches ceiling accuracy.
    double noise_std = 2.0;
    double ar_coeff = 0.5;
    index_t subjects_per_class = 40;
    double tr_s = 0.8;
    std::array<double, 3> spacing_mm{2.0, 2.0, 2.0};
    std::uint64_t seed = 7;
};

// Deterministic block parcellation: label 0 outside the brain block,
// 1..n_regions inside (slab k spans a z band of the block).
LabelVolume generate_atlas(const PhantomConfig& cfg);

// One subject; `cls` is 0 or 1. Background voxels are exactly 0 at all
// frames; noise depends only on (cfg.seed, subject_seed), never the class.
Volume4D generate_subject(const PhantomConfig& cfg, int cls, std::uint64_t subject_seed);

// Grouping table mapping phantom label k to the k-th canonical domain name.
GroupingTable phantom_grouping(const PhantomConfig& cfg);

// Canonical group name for the target region.
std::string target_region_group(const PhantomConfig& cfg);

// Writes sub-NNN volumes (.v4d, or .nii when as_nifti), atlas.v4d,
// grouping.txt and labels.csv into `dir`. Subjects alternate class 0/1.
void write_synth_dataset(const PhantomConfig& cfg, const std::string& dir, bool as_nifti = false);

} // namespace roimae

#endif
