#ifndef ROIMAE_MASKING_HPP
#define ROIMAE_MASKING_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "roimae/atlas.hpp"
#include "roimae/volume.hpp"

// Mask generation for the masking strategies under comparison: the three
// baselines (random/random, random/tube, window/random) and ROI-guided
// tube masking with single-region, multi-region and partial-fraction
// variants. All randomness comes from a counter stream keyed by
// (seed, strategy fingerprint), so identical inputs give identical masks
// regardless of evaluation order.

namespace roimae {

enum class MaskVariant { random_random, random_tube, window_random, roi_tube };

struct MaskStrategy {
    MaskVariant variant = MaskVariant::random_tube;
    double ratio = 0.10;                        // baselines: fraction of grid/space
    std::array<index_t, 3> block_shape{8, 8, 8}; // window_random block extents
    double frame_prob = 0.5;                    // window_random per-frame coin
    std::vector<std::string> group_names;       // roi_tube, resolved group names
    double fraction_per_group = 1.0;            // roi_tube, fraction of region∩brain
    std::uint64_t seed = 0;

    // Canonical spec string, also the RNG key material:
    //   random-random:<ratio> | random-tube:<ratio>
    //   window-random:<bx>x<by>x<bz>:<ratio> | roi:<name,...>:<fraction>
    std::string fingerprint() const;

    // Parses the CLI/config syntax above. Region names may be abbreviated
    // case-insensitive prefixes of the canonical domain names.
    static MaskStrategy parse(const std::string& text, std::uint64_t seed = 0);
};

// Resolve an abbreviated region-group name ("limbic" -> "LimbicRegions").
std::string resolve_group_name(const std::string& name);

// Generate one mask. `labels` and `grouping` are required for roi_tube.
// `stream` selects an independent draw from the same keyed generator
// (used for per-(epoch,sample) resampling); stream 0 is the default mask.
Mask4D generate_mask(const MaskStrategy& strategy, const GridDims& dims,
                     const LabelVolume* labels, const Mask3D& brain,
                     const GroupingTable* grouping, std::uint64_t stream = 0);

// Replace masked voxels with `fill`; everything else is copied untouched.
Volume4D apply_mask(const Volume4D& vol, const Mask4D& mask, float fill = 0.0f);

} // namespace roimae

#endif
