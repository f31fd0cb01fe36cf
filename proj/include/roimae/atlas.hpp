#ifndef ROIMAE_ATLAS_HPP
#define ROIMAE_ATLAS_HPP

#include <string>
#include <vector>

#include "roimae/volume.hpp"

// Grouping of fine atlas labels into macro anatomical domains, and the
// region/brain occupancy statistics derived from them.

namespace roimae {

// The seven recognized domain names.
extern const std::vector<std::string> kRegionGroupNames;

struct RegionGroup {
    std::string name;
    std::vector<std::uint16_t> label_ids; // sorted, unique, nonempty
};

struct GroupingTable {
    std::vector<RegionGroup> groups;
    std::string source;

    const RegionGroup* find(const std::string& name) const;
};

// Text format, one group per record:
//   GroupName: id, id, id
// '#' starts a comment. Group names must be recognized domain names; label
// ids must be unique across the whole table and every group nonempty.
GroupingTable parse_grouping(const std::string& text, const std::string& source);
GroupingTable load_grouping(const std::string& path);

// Bit set iff the voxel's label belongs to the group.
Mask3D region_voxels(const LabelVolume& labels, const RegionGroup& group);

struct MaskRatio {
    index_t voxel_count = 0;      // |region ∩ brain|
    double percent_of_brain = 0;  // 100 * voxel_count / |brain|
};

MaskRatio mask_ratio(const LabelVolume& labels, const RegionGroup& group, const Mask3D& brain);

} // namespace roimae

#endif
