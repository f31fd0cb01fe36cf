#include "roimae/atlas.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace roimae {

const std::vector<std::string> kRegionGroupNames = {
    "FrontalLobe", "ParietalLobe",  "TemporalLobe",          "OccipitalLobe",
    "Cerebellum",  "LimbicRegions", "SubcorticalStructures",
};

const RegionGroup* GroupingTable::find(const std::string& name) const {
    for (const auto& g : groups) {
        if (g.name == name) return &g;
    }
    return nullptr;
}

GroupingTable parse_grouping(const std::string& text, const std::string& source) {
    GroupingTable table;
    table.source = source;

    std::set<std::uint16_t> seen;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::string trimmed;
        for (char c : line) {
            if (!std::isspace(static_cast<unsigned char>(c))) trimmed += c;
        }
        if (trimmed.empty()) continue;

        const auto colon = trimmed.find(':');
        if (colon == std::string::npos) {
            throw io_error(io_error::code::bad_metadata,
                           source + ":" + std::to_string(lineno) + ": expected \"name: id, ...\"");
        }
        RegionGroup group;
        group.name = trimmed.substr(0, colon);
        if (std::find(kRegionGroupNames.begin(), kRegionGroupNames.end(), group.name) ==
            kRegionGroupNames.end()) {
            throw io_error(io_error::code::bad_metadata,
                           source + ":" + std::to_string(lineno) + ": unknown group name \"" +
                               group.name + "\"");
        }
        if (table.find(group.name)) {
            throw io_error(io_error::code::bad_metadata,
                           source + ":" + std::to_string(lineno) + ": group \"" + group.name +
                               "\" appears twice");
        }

        std::string ids = trimmed.substr(colon + 1);
        std::replace(ids.begin(), ids.end(), ',', ' ');
        std::istringstream idstream(ids);
        long v;
        while (idstream >> v) {
            if (v < 1 || v > 65535) {
                throw io_error(io_error::code::bad_metadata,
                               source + ":" + std::to_string(lineno) + ": label id " +
                                   std::to_string(v) + " out of range 1..65535");
            }
            const auto id = static_cast<std::uint16_t>(v);
            if (!seen.insert(id).second) {
                throw io_error(io_error::code::bad_metadata,
                               source + ":" + std::to_string(lineno) + ": label id " +
                                   std::to_string(v) + " assigned to two groups");
            }
            group.label_ids.push_back(id);
        }
        if (!idstream.eof()) {
            throw io_error(io_error::code::bad_metadata,
                           source + ":" + std::to_string(lineno) + ": malformed id list");
        }
        if (group.label_ids.empty()) {
            throw io_error(io_error::code::bad_metadata,
                           source + ":" + std::to_string(lineno) + ": group \"" + group.name +
                               "\" has no labels");
        }
        std::sort(group.label_ids.begin(), group.label_ids.end());
        table.groups.push_back(std::move(group));
    }
    if (table.groups.empty()) {
        throw io_error(io_error::code::bad_metadata, source + ": no groups defined");
    }
    return table;
}

GroupingTable load_grouping(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw io_error(io_error::code::open_failed, "cannot open " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    return parse_grouping(buf.str(), path);
}

Mask3D region_voxels(const LabelVolume& labels, const RegionGroup& group) {
    validate(labels);

    // Membership lookup table over the full uint16 range.
    std::vector<std::uint8_t> member(65536, 0);
    for (std::uint16_t id : group.label_ids) member[id] = 1;

    Mask3D mask(labels.dims);
    const index_t ns = labels.dims.spatial();
    std::uint8_t* bits = mask.raw();
#pragma omp parallel for schedule(static)
    for (index_t s = 0; s < ns; ++s) {
        bits[s] = member[labels.labels[static_cast<std::size_t>(s)]];
    }
    mask.rebuild_popcount();
    return mask;
}

MaskRatio mask_ratio(const LabelVolume& labels, const RegionGroup& group, const Mask3D& brain) {
    validate(labels);
    if (brain.dims().nx != labels.dims.nx || brain.dims().ny != labels.dims.ny ||
        brain.dims().nz != labels.dims.nz) {
        throw invalid_argument("mask_ratio: brain mask dims mismatch");
    }
    if (brain.popcount() == 0) throw invalid_argument("mask_ratio: empty brain mask");

    const Mask3D region = region_voxels(labels, group);
    const index_t ns = labels.dims.spatial();
    index_t count = 0;
#pragma omp parallel for schedule(static) reduction(+ : count)
    for (index_t s = 0; s < ns; ++s) {
        count += (region.test(s) && brain.test(s)) ? 1 : 0;
    }
    return MaskRatio{count, 100.0 * static_cast<double>(count) /
                                static_cast<double>(brain.popcount())};
}

} // namespace roimae
