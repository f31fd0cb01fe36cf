#include <doctest.h>

#include <set>

#include "roimae/atlas.hpp"
#include "roimae/rng.hpp"

using namespace roimae;

namespace {

LabelVolume atlas_from(const std::vector<std::uint16_t>& labels, GridDims dims) {
    LabelVolume l;
    l.dims = dims;
    l.labels = labels;
    return l;
}

} // namespace

TEST_CASE("grouping parser") {
    SUBCASE("two-group file") {
        const GroupingTable t =
            parse_grouping("FrontalLobe: 1, 2\nCerebellum: 3\n", "test");
        REQUIRE(t.groups.size() == 2);
        CHECK(t.groups[0].name == "FrontalLobe");
        CHECK(t.groups[0].label_ids == std::vector<std::uint16_t>{1, 2});
        CHECK(t.groups[1].label_ids == std::vector<std::uint16_t>{3});
        CHECK(t.find("Cerebellum") != nullptr);
        CHECK(t.find("TemporalLobe") == nullptr);
    }
    SUBCASE("comments and blank lines are skipped") {
        const GroupingTable t =
            parse_grouping("# header\n\nFrontalLobe: 5 # inline\n", "test");
        CHECK(t.groups.size() == 1);
        CHECK(t.groups[0].label_ids == std::vector<std::uint16_t>{5});
    }
    SUBCASE("duplicate label across groups") {
        CHECK_THROWS_AS(parse_grouping("FrontalLobe: 5\nCerebellum: 5\n", "test"), io_error);
    }
    SUBCASE("unknown group name") {
        CHECK_THROWS_AS(parse_grouping("BrainStem: 1\n", "test"), io_error);
    }
    SUBCASE("empty group") {
        CHECK_THROWS_AS(parse_grouping("FrontalLobe:\n", "test"), io_error);
    }
    SUBCASE("repeated group name") {
        CHECK_THROWS_AS(parse_grouping("Cerebellum: 1\nCerebellum: 2\n", "test"), io_error);
    }
    SUBCASE("malformed id list") {
        CHECK_THROWS_AS(parse_grouping("Cerebellum: 1, x\n", "test"), io_error);
        CHECK_THROWS_AS(parse_grouping("Cerebellum 1\n", "test"), io_error);
        CHECK_THROWS_AS(parse_grouping("Cerebellum: 0\n", "test"), io_error);
    }
}

TEST_CASE("shipped default AAL3 grouping") {
    const GroupingTable t = load_grouping(std::string(ROIMAE_DATA_DIR) + "/aal3_domains.txt");
    CHECK(t.groups.size() == 7);

    std::set<std::uint16_t> all;
    for (const auto& g : t.groups) {
        CHECK_FALSE(g.label_ids.empty());
        for (auto id : g.label_ids) {
            CHECK(id >= 1);
            CHECK(id <= 170);
            CHECK(all.insert(id).second); // pairwise disjoint
        }
    }
    // AAL3 uses 166 ids out of 1..170; 35, 36, 81, 82 do not exist.
    CHECK(all.size() == 166);
    for (std::uint16_t unused : {35, 36, 81, 82}) CHECK(all.count(unused) == 0);

    // every canonical name present
    for (const auto& name : kRegionGroupNames) CHECK(t.find(name) != nullptr);
}

TEST_CASE("region_voxels") {
    const GridDims d{4, 4, 4, 1};
    std::vector<std::uint16_t> labels(64, 0);
    for (index_t i = 0; i < 10; ++i) labels[static_cast<std::size_t>(i)] = 1;
    for (index_t i = 10; i < 25; ++i) labels[static_cast<std::size_t>(i)] = 2;
    for (index_t i = 25; i < 32; ++i) labels[static_cast<std::size_t>(i)] = 3;
    const LabelVolume atlas = atlas_from(labels, d);

    SUBCASE("no matching labels gives an empty mask") {
        const Mask3D m = region_voxels(atlas, RegionGroup{"FrontalLobe", {9}});
        CHECK(m.popcount() == 0);
    }
    SUBCASE("disjoint groups give disjoint masks and additive popcounts") {
        const Mask3D a = region_voxels(atlas, RegionGroup{"FrontalLobe", {1}});
        const Mask3D b = region_voxels(atlas, RegionGroup{"Cerebellum", {2, 3}});
        CHECK(a.popcount() == 10);
        CHECK(b.popcount() == 22);
        for (index_t i = 0; i < 64; ++i) CHECK_FALSE((a.test(i) && b.test(i)));
        const Mask3D u = region_voxels(atlas, RegionGroup{"LimbicRegions", {1, 2, 3}});
        CHECK(u.popcount() == a.popcount() + b.popcount());
        for (index_t i = 0; i < 64; ++i) CHECK((u.test(i) == (a.test(i) || b.test(i))));
    }
    SUBCASE("popcount equals a brute-force label count") {
        index_t expected = 0;
        for (auto l : labels) expected += (l == 2);
        CHECK(region_voxels(atlas, RegionGroup{"Cerebellum", {2}}).popcount() == expected);
    }
}

TEST_CASE("mask_ratio") {
    const GridDims d{4, 4, 4, 1};

    SUBCASE("a group covering half the brain reports 50%") {
        std::vector<std::uint16_t> labels(64, 0);
        for (index_t i = 0; i < 40; ++i) {
            labels[static_cast<std::size_t>(i)] = i < 20 ? 1 : 2;
        }
        const LabelVolume atlas = atlas_from(labels, d);
        const Mask3D brain = brain_mask(atlas);
        REQUIRE(brain.popcount() == 40);
        const MaskRatio r = mask_ratio(atlas, RegionGroup{"FrontalLobe", {1}}, brain);
        CHECK(r.voxel_count == 20);
        CHECK(r.percent_of_brain == doctest::Approx(50.0));
    }
    SUBCASE("count is the region-brain intersection") {
        std::vector<std::uint16_t> labels(64, 0);
        for (index_t i = 0; i < 30; ++i) labels[static_cast<std::size_t>(i)] = 1;
        const LabelVolume atlas = atlas_from(labels, d);
        Mask3D brain(d); // brain covers only part of the region
        for (index_t i = 20; i < 50; ++i) brain.set(i, true);
        const MaskRatio r = mask_ratio(atlas, RegionGroup{"FrontalLobe", {1}}, brain);
        CHECK(r.voxel_count == 10);
        CHECK(r.percent_of_brain == doctest::Approx(100.0 * 10 / 30));
    }
    SUBCASE("empty brain mask is rejected") {
        const LabelVolume atlas = atlas_from(std::vector<std::uint16_t>(64, 1), d);
        CHECK_THROWS_AS(mask_ratio(atlas, RegionGroup{"FrontalLobe", {1}}, Mask3D(d)),
                        invalid_argument);
    }
    SUBCASE("percentages of a full partition sum to 100") {
        std::vector<std::uint16_t> labels(64);
        CounterRng rng(4, "partition");
        for (auto& l : labels) l = static_cast<std::uint16_t>(1 + rng.next_below(7));
        const LabelVolume atlas = atlas_from(labels, d);
        const Mask3D brain = brain_mask(atlas);
        double total = 0.0;
        for (std::uint16_t g = 1; g <= 7; ++g) {
            total += mask_ratio(atlas, RegionGroup{kRegionGroupNames[g - 1], {g}}, brain)
                         .percent_of_brain;
        }
        CHECK(total == doctest::Approx(100.0).epsilon(1e-9));
    }
    SUBCASE("invariant under membership-preserving relabeling") {
        std::vector<std::uint16_t> labels(64, 0);
        for (index_t i = 0; i < 24; ++i) {
            labels[static_cast<std::size_t>(i)] = i % 2 ? 3 : 5;
        }
        for (index_t i = 24; i < 40; ++i) labels[static_cast<std::size_t>(i)] = 9;
        const LabelVolume a = atlas_from(labels, d);
        // relabel 3 -> 30, 5 -> 50 and adjust the group ids accordingly
        std::vector<std::uint16_t> relabeled = labels;
        for (auto& l : relabeled) {
            if (l == 3) l = 30;
            if (l == 5) l = 50;
        }
        const LabelVolume b = atlas_from(relabeled, d);
        const Mask3D brain_a = brain_mask(a);
        const Mask3D brain_b = brain_mask(b);
        const MaskRatio ra = mask_ratio(a, RegionGroup{"FrontalLobe", {3, 5}}, brain_a);
        const MaskRatio rb = mask_ratio(b, RegionGroup{"FrontalLobe", {30, 50}}, brain_b);
        CHECK(ra.voxel_count == rb.voxel_count);
        CHECK(ra.percent_of_brain == rb.percent_of_brain);
    }
}
