#include <doctest.h>

#include <cmath>

#include "roimae/parallel.hpp"
#include "roimae/reference.hpp"
#include "roimae/rng.hpp"

using namespace roimae;

namespace {

std::vector<double> random_values(index_t n, std::uint64_t seed) {
    std::vector<double> v(static_cast<std::size_t>(n));
    CounterRng rng(seed, "sum-values");
    for (auto& x : v) x = rng.next_double() * 2.0 - 1.0;
    return v;
}

Volume4D random_volume(const GridDims& dims, std::uint64_t seed, double zero_frac = 0.0) {
    Volume4D v;
    v.dims = dims;
    v.data.resize(static_cast<std::size_t>(dims.total()));
    CounterRng rng(seed, "vol");
    for (auto& x : v.data) {
        x = (zero_frac > 0.0 && rng.next_double() < zero_frac)
                ? 0.0f
                : static_cast<float>(rng.next_double() * 2.0 - 1.0);
    }
    return v;
}

} // namespace

TEST_CASE("deterministic_sum equals its serial twin bitwise") {
    for (index_t n : {index_t(1), index_t(17), index_t(4096), index_t(4097), index_t(100000)}) {
        const auto v = random_values(n, static_cast<std::uint64_t>(n));
        auto f = [&](index_t i) { return v[static_cast<std::size_t>(i)]; };
        CHECK(deterministic_sum(n, f) == deterministic_sum_serial(n, f));
    }
}

TEST_CASE("deterministic_sum is close to a naive serial sum") {
    const index_t n = 100000;
    const auto v = random_values(n, 9);
    double naive = 0.0;
    for (double x : v) naive += x;
    const double det = deterministic_sum(n, [&](index_t i) { return v[static_cast<std::size_t>(i)]; });
    CHECK(det == doctest::Approx(naive).epsilon(1e-12));
}

TEST_CASE("pairwise_combine edge cases") {
    std::vector<double> empty;
    CHECK(pairwise_combine(empty) == 0.0);
    std::vector<double> one{42.0};
    CHECK(pairwise_combine(one) == 42.0);
    std::vector<double> odd{1.0, 2.0, 3.0, 4.0, 5.0};
    CHECK(pairwise_combine(odd) == 15.0);
}

// The OpenMP kernels must match the serial reference implementations
// bit-for-bit; the per-element math and the reduction trees are shared.
TEST_CASE("reference and parallel kernels agree bitwise") {
    const GridDims dims{12, 10, 8, 6};
    const Volume4D vol = random_volume(dims, 21, 0.4);

    SUBCASE("brain_mask") { CHECK(ref::brain_mask(vol) == brain_mask(vol)); }

    SUBCASE("apply_mask") {
        const MaskStrategy st = MaskStrategy::parse("random-random:0.3", 5);
        const Mask4D mask = generate_mask(st, dims, nullptr, Mask3D{}, nullptr);
        CHECK(ref::apply_mask(vol, mask, 0.5f).data == apply_mask(vol, mask, 0.5f).data);
    }

    SUBCASE("zscore") {
        CHECK(ref::zscore_nonbackground(vol).data == zscore_nonbackground(vol).data);
    }

    SUBCASE("resample_spatial") {
        Volume4D v = vol;
        v.spacing_mm = {1.0, 1.0, 1.0};
        const auto a = ref::resample_spatial(v, {1.6, 2.0, 0.7});
        const auto b = resample_spatial(v, {1.6, 2.0, 0.7});
        CHECK(a.dims == b.dims);
        CHECK(a.data == b.data);
        CHECK(a.affine == b.affine);
    }

    SUBCASE("crop_or_pad") {
        const auto a = ref::crop_or_pad(vol, {15, 7, 8});
        const auto b = crop_or_pad(vol, {15, 7, 8});
        CHECK(a.dims == b.dims);
        CHECK(a.data == b.data);
        CHECK(a.affine == b.affine);
    }

    SUBCASE("resample_temporal") {
        Volume4D v = vol;
        v.tr_s = 2.0;
        const auto a = ref::resample_temporal(v, 0.8);
        const auto b = resample_temporal(v, 0.8);
        CHECK(a.dims == b.dims);
        CHECK(a.data == b.data);
    }

    SUBCASE("align_atlas") {
        LabelVolume atlas;
        atlas.dims = {6, 5, 4, 1};
        atlas.spacing_mm = {2.0, 2.0, 2.0};
        atlas.affine = Affine::scaling(2.0, 2.0, 2.0);
        atlas.labels.resize(static_cast<std::size_t>(atlas.dims.spatial()));
        CounterRng rng(33, "labels");
        for (auto& l : atlas.labels) l = static_cast<std::uint16_t>(rng.next_below(5));
        Volume4D v = vol;
        v.spacing_mm = {1.0, 1.0, 1.0};
        CHECK(ref::align_atlas(atlas, v).labels == align_atlas(atlas, v).labels);
    }

    SUBCASE("masked_mse") {
        const Volume4D target = random_volume(dims, 22);
        const MaskStrategy st = MaskStrategy::parse("random-tube:0.2", 6);
        const Mask4D mask = generate_mask(st, dims, nullptr, Mask3D{}, nullptr);
        CHECK(ref::masked_mse(vol, target, mask) == masked_mse(vol, target, mask));
    }

    SUBCASE("mae forward") {
        PatchSpec spec;
        spec.patch = {4, 5, 4, 3};
        const MaeModel model = MaeModel::init(spec, 10, 6, 77);
        CHECK(ref::forward(model, vol).data == forward(model, vol).data);
    }
}
