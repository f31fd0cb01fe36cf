// Compares the OpenMP kernels against their serial reference twins:
// verifies bit-identical output, then reports wall time and speedup.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>

#include "roimae/reference.hpp"
#include "roimae/rng.hpp"

using namespace roimae;

namespace {

double now_s() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

Volume4D random_volume(const GridDims& dims, std::uint64_t seed, double sparse_zero = 0.0) {
    Volume4D v;
    v.dims = dims;
    v.data.resize(static_cast<std::size_t>(dims.total()));
    CounterRng rng(seed, "bench-volume");
    for (auto& x : v.data) {
        if (sparse_zero > 0.0 && rng.next_double() < sparse_zero) {
            x = 0.0f;
        } else {
            x = static_cast<float>(rng.next_double() * 2.0 - 1.0);
        }
    }
    return v;
}

template <class Fn>
double best_of(int reps, Fn&& fn) {
    double best = 1e30;
    for (int i = 0; i < reps; ++i) {
        const double t0 = now_s();
        fn();
        best = std::min(best, now_s() - t0);
    }
    return best;
}

struct Row {
    const char* name;
    double serial_s;
    double parallel_s;
    bool identical;
};

void print_row(const Row& r) {
    std::printf("%-22s %10.1f ms %10.1f ms %8.2fx   %s\n", r.name, r.serial_s * 1e3,
                r.parallel_s * 1e3, r.serial_s / r.parallel_s,
                r.identical ? "bit-identical" : "MISMATCH");
}

bool same(const Volume4D& a, const Volume4D& b) {
    return a.dims == b.dims &&
           std::memcmp(a.data.data(), b.data.data(), a.data.size() * 4) == 0;
}

} // namespace

int main() {
    const int reps = 3;
    std::printf("%-22s %13s %13s %9s\n", "kernel", "serial", "openmp", "speedup");

    {
        const Volume4D vol = random_volume({96, 96, 96, 8}, 1, 0.5);
        Mask3D a, b;
        const double ts = best_of(reps, [&] { a = ref::brain_mask(vol); });
        const double tp = best_of(reps, [&] { b = brain_mask(vol); });
        print_row({"brain_mask", ts, tp, a == b});
    }
    {
        const Volume4D vol = random_volume({96, 96, 96, 8}, 2);
        MaskStrategy st = MaskStrategy::parse("random-random:0.25", 7);
        const Mask4D mask = generate_mask(st, vol.dims, nullptr, Mask3D{}, nullptr);
        Volume4D a, b;
        const double ts = best_of(reps, [&] { a = ref::apply_mask(vol, mask); });
        const double tp = best_of(reps, [&] { b = apply_mask(vol, mask); });
        print_row({"apply_mask", ts, tp, same(a, b)});
    }
    {
        const Volume4D vol = random_volume({96, 96, 96, 8}, 3, 0.3);
        Volume4D a, b;
        const double ts = best_of(reps, [&] { a = ref::zscore_nonbackground(vol); });
        const double tp = best_of(reps, [&] { b = zscore_nonbackground(vol); });
        print_row({"zscore_nonbackground", ts, tp, same(a, b)});
    }
    {
        Volume4D vol = random_volume({96, 96, 96, 4}, 4);
        vol.spacing_mm = {1.0, 1.0, 1.0};
        Volume4D a, b;
        const double ts = best_of(reps, [&] { a = ref::resample_spatial(vol, {1.7, 1.7, 1.7}); });
        const double tp = best_of(reps, [&] { b = resample_spatial(vol, {1.7, 1.7, 1.7}); });
        print_row({"resample_spatial", ts, tp, same(a, b)});
    }
    {
        Volume4D vol = random_volume({64, 64, 64, 20}, 5);
        vol.tr_s = 2.0;
        Volume4D a, b;
        const double ts = best_of(reps, [&] { a = ref::resample_temporal(vol, 0.8); });
        const double tp = best_of(reps, [&] { b = resample_temporal(vol, 0.8); });
        print_row({"resample_temporal", ts, tp, same(a, b)});
    }
    {
        Volume4D vol = random_volume({96, 96, 96, 1}, 6);
        vol.spacing_mm = {1.0, 1.0, 1.0};
        LabelVolume atlas;
        atlas.dims = {48, 48, 48, 1};
        atlas.spacing_mm = {2.0, 2.0, 2.0};
        atlas.affine = Affine::scaling(2.0, 2.0, 2.0);
        atlas.labels.resize(static_cast<std::size_t>(atlas.dims.spatial()));
        CounterRng rng(8, "bench-atlas");
        for (auto& l : atlas.labels) l = static_cast<std::uint16_t>(rng.next_below(171));
        LabelVolume a, b;
        const double ts = best_of(reps, [&] { a = ref::align_atlas(atlas, vol); });
        const double tp = best_of(reps, [&] { b = align_atlas(atlas, vol); });
        print_row({"align_atlas", ts, tp, a.labels == b.labels});
    }
    {
        const Volume4D recon = random_volume({96, 96, 96, 8}, 9);
        const Volume4D target = random_volume({96, 96, 96, 8}, 10);
        MaskStrategy st = MaskStrategy::parse("random-tube:0.10", 11);
        const Mask4D mask = generate_mask(st, recon.dims, nullptr, Mask3D{}, nullptr);
        double a = 0, b = 0;
        const double ts = best_of(reps, [&] { a = ref::masked_mse(recon, target, mask); });
        const double tp = best_of(reps, [&] { b = masked_mse(recon, target, mask); });
        print_row({"masked_mse", ts, tp, a == b});
    }
    {
        const Volume4D vol = random_volume({32, 32, 32, 24}, 12);
        PatchSpec spec;
        spec.patch = {4, 4, 4, 6};
        const MaeModel model = MaeModel::init(spec, 48, 24, 13);
        Volume4D a, b;
        const double ts = best_of(reps, [&] { a = ref::forward(model, vol); });
        const double tp = best_of(reps, [&] { b = forward(model, vol); });
        print_row({"mae_forward", ts, tp, same(a, b)});
    }
    return 0;
}
