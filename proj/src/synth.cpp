#include "roimae/synth.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "roimae/nifti_io.hpp"
#include "roimae/rng.hpp"

namespace roimae {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

struct BrainBox {
    std::array<index_t, 3> lo, hi; // half-open
};

BrainBox brain_box(const GridDims& dims) {
    BrainBox box;
    const std::array<index_t, 3> n{dims.nx, dims.ny, dims.nz};
    for (int a = 0; a < 3; ++a) {
        const auto ia = static_cast<std::size_t>(a);
        const index_t margin = n[ia] / 8;
        box.lo[ia] = margin;
        box.hi[ia] = n[ia] - margin;
    }
    return box;
}

void check_config(const PhantomConfig& cfg) {
    if (!cfg.dims.valid()) throw invalid_argument("phantom: bad dims");
    if (cfg.n_regions < 1 || cfg.n_regions > static_cast<index_t>(kRegionGroupNames.size())) {
        throw invalid_argument("phantom: n_regions must be 1.." +
                               std::to_string(kRegionGroupNames.size()));
    }
    if (cfg.target_region < 1 || cfg.target_region > cfg.n_regions) {
        throw invalid_argument("phantom: target_region out of range");
    }
    if (cfg.noise_std < 0.0) throw invalid_argument("phantom: negative noise std");
    if (!(cfg.tr_s > 0.0)) throw invalid_argument("phantom: nonpositive TR");
    const BrainBox box = brain_box(cfg.dims);
    if (cfg.n_regions > box.hi[2] - box.lo[2]) {
        throw invalid_argument("phantom: n_regions exceeds the brain block depth");
    }
}

} // namespace

LabelVolume generate_atlas(const PhantomConfig& cfg) {
    check_config(cfg);
    const BrainBox box = brain_box(cfg.dims);
    const index_t depth = box.hi[2] - box.lo[2];

    LabelVolume atlas;
    atlas.dims = GridDims{cfg.dims.nx, cfg.dims.ny, cfg.dims.nz, 1};
    atlas.spacing_mm = cfg.spacing_mm;
    atlas.affine = Affine::scaling(cfg.spacing_mm[0], cfg.spacing_mm[1], cfg.spacing_mm[2]);
    atlas.labels.assign(static_cast<std::size_t>(atlas.dims.spatial()), 0);

    for (index_t z = box.lo[2]; z < box.hi[2]; ++z) {
        // Slab index from the z offset inside the block.
        const index_t rel = z - box.lo[2];
        const auto label = static_cast<std::uint16_t>(rel * cfg.n_regions / depth + 1);
        for (index_t y = box.lo[1]; y < box.hi[1]; ++y) {
            for (index_t x = box.lo[0]; x < box.hi[0]; ++x) {
                atlas.labels[static_cast<std::size_t>(flat_index(x, y, z, 0, atlas.dims))] = label;
            }
        }
    }
    return atlas;
}

Volume4D generate_subject(const PhantomConfig& cfg, int cls, std::uint64_t subject_seed) {
    check_config(cfg);
    if (cls != 0 && cls != 1) throw invalid_argument("phantom: class must be 0 or 1");

    const LabelVolume atlas = generate_atlas(cfg);
    const index_t ns = cfg.dims.spatial();
    const index_t nt = cfg.dims.nt;

    Volume4D vol;
    vol.dims = cfg.dims;
    vol.spacing_mm = cfg.spacing_mm;
    vol.tr_s = cfg.tr_s;
    vol.affine = atlas.affine;
    vol.data.assign(static_cast<std::size_t>(cfg.dims.total()), 0.0f);

    // Deterministic temporal components shared by all brain voxels.
    std::vector<double> base(static_cast<std::size_t>(nt)), extra(static_cast<std::size_t>(nt));
    for (index_t t = 0; t < nt; ++t) {
        const double time = static_cast<double>(t) * cfg.tr_s;
        base[static_cast<std::size_t>(t)] =
            cfg.amplitude * std::sin(kTwoPi * cfg.base_frequency_hz * time);
        extra[static_cast<std::size_t>(t)] =
            cfg.amplitude * std::sin(kTwoPi * 2.0 * cfg.base_frequency_hz * time);
    }

    const std::uint64_t noise_domain = fnv1a64("phantom-noise") ^ (subject_seed * 0x9E3779B97F4A7C15ull);
    const auto target = static_cast<std::uint16_t>(cfg.target_region);
    float* data = vol.data.data();
    const std::uint16_t* labels = atlas.labels.data();

#pragma omp parallel for schedule(static)
    for (index_t s = 0; s < ns; ++s) {
        const std::uint16_t label = labels[s];
        if (label == 0) continue;
        const bool carries_signal = (cls == 1 && label == target);

        // Per-voxel counter stream; AR(1) recursion runs along time.
        CounterRng rng(cfg.seed, noise_domain, static_cast<std::uint64_t>(s));
        double prev = 0.0;
        double spare = 0.0;
        bool have_spare = false;
        for (index_t t = 0; t < nt; ++t) {
            double e;
            if (have_spare) {
                e = spare;
                have_spare = false;
            } else {
                const auto [a, b] = rng.next_normal_pair();
                e = a;
                spare = b;
                have_spare = true;
            }
            e *= cfg.noise_std;
            const double noise = t == 0 ? e : cfg.ar_coeff * prev + e;
            prev = noise;

            double v = base[static_cast<std::size_t>(t)] + noise;
            if (carries_signal) v += extra[static_cast<std::size_t>(t)];
            data[t * ns + s] = static_cast<float>(v);
        }
    }
    return vol;
}

GroupingTable phantom_grouping(const PhantomConfig& cfg) {
    check_config(cfg);
    GroupingTable table;
    table.source = "phantom";
    for (index_t k = 1; k <= cfg.n_regions; ++k) {
        RegionGroup g;
        g.name = kRegionGroupNames[static_cast<std::size_t>(k - 1)];
        g.label_ids = {static_cast<std::uint16_t>(k)};
        table.groups.push_back(std::move(g));
    }
    return table;
}

std::string target_region_group(const PhantomConfig& cfg) {
    check_config(cfg);
    return kRegionGroupNames[static_cast<std::size_t>(cfg.target_region - 1)];
}

void write_synth_dataset(const PhantomConfig& cfg, const std::string& dir, bool as_nifti) {
    check_config(cfg);
    std::filesystem::create_directories(dir);

    const LabelVolume atlas = generate_atlas(cfg);
    write_v4d_labels(atlas, dir + "/atlas.v4d");

    {
        const GroupingTable table = phantom_grouping(cfg);
        std::ofstream f(dir + "/grouping.txt");
        for (const auto& g : table.groups) {
            f << g.name << ": ";
            for (std::size_t i = 0; i < g.label_ids.size(); ++i) {
                if (i) f << ", ";
                f << g.label_ids[i];
            }
            f << "\n";
        }
        if (!f) throw io_error(io_error::code::write_failed, "short write to " + dir + "/grouping.txt");
    }

    std::ofstream csv(dir + "/labels.csv");
    csv << "subject_id,label\n";

    const index_t n = 2 * cfg.subjects_per_class;
    for (index_t i = 0; i < n; ++i) {
        const int cls = static_cast<int>(i % 2);
        char name[32];
        std::snprintf(name, sizeof name, "sub-%03lld", static_cast<long long>(i));
        const Volume4D vol = generate_subject(cfg, cls, static_cast<std::uint64_t>(i));
        if (as_nifti) {
            write_volume(vol, dir + "/" + name + ".nii");
        } else {
            write_v4d(vol, dir + "/" + name + ".v4d");
        }
        csv << name << "," << cls << "\n";
    }
    if (!csv) throw io_error(io_error::code::write_failed, "short write to " + dir + "/labels.csv");
}

} // namespace roimae
