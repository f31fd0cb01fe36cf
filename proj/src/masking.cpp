#include "roimae/masking.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "roimae/rng.hpp"

namespace roimae {

namespace {

std::string format_ratio(double r) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", r);
    return buf;
}

// First k elements of a partial Fisher-Yates shuffle over `candidates`.
void select_k(std::vector<index_t>& candidates, index_t k, CounterRng& rng) {
    const auto n = static_cast<index_t>(candidates.size());
    for (index_t i = 0; i < k; ++i) {
        const index_t j = i + static_cast<index_t>(
                                  rng.next_below(static_cast<std::uint64_t>(n - i)));
        std::swap(candidates[static_cast<std::size_t>(i)],
                  candidates[static_cast<std::size_t>(j)]);
    }
    candidates.resize(static_cast<std::size_t>(k));
}

index_t rounded_count(double fraction, index_t available, const char* what) {
    const auto k = static_cast<index_t>(std::llround(fraction * static_cast<double>(available)));
    if (k > available) {
        throw invalid_argument(std::string(what) + ": requested " + std::to_string(k) +
                               " voxels, only " + std::to_string(available) + " available");
    }
    return k;
}

void set_tube(Mask4D& mask, index_t spatial_idx, const GridDims& dims) {
    const index_t ns = dims.spatial();
    for (index_t t = 0; t < dims.nt; ++t) {
        mask.set(t * ns + spatial_idx, true);
    }
}

} // namespace

std::string resolve_group_name(const std::string& name) {
    std::string lower;
    for (char c : name) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));

    const std::string* match = nullptr;
    for (const auto& canonical : kRegionGroupNames) {
        std::string cl;
        for (char c : canonical) cl += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        if (cl.compare(0, lower.size(), lower) == 0) {
            if (match) throw invalid_argument("region name \"" + name + "\" is ambiguous");
            match = &canonical;
        }
    }
    if (!match) throw invalid_argument("unknown region name \"" + name + "\"");
    return *match;
}

std::string MaskStrategy::fingerprint() const {
    switch (variant) {
        case MaskVariant::random_random:
            return "random-random:" + format_ratio(ratio);
        case MaskVariant::random_tube:
            return "random-tube:" + format_ratio(ratio);
        case MaskVariant::window_random:
            return "window-random:" + std::to_string(block_shape[0]) + "x" +
                   std::to_string(block_shape[1]) + "x" + std::to_string(block_shape[2]) + ":" +
                   format_ratio(ratio) + ":p" + format_ratio(frame_prob);
        case MaskVariant::roi_tube: {
            std::string names;
            for (std::size_t i = 0; i < group_names.size(); ++i) {
                if (i) names += ',';
                names += group_names[i];
            }
            return "roi:" + names + ":" + format_ratio(fraction_per_group);
        }
    }
    return "";
}

MaskStrategy MaskStrategy::parse(const std::string& text, std::uint64_t seed) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : text) {
        if (c == ':') {
            parts.push_back(cur);
            cur.clear();
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            cur += c;
        }
    }
    parts.push_back(cur);

    auto parse_real = [&](const std::string& s, const char* what) {
        try {
            std::size_t used = 0;
            const double v = std::stod(s, &used);
            if (used != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw invalid_argument("mask spec \"" + text + "\": bad " + what + " \"" + s + "\"");
        }
    };

    MaskStrategy st;
    st.seed = seed;
    const std::string& kind = parts[0];

    if (kind == "random-random" || kind == "random-tube") {
        if (parts.size() != 2) {
            throw invalid_argument("mask spec \"" + text + "\": expected " + kind + ":<ratio>");
        }
        st.variant = kind == "random-random" ? MaskVariant::random_random
                                             : MaskVariant::random_tube;
        st.ratio = parse_real(parts[1], "ratio");
        if (!(st.ratio > 0.0 && st.ratio < 1.0)) {
            throw invalid_argument("mask spec \"" + text + "\": ratio must be in (0,1)");
        }
    } else if (kind == "window-random") {
        if (parts.size() != 3) {
            throw invalid_argument("mask spec \"" + text +
                                   "\": expected window-random:<bx>x<by>x<bz>:<ratio>");
        }
        st.variant = MaskVariant::window_random;
        std::array<index_t, 3> bs{};
        char sep1 = 0, sep2 = 0;
        std::istringstream bss(parts[1]);
        if (!(bss >> bs[0] >> sep1 >> bs[1] >> sep2 >> bs[2]) || sep1 != 'x' || sep2 != 'x' ||
            bs[0] < 1 || bs[1] < 1 || bs[2] < 1) {
            throw invalid_argument("mask spec \"" + text + "\": bad block shape \"" + parts[1] +
                                   "\"");
        }
        st.block_shape = bs;
        st.ratio = parse_real(parts[2], "ratio");
        if (!(st.ratio > 0.0 && st.ratio < 1.0)) {
            throw invalid_argument("mask spec \"" + text + "\": ratio must be in (0,1)");
        }
    } else if (kind == "roi") {
        if (parts.size() < 2 || parts.size() > 3) {
            throw invalid_argument("mask spec \"" + text + "\": expected roi:<name,...>[:fraction]");
        }
        st.variant = MaskVariant::roi_tube;
        std::string names = parts[1];
        std::replace(names.begin(), names.end(), ',', ' ');
        std::istringstream ns(names);
        std::string name;
        while (ns >> name) st.group_names.push_back(resolve_group_name(name));
        if (st.group_names.empty()) {
            throw invalid_argument("mask spec \"" + text + "\": no region names");
        }
        st.fraction_per_group = parts.size() == 3 ? parse_real(parts[2], "fraction") : 1.0;
        if (!(st.fraction_per_group > 0.0 && st.fraction_per_group <= 1.0)) {
            throw invalid_argument("mask spec \"" + text + "\": fraction must be in (0,1]");
        }
    } else {
        throw invalid_argument("mask spec \"" + text + "\": unknown variant \"" + kind + "\"");
    }
    return st;
}

Mask4D generate_mask(const MaskStrategy& strategy, const GridDims& dims,
                     const LabelVolume* labels, const Mask3D& brain,
                     const GroupingTable* grouping, std::uint64_t stream) {
    if (!dims.valid()) throw invalid_argument("generate_mask: bad dims");

    CounterRng rng(strategy.seed, fnv1a64(strategy.fingerprint()), stream);
    Mask4D mask(dims);
    const index_t ns = dims.spatial();

    switch (strategy.variant) {
        case MaskVariant::random_random: {
            const index_t total = dims.total();
            const index_t k = rounded_count(strategy.ratio, total, "random-random");
            std::vector<index_t> candidates(static_cast<std::size_t>(total));
            for (index_t i = 0; i < total; ++i) candidates[static_cast<std::size_t>(i)] = i;
            select_k(candidates, k, rng);
            for (index_t i : candidates) mask.set(i, true);
            break;
        }
        case MaskVariant::random_tube: {
            const index_t k = rounded_count(strategy.ratio, ns, "random-tube");
            std::vector<index_t> candidates(static_cast<std::size_t>(ns));
            for (index_t i = 0; i < ns; ++i) candidates[static_cast<std::size_t>(i)] = i;
            select_k(candidates, k, rng);
            for (index_t s : candidates) set_tube(mask, s, dims);
            break;
        }
        case MaskVariant::window_random: {
            const auto& bs = strategy.block_shape;
            const index_t nbx = (dims.nx + bs[0] - 1) / bs[0];
            const index_t nby = (dims.ny + bs[1] - 1) / bs[1];
            const index_t nbz = (dims.nz + bs[2] - 1) / bs[2];
            const index_t nblocks = nbx * nby * nbz;
            const index_t target = rounded_count(strategy.ratio, ns, "window-random");

            std::vector<index_t> blocks(static_cast<std::size_t>(nblocks));
            for (index_t i = 0; i < nblocks; ++i) blocks[static_cast<std::size_t>(i)] = i;

            // Draw blocks without replacement until the spatial budget is met,
            // then coin-flip each (block, frame) pair.
            index_t covered = 0;
            std::vector<index_t> selected;
            for (index_t i = 0; i < nblocks && covered < target; ++i) {
                const index_t j = i + static_cast<index_t>(rng.next_below(
                                          static_cast<std::uint64_t>(nblocks - i)));
                std::swap(blocks[static_cast<std::size_t>(i)],
                          blocks[static_cast<std::size_t>(j)]);
                const index_t b = blocks[static_cast<std::size_t>(i)];
                const index_t bx = b % nbx, by = (b / nbx) % nby, bz = b / (nbx * nby);
                const index_t x0 = bx * bs[0], y0 = by * bs[1], z0 = bz * bs[2];
                const index_t x1 = std::min(x0 + bs[0], dims.nx);
                const index_t y1 = std::min(y0 + bs[1], dims.ny);
                const index_t z1 = std::min(z0 + bs[2], dims.nz);
                covered += (x1 - x0) * (y1 - y0) * (z1 - z0);
                selected.push_back(b);
            }
            for (index_t b : selected) {
                const index_t bx = b % nbx, by = (b / nbx) % nby, bz = b / (nbx * nby);
                const index_t x0 = bx * bs[0], y0 = by * bs[1], z0 = bz * bs[2];
                const index_t x1 = std::min(x0 + bs[0], dims.nx);
                const index_t y1 = std::min(y0 + bs[1], dims.ny);
                const index_t z1 = std::min(z0 + bs[2], dims.nz);
                for (index_t t = 0; t < dims.nt; ++t) {
                    if (rng.next_double() >= strategy.frame_prob) continue;
                    for (index_t z = z0; z < z1; ++z) {
                        for (index_t y = y0; y < y1; ++y) {
                            for (index_t x = x0; x < x1; ++x) {
                                mask.set(flat_index(x, y, z, t, dims), true);
                            }
                        }
                    }
                }
            }
            break;
        }
        case MaskVariant::roi_tube: {
            if (!labels) throw invalid_argument("roi mask: label volume required");
            if (!grouping) throw invalid_argument("roi mask: grouping table required");
            if (labels->dims.nx != dims.nx || labels->dims.ny != dims.ny ||
                labels->dims.nz != dims.nz) {
                throw invalid_argument("roi mask: atlas dims do not match volume dims");
            }
            if (brain.dims().spatial() != ns) {
                throw invalid_argument("roi mask: brain mask dims mismatch");
            }
            for (const auto& name : strategy.group_names) {
                const RegionGroup* group = grouping->find(name);
                if (!group) {
                    throw invalid_argument("roi mask: group \"" + name +
                                           "\" not in the grouping table");
                }
                const Mask3D region = region_voxels(*labels, *group);
                std::vector<index_t> candidates;
                for (index_t s = 0; s < ns; ++s) {
                    if (region.test(s) && brain.test(s)) candidates.push_back(s);
                }
                if (candidates.empty()) {
                    throw invalid_argument("roi mask: region \"" + name +
                                           "\" has no voxels inside the brain mask");
                }
                const auto avail = static_cast<index_t>(candidates.size());
                const index_t k =
                    rounded_count(strategy.fraction_per_group, avail, "roi mask");
                if (k < avail) select_k(candidates, k, rng);
                for (index_t s : candidates) set_tube(mask, s, dims);
            }
            break;
        }
    }
    return mask;
}

Volume4D apply_mask(const Volume4D& vol, const Mask4D& mask, float fill) {
    validate(vol);
    if (mask.dims() != vol.dims) throw invalid_argument("apply_mask: dims mismatch");

    Volume4D out = vol;
    const index_t n = vol.dims.total();
    const std::uint8_t* bits = mask.raw();
    float* data = out.data.data();
#pragma omp parallel for schedule(static)
    for (index_t i = 0; i < n; ++i) {
        if (bits[i]) data[i] = fill;
    }
    return out;
}

} // namespace roimae
