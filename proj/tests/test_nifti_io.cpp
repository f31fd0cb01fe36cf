#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "roimae/nifti_io.hpp"
#include "roimae/rng.hpp"

using namespace roimae;

namespace {

std::string fixture(const std::string& name) {
    return std::string(ROIMAE_FIXTURE_DIR) + "/" + name;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::vector<std::uint8_t> slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

Volume4D random_volume(const GridDims& dims, std::uint64_t seed) {
    Volume4D v;
    v.dims = dims;
    v.spacing_mm = {2.0, 2.0, 2.0};
    v.tr_s = 0.8;
    v.affine = Affine::scaling(2.0, 2.0, 2.0);
    v.data.resize(static_cast<std::size_t>(dims.total()));
    CounterRng rng(seed, "io-volume");
    for (auto& x : v.data) x = static_cast<float>(rng.next_double() * 10.0 - 5.0);
    return v;
}

} // namespace

TEST_CASE("hand-crafted single-voxel fixture") {
    const Volume4D v = read_volume(fixture("value7.nii"));
    CHECK(v.dims == GridDims{1, 1, 1, 1});
    REQUIRE(v.data.size() == 1);
    CHECK(v.data[0] == 7.0f);
    CHECK(v.tr_s == doctest::Approx(0.8));
    CHECK(v.spacing_mm[0] == doctest::Approx(2.0));
    CHECK(v.affine.at(0, 0) == doctest::Approx(2.0));
    CHECK(v.affine.at(3, 3) == 1.0);
}

TEST_CASE("gzip fixture parses identically") {
    const Volume4D a = read_volume(fixture("value7.nii"));
    const Volume4D b = read_volume(fixture("value7.nii.gz"));
    CHECK(a.data == b.data);
    CHECK(a.dims == b.dims);
    CHECK(a.affine == b.affine);
}

TEST_CASE("byte-swapped twin parses to the same volume") {
    const Volume4D a = read_volume(fixture("value7.nii"));
    const Volume4D b = read_volume(fixture("value7_bigendian.nii"));
    CHECK(a.data == b.data);
    CHECK(a.dims == b.dims);
    CHECK(a.tr_s == b.tr_s);
    CHECK(a.spacing_mm == b.spacing_mm);
    CHECK(a.affine == b.affine);
    CHECK(read_nifti_header(fixture("value7_bigendian.nii")).swapped);
}

TEST_CASE("scl_slope and scl_inter are applied to volume data") {
    const Volume4D v = read_volume(fixture("value7_scaled.nii"));
    CHECK(v.data[0] == 7.0f); // 2 * 3 + 1
}

TEST_CASE("on-disk order is x fastest") {
    const Volume4D v = read_volume(fixture("ramp_2x2x2x2.nii"));
    CHECK(v.dims == GridDims{2, 2, 2, 2});
    for (index_t i = 0; i < 16; ++i) {
        CHECK(v.data[static_cast<std::size_t>(i)] == static_cast<float>(i));
    }
    CHECK(v.at(1, 0, 0, 0) == 1.0f);
    CHECK(v.at(0, 1, 0, 0) == 2.0f);
    CHECK(v.at(0, 0, 1, 0) == 4.0f);
    CHECK(v.at(0, 0, 0, 1) == 8.0f);
}

TEST_CASE("alternative datatypes convert to float32") {
    CHECK(read_volume(fixture("vol_i16.nii")).data[0] == 7.0f);
    CHECK(read_volume(fixture("vol_f64.nii")).data[0] == 7.0f);
    CHECK(read_volume(fixture("vol_u8.nii")).data[0] == 7.0f);
}

TEST_CASE("label volumes") {
    SUBCASE("uint8 labels are preserved") {
        const LabelVolume l = read_labels(fixture("labels_u8.nii"));
        CHECK(l.labels == std::vector<std::uint16_t>{0, 1, 2, 1});
    }
    SUBCASE("scl fields are ignored for labels") {
        const LabelVolume l = read_labels(fixture("labels_scl.nii"));
        CHECK(l.labels == std::vector<std::uint16_t>{0, 1, 2, 1});
    }
    SUBCASE("uint16 atlas with 170 distinct labels") {
        const LabelVolume l = read_labels(fixture("labels_u16.nii"));
        std::set<std::uint16_t> distinct;
        for (auto v : l.labels) {
            if (v != 0) distinct.insert(v);
        }
        CHECK(distinct.size() == 170);
    }
}

TEST_CASE("malformed corpus hits designated error variants") {
    auto expects = [](const std::string& name, io_error::code code, bool labels = false) {
        CAPTURE(name);
        try {
            if (labels) {
                (void)read_labels(fixture(name));
            } else {
                (void)read_volume(fixture(name));
            }
            FAIL_CHECK(name << ": no error thrown");
        } catch (const io_error& e) {
            CHECK(e.kind() == code);
        }
    };
    expects("bad_magic.nii", io_error::code::bad_magic);
    expects("paired_magic.nii", io_error::code::paired_file);
    expects("bad_header_size.nii", io_error::code::bad_header_size);
    expects("bad_datatype.nii", io_error::code::unsupported_datatype);
    expects("bad_rank2.nii", io_error::code::bad_rank);
    expects("bad_rank7.nii", io_error::code::bad_rank);
    expects("bad_voxoffset.nii", io_error::code::bad_vox_offset);
    expects("truncated.nii", io_error::code::truncated_data);
    expects("truncated_header.nii", io_error::code::truncated_data);
    expects("neg_label.nii", io_error::code::negative_label, true);
    expects("float_label.nii", io_error::code::label_datatype, true);
    expects("no_such_file.nii", io_error::code::open_failed);

    // Label-specific rejections: float data, then rank 4 with integer data.
    expects("value7.nii", io_error::code::label_datatype, true);
    expects("labels_rank4.nii", io_error::code::bad_rank, true);
}

TEST_CASE("write/read round trip is bit exact") {
    const Volume4D v = random_volume({8, 8, 8, 4}, 101);
    const std::string path = temp_path("roundtrip.nii");
    write_volume(v, path);
    const Volume4D back = read_volume(path);

    CHECK(back.dims == v.dims);
    CHECK(back.data == v.data); // bit exact
    CHECK(back.tr_s == doctest::Approx(v.tr_s).epsilon(1e-6));
    for (int i = 0; i < 3; ++i) {
        CHECK(back.spacing_mm[static_cast<std::size_t>(i)] ==
              doctest::Approx(v.spacing_mm[static_cast<std::size_t>(i)]).epsilon(1e-6));
    }
    for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) {
            CHECK(back.affine.at(r, c) == doctest::Approx(v.affine.at(r, c)).epsilon(1e-6));
        }
    }
    std::remove(path.c_str());
}

TEST_CASE("round trip preserves TR 0.8") {
    Volume4D v = random_volume({4, 4, 4, 2}, 55);
    v.tr_s = 0.8;
    const std::string path = temp_path("tr.nii");
    write_volume(v, path);
    CHECK(read_nifti_header(path).pixdim[4] == 0.8f);
    CHECK(read_volume(path).tr_s == doctest::Approx(0.8));
    std::remove(path.c_str());
}

TEST_CASE("gzip write path") {
    const Volume4D v = random_volume({5, 4, 3, 2}, 77);
    const std::string path = temp_path("roundtrip.nii.gz");
    write_volume(v, path);
    const auto bytes = slurp(path);
    REQUIRE(bytes.size() >= 2);
    CHECK(bytes[0] == 0x1f);
    CHECK(bytes[1] == 0x8b);
    CHECK(read_volume(path).data == v.data);
    std::remove(path.c_str());
}

TEST_CASE("golden file: read-then-write reproduces the fixture bytes") {
    const Volume4D v = read_volume(fixture("value7.nii"));
    const std::string path = temp_path("golden.nii");
    write_volume(v, path);
    CHECK(slurp(path) == slurp(fixture("value7.nii")));
    std::remove(path.c_str());
}

TEST_CASE("v4d raw interchange round trip") {
    SUBCASE("volume") {
        Volume4D v = random_volume({6, 5, 4, 3}, 13);
        v.affine.at(0, 3) = -12.5;
        const std::string path = temp_path("vol.v4d");
        write_v4d(v, path);
        const Volume4D back = read_v4d(path);
        CHECK(back.data == v.data);
        CHECK(back.dims == v.dims);
        CHECK(back.affine == v.affine); // text sidecar keeps full precision
        CHECK(back.tr_s == v.tr_s);
        CHECK(load_volume(path).data == v.data);
        std::remove(path.c_str());
        std::remove((path + ".meta").c_str());
    }
    SUBCASE("labels") {
        LabelVolume l;
        l.dims = {4, 3, 2, 1};
        l.spacing_mm = {2.0, 2.0, 2.0};
        l.labels.resize(24);
        for (std::size_t i = 0; i < l.labels.size(); ++i) {
            l.labels[i] = static_cast<std::uint16_t>(i % 7);
        }
        const std::string path = temp_path("labels.v4d");
        write_v4d_labels(l, path);
        const LabelVolume back = read_v4d_labels(path);
        CHECK(back.labels == l.labels);
        CHECK(back.dims == l.dims);
        CHECK(load_labels(path).labels == l.labels);
        std::remove(path.c_str());
        std::remove((path + ".meta").c_str());
    }
    SUBCASE("kind mismatch and malformed sidecar") {
        Volume4D v = random_volume({2, 2, 2, 1}, 1);
        const std::string path = temp_path("wrongkind.v4d");
        write_v4d(v, path);
        CHECK_THROWS_AS((void)read_v4d_labels(path), io_error);

        std::ofstream meta(path + ".meta");
        meta << "v4d 1\nkind volume\ndims 2 2 2\n"; // bad dims line
        meta.close();
        CHECK_THROWS_AS((void)read_v4d(path), io_error);
        std::remove(path.c_str());
        std::remove((path + ".meta").c_str());
    }
}
