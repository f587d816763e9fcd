#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "isd/config.hpp"
#include "isd/isdt_io.hpp"
#include "isd/manifest.hpp"
#include "isd/phantom.hpp"
#include "isd/train.hpp"
#include "testutil.hpp"

namespace fs = std::filesystem;
using isd::Shape;
using isd::Tensor;
namespace io = isd::io;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("isdt round trip is bit exact") {
    TempDir dir("isd_io_test");
    auto g = isd::rng::substream(1, isd::rng::kTagTest);
    const auto t = Tensor<float>::uniform({3, 4, 5}, -100.f, 100.f, g);
    io::write_isdt(dir.path / "t.isdt", t);
    const auto back = io::read_isdt(dir.path / "t.isdt");
    CHECK(back.dtype == io::Dtype::F32);
    REQUIRE(back.dims == Shape{3, 4, 5});
    for (std::size_t i = 0; i < t.numel(); ++i) CHECK(back.f32[i] == t[i]);

    const auto d = Tensor<double>::uniform({7}, -1.0, 1.0, g);
    io::write_isdt(dir.path / "d.isdt", d);
    const auto dback = io::read_isdt(dir.path / "d.isdt");
    CHECK(dback.dtype == io::Dtype::F64);
    for (std::size_t i = 0; i < 7; ++i) CHECK(dback.f64[i] == d[i]);

    std::string why;
    CHECK(io::check_isdt(dir.path / "t.isdt", &why));
    CHECK(io::check_isdt(dir.path / "d.isdt", &why));
}

TEST_CASE("isdt supports 0-d scalars") {
    TempDir dir("isd_io_scalar");
    io::write_isdt(dir.path / "s.isdt", Tensor<float>::scalar(3.5f));
    const auto back = io::read_isdt(dir.path / "s.isdt");
    CHECK(back.dims.empty());
    CHECK(back.numel() == 1);
    CHECK(back.f32[0] == 3.5f);
}

TEST_CASE("isdt rejects corruption instead of crashing") {
    TempDir dir("isd_io_bad");
    io::write_isdt(dir.path / "t.isdt", Tensor<float>::full({4}, 1.f));
    std::string bytes = slurp(dir.path / "t.isdt");

    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    io::atomic_write(dir.path / "bad_magic.isdt", bad_magic);
    CHECK_THROWS_AS(io::read_isdt(dir.path / "bad_magic.isdt"), io::FormatError);

    io::atomic_write(dir.path / "trunc.isdt", bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(io::read_isdt(dir.path / "trunc.isdt"), io::FormatError);

    std::string bad_dtype = bytes;
    bad_dtype[5] = 9;
    io::atomic_write(dir.path / "bad_dtype.isdt", bad_dtype);
    CHECK_THROWS_AS(io::read_isdt(dir.path / "bad_dtype.isdt"), io::FormatError);

    std::string why;
    CHECK_FALSE(io::check_isdt(dir.path / "bad_magic.isdt", &why));
    CHECK(!why.empty());
    CHECK_THROWS_AS(io::read_isdt(dir.path / "missing.isdt"), io::IoError);
}

TEST_CASE("isdt container: named tensors, mixed dtypes, checker") {
    TempDir dir("isd_io_container");
    auto g = isd::rng::substream(2, isd::rng::kTagTest);
    const auto a = Tensor<float>::uniform({2, 3}, 0.f, 1.f, g);
    const auto b = Tensor<double>::uniform({4}, 0.0, 1.0, g);
    io::ContainerWriter w(dir.path / "c.isdt");
    w.add("block/a", a);
    w.add("meta", b);
    w.finish();

    const auto c = io::Container::load(dir.path / "c.isdt");
    CHECK(c.has("block/a"));
    CHECK(c.has("meta"));
    CHECK(!c.has("nope"));
    CHECK(c.names().size() == 2);
    const auto ra = c.get("block/a");
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(ra.f32[i] == a[i]);
    const auto rb = c.get("meta");
    for (std::size_t i = 0; i < 4; ++i) CHECK(rb.f64[i] == b[i]);

    std::string why;
    CHECK(io::check_isdt(dir.path / "c.isdt", &why));
    // First block of a container is readable as a plain tensor too.
    const auto first = io::read_isdt(dir.path / "c.isdt");
    CHECK(first.dims == Shape{2, 3});
}

TEST_CASE("pgm export quantizes and clamps") {
    TempDir dir("isd_io_pgm");
    const auto plane = Tensor<float>::from({2, 3}, {-5.f, 0.f, 127.4f, 127.6f, 255.f, 300.f});
    io::write_pgm(dir.path / "p.pgm", plane);
    const std::string bytes = slurp(dir.path / "p.pgm");
    const std::string header = "P5\n3 2\n255\n";
    REQUIRE(bytes.size() == header.size() + 6);
    CHECK(bytes.substr(0, header.size()) == header);
    const unsigned char* px = reinterpret_cast<const unsigned char*>(bytes.data() + header.size());
    CHECK(px[0] == 0);
    CHECK(px[1] == 0);
    CHECK(px[2] == 127);
    CHECK(px[3] == 128);
    CHECK(px[4] == 255);
    CHECK(px[5] == 255);
}

TEST_CASE("manifest round trip and validation") {
    TempDir dir("isd_manifest");
    io::write_isdt(dir.path / "a.isdt", Tensor<float>::full({2, 2}, 1.f));
    io::write_isdt(dir.path / "m.isdt", Tensor<float>::full({2, 2}, 0.f));

    io::Manifest m;
    m.task = "seg";
    m.entries.push_back({"a.isdt", "m.isdt", "train"});
    io::write_manifest(dir.path / "manifest.isdm", m);
    const auto back = io::read_manifest(dir.path / "manifest.isdm");
    CHECK(back.task == "seg");
    REQUIRE(back.entries.size() == 1);
    CHECK(back.entries[0].path == "a.isdt");
    CHECK(back.entries[0].split == "train");

    io::Manifest missing = m;
    missing.entries[0].label_or_mask = "absent.isdt";
    io::write_manifest(dir.path / "bad.isdm", missing);
    CHECK_THROWS_AS(io::read_manifest(dir.path / "bad.isdm"), io::FormatError);

    io::atomic_write(dir.path / "hdr.isdm", "#wrong v1\n");
    CHECK_THROWS_AS(io::read_manifest(dir.path / "hdr.isdm"), io::FormatError);

    io::Manifest badsplit = m;
    badsplit.entries[0].split = "validation";
    io::write_manifest(dir.path / "split.isdm", badsplit);
    CHECK_THROWS_AS(io::read_manifest(dir.path / "split.isdm"), io::FormatError);

    io::Manifest cls;
    cls.task = "cls";
    cls.entries.push_back({"a.isdt", "1", "test"});
    io::write_manifest(dir.path / "cls.isdm", cls);
    CHECK(io::read_manifest(dir.path / "cls.isdm").entries[0].label_or_mask == "1");
}

TEST_CASE("config file parsing") {
    TempDir dir("isd_config");
    io::atomic_write(dir.path / "run.cfg",
                     "# comment\n"
                     "input_size = 16\n"
                     "num_stages = 2\n"
                     "stage_channels = 8, 16\n"
                     "decoder_channels = 8\n"
                     "attention_enabled = true\n"
                     "pretrain_base_lr = 0.002\n"
                     "spatial_ratio = 0.25\n");
    const auto cfg = isd::load_config(dir.path / "run.cfg");
    CHECK(cfg.model.input_size == 16);
    CHECK(cfg.model.stage_channels == std::vector<std::size_t>{8, 16});
    CHECK(cfg.model.attention_enabled);
    CHECK(cfg.pretrain_sched.base_lr == 0.002);
    CHECK(cfg.spatial_ratio == 0.25);
    CHECK(cfg.k_bins == 16);  // untouched default

    io::atomic_write(dir.path / "bad.cfg", "no_such_key = 1\n");
    CHECK_THROWS_AS(isd::load_config(dir.path / "bad.cfg"), io::FormatError);
    io::atomic_write(dir.path / "bad2.cfg", "input_size 16\n");
    CHECK_THROWS_AS(isd::load_config(dir.path / "bad2.cfg"), io::FormatError);
}

TEST_CASE("phantoms: determinism, HU ranges, lesion containment, split") {
    TempDir a("isd_phantom_a"), b("isd_phantom_b");
    isd::phantom::PhantomSpec spec;
    spec.count = 20;
    spec.size = 16;
    spec.seed = 42;
    isd::phantom::gen_phantoms(spec, a.path);
    isd::phantom::gen_phantoms(spec, b.path);

    std::size_t train = 0, test = 0;
    const auto manifest = io::read_manifest(a.path / "manifest_seg.isdm");
    REQUIRE(manifest.entries.size() == 20);
    for (const auto& e : manifest.entries) (e.split == "train" ? train : test) += 1;
    CHECK(train == 16);
    CHECK(test == 4);

    for (const auto& e : manifest.entries) {
        CHECK(slurp(a.path / e.path) == slurp(b.path / e.path));
        CHECK(slurp(a.path / e.label_or_mask) == slurp(b.path / e.label_or_mask));

        const auto vol = io::read_isdt(a.path / e.path);
        const auto msk = io::read_isdt(a.path / e.label_or_mask);
        REQUIRE(vol.dims == msk.dims);
        bool any = false;
        for (std::size_t i = 0; i < vol.f32.size(); ++i) {
            CHECK(vol.f32[i] >= -1024.f);
            CHECK(vol.f32[i] <= 400.f);
            if (msk.f32[i] != 0.f) {
                any = true;
                // Lesion voxels carry lesion HU, inside the body by construction.
                CHECK(vol.f32[i] >= spec.lesion_hu_min);
                CHECK(vol.f32[i] <= spec.lesion_hu_max);
            }
        }
        CHECK(any);  // default spec forbids empty lesions
    }
    CHECK(slurp(a.path / "manifest_seg.isdm") == slurp(b.path / "manifest_seg.isdm"));
    CHECK(slurp(a.path / "manifest_cls.isdm") == slurp(b.path / "manifest_cls.isdm"));
}

TEST_CASE("phantoms: 3-d volumes and allow-empty labels") {
    TempDir dir("isd_phantom_3d");
    isd::phantom::PhantomSpec spec;
    spec.count = 6;
    spec.size = 12;
    spec.dims = 3;
    spec.seed = 7;
    spec.allow_empty_lesions = true;
    isd::phantom::gen_phantoms(spec, dir.path);
    const auto manifest = io::read_manifest(dir.path / "manifest_cls.isdm");
    REQUIRE(manifest.entries.size() == 6);
    const auto vol = io::read_isdt(dir.path / manifest.entries[0].path);
    CHECK(vol.dims == Shape{12, 12, 12});
}

TEST_CASE("load_samples wires manifests into model-ready tensors") {
    TempDir dir("isd_load_samples");
    isd::phantom::PhantomSpec spec;
    spec.count = 8;
    spec.size = 16;
    spec.seed = 3;
    isd::phantom::gen_phantoms(spec, dir.path);

    const auto manifest = isd::train::find_manifest(dir.path, isd::train::Task::Seg);
    const auto samples = isd::train::load_samples(manifest, "train", 16);
    REQUIRE(!samples.empty());
    for (const auto& s : samples) {
        CHECK(s.image.shape() == Shape{3, 16, 16});
        for (const float v : s.image.value()) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
        CHECK(s.mask.shape() == Shape{1, 16, 16});
    }
    CHECK_THROWS_AS(isd::train::load_samples(manifest, "train", 32), io::FormatError);
}
