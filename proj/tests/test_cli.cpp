#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "isd/isdt_io.hpp"

// CLI surface contracts: exit codes, artifact layout, the classification
// path. Drives the real binary.

namespace fs = std::filesystem;

namespace {

const fs::path kDir = fs::path("cli_work");

int cli(const std::string& args) {
    const std::string cmd =
        std::string(DUALMASK_CLI_PATH) + " " + args + " > " + (kDir / "out.log").string() + " 2> " +
        (kDir / "err.log").string();
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("exit codes: usage, data/format, numeric") {
    fs::remove_all(kDir);
    fs::create_directories(kDir);

    CHECK(cli("no-such-subcommand") == 1);
    CHECK(cli("pretrain --bogus-flag") == 1);
    CHECK(!slurp(kDir / "err.log").empty());  // usage text lands on stderr

    CHECK(cli("gen-phantoms --out " + (kDir / "data").string() + " --count 8 --size 16 --seed 1") == 0);

    // Data / format errors exit 2.
    CHECK(cli("eval --data " + (kDir / "nowhere").string() + " --ckpt x.isdt --report r.csv") == 2);
    isd::io::atomic_write(kDir / "garbage.isdt", "not a tensor");
    CHECK(cli("mask-preview --input " + (kDir / "garbage.isdt").string() + " --out " +
              (kDir / "mp").string()) == 2);
    isd::io::atomic_write(kDir / "bad.cfg", "unknown_key = 1\n");
    CHECK(cli("pretrain --data " + (kDir / "data").string() + " --out " + (kDir / "p").string() +
              " --epochs 1 --config " + (kDir / "bad.cfg").string()) == 2);

    // Numeric failure exits 3: an absurd learning rate overflows activations
    // and trips the finite-value guard.
    isd::io::atomic_write(kDir / "nan.cfg",
                          "input_size = 16\nnum_stages = 2\nstage_channels = 8,16\n"
                          "decoder_channels = 8\nembed_dim = 16\npretrain_base_lr = 1e8\n");
    CHECK(cli("pretrain --data " + (kDir / "data").string() + " --out " + (kDir / "nanrun").string() +
              " --epochs 2 --seed 1 --config " + (kDir / "nan.cfg").string()) == 3);
}

TEST_CASE("mask-preview and preprocess artifacts") {
    fs::create_directories(kDir);
    if (!fs::exists(kDir / "data"))
        REQUIRE(cli("gen-phantoms --out " + (kDir / "data").string() + " --count 8 --size 16 --seed 1") == 0);

    CHECK(cli("mask-preview --input " + (kDir / "data" / "phantom_0000.isdt").string() + " --out " +
              (kDir / "mp").string() + " --mode dual --k 8 --patch 4 --ratio 0.5 --seed 2") == 0);
    for (const char* f : {"intensity_view.isdt", "spatial_view.isdt", "intensity_view_ch0.pgm",
                          "spatial_view_ch2.pgm"})
        CHECK(fs::exists(kDir / "mp" / f));
    std::string why;
    CHECK(isd::io::check_isdt(kDir / "mp" / "intensity_view.isdt", &why));
    const auto view = isd::io::read_isdt(kDir / "mp" / "spatial_view.isdt");
    CHECK(view.dims == isd::Shape{3, 16, 16});

    CHECK(cli("preprocess --input " + (kDir / "data" / "phantom_0001.isdt").string() + " --out " +
              (kDir / "pp").string() + " --pgm") == 0);
    CHECK(fs::exists(kDir / "pp" / "phantom_0001_rgb.isdt"));
    CHECK(fs::exists(kDir / "pp" / "phantom_0001_ch2.pgm"));

    // 3-d: resample + per-slice RGB stack.
    REQUIRE(cli("gen-phantoms --out " + (kDir / "vol").string() +
                " --count 1 --size 20 --dims 3 --seed 3") == 0);
    CHECK(cli("preprocess --input " + (kDir / "vol" / "phantom_0000.isdt").string() + " --out " +
              (kDir / "pp3").string() + " --target-size 12") == 0);
    const auto stack = isd::io::read_isdt(kDir / "pp3" / "phantom_0000_rgb.isdt");
    CHECK(stack.dims == isd::Shape{3, 12, 12, 12});
}

TEST_CASE("classification fine-tune and eval path") {
    fs::create_directories(kDir);
    REQUIRE(cli("gen-phantoms --out " + (kDir / "cls_data").string() +
                " --count 24 --size 16 --seed 9 --allow-empty") == 0);

    isd::io::atomic_write(kDir / "small.cfg",
                          "input_size = 16\nnum_stages = 2\nstage_channels = 8,16\n"
                          "decoder_channels = 8\nembed_dim = 16\nbatch_size_finetune = 4\n");
    CHECK(cli("finetune --data " + (kDir / "cls_data").string() + " --out " + (kDir / "cls_run").string() +
              " --task cls --epochs 4 --seed 9 --config " + (kDir / "small.cfg").string()) == 0);
    CHECK(cli("eval --data " + (kDir / "cls_data").string() + " --ckpt " +
              (kDir / "cls_run" / "ckpt_final.isdt").string() + " --report " +
              (kDir / "cls_report.csv").string()) == 0);

    std::ifstream rep(kDir / "cls_report.csv");
    std::string header;
    std::getline(rep, header);
    CHECK(header == "sample_id,score,label");
    const std::string out = slurp(kDir / "out.log");
    CHECK(out.find("roc_auc=") != std::string::npos);
}
