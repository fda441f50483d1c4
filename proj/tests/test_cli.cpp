#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "retc/image.hpp"
#include "retc/palette.hpp"
#include "support/synthetic.hpp"

using namespace retc;
using retc::testing::TempDir;

TEST_SUITE_BEGIN("cli");

namespace {

struct RunResult {
    int code = -1;
    std::string out;
};

RunResult run_cli(const std::string& args, const std::string& capture_tag) {
    static TempDir cap("cli_capture");
    const std::string out_file = cap.file(capture_tag + ".txt");
    const std::string cmd = std::string(RETC_CLI_PATH) + " " + args + " >" + out_file + " 2>&1";
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(out_file);
    std::stringstream ss;
    ss << in.rdbuf();
    r.out = ss.str();
    return r;
}

void write_corpus(const std::string& dir, std::int64_t n, std::int64_t hw) {
    const auto images = retc::testing::stripe_images(hw, 4);
    for (std::int64_t i = 0; i < n; ++i)
        save_image(images[static_cast<std::size_t>(i) % images.size()],
                   dir + "/img" + std::to_string(i) + ".png");
}

}  // namespace

TEST_CASE("--help exits 0 and lists every subcommand") {
    const RunResult r = run_cli("--help", "help");
    CHECK(r.code == 0);
    for (const char* sub : {"build-palette", "train", "complete", "upsample", "bench"})
        CHECK(r.out.find(sub) != std::string::npos);
}

TEST_CASE("unknown flags are usage errors with exit code 2") {
    const RunResult r = run_cli("complete --definitely-not-a-flag", "badflag");
    CHECK(r.code == 2);
}

TEST_CASE("missing checkpoint path: exit 1 and the path appears in the error") {
    const RunResult r = run_cli(
        "complete --ckpt /nonexistent/model.rckpt --image x.png --out y.png --mask-kind center",
        "nockpt");
    CHECK(r.code == 1);
    CHECK(r.out.find("/nonexistent/model.rckpt") != std::string::npos);
    CHECK(r.out.find("error:") != std::string::npos);
}

TEST_CASE("full pipeline smoke on toy data") {
    TempDir tmp("pipeline");
    const std::string data = tmp.file("data");
    std::filesystem::create_directories(data);
    write_corpus(data, 6, 16);

    // 1. palette
    RunResult r = run_cli("build-palette --corpus " + data + " --k 4 --seed 3 --out " +
                              tmp.file("pal.rcpal"),
                          "palette");
    REQUIRE(r.code == 0);
    REQUIRE(std::filesystem::exists(tmp.file("pal.rcpal")));

    // 2. train both stages briefly
    {
        std::ofstream cfg(tmp.file("train.cfg"));
        cfg << "stage = biretnet\nh = 2\nd = 8\nlayers = 1\nside = 4\npalette = 4\n"
               "batch_size = 2\nsteps = 3\nseed = 1\ncheckpoint_every = 2\n";
    }
    r = run_cli("train --config " + tmp.file("train.cfg") + " --data " + data + " --palette " +
                    tmp.file("pal.rcpal") + " --out " + tmp.file("run"),
                "train");
    REQUIRE(r.code == 0);
    REQUIRE(std::filesystem::exists(tmp.file("run/model.rckpt")));
    CHECK(std::filesystem::exists(tmp.file("run/metrics.csv")));

    {
        std::ofstream cfg(tmp.file("ups.cfg"));
        cfg << "stage = upsampler\nside = 4\nups_width0 = 8\nups_width1 = 8\nups_res_blocks = 1\n"
               "ups_gn_groups = 4\nups_steps = 2\nups_batch_size = 1\nseed = 1\n";
    }
    r = run_cli("train --config " + tmp.file("ups.cfg") + " --data " + data + " --palette " +
                    tmp.file("pal.rcpal") + " --out " + tmp.file("run"),
                "train_ups");
    REQUIRE(r.code == 0);
    REQUIRE(std::filesystem::exists(tmp.file("run/upsampler.rckpt")));

    // 3. complete with a generated center mask + entropy map
    r = run_cli("complete --ckpt " + tmp.file("run/model.rckpt") + " --image " + data +
                    "/img0.png --mask-kind center --mask-region 2 --seed 5 --out " +
                    tmp.file("low.png") + " --entropy-out " + tmp.file("ent.pgm"),
                "complete");
    REQUIRE(r.code == 0);
    REQUIRE(std::filesystem::exists(tmp.file("low.png")));
    CHECK(std::filesystem::exists(tmp.file("ent.pgm")));
    const Image low = load_image(tmp.file("low.png"));
    CHECK(low.h == 4);

    // determinism: the same invocation writes identical bytes
    r = run_cli("complete --ckpt " + tmp.file("run/model.rckpt") + " --image " + data +
                    "/img0.png --mask-kind center --mask-region 2 --seed 5 --out " +
                    tmp.file("low2.png"),
                "complete2");
    REQUIRE(r.code == 0);
    std::ifstream f1(tmp.file("low.png"), std::ios::binary), f2(tmp.file("low2.png"), std::ios::binary);
    std::stringstream s1, s2;
    s1 << f1.rdbuf();
    s2 << f2.rdbuf();
    CHECK(s1.str() == s2.str());

    // 4. upsample the completed low-res image with a full-res mask
    {
        Image mask(16, 16, 1);
        for (std::int64_t y = 6; y < 10; ++y)
            for (std::int64_t x = 6; x < 10; ++x) mask.at(y, x, 0) = 1.0;
        save_pgm(mask, tmp.file("mask.pgm"));
    }
    r = run_cli("upsample --ckpt " + tmp.file("run/upsampler.rckpt") + " --low " + tmp.file("low.png") +
                    " --orig " + data + "/img0.png --mask " + tmp.file("mask.pgm") + " --out " +
                    tmp.file("final.png"),
                "upsample");
    REQUIRE(r.code == 0);
    const Image final_img = load_image(tmp.file("final.png"));
    CHECK(final_img.h == 16);

    // 5. bench on the tiny checkpoint (few reps, tiny model => fast)
    r = run_cli("bench --ckpt " + tmp.file("run/model.rckpt") +
                    " --ratios 0.25 --reps 5 --warmup 0 --baseline-samples 2 --seed 2 --out " +
                    tmp.file("bench"),
                "bench");
    REQUIRE(r.code == 0);
    REQUIRE(std::filesystem::exists(tmp.file("bench/results.csv")));
    std::ifstream csv(tmp.file("bench/results.csv"));
    std::string header;
    std::getline(csv, header);
    CHECK(header == "method,mask_ratio,median_ms,p25_ms,p75_ms");
}

TEST_CASE("batch completion over a directory honors RETCOMPLETE_THREADS") {
    TempDir tmp("batch");
    const std::string data = tmp.file("data");
    std::filesystem::create_directories(data);
    write_corpus(data, 3, 8);

    RunResult r = run_cli("build-palette --corpus " + data + " --k 4 --seed 1 --out " +
                              tmp.file("p.rcpal"),
                          "bp2");
    REQUIRE(r.code == 0);
    {
        std::ofstream cfg(tmp.file("t.cfg"));
        cfg << "stage = biretnet\nh = 2\nd = 8\nlayers = 1\nside = 4\npalette = 4\n"
               "batch_size = 1\nsteps = 1\nseed = 1\n";
    }
    r = run_cli("train --config " + tmp.file("t.cfg") + " --data " + data + " --palette " +
                    tmp.file("p.rcpal") + " --out " + tmp.file("run"),
                "train2");
    REQUIRE(r.code == 0);

    const std::string cmd = "RETCOMPLETE_THREADS=2 " + std::string(RETC_CLI_PATH) + " complete --ckpt " +
                            tmp.file("run/model.rckpt") + " --image " + data +
                            " --mask-kind half --policy topk:3:0.9 --seed 7 --out " +
                            tmp.file("outdir") + " > /dev/null 2>&1";
    REQUIRE(std::system(cmd.c_str()) == 0);
    for (int i = 0; i < 3; ++i)
        CHECK(std::filesystem::exists(tmp.file("outdir/img" + std::to_string(i) + ".png")));
}

TEST_SUITE_END();
