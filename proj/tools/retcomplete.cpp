// retcomplete: two-stage pluralistic image completion CLI.
//
// Subcommands: build-palette, train, complete, upsample, bench.
// Exit codes: 0 success, 1 runtime error, 2 usage error.

#include <CLI11.hpp>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <thread>

#include "retc/bench.hpp"
#include "retc/biretnet.hpp"
#include "retc/config_file.hpp"
#include "retc/image.hpp"
#include "retc/inferencer.hpp"
#include "retc/palette.hpp"
#include "retc/rng.hpp"
#include "retc/trainer.hpp"
#include "retc/upsampler.hpp"

namespace fs = std::filesystem;
using namespace retc;

namespace {

std::vector<std::string> list_images(const std::string& dir) {
    std::vector<std::string> out;
    RETC_CHECK(fs::is_directory(dir), ErrorKind::Io, "not a directory: " + dir);
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        const std::string ext = e.path().extension().string();
        if (ext == ".png" || ext == ".ppm") out.push_back(e.path().string());
    }
    std::sort(out.begin(), out.end());
    RETC_CHECK(!out.empty(), ErrorKind::Io, "no .png/.ppm images found in " + dir);
    return out;
}

std::vector<Image> load_images(const std::vector<std::string>& paths) {
    std::vector<Image> out;
    out.reserve(paths.size());
    for (const auto& p : paths) out.push_back(load_image(p));
    return out;
}

SamplingPolicy parse_policy(const std::string& text, std::uint64_t seed) {
    if (text == "top1") {
        SamplingPolicy p = SamplingPolicy::top1();
        p.seed = seed;
        return p;
    }
    if (text.rfind("topk:", 0) == 0) {
        const auto rest = text.substr(5);
        const auto colon = rest.find(':');
        RETC_CHECK(colon != std::string::npos, ErrorKind::Usage,
                   "policy must be top1 or topk:K:T");
        try {
            const std::int64_t k = std::stoll(rest.substr(0, colon));
            const Real t = std::stod(rest.substr(colon + 1));
            return SamplingPolicy::topk(k, t, seed);
        } catch (const Error&) {
            throw;
        } catch (...) {
            fail(ErrorKind::Usage, "policy must be top1 or topk:K:T");
        }
    }
    fail(ErrorKind::Usage, "unknown policy '" + text + "' (use top1 or topk:K:T)");
}

int thread_budget() {
    if (const char* env = std::getenv("RETCOMPLETE_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// ---- build-palette ----

struct PaletteArgs {
    std::string corpus, out;
    std::int64_t k = 512;
    int max_iters = 50;
    std::uint64_t seed = 0;
};

int cmd_build_palette(const PaletteArgs& a) {
    const auto images = load_images(list_images(a.corpus));
    KMeansStats stats;
    const Palette p = fit_kmeans(collect_pixels(images), a.k, a.max_iters, a.seed, &stats);
    save_palette(p, a.out);
    std::cout << "palette: k=" << p.k() << " iters=" << stats.iters
              << " inertia=" << (stats.inertia_per_iter.empty() ? 0.0 : stats.inertia_per_iter.back())
              << " hash=" << palette_hash(p) << " -> " << a.out << "\n";
    return 0;
}

// ---- train ----

struct TrainArgs {
    std::string config, data, palette, out, resume;
};

void append_metrics(const std::string& path, const std::string& header, const std::string& row) {
    const bool fresh = !fs::exists(path);
    std::ofstream outf(path, std::ios::app);
    RETC_CHECK(outf.good(), ErrorKind::Io, "cannot open metrics file: " + path);
    if (fresh) outf << header;
    outf << row;
    RETC_CHECK(outf.good(), ErrorKind::Io, "metrics write failed: " + path);
}

int cmd_train(const TrainArgs& a) {
    const PipelineConfig cfg = parse_pipeline_config(KvConfig::load(a.config));
    const Palette palette = load_palette(a.palette);
    const auto images = load_images(list_images(a.data));
    fs::create_directories(a.out);

    if (cfg.stage == "biretnet") {
        RETC_CHECK(palette.k() == cfg.model.palette, ErrorKind::Usage,
                   "palette size " + std::to_string(palette.k()) +
                       " does not match config palette=" + std::to_string(cfg.model.palette));
        BiRetNet net = init_biretnet(cfg.model, palette, cfg.train.seed);
        AdamState opt = AdamState::fresh(net);
        std::int64_t start = 0;
        if (!a.resume.empty()) start = restore_training(load_checkpoint(a.resume), net, opt);
        const TokenDataset data = tokenize_dataset(images, palette, cfg.model.side);

        const std::string metrics_path = a.out + "/metrics.csv";
        train_loop(net, opt, data, cfg.train, start,
                   [&](const TrainMetrics& m) {
                       append_metrics(metrics_path, metrics_csv_header(), metrics_csv_row(m));
                   },
                   [&](std::int64_t step) {
                       save_checkpoint(training_checkpoint(net, opt, step),
                                       a.out + "/ckpt_" + std::to_string(step) + ".rckpt");
                       save_checkpoint(training_checkpoint(net, opt, step), a.out + "/model.rckpt");
                   });
        std::cout << "trained biretnet to step " << cfg.train.steps << " -> " << a.out
                  << "/model.rckpt\n";
        return 0;
    }

    // upsampler stage: simulate appearance priors by quantizing the
    // downsampled ground truth
    std::vector<UpsamplerExample> data;
    for (const auto& img : images) {
        RETC_CHECK(img.h % 4 == 0 && img.w % 4 == 0, ErrorKind::Usage,
                   "upsampler training images must have H and W divisible by 4");
        UpsamplerExample ex;
        ex.low = dequantize(quantize(downsample(img, cfg.model.side), palette), cfg.model.side,
                            palette);
        ex.gt = img;
        data.push_back(std::move(ex));
    }
    UpsamplerParams params = init_upsampler(cfg.ups, cfg.ups_train.seed);
    UpsamplerOpt opt = UpsamplerOpt::fresh(params);
    std::int64_t start = 0;
    if (!a.resume.empty()) start = restore_upsampler(load_checkpoint(a.resume), params, opt);

    const std::string metrics_path = a.out + "/ups_metrics.csv";
    train_upsampler(params, opt, data, cfg.ups_train, start,
                    [&](const UpsamplerMetrics& m) {
                        char row[128];
                        std::snprintf(row, sizeof row, "%lld,%.9f,%.3f\n",
                                      static_cast<long long>(m.step), m.l1_loss, m.ms_per_step);
                        append_metrics(metrics_path, "step,l1_loss,ms_per_step\n", row);
                    },
                    [&](std::int64_t step) {
                        save_checkpoint(upsampler_checkpoint(params, opt, step),
                                        a.out + "/upsampler.rckpt");
                    });
    std::cout << "trained upsampler to step " << cfg.ups_train.steps << " -> " << a.out
              << "/upsampler.rckpt\n";
    return 0;
}

// ---- complete ----

struct CompleteArgs {
    std::string ckpt, image, mask, out, entropy_out;
    std::string policy = "top1";
    std::string mode = "pixelwise";
    std::string mask_kind;
    Real mask_ratio = 0.5;
    std::int64_t mask_region = 0;
    std::uint64_t seed = 0;
    bool has_mask_seed = false;
    std::uint64_t mask_seed = 0;
};

std::vector<std::uint8_t> resolve_mask(const CompleteArgs& a, const Image& img, std::int64_t side) {
    (void)img;
    if (!a.mask.empty()) {
        // exact L x L grids pass through; larger masks reduce by majority
        return reduce_mask_to_grid(load_pgm(a.mask), side);
    }
    RETC_CHECK(!a.mask_kind.empty(), ErrorKind::Usage,
               "complete: provide --mask FILE or --mask-kind");
    MaskSpec spec;
    spec.kind = parse_mask_kind(a.mask_kind);
    spec.ratio = a.mask_ratio;
    spec.region = a.mask_region;
    spec.seed = a.has_mask_seed ? a.mask_seed : make_rng(a.seed, "masks").next_u64();
    return gen_mask(spec, side);
}

void complete_one(const BiRetNet& net, const CompleteArgs& a, const std::string& image_path,
                  const std::string& out_path, const std::string& entropy_path) {
    const Image img = load_image(image_path);
    const Image low = downsample(img, net.cfg.side);
    const PixelSequence seq = to_sequence(low, net.palette, resolve_mask(a, img, net.cfg.side));
    const SamplingPolicy policy = parse_policy(a.policy, a.seed);

    CompletionResult res;
    if (a.mode == "pixelwise") {
        res = complete(seq, net, policy);
    } else if (a.mode == "oneshot") {
        res = complete_oneshot(seq, net, policy);
    } else {
        fail(ErrorKind::Usage, "complete: mode must be pixelwise or oneshot");
    }

    save_image(dequantize(res.tokens, net.cfg.side, net.palette), out_path);
    if (!entropy_path.empty())
        save_pgm(entropy_map(res, net.cfg.side, net.cfg.palette), entropy_path);
}

int cmd_complete(const CompleteArgs& a) {
    const BiRetNet net = biretnet_from_checkpoint(load_checkpoint(a.ckpt));
    if (!fs::is_directory(a.image)) {
        complete_one(net, a, a.image, a.out, a.entropy_out);
        std::cout << "completed " << a.image << " -> " << a.out << "\n";
        return 0;
    }

    // batch mode: --image and --out are directories; per-image sessions run on
    // a small worker pool capped by RETCOMPLETE_THREADS
    const auto paths = list_images(a.image);
    fs::create_directories(a.out);
    const int budget = thread_budget();
    std::atomic<std::size_t> cursor{0};
    std::vector<std::thread> workers;
    std::mutex err_mutex;
    std::string first_error;
    for (int t = 0; t < budget; ++t) {
        workers.emplace_back([&] {
            for (;;) {
                const std::size_t i = cursor.fetch_add(1);
                if (i >= paths.size()) return;
                try {
                    const fs::path stem = fs::path(paths[i]).filename();
                    const std::string out_path =
                        (fs::path(a.out) / fs::path(stem).replace_extension(".png")).string();
                    // per-image entropy maps in batch mode
                    const std::string ent =
                        a.entropy_out.empty()
                            ? std::string()
                            : (fs::path(a.out) / fs::path(stem).replace_extension(".entropy.pgm"))
                                  .string();
                    complete_one(net, a, paths[i], out_path, ent);
                } catch (const std::exception& e) {
                    std::lock_guard<std::mutex> lock(err_mutex);
                    if (first_error.empty()) first_error = e.what();
                }
            }
        });
    }
    for (auto& w : workers) w.join();
    RETC_CHECK(first_error.empty(), ErrorKind::Io, first_error);
    std::cout << "completed " << paths.size() << " images -> " << a.out << "\n";
    return 0;
}

// ---- upsample ----

struct UpsampleArgs {
    std::string ckpt, low, orig, mask, out;
};

int cmd_upsample(const UpsampleArgs& a) {
    UpsamplerParams params = init_upsampler({}, 0);
    UpsamplerOpt opt = UpsamplerOpt::fresh(params);
    restore_upsampler(load_checkpoint(a.ckpt), params, opt);
    const Image low = load_image(a.low);
    const Image orig = load_image(a.orig);
    const Image mask = load_pgm(a.mask);
    const Image up = bilinear_upscale(low, orig.h, orig.w);
    save_image(refine(up, orig, mask, params), a.out);
    std::cout << "upsampled " << a.low << " -> " << a.out << "\n";
    return 0;
}

// ---- bench ----

struct BenchArgs {
    std::string ckpt, out;
    std::string ratios = "0.1,0.25,0.5,0.75";
    int reps = 9;
    int warmup = 1;
    int baseline_samples = 12;
    std::uint64_t seed = 0;
};

int cmd_bench(const BenchArgs& a) {
    const BiRetNet net = biretnet_from_checkpoint(load_checkpoint(a.ckpt));
    BenchConfig cfg;
    cfg.reps = a.reps;
    cfg.warmup = a.warmup;
    cfg.baseline_samples = a.baseline_samples;
    cfg.seed = a.seed;
    std::stringstream ss(a.ratios);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        try {
            cfg.ratios.push_back(std::stod(tok));
        } catch (...) {
            fail(ErrorKind::Usage, "bench: bad ratio '" + tok + "'");
        }
    }
    const BenchRun run = run_bench(cfg, net);
    emit_report(run, a.out);
    std::cout << bench_csv(run);
    std::cout << "report -> " << a.out << "/results.csv\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"RetCompletion: pluralistic image completion with a bidirectional retentive network"};
    app.require_subcommand(1);

    PaletteArgs pa;
    auto* sp = app.add_subcommand("build-palette", "Fit the K-Means color vocabulary on a corpus");
    sp->add_option("--corpus", pa.corpus, "Directory of .png/.ppm images")->required();
    sp->add_option("--k", pa.k, "Palette size");
    sp->add_option("--max-iters", pa.max_iters, "Lloyd iteration cap");
    sp->add_option("--seed", pa.seed, "RNG seed");
    sp->add_option("--out", pa.out, "Output palette file")->required();

    TrainArgs ta;
    auto* st = app.add_subcommand("train", "Train the Bi-RetNet or the upsampler");
    st->add_option("--config", ta.config, "key = value config file")->required();
    st->add_option("--data", ta.data, "Directory of training images")->required();
    st->add_option("--palette", ta.palette, "Palette file")->required();
    st->add_option("--out", ta.out, "Output directory")->required();
    st->add_option("--resume", ta.resume, "Checkpoint to resume from");

    CompleteArgs ca;
    auto* sc = app.add_subcommand("complete", "Pixel-wise completion of masked images");
    sc->add_option("--ckpt", ca.ckpt, "Bi-RetNet checkpoint")->required();
    sc->add_option("--image", ca.image, "Input image (or directory for batch mode)")->required();
    sc->add_option("--mask", ca.mask, "Mask PGM (255 = masked), full or low resolution");
    sc->add_option("--mask-kind", ca.mask_kind, "center|half|expand|random_stroke|random_rect");
    sc->add_option("--mask-ratio", ca.mask_ratio, "Coverage for stroke/rect masks");
    sc->add_option("--mask-region", ca.mask_region, "Region side for center/expand");
    auto* ms = sc->add_option("--mask-seed", ca.mask_seed, "Mask RNG seed (default: from --seed)");
    sc->add_option("--policy", ca.policy, "top1 or topk:K:T");
    sc->add_option("--mode", ca.mode, "pixelwise (default) or oneshot");
    sc->add_option("--seed", ca.seed, "Sampling seed");
    sc->add_option("--out", ca.out, "Output image (or directory)")->required();
    sc->add_option("--entropy-out", ca.entropy_out, "Optional per-pixel entropy PGM");

    UpsampleArgs ua;
    auto* su = app.add_subcommand("upsample", "Guided upsampling of a completed low-res image");
    su->add_option("--ckpt", ua.ckpt, "Upsampler checkpoint")->required();
    su->add_option("--low", ua.low, "Completed low-resolution image")->required();
    su->add_option("--orig", ua.orig, "Original full-resolution image")->required();
    su->add_option("--mask", ua.mask, "Full-resolution mask PGM (255 = masked)")->required();
    su->add_option("--out", ua.out, "Output image")->required();

    BenchArgs ba;
    auto* sb = app.add_subcommand("bench", "Latency comparison: recurrent vs full recompute");
    sb->add_option("--ckpt", ba.ckpt, "Bi-RetNet checkpoint")->required();
    sb->add_option("--ratios", ba.ratios, "Comma-separated mask ratios");
    sb->add_option("--reps", ba.reps, "Repetitions per ratio (>= 5)");
    sb->add_option("--warmup", ba.warmup, "Warmup repetitions (excluded from stats)");
    sb->add_option("--baseline-samples", ba.baseline_samples, "Timed steps for the recompute method");
    sb->add_option("--seed", ba.seed, "Workload seed");
    sb->add_option("--out", ba.out, "Report directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        // expanded help: every subcommand with its flags
        std::cout << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: usage: " << e.what() << "\n";
        return 2;
    }

    try {
        ca.has_mask_seed = ms->count() > 0;
        if (sp->parsed()) return cmd_build_palette(pa);
        if (st->parsed()) return cmd_train(ta);
        if (sc->parsed()) return cmd_complete(ca);
        if (su->parsed()) return cmd_upsample(ua);
        if (sb->parsed()) return cmd_bench(ba);
        std::cerr << "error: usage: no subcommand\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.kind_name() << ": " << e.what() << "\n";
        return e.kind() == ErrorKind::Usage ? 2 : 1;
    } catch (const std::exception& e) {
        std::cerr << "error: runtime: " << e.what() << "\n";
        return 1;
    }
}
