// Python bindings for the core operations: palette fitting/quantization,
// preprocessing, the three retention paradigms, and checkpoint-driven
// completion. Arrays cross the boundary as NumPy buffers.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "retc/biretnet.hpp"
#include "retc/image.hpp"
#include "retc/inferencer.hpp"
#include "retc/palette.hpp"
#include "retc/retention.hpp"
#include "retc/sequencer.hpp"
#include "retc/upsampler.hpp"

namespace py = pybind11;
using namespace retc;

namespace {

Tensor tensor_from_2d(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    RETC_CHECK(a.ndim() == 2, ErrorKind::Dimension, "expected a 2-d array");
    Tensor t({a.shape(0), a.shape(1)});
    std::copy(a.data(), a.data() + t.numel(), t.data.begin());
    return t;
}

py::array_t<double> array_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    py::array_t<double> out(shape);
    std::copy(t.data.begin(), t.data.end(), out.mutable_data());
    return out;
}

Image image_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    RETC_CHECK(a.ndim() == 3 && a.shape(2) == 3, ErrorKind::Dimension,
               "expected an H x W x 3 array");
    Image img(a.shape(0), a.shape(1), 3);
    std::copy(a.data(), a.data() + img.data.size(), img.data.begin());
    return img;
}

py::array_t<double> array_from_image(const Image& img) {
    py::array_t<double> out({img.h, img.w, img.c});
    std::copy(img.data.begin(), img.data.end(), out.mutable_data());
    return out;
}

RetentionHeadParams head_from(const py::array_t<double, py::array::c_style | py::array::forcecast>& wq,
                              const py::array_t<double, py::array::c_style | py::array::forcecast>& wk,
                              const py::array_t<double, py::array::c_style | py::array::forcecast>& wv,
                              double gamma) {
    RetentionHeadParams p;
    p.wq = tensor_from_2d(wq);
    p.wk = tensor_from_2d(wk);
    p.wv = tensor_from_2d(wv);
    p.gamma = gamma;
    p.theta = head_theta(p.wq.shape[0]);
    return p;
}

PixelSequence seq_from(const std::vector<std::int64_t>& tokens, const std::vector<bool>& mask,
                       std::int64_t side) {
    RETC_CHECK(static_cast<std::int64_t>(tokens.size()) == side * side &&
                   tokens.size() == mask.size(),
               ErrorKind::Dimension, "tokens/mask must have side^2 entries");
    PixelSequence seq;
    seq.side = side;
    seq.tokens = tokens;
    seq.mask.resize(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) seq.mask[i] = mask[i] ? 1 : 0;
    return seq;
}

}  // namespace

PYBIND11_MODULE(_retcompletion, m) {
    m.doc() = "Pluralistic image completion with a bidirectional retentive network";

    py::register_exception<Error>(m, "RetcError");

    py::class_<Palette>(m, "Palette")
        .def_property_readonly("k", &Palette::k)
        .def_property_readonly("centroids",
                               [](const Palette& p) {
                                   py::array_t<double> out({p.k(), static_cast<std::int64_t>(3)});
                                   auto* d = out.mutable_data();
                                   for (std::int64_t i = 0; i < p.k(); ++i)
                                       for (int c = 0; c < 3; ++c)
                                           d[i * 3 + c] = p.centroids[static_cast<std::size_t>(i)]
                                                                     [static_cast<std::size_t>(c)];
                                   return out;
                               })
        .def("save", &save_palette)
        .def_static("load", &load_palette)
        .def("hash", &palette_hash);

    m.def(
        "fit_kmeans",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& pixels,
           std::int64_t k, int max_iters, std::uint64_t seed) {
            RETC_CHECK(pixels.ndim() == 2 && pixels.shape(1) == 3, ErrorKind::Dimension,
                       "pixels must be an N x 3 array");
            std::vector<Rgb> px(static_cast<std::size_t>(pixels.shape(0)));
            for (py::ssize_t i = 0; i < pixels.shape(0); ++i)
                px[static_cast<std::size_t>(i)] = {pixels.at(i, 0), pixels.at(i, 1), pixels.at(i, 2)};
            return fit_kmeans(px, k, max_iters, seed);
        },
        py::arg("pixels"), py::arg("k"), py::arg("max_iters") = 50, py::arg("seed") = 0);

    m.def("quantize", [](const py::array_t<double, py::array::c_style | py::array::forcecast>& img,
                         const Palette& p) { return quantize(image_from_array(img), p); });
    m.def("dequantize", [](const std::vector<std::int64_t>& tokens, std::int64_t side,
                           const Palette& p) { return array_from_image(dequantize(tokens, side, p)); });

    m.def("downsample",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& img,
             std::int64_t side) { return array_from_image(downsample(image_from_array(img), side)); });
    m.def("bilinear_upscale",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& img,
             std::int64_t h, std::int64_t w) {
              const Image low = image_from_array(img);
              return array_from_image(bilinear_upscale(low, h, w));
          });

    m.def(
        "gen_mask",
        [](const std::string& kind, std::int64_t side, double ratio, std::int64_t region,
           std::uint64_t seed) {
            MaskSpec spec;
            spec.kind = parse_mask_kind(kind);
            spec.ratio = ratio;
            spec.region = region;
            spec.seed = seed;
            const auto mask = gen_mask(spec, side);
            py::array_t<bool> out({side, side});
            auto* d = out.mutable_data();
            for (std::size_t i = 0; i < mask.size(); ++i) d[i] = mask[i] != 0;
            return out;
        },
        py::arg("kind"), py::arg("side"), py::arg("ratio") = 0.5, py::arg("region") = 0,
        py::arg("seed") = 0);

    m.def(
        "retention_parallel",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& wq,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& wk,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& wv, double gamma) {
            return array_from_tensor(retention_parallel(tensor_from_2d(x), head_from(wq, wk, wv, gamma)));
        },
        py::arg("x"), py::arg("wq"), py::arg("wk"), py::arg("wv"), py::arg("gamma"));

    m.def(
        "retention_recurrent",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& wq,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& wk,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& wv, double gamma) {
            const Tensor xs = tensor_from_2d(x);
            const auto p = head_from(wq, wk, wv, gamma);
            RetentionState st = RetentionState::fresh(p.d_head());
            Tensor out({xs.shape[0], p.d_head()});
            for (std::int64_t r = 0; r < xs.shape[0]; ++r) {
                Tensor row({p.d_head()});
                for (std::int64_t c = 0; c < p.d_head(); ++c) row.data[static_cast<std::size_t>(c)] = xs.at(r, c);
                auto [o, next] = retention_recurrent_step(row, st, p);
                st = next;
                for (std::int64_t c = 0; c < p.d_head(); ++c) out.at(r, c) = o.data[static_cast<std::size_t>(c)];
            }
            return array_from_tensor(out);
        },
        py::arg("x"), py::arg("wq"), py::arg("wk"), py::arg("wv"), py::arg("gamma"));

    m.def(
        "retention_chunkwise",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x, std::int64_t chunk,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& wq,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& wk,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& wv, double gamma) {
            return array_from_tensor(
                retention_chunkwise(tensor_from_2d(x), chunk, head_from(wq, wk, wv, gamma)));
        },
        py::arg("x"), py::arg("chunk"), py::arg("wq"), py::arg("wk"), py::arg("wv"), py::arg("gamma"));

    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init([](std::int64_t h, std::int64_t d, std::int64_t layers, std::int64_t side,
                         std::int64_t palette) {
                 ModelConfig cfg;
                 cfg.heads = h;
                 cfg.dim = d;
                 cfg.layers = layers;
                 cfg.side = side;
                 cfg.palette = palette;
                 cfg.validate();
                 return cfg;
             }),
             py::arg("h"), py::arg("d"), py::arg("layers"), py::arg("side"), py::arg("palette"))
        .def_readonly("h", &ModelConfig::heads)
        .def_readonly("d", &ModelConfig::dim)
        .def_readonly("layers", &ModelConfig::layers)
        .def_readonly("side", &ModelConfig::side)
        .def_readonly("palette", &ModelConfig::palette);

    py::class_<BiRetNet>(m, "BiRetNet")
        .def_static(
            "random",
            [](const ModelConfig& cfg, std::uint64_t seed) {
                Rng rng = make_rng(seed, "py.palette");
                std::vector<Rgb> px;
                for (std::int64_t i = 0; i < cfg.palette * 8; ++i)
                    px.push_back({rng.uniform01(), rng.uniform01(), rng.uniform01()});
                const Palette p = fit_kmeans(px, cfg.palette, 20, seed);
                return init_biretnet(cfg, p, seed);
            },
            py::arg("config"), py::arg("seed") = 0)
        .def_static("load",
                    [](const std::string& path) {
                        return biretnet_from_checkpoint(load_checkpoint(path));
                    })
        .def("save",
             [](const BiRetNet& net, const std::string& path) {
                 save_checkpoint(to_checkpoint(net, 0), path);
             })
        .def_property_readonly("config", [](const BiRetNet& net) { return net.cfg; })
        .def_property_readonly("palette", [](const BiRetNet& net) { return net.palette; })
        .def(
            "complete",
            [](const BiRetNet& net, const std::vector<std::int64_t>& tokens,
               const std::vector<bool>& mask, const std::string& policy, std::int64_t top_k,
               double temperature, std::uint64_t seed) {
                SamplingPolicy p = policy == "top1" ? SamplingPolicy::top1()
                                                    : SamplingPolicy::topk(top_k, temperature, seed);
                p.seed = seed;
                const auto res = complete(seq_from(tokens, mask, net.cfg.side), net, p);
                return res.tokens;
            },
            py::arg("tokens"), py::arg("mask"), py::arg("policy") = "top1", py::arg("top_k") = 1,
            py::arg("temperature") = 1.0, py::arg("seed") = 0)
        .def(
            "predict_all",
            [](const BiRetNet& net, const std::vector<std::int64_t>& tokens,
               const std::vector<bool>& mask) {
                return array_from_tensor(
                    predict_all(net, seq_from(tokens, mask, net.cfg.side), Paradigm::Parallel));
            },
            py::arg("tokens"), py::arg("mask"));

    m.attr("__version__") = "0.1.0";
}
