#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "ieces/augment.hpp"
#include "ieces/dataset.hpp"
#include "ieces/evaluator.hpp"
#include "ieces/siamese.hpp"
#include "ieces/theory.hpp"
#include "ieces/trainer.hpp"

namespace py = pybind11;
using namespace ieces;

namespace {

Checkpoint make_checkpoint(int classes, std::uint64_t seed, const std::string& mode,
                           double alpha) {
    EncoderConfig ec;
    TrainConfig tc;
    tc.seed = seed;
    SiameseConfig sc;
    sc.alpha = alpha;
    if (mode == "ema")
        sc.mode = TemplateMode::prototype_ema;
    else if (mode == "template")
        sc.mode = TemplateMode::template_code;
    else
        throw std::invalid_argument("mode must be 'template' or 'ema'");
    AugmentConfig ac;
    return init_checkpoint(ec, classes, tc, sc, ac);
}

}  // namespace

PYBIND11_MODULE(ieces, m) {
    m.doc() = "traffic-sign code learning toolkit";

    py::class_<SignImage>(m, "SignImage")
        .def(py::init<>())
        .def_readwrite("pixels", &SignImage::pixels)
        .def_readwrite("class_id", &SignImage::class_id)
        .def_readwrite("source_id", &SignImage::source_id)
        .def("valid_shape", &SignImage::valid_shape);

    py::class_<TemplateSet>(m, "TemplateSet")
        .def_readonly("images", &TemplateSet::images)
        .def("class_count", &TemplateSet::class_count);

    py::class_<DatasetSplit>(m, "DatasetSplit")
        .def_readonly("train", &DatasetSplit::train)
        .def_readonly("validation", &DatasetSplit::validation)
        .def_readonly("test", &DatasetSplit::test)
        .def_readonly("class_count", &DatasetSplit::class_count);

    py::class_<Prediction>(m, "Prediction")
        .def_readonly("class_id", &Prediction::class_id)
        .def_readonly("probabilities", &Prediction::probabilities)
        .def_readonly("max_probability", &Prediction::max_probability);

    py::class_<Checkpoint>(m, "Checkpoint")
        .def_readonly("class_count", &Checkpoint::class_count)
        .def_readonly("epoch", &Checkpoint::epoch)
        .def_readonly("best_val_acc", &Checkpoint::best_val_acc)
        .def("param_count",
             [](const Checkpoint& c) {
                 return param_count(c.encoder) + c.classifier.weight->size() +
                        c.classifier.bias->size();
             })
        .def("encode",
             [](const Checkpoint& c, const std::vector<double>& pixels) {
                 return encode(c.encoder, c.encoder_config, pixels);
             })
        .def("predict",
             [](const Checkpoint& c, const std::vector<double>& pixels) {
                 return predict(c.classifier, encode(c.encoder, c.encoder_config, pixels));
             })
        .def("save", [](const Checkpoint& c, const std::filesystem::path& p) {
            save_checkpoint(p, c);
        });

    m.def("init_model", &make_checkpoint, py::arg("classes"), py::arg("seed") = 0,
          py::arg("mode") = "ema", py::arg("alpha") = 0.1);
    m.def("load_model", [](const std::filesystem::path& p) { return load_checkpoint(p); });

    m.def("gen_synthetic", &gen_synthetic, py::arg("classes"), py::arg("per_class"),
          py::arg("seed"));
    m.def("load_data", &load_data, py::arg("source"), py::arg("seed") = 0);

    m.def(
        "train",
        [](Checkpoint ckpt, const DatasetSplit& data, const TemplateSet& templates,
           int epochs, const std::filesystem::path& out_dir) {
            ckpt.train_config.epochs = epochs;
            auto r = train(data, templates, std::move(ckpt), out_dir);
            return py::make_tuple(r.checkpoint, r.log);
        },
        py::arg("model"), py::arg("data"), py::arg("templates"), py::arg("epochs"),
        py::arg("out_dir"));

    m.def("validation_accuracy", &validation_accuracy, py::arg("model"), py::arg("images"));

    m.def(
        "accuracy",
        [](const Checkpoint& ckpt, const std::vector<SignImage>& images) {
            return metrics(evaluate(ckpt, images)).accuracy;
        },
        py::arg("model"), py::arg("images"));

    m.def("distance", &distance, py::arg("a"), py::arg("b"));
    m.def("contrastive_loss", &contrastive_loss, py::arg("dw"), py::arg("gamma"),
          py::arg("margin"));

    m.def(
        "motion_blur",
        [](const SignImage& img, double len, double angle) {
            return motion_blur(img, len, angle);
        },
        py::arg("image"), py::arg("length"), py::arg("angle_deg"));
    m.def(
        "random_erase",
        [](const SignImage& img, double prob, std::uint64_t seed) {
            AugmentConfig ac;
            ac.erase_prob = prob;
            return random_erase(img, ac, seed);
        },
        py::arg("image"), py::arg("prob"), py::arg("seed"));

    m.def(
        "heatmap_stats",
        [](const Checkpoint& ckpt, const TemplateSet& templates,
           const std::vector<SignImage>& images) {
            auto book = ckpt.ema_codebook && ckpt.ema_codebook->class_count() > 0
                            ? *ckpt.ema_codebook
                            : encode_templates(ckpt.encoder, ckpt.encoder_config, templates);
            auto s = heatmap_stats(heatmap(ckpt, book, images));
            return py::make_tuple(s.diagonal_argmin_fraction, s.intra_mean, s.inter_mean);
        },
        py::arg("model"), py::arg("templates"), py::arg("images"));

    m.def("boundary_minimizer", [](double margin, double m_sep) {
        auto r = boundary_minimizer(margin, m_sep);
        return py::make_tuple(r.d_star, r.value);
    });
    m.def("boundary_gradient_check", [](double margin, double m_sep, int grid) {
        auto r = boundary_gradient_check(margin, m_sep, grid);
        return py::make_tuple(r.pass, r.worst_dot, r.worst_d_same);
    });
    m.def("convexity_violation_fraction", [](double margin, int samples, std::uint64_t seed) {
        return convexity_probe(margin, samples, seed).violation_fraction;
    });
}
