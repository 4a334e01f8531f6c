#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "liwhiz/analysis.hpp"
#include "liwhiz/checkpoint.hpp"
#include "liwhiz/error.hpp"
#include "liwhiz/evaluator.hpp"
#include "liwhiz/synth.hpp"
#include "liwhiz/trainer.hpp"

namespace py = pybind11;
using namespace liwhiz;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

// Copies a stack into a (layers, frames, features) array, matching FMAP order.
py::array_t<float> stack_to_numpy(const FeatureStack& s) {
    py::array_t<float> out({s.layer_count(), s.seq_len(), s.feature_dim()});
    std::copy(s.data().begin(), s.data().end(), out.mutable_data());
    return out;
}

FeatureStack stack_from_numpy(const FloatArray& a, Side side) {
    if (a.ndim() != 3) fail(ErrorKind::data, "feature array must be 3-D (layers, frames, features)");
    std::vector<float> data(a.data(), a.data() + a.size());
    return FeatureStack(side, a.shape(0), a.shape(2), a.shape(1), std::move(data));
}

Side parse_side(const std::string& side) {
    if (side == "encoder") return Side::encoder;
    if (side == "decoder") return Side::decoder;
    fail(ErrorKind::config, "side must be 'encoder' or 'decoder', got '" + side + "'");
}

py::dict profiles_to_dict(const std::array<WeightProfile, 4>& profiles) {
    py::dict d;
    for (const auto& p : profiles) d[py::str(p.name)] = py::array_t<double>(p.values.size(), p.values.data());
    return d;
}

py::dict report_to_dict(const EvalReport& r) {
    py::list rows;
    for (const auto& row : r.rows) rows.append(py::make_tuple(row.excerpt_id, row.prediction, row.label));
    py::dict d;
    d["rows"] = rows;
    d["rmse_percent"] = r.rmse_percent;
    d["ncc"] = r.ncc;
    d["has_labels"] = r.has_labels;
    d["ensemble_size"] = r.ensemble_size;
    return d;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "C++ core of the liwhiz package";

    static PyObject* error_type =
        PyErr_NewException("liwhiz._core.Error", PyExc_RuntimeError, nullptr);
    m.attr("Error") = py::handle(error_type).inc_ref();
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::object inst = py::handle(error_type)(e.what());
            inst.attr("kind") = std::string(to_string(e.kind()));
            PyErr_SetObject(error_type, inst.ptr());
        }
    });

    py::enum_<Mode>(m, "Mode")
        .value("full", Mode::full)
        .value("y_only", Mode::y_only);

    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init([](std::size_t l, std::size_t f, std::size_t h) {
                 ModelConfig c{l, f, h};
                 c.validate();
                 return c;
             }),
             py::arg("num_layers") = 32, py::arg("feature_dim") = 1280, py::arg("hidden_dim") = 512)
        .def_readwrite("num_layers", &ModelConfig::num_layers)
        .def_readwrite("feature_dim", &ModelConfig::feature_dim)
        .def_readwrite("hidden_dim", &ModelConfig::hidden_dim)
        .def_property_readonly("layer_count", &ModelConfig::layer_count)
        .def("__eq__", [](const ModelConfig& a, const ModelConfig& b) { return a == b; })
        .def("__repr__", [](const ModelConfig& c) {
            return "ModelConfig(num_layers=" + std::to_string(c.num_layers) + ", feature_dim=" +
                   std::to_string(c.feature_dim) + ", hidden_dim=" + std::to_string(c.hidden_dim) + ")";
        });

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("learning_rate", &TrainConfig::learning_rate)
        .def_readwrite("max_epochs", &TrainConfig::max_epochs)
        .def_readwrite("patience", &TrainConfig::patience)
        .def_readwrite("k_folds", &TrainConfig::k_folds)
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("weight_decay", &TrainConfig::weight_decay)
        .def_readwrite("adam_beta1", &TrainConfig::adam_beta1)
        .def_readwrite("adam_beta2", &TrainConfig::adam_beta2)
        .def_readwrite("adam_eps", &TrainConfig::adam_eps)
        .def_readwrite("seed", &TrainConfig::seed)
        .def("validate", &TrainConfig::validate, py::arg("dataset_size") = 0);

    py::class_<BackendParams>(m, "Params")
        .def_readonly("config", &BackendParams::config)
        .def_readonly("mode", &BackendParams::mode)
        .def("tensors", [](const BackendParams& p) {
            py::dict d;
            for (const auto& t : tensors(p)) d[py::str(t.name)] = py::array_t<float>(t.data.size(), t.data.data());
            return d;
        }, "Copies of every tensor, flattened, in checkpoint order")
        .def("__eq__", [](const BackendParams& a, const BackendParams& b) { return bit_equal(a, b); });

    py::class_<ExcerptFeatures>(m, "Excerpt")
        .def(py::init([](std::string id, const FloatArray& enc_x, const FloatArray& enc_y,
                         const FloatArray& dec_x, const FloatArray& dec_y, std::optional<double> label) {
                 return ExcerptFeatures{std::move(id), stack_from_numpy(enc_x, Side::encoder),
                                        stack_from_numpy(enc_y, Side::encoder),
                                        stack_from_numpy(dec_x, Side::decoder),
                                        stack_from_numpy(dec_y, Side::decoder), label};
             }),
             py::arg("excerpt_id"), py::arg("enc_x"), py::arg("enc_y"), py::arg("dec_x"),
             py::arg("dec_y"), py::arg("label") = py::none())
        .def_readonly("excerpt_id", &ExcerptFeatures::excerpt_id)
        .def_readwrite("label", &ExcerptFeatures::label)
        .def_property_readonly("enc_x", [](const ExcerptFeatures& e) { return stack_to_numpy(e.enc_x); })
        .def_property_readonly("enc_y", [](const ExcerptFeatures& e) { return stack_to_numpy(e.enc_y); })
        .def_property_readonly("dec_x", [](const ExcerptFeatures& e) { return stack_to_numpy(e.dec_x); })
        .def_property_readonly("dec_y", [](const ExcerptFeatures& e) { return stack_to_numpy(e.dec_y); });

    py::class_<FoldResult>(m, "FoldResult")
        .def_readonly("fold", &FoldResult::fold)
        .def_readonly("best", &FoldResult::best)
        .def_readonly("best_val_rmse", &FoldResult::best_val_rmse)
        .def_readonly("best_epoch", &FoldResult::best_epoch)
        .def_readonly("stopped_epoch", &FoldResult::stopped_epoch)
        .def_property_readonly("history", [](const FoldResult& r) {
            py::list out;
            for (const auto& h : r.history) out.append(py::make_tuple(h.epoch, h.train_loss, h.val_rmse));
            return out;
        }, "(epoch, train_loss, val_rmse) tuples");

    m.def("read_fmap", [](const std::filesystem::path& path) {
        const auto s = read_fmap(path);
        return py::make_tuple(stack_to_numpy(s), s.side() == Side::encoder ? "encoder" : "decoder");
    }, py::arg("path"), "Returns (array[layers, frames, features], side)");
    m.def("write_fmap", [](const std::filesystem::path& path, const FloatArray& a, const std::string& side) {
        write_fmap(stack_from_numpy(a, parse_side(side)), path);
    }, py::arg("path"), py::arg("array"), py::arg("side"));

    m.def("load_dataset", [](const std::filesystem::path& manifest, std::size_t hidden_dim) {
        const auto man = read_manifest(manifest);
        return load_dataset(man, probe_config(man, hidden_dim));
    }, py::arg("manifest"), py::arg("hidden_dim") = 512);

    m.def("init_params", &init_params, py::arg("config"), py::arg("mode"), py::arg("seed"));
    m.def("load_checkpoint", py::overload_cast<const std::filesystem::path&>(&load_checkpoint), py::arg("path"));
    m.def("save_checkpoint", py::overload_cast<const BackendParams&, const std::filesystem::path&>(&save_checkpoint),
          py::arg("params"), py::arg("path"));
    m.def("load_checkpoints", &load_checkpoints, py::arg("directory"));

    m.def("forward", [](const ExcerptFeatures& e, const BackendParams& p, std::optional<Mode> mode) {
        return forward(e, p, mode.value_or(p.mode));
    }, py::arg("excerpt"), py::arg("params"), py::arg("mode") = py::none());
    m.def("ensemble_predict", [](const ExcerptFeatures& e, const std::vector<BackendParams>& models, std::optional<Mode> mode) {
        if (models.empty()) fail(ErrorKind::config, "ensemble is empty");
        return ensemble_predict(e, models, mode.value_or(models.front().mode));
    }, py::arg("excerpt"), py::arg("models"), py::arg("mode") = py::none());
    m.def("rmse_percent", [](const std::vector<double>& p, const std::vector<double>& l) { return rmse_percent(p, l); },
          py::arg("predictions"), py::arg("labels"));
    m.def("ncc", [](const std::vector<double>& p, const std::vector<double>& l) { return ncc(p, l); },
          py::arg("predictions"), py::arg("labels"), "Pearson correlation, None when undefined");
    m.def("evaluate", [](const std::vector<ExcerptFeatures>& data, const std::vector<BackendParams>& models, std::optional<Mode> mode) {
        if (models.empty()) fail(ErrorKind::config, "ensemble is empty");
        return report_to_dict(evaluate(data, models, mode.value_or(models.front().mode)));
    }, py::arg("dataset"), py::arg("models"), py::arg("mode") = py::none());

    auto make_spec = [](std::size_t n, std::size_t layers, std::size_t features, const std::string& branch,
                        std::size_t target_layer, double a, double b, double noise, std::uint64_t seed) {
        SynthSpec s;
        s.num_excerpts = n;
        s.config.num_layers = layers;
        s.config.feature_dim = features;
        s.plant = Plant{parse_branch(branch), target_layer, a, b};
        s.label_noise_std = noise;
        s.seed = seed;
        s.validate();
        return s;
    };
    m.def("synth_excerpt", [make_spec](std::size_t index, std::size_t num_layers, std::size_t feature_dim,
                                       const std::string& branch, std::size_t target_layer, double a, double b,
                                       double noise, std::uint64_t seed) {
        return synth_excerpt(make_spec(index + 1, num_layers, feature_dim, branch, target_layer, a, b, noise, seed), index);
    }, py::arg("index"), py::arg("num_layers") = 2, py::arg("feature_dim") = 8, py::arg("plant_branch") = "enc_y",
       py::arg("plant_layer") = 1, py::arg("plant_a") = 4.0, py::arg("plant_b") = 0.0, py::arg("label_noise") = 0.0,
       py::arg("seed") = 0);
    m.def("generate_dataset", [make_spec](const std::filesystem::path& out, std::size_t n, std::size_t num_layers,
                                          std::size_t feature_dim, const std::string& branch, std::size_t target_layer,
                                          double a, double b, double noise, std::uint64_t seed) {
        generate_dataset(make_spec(n, num_layers, feature_dim, branch, target_layer, a, b, noise, seed), out);
        return out / "manifest.tsv";
    }, py::arg("out_dir"), py::arg("num_excerpts") = 32, py::arg("num_layers") = 2, py::arg("feature_dim") = 8,
       py::arg("plant_branch") = "enc_y", py::arg("plant_layer") = 1, py::arg("plant_a") = 4.0, py::arg("plant_b") = 0.0,
       py::arg("label_noise") = 0.0, py::arg("seed") = 0, "Writes FMAP files plus manifest.tsv; returns the manifest path");

    m.def("kfold_train", [](const std::vector<ExcerptFeatures>& data, const ModelConfig& model,
                            const TrainConfig& config, Mode mode, int parallel_folds) {
        return kfold_train(data, model, config, mode, parallel_folds);
    }, py::arg("dataset"), py::arg("model"), py::arg("config"), py::arg("mode") = Mode::full,
       py::arg("parallel_folds") = 1, py::call_guard<py::gil_scoped_release>());
    m.def("split_folds", [](std::size_t n, int k, std::uint64_t seed) {
        py::list out;
        for (const auto& s : split_folds(n, k, seed)) out.append(py::make_tuple(s.train, s.val));
        return out;
    }, py::arg("n"), py::arg("k"), py::arg("seed"), "List of (train_indices, val_indices)");

    m.def("normalized_lml_weights", [](const BackendParams& p) { return profiles_to_dict(normalized_lml_weights(p)); },
          py::arg("params"));
    m.def("ensemble_profiles", [](const std::vector<BackendParams>& models) {
        return profiles_to_dict(ensemble_profiles(models));
    }, py::arg("models"));
}
