#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fedme/clustering.hpp"
#include "fedme/config.hpp"
#include "fedme/experiment.hpp"
#include "fedme/nn.hpp"

namespace py = pybind11;
using namespace fedme;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using Labels = py::array_t<int, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
    if (a.ndim() != 2) {
        throw std::invalid_argument("expected a 2-D array");
    }
    const auto rows = static_cast<std::size_t>(a.shape(0));
    const auto cols = static_cast<std::size_t>(a.shape(1));
    return Matrix(rows, cols, std::vector<double>(a.data(), a.data() + rows * cols));
}

Array to_array(const Matrix& m) {
    Array out({m.rows(), m.cols()});
    std::copy(m.data().begin(), m.data().end(), out.mutable_data());
    return out;
}

std::vector<int> to_labels(const Labels& y) {
    if (y.ndim() != 1) {
        throw std::invalid_argument("expected a 1-D label array");
    }
    return {y.data(), y.data() + y.shape(0)};
}

py::dict summary_dict(const SummaryReport& report) {
    py::dict out;
    for (const auto& s : report.algorithms) {
        py::dict d;
        d["seeds"] = s.seeds;
        d["test_acc"] = s.test_acc;
        d["test_acc_ft"] = s.test_acc_ft;
        d["val_acc"] = s.val_acc;
        d["mean"] = s.mean;
        d["std"] = s.std;
        d["mean_ft"] = s.mean_ft;
        d["std_ft"] = s.std_ft;
        out[py::str(to_string(s.algorithm))] = d;
    }
    return out;
}

}  // namespace

PYBIND11_MODULE(_fedme, m) {
    m.doc() = "Personalized federated learning by model exchange, mutual learning and model clustering.";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_ArithmeticError);

    py::enum_<Activation>(m, "Activation")
        .value("relu", Activation::relu)
        .value("tanh", Activation::tanh);

    py::class_<ArchitectureSpec>(m, "ArchitectureSpec")
        .def(py::init([](std::size_t input_dim, std::vector<std::size_t> hidden, std::size_t classes,
                         Activation act) {
                 ArchitectureSpec a{input_dim, std::move(hidden), classes, act};
                 a.validate();
                 return a;
             }),
             py::arg("input_dim"), py::arg("hidden_widths"), py::arg("num_classes"),
             py::arg("activation") = Activation::relu)
        .def_readonly("input_dim", &ArchitectureSpec::input_dim)
        .def_readonly("hidden_widths", &ArchitectureSpec::hidden_widths)
        .def_readonly("num_classes", &ArchitectureSpec::num_classes)
        .def_readonly("activation", &ArchitectureSpec::activation)
        .def("parameter_count", &ArchitectureSpec::parameter_count)
        .def("__repr__", &ArchitectureSpec::describe);

    py::class_<Model>(m, "Model")
        .def_readonly("arch", &Model::arch)
        .def_property(
            "params", [](const Model& model) { return py::array_t<double>(model.params.size(), model.params.data()); },
            [](Model& model, const Array& p) {
                if (static_cast<std::size_t>(p.size()) != model.params.size()) {
                    throw std::invalid_argument("parameter vector has the wrong length");
                }
                model.params.assign(p.data(), p.data() + p.size());
            })
        .def("__len__", &Model::size);

    m.def("init_model", &init_model, py::arg("arch"), py::arg("seed"));
    m.def("forward", [](const Model& model, const Array& x) { return to_array(forward(model, to_matrix(x))); },
          "Softmax probabilities, one row per input row.");
    m.def("logits", [](const Model& model, const Array& x) { return to_array(logits(model, to_matrix(x))); });
    m.def("cross_entropy", [](const Array& probs, const Labels& y) {
        const auto labels = to_labels(y);
        return cross_entropy(to_matrix(probs), labels);
    });
    m.def("kl_divergence", [](const Array& target, const Array& probs) {
        return kl_divergence(to_matrix(target), to_matrix(probs));
    });
    m.def("dml_losses_and_grads", [](const Model& p, const Model& ex, const Array& x, const Labels& y) {
        const auto labels = to_labels(y);
        const auto r = dml_losses_and_grads(p, ex, to_matrix(x), labels);
        return py::make_tuple(r.loss_p, r.loss_ex, r.grad_p.values, r.grad_ex.values);
    });
    m.def("average_params", [](const std::vector<Model>& models) { return average_params(std::span<const Model>(models)); });
    m.def("serialize_model", [](const Model& model) {
        const auto bytes = serialize_model(model);
        return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
    });
    m.def("deserialize_model", [](const py::bytes& data) {
        const std::string s = data;
        return deserialize_model(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
    });
    m.def("load_model", &load_model);

    m.def("kmeans", [](const Array& points, std::size_t k, std::uint64_t seed, std::size_t restarts) {
        const auto r = kmeans(to_matrix(points), k, seed, restarts);
        return py::make_tuple(r.assignments, r.inertia);
    }, py::arg("points"), py::arg("k"), py::arg("seed"), py::arg("restarts") = 8);
    m.def("assign_exchanges", [](const std::vector<std::size_t>& cluster_of, std::size_t round, std::uint64_t seed) {
        return assign_exchanges(cluster_of, round, seed).donor;
    });
    m.def("tuning_rule", &tuning_rule, py::arg("self"), py::arg("origin"), py::arg("loss_own"),
          py::arg("loss_exchanged"));

    m.def("partition", [](const std::string& config_text) {
        const auto config = parse_config(config_text);
        const auto data = prepare_data(config, config.seed);
        py::list clients;
        for (const auto& s : data.shards) {
            clients.append(py::make_tuple(s.train.size(), s.validation.size(), s.test.size()));
        }
        return clients;
    }, "Split sizes per client for the config's master seed.");
    m.def("run_experiment", [](const std::string& config_text, std::optional<std::filesystem::path> out) {
        const auto config = parse_config(config_text);
        SummaryReport report;
        {
            py::gil_scoped_release release;
            report = run_experiment(config, out);
        }
        return summary_dict(report);
    }, py::arg("config_text"), py::arg("out_dir") = py::none());
}
