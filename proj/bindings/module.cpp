#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include "maskconnect/checkpoint.hpp"
#include "maskconnect/connectivity.hpp"
#include "maskconnect/data.hpp"
#include "maskconnect/graph.hpp"
#include "maskconnect/ops.hpp"
#include "maskconnect/tensor.hpp"

namespace py = pybind11;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

mc::Tensor tensor_from(const FloatArray& arr) {
    mc::Tensor t;
    t.shape.reserve(static_cast<std::size_t>(arr.ndim()));
    for (py::ssize_t i = 0; i < arr.ndim(); ++i) t.shape.push_back(static_cast<int>(arr.shape(i)));
    t.data.assign(arr.data(), arr.data() + arr.size());
    return t;
}

py::array_t<float> numpy_from(const mc::Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    py::array_t<float> arr(shape);
    std::memcpy(arr.mutable_data(), t.data.data(), t.size() * sizeof(float));
    return arr;
}

// A graph plus the scratch state one needs to run it. The RNG seeded at
// construction drives both parameter init and any later mask sampling.
class Graph {
  public:
    Graph(const std::string& family, const std::string& mode, int depth, int cardinality,
          int width, int fan_in, int num_classes, int input_channels, int input_hw,
          std::uint64_t seed)
        : rng_(seed) {
        mc::ArchSpec spec;
        spec.family = mc::parse_family(family);
        spec.mode = mc::parse_conn_mode(mode);
        spec.depth = depth;
        spec.cardinality = cardinality;
        spec.width = width;
        spec.fan_in = fan_in;
        spec.num_classes = num_classes;
        spec.input_channels = input_channels;
        spec.input_hw = input_hw;
        spec.validate();
        graph_ = mc::build_graph(spec, rng_);
    }

    explicit Graph(mc::LoadedCheckpoint ckpt)
        : graph_(std::move(ckpt.graph)), rng_(std::move(ckpt.rng)) {}

    std::size_t param_count() const { return mc::graph_param_count(graph_); }
    int active_blocks() const { return mc::active_block_count(graph_); }

    double eval_loss(const FloatArray& batch, const std::vector<int>& labels) {
        const mc::Tensor x = tensor_from(batch);
        return mc::graph_forward(graph_, acts_, x, labels, mc::ops::Mode::Eval, rng_);
    }

    py::array_t<float> logits() const { return numpy_from(acts_.logits); }

    void sample_masks() {
        for (mc::MaskState& m : graph_.masks) {
            if (!m.frozen) mc::sample_binary(m, rng_);
        }
    }

    void freeze_masks() {
        for (mc::MaskState& m : graph_.masks) {
            if (!m.frozen) mc::freeze_topk(m);
        }
    }

    py::list masks() const {
        py::list out;
        for (const mc::MaskState& m : graph_.masks) {
            py::dict d;
            d["consumer"] = m.consumer;
            py::list producers, real, active;
            for (int k = 0; k < m.size(); ++k) {
                const auto ki = static_cast<std::size_t>(k);
                producers.append(graph_.block_name(m.producers[ki]));
                real.append(m.real_mask[ki]);
                active.append(m.binary_mask[ki] != 0);
            }
            d["producers"] = std::move(producers);
            d["real"] = std::move(real);
            d["active"] = std::move(active);
            d["fan_in"] = m.fan_in;
            d["frozen"] = m.frozen;
            out.append(std::move(d));
        }
        return out;
    }

    py::dict prune() {
        const mc::PruneReport r = mc::prune_unused(graph_);
        py::dict d;
        d["removed"] = r.removed;
        d["blocks_before"] = r.blocks_before;
        d["blocks_after"] = r.blocks_after;
        d["params_before"] = r.params_before;
        d["params_after"] = r.params_after;
        return d;
    }

    void save(const std::string& path) const { mc::save_checkpoint(graph_, rng_, path); }

  private:
    mc::ModuleGraph graph_;
    mc::GraphActivations acts_;
    mc::Rng rng_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "masked modular networks: tensor ops, graph building, connectivity learning";

    m.def(
        "conv2d",
        [](const FloatArray& x, const FloatArray& filters, int stride, int pad) {
            return numpy_from(mc::ops::conv2d(tensor_from(x), tensor_from(filters), stride, pad));
        },
        py::arg("x"), py::arg("filters"), py::arg("stride") = 1, py::arg("pad") = 0);
    m.def("relu", [](const FloatArray& x) { return numpy_from(mc::ops::relu(tensor_from(x))); });
    m.def("global_avg_pool", [](const FloatArray& x) {
        return numpy_from(mc::ops::global_avg_pool(tensor_from(x)));
    });
    m.def(
        "linear",
        [](const FloatArray& x, const FloatArray& weight, const FloatArray& bias) {
            return numpy_from(
                mc::ops::linear(tensor_from(x), tensor_from(weight), tensor_from(bias)));
        },
        py::arg("x"), py::arg("weight"), py::arg("bias"));
    m.def(
        "softmax_xent",
        [](const FloatArray& logits, const std::vector<int>& labels) {
            mc::Tensor t = tensor_from(logits);
            return mc::ops::softmax_xent(t, labels);
        },
        py::arg("logits"), py::arg("labels"));

    m.def(
        "make_blobs",
        [](int n, int channels, int hw, int num_classes, std::uint64_t seed) {
            const mc::Dataset d = mc::make_blobs(n, channels, hw, num_classes, seed);
            std::vector<py::ssize_t> shape{d.size(), d.channels, d.height, d.width};
            py::array_t<float> pixels(shape);
            std::memcpy(pixels.mutable_data(), d.pixels.data(), d.pixels.size() * sizeof(float));
            py::array_t<int> labels(static_cast<py::ssize_t>(d.labels.size()));
            std::memcpy(labels.mutable_data(), d.labels.data(), d.labels.size() * sizeof(int));
            return py::make_tuple(std::move(pixels), std::move(labels));
        },
        py::arg("n"), py::arg("channels") = 3, py::arg("hw") = 8, py::arg("num_classes") = 4,
        py::arg("seed") = 1, "synthetic Gaussian-bump dataset as (pixels, labels) arrays");

    py::class_<Graph>(m, "Graph")
        .def(py::init<const std::string&, const std::string&, int, int, int, int, int, int, int,
                      std::uint64_t>(),
             py::arg("family") = "resnet", py::arg("mode") = "learned", py::arg("depth") = 8,
             py::arg("cardinality") = 8, py::arg("width") = 16, py::arg("fan_in") = 1,
             py::arg("num_classes") = 10, py::arg("input_channels") = 3, py::arg("input_hw") = 32,
             py::arg("seed") = 1)
        .def("param_count", &Graph::param_count)
        .def("active_blocks", &Graph::active_blocks)
        .def("eval_loss", &Graph::eval_loss, py::arg("batch"), py::arg("labels"),
             "deterministic forward pass; returns mean cross-entropy")
        .def("logits", &Graph::logits, "logits of the most recent forward pass")
        .def("sample_masks", &Graph::sample_masks)
        .def("freeze_masks", &Graph::freeze_masks)
        .def("masks", &Graph::masks)
        .def("prune", &Graph::prune)
        .def("save", &Graph::save, py::arg("path"));

    m.def(
        "load_graph", [](const std::string& path) { return Graph(mc::load_checkpoint(path)); },
        py::arg("path"));
}
