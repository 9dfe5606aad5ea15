#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

#include "fa/attention.hpp"
#include "fa/autodiff.hpp"
#include "fa/cost_model.hpp"
#include "fa/harness.hpp"

namespace py = pybind11;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

fa::Tensor tensor_from(const DoubleArray& arr) {
    if (arr.ndim() < 1) throw std::invalid_argument("expected an array with at least one axis");
    fa::Shape shape(arr.ndim());
    for (py::ssize_t i = 0; i < arr.ndim(); ++i) shape[i] = static_cast<std::size_t>(arr.shape(i));
    std::vector<double> data(arr.data(), arr.data() + arr.size());
    return fa::Tensor(std::move(shape), std::move(data));
}

py::array_t<double> array_from(const fa::Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> out(shape);
    std::copy(t.data(), t.data() + t.size(), out.mutable_data());
    return out;
}

fa::Matrix matrix_from(const DoubleArray& arr) {
    if (arr.ndim() != 2) throw std::invalid_argument("expected a 2D array");
    return fa::Matrix(static_cast<std::size_t>(arr.shape(0)), static_cast<std::size_t>(arr.shape(1)),
                      std::vector<double>(arr.data(), arr.data() + arr.size()));
}

py::array_t<double> array_from(const fa::Matrix& m) {
    py::array_t<double> out({static_cast<py::ssize_t>(m.rows), static_cast<py::ssize_t>(m.cols)});
    std::copy(m.data.begin(), m.data.end(), out.mutable_data());
    return out;
}

fa::LinearMap linear_map_from(const DoubleArray& weight, const std::optional<DoubleArray>& bias) {
    fa::LinearMap map{matrix_from(weight), {}};
    if (bias) {
        if (bias->ndim() != 1) throw std::invalid_argument("bias must be one-dimensional");
        map.bias.assign(bias->data(), bias->data() + bias->size());
    }
    return map;
}

fa::Permutation mode_perm(std::size_t mode, std::size_t rank) {
    return fa::Permutation::mode_leading(mode, rank);
}

py::dict dict_from(const fa::cost::CostReport& r) {
    py::dict d;
    d["variant"] = r.variant;
    d["h"] = r.shape.h;
    d["w"] = r.shape.w;
    d["d"] = r.shape.d;
    d["c"] = r.shape.c;
    d["flops"] = r.flops();
    d["total_flops"] = r.total_flops();
    d["embed_flops"] = r.embed_flops;
    d["affinity_build_flops"] = r.affinity_build_flops;
    d["aggregation_flops"] = r.aggregation_flops;
    d["softmax_flops"] = r.softmax_flops;
    d["affinity_elements"] = r.affinity_elements;
    d["affinity_bytes"] = r.affinity_bytes;
    d["infeasible"] = r.infeasible;
    return d;
}

fa::cost::CostReport cost_by_name(const std::string& variant, const fa::cost::ShapeSpec& s) {
    if (variant == "sa") return fa::cost::cost_sa(s);
    if (variant == "naive") return fa::cost::cost_naive_spatial_channel(s);
    if (variant == "da") return fa::cost::cost_da(s);
    if (variant == "fa") return fa::cost::cost_fa(s);
    throw std::invalid_argument("unknown variant: " + variant + " (expected sa|naive|da|fa)");
}

}  // namespace

PYBIND11_MODULE(fa_core, m) {
    m.doc() = "Folded attention kernels: fold/unfold, sub-affinities, cascaded aggregation, "
              "the rank-one enumeration oracle, gradients and cost accounting.";

    py::register_exception<fa::GuardError>(m, "GuardError");

    py::class_<fa::FaParams>(m, "FaParams", "theta/phi/g channel maps plus cascade options")
        .def(py::init([](const DoubleArray& theta, const DoubleArray& phi, const DoubleArray& g,
                         std::optional<DoubleArray> theta_bias, std::optional<DoubleArray> phi_bias,
                         std::optional<DoubleArray> g_bias, bool reapply_g, bool residual) {
                 fa::FaParams p;
                 p.theta = linear_map_from(theta, theta_bias);
                 p.phi = linear_map_from(phi, phi_bias);
                 p.g = linear_map_from(g, g_bias);
                 p.reapply_g = reapply_g;
                 p.residual = residual;
                 return p;
             }),
             py::arg("theta"), py::arg("phi"), py::arg("g"), py::arg("theta_bias") = std::nullopt,
             py::arg("phi_bias") = std::nullopt, py::arg("g_bias") = std::nullopt,
             py::arg("reapply_g") = false, py::arg("residual") = false)
        .def_static("identity", &fa::FaParams::identity, py::arg("channels"))
        .def_property_readonly("embed_dim", &fa::FaParams::embed_dim)
        .def_readwrite("reapply_g", &fa::FaParams::reapply_g)
        .def_readwrite("residual", &fa::FaParams::residual);

    m.def(
        "permute_axes",
        [](const DoubleArray& x, const std::vector<std::size_t>& order) {
            return array_from(fa::permute_axes(tensor_from(x), fa::Permutation(order)));
        },
        py::arg("x"), py::arg("order"));
    m.def(
        "unfold",
        [](const DoubleArray& x, std::size_t mode) {
            const fa::Tensor t = tensor_from(x);
            return array_from(fa::unfold(t, mode_perm(mode, t.rank())));
        },
        py::arg("x"), py::arg("mode"), "Mode-leading unfold u(X, p_mode)");
    m.def(
        "fold",
        [](const DoubleArray& mtx, std::size_t mode, const std::vector<std::size_t>& shape) {
            return array_from(fa::fold(matrix_from(mtx), mode_perm(mode, shape.size()), shape));
        },
        py::arg("m"), py::arg("mode"), py::arg("shape"), "Inverse of unfold onto the original shape");
    m.def(
        "row_softmax", [](const DoubleArray& x) { return array_from(fa::row_softmax(matrix_from(x))); },
        py::arg("m"));
    m.def(
        "matmul",
        [](const DoubleArray& a, const DoubleArray& b) {
            return array_from(fa::matmul(matrix_from(a), matrix_from(b)));
        },
        py::arg("a"), py::arg("b"));
    m.def(
        "channel_linear",
        [](const DoubleArray& x, const DoubleArray& w, std::optional<DoubleArray> bias) {
            const fa::LinearMap map = linear_map_from(w, bias);
            return array_from(fa::channel_linear(tensor_from(x), map.weight, map.bias));
        },
        py::arg("x"), py::arg("w"), py::arg("bias") = std::nullopt);

    m.def(
        "self_attention",
        [](const DoubleArray& x, const fa::FaParams& p, std::size_t budget) {
            return array_from(fa::self_attention(tensor_from(x), p, budget));
        },
        py::arg("x"), py::arg("params"), py::arg("memory_budget_bytes") = 0);
    m.def(
        "folded_attention",
        [](const DoubleArray& x, const fa::FaParams& p) {
            return array_from(fa::folded_attention(tensor_from(x), p));
        },
        py::arg("x"), py::arg("params"));
    m.def(
        "oracle_aggregate",
        [](const DoubleArray& x, const fa::FaParams& p) {
            return array_from(fa::oracle_aggregate(tensor_from(x), p));
        },
        py::arg("x"), py::arg("params"), "Per-element rank-one enumeration reference (slow, guarded)");
    m.def(
        "two_mode_illustration",
        [](const DoubleArray& x, const fa::FaParams& p) {
            return array_from(fa::two_mode_illustration(tensor_from(x), p));
        },
        py::arg("x"), py::arg("params"));
    m.def(
        "compute_sub_affinity",
        [](const DoubleArray& x, const fa::FaParams& p, std::size_t mode) {
            const fa::Tensor t = tensor_from(x);
            return array_from(fa::compute_sub_affinity(t, p, mode_perm(mode, t.rank())).m);
        },
        py::arg("x"), py::arg("params"), py::arg("mode"));
    m.def(
        "affinity_tensor",
        [](const DoubleArray& x, const fa::FaParams& p, const std::vector<std::size_t>& anchor) {
            const fa::Tensor t = tensor_from(x);
            const auto subs = fa::compute_all_sub_affinities(t, p);
            return array_from(fa::rank_one_affinity(subs, anchor).weights);
        },
        py::arg("x"), py::arg("params"), py::arg("anchor"),
        "Rank-one affinity tensor A_v of the anchor element");

    m.def(
        "cost_report",
        [](const std::string& variant, std::uint64_t h, std::uint64_t w, std::uint64_t d, std::uint64_t c) {
            return dict_from(cost_by_name(variant, {h, w, d, c}));
        },
        py::arg("variant"), py::arg("h"), py::arg("w"), py::arg("d"), py::arg("c"));
    m.def(
        "scaling_table",
        [](const std::vector<std::uint64_t>& sizes) {
            std::vector<fa::cost::ShapeSpec> specs;
            specs.reserve(sizes.size());
            for (std::uint64_t s : sizes) specs.push_back(fa::cost::ShapeSpec::cube(s));
            py::list rows;
            for (const auto& r : fa::cost::scaling_table(specs)) rows.append(dict_from(r));
            return rows;
        },
        py::arg("sizes"), "Equal-dims sweep, four variants per size");

    m.def(
        "gradcheck",
        [](const std::vector<std::size_t>& shape, std::uint64_t seed, std::size_t trials, double rtol) {
            if (shape.size() != 4) throw std::invalid_argument("gradcheck expects a 4-axis shape");
            fa::harness::RunConfig cfg;
            cfg.command = "gradcheck";
            std::copy(shape.begin(), shape.end(), cfg.shape.begin());
            cfg.seed = seed;
            cfg.trials = trials;
            cfg.rtol = rtol;
            const fa::harness::SuiteReport report = fa::harness::run_gradcheck(cfg);
            py::dict d;
            d["max_rel_err"] = report.checks.at(0).metric;
            d["rtol"] = rtol;
            d["pass"] = report.verdict();
            d["detail"] = report.checks.at(0).detail;
            return d;
        },
        py::arg("shape"), py::arg("seed") = 42, py::arg("trials") = 1, py::arg("rtol") = 1e-4,
        "Finite-difference check of the full FA gradient on a small shape");

    m.attr("__version__") = "0.1.0";
}
