#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "pslab/box.hpp"
#include "pslab/center_bank.hpp"
#include "pslab/config.hpp"
#include "pslab/errors.hpp"
#include "pslab/eval.hpp"
#include "pslab/experiments.hpp"

namespace py = pybind11;
using namespace pslab;

namespace {

Tensor to_tensor(const std::vector<std::vector<double>>& rows) {
  const std::size_t cols = rows.empty() ? 0 : rows.front().size();
  Tensor t({rows.size(), cols});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != cols) throw ShapeError("ragged feature rows");
    for (std::size_t c = 0; c < cols; ++c) t.at(r, c) = rows[r][c];
  }
  return t;
}

}  // namespace

PYBIND11_MODULE(_pslab, m) {
  m.doc() = "Bindings for the pslab person-search lab";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);

  py::class_<BoundingBox>(m, "BoundingBox")
      .def(py::init([](double x, double y, double w, double h, int label) {
             return BoundingBox{x, y, w, h, label};
           }),
           py::arg("x"), py::arg("y"), py::arg("w"), py::arg("h"),
           py::arg("label") = kBackgroundLabel)
      .def_readwrite("x", &BoundingBox::x)
      .def_readwrite("y", &BoundingBox::y)
      .def_readwrite("w", &BoundingBox::w)
      .def_readwrite("h", &BoundingBox::h)
      .def_readwrite("label", &BoundingBox::label);

  m.def("iou", &iou, py::arg("a"), py::arg("b"));
  m.def("average_precision", &average_precision, py::arg("hits"),
        py::arg("ground_truth_count"));

  m.def("center_loss",
        [](const std::vector<std::vector<double>>& feats, const std::vector<int>& labels,
           const std::map<int, std::vector<double>>& centers) {
          const Tensor f = to_tensor(feats);
          CenterBank bank(f.cols(), 0.5);
          for (const auto& [id, c] : centers) bank.set_center(id, c);
          return center_loss_forward(f, labels, bank);
        },
        py::arg("features"), py::arg("labels"), py::arg("centers"));

  m.def("center_update",
        [](const std::vector<std::vector<double>>& feats, const std::vector<int>& labels,
           const std::map<int, std::vector<double>>& centers, double alpha) {
          const Tensor f = to_tensor(feats);
          CenterBank bank(f.cols(), alpha);
          for (const auto& [id, c] : centers) bank.set_center(id, c);
          center_update(bank, f, labels);
          return bank.centers();
        },
        py::arg("features"), py::arg("labels"), py::arg("centers"), py::arg("alpha"));

  m.def("default_config", [] { return to_text(ExperimentConfig{}); });
  m.def("config_hash", [](const std::string& text) { return config_hash(parse_config(text)); },
        py::arg("text"));
  m.def("normalize_config", [](const std::string& text) { return to_text(parse_config(text)); },
        py::arg("text"));

  m.def("generate",
        [](const std::string& config_text, const std::filesystem::path& out_dir) {
          const Dataset d = cmd_generate(parse_config(config_text), out_dir);
          py::dict info;
          info["scenes"] = d.scenes.size();
          info["train_scenes"] = d.split.train_scenes.size();
          info["test_scenes"] = d.split.test_scenes.size();
          info["queries"] = d.split.queries.size();
          info["source_hash"] = d.source_hash;
          return info;
        },
        py::arg("config_text"), py::arg("out_dir"));

  m.def("train_and_eval",
        [](const std::string& config_text, const std::filesystem::path& out_dir) {
          const ExperimentConfig config = parse_config(config_text);
          const Dataset d = cmd_generate(config, out_dir / "data");
          py::gil_scoped_release release;
          const TrainOutcome t = cmd_train(config, d, out_dir);
          const EvalReport r = cmd_eval(config, d, t.checkpoint.state.model, out_dir);
          return std::pair{r.map, r.top1};
        },
        py::arg("config_text"), py::arg("out_dir"));
}
