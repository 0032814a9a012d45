// Python bindings. Structured values cross the boundary as JSON text; the
// fedlake package decodes them.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include "fedlake/error.hpp"
#include "fedlake/federation.hpp"
#include "fedlake/gateway.hpp"
#include "fedlake/node_client.hpp"
#include "fedlake/query.hpp"
#include "fedlake/synthcohort.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

using namespace fedlake;

json parse(const std::string& text, const char* what) {
  try {
    return json::parse(text.empty() ? "{}" : text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string(what) + ": " + e.what(), "bad_request");
  }
}

class PyFederation {
 public:
  static PyFederation from_spec(const std::string& spec_json) {
    const Cohort cohort = generate_cohort(cohort_spec_from_json(parse(spec_json, "spec")));
    auto catalog = std::make_shared<CatalogStore>(cohort.catalog());
    std::vector<std::shared_ptr<NodeClient>> clients;
    for (const auto& n : cohort.data_nodes()) clients.push_back(std::make_shared<LocalNodeClient>(n));
    return PyFederation(std::make_shared<Coordinator>(catalog, std::move(clients)));
  }

  static PyFederation from_dir(const std::string& dir) {
    auto catalog = std::make_shared<CatalogStore>(load_catalog_file(dir + "/catalog.json"));
    auto clients = local_clients_from_dir(*catalog, dir);
    return PyFederation(std::make_shared<Coordinator>(catalog, std::move(clients)));
  }

  static PyFederation from_catalog(const std::string& path, const std::string& node_token, int timeout_ms) {
    auto catalog = std::make_shared<CatalogStore>(load_catalog_file(path));
    auto clients = http_clients_for(*catalog, node_token, std::chrono::milliseconds(timeout_ms));
    return PyFederation(std::make_shared<Coordinator>(catalog, std::move(clients)));
  }

  std::string schema() const { return to_json(coordinator_->catalog().schema()).dump(); }

  std::vector<std::string> node_ids() const { return coordinator_->node_ids(); }

  std::string query(const std::string& text) { return to_json(coordinator_->run_query(text)).dump(); }

  std::string train(const std::string& pattern, const std::string& train_config, const std::string& federation) {
    const Pattern p = prediction_pattern_from_text(pattern);
    const FederationConfig fc = federation_config_from_json(parse(federation, "federation"), coordinator_->config());
    TrainConfig base;
    base.rounds = fc.rounds;
    const TrainConfig tc = train_config_from_json(parse(train_config, "train_config"), base);
    return summary_json(coordinator_->train(p, tc, fc)).dump();
  }

  std::string metrics(const std::string& pattern) const {
    const Pattern p = prediction_pattern_from_text(pattern);
    auto m = coordinator_->model(p);
    if (!m) throw FederationError("no trained model for " + std::string(pattern_name(p)), "no_model");
    return model_metrics_json(*m).dump();
  }

  std::string model(const std::string& pattern) const {
    auto m = coordinator_->model(prediction_pattern_from_text(pattern));
    return m ? to_json(*m).dump() : std::string("null");
  }

  void load_model(const std::string& model_json) {
    coordinator_->set_model(global_model_from_json(parse(model_json, "model")));
  }

 private:
  explicit PyFederation(std::shared_ptr<Coordinator> c) : coordinator_(std::move(c)) {}
  std::shared_ptr<Coordinator> coordinator_;
};

}  // namespace

PYBIND11_MODULE(_fedlake, m) {
  m.doc() = "fedlake core";

  static py::handle error_type = PyErr_NewException("fedlake._fedlake.Error", PyExc_RuntimeError, nullptr);
  m.attr("Error") = error_type;
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const fedlake::ParseError& e) {
      PyErr_SetObject(error_type.ptr(), py::make_tuple(e.code(), e.what(), e.line(), e.column()).ptr());
    } catch (const fedlake::Error& e) {
      PyErr_SetObject(error_type.ptr(), py::make_tuple(e.code(), e.what()).ptr());
    }
  });

  m.def("default_cohort_spec", [] { return to_json(default_cohort_spec()).dump(); });
  m.def(
      "generate_cohort",
      [](const std::string& spec_json, const std::string& out_dir) {
        const Cohort cohort = generate_cohort(cohort_spec_from_json(parse(spec_json, "spec")));
        write_cohort(cohort, out_dir);
        return cohort.manifest.dump();
      },
      py::arg("spec"), py::arg("out_dir"), py::call_guard<py::gil_scoped_release>());
  m.def(
      "parse_query",
      [](const std::string& text, const std::string& schema_json) {
        const AnalyticalQuery q = parse_query(text, schema_from_json(parse(schema_json, "schema")));
        json j = to_json(q);
        j["canonical"] = render_query(q);
        return j.dump();
      },
      py::arg("text"), py::arg("schema"));
  m.def(
      "fedavg",
      [](const std::vector<std::pair<std::vector<double>, std::size_t>>& updates, const std::string& mode) {
        std::vector<FedAvgEntry> entries;
        for (std::size_t i = 0; i < updates.size(); ++i) {
          entries.push_back({"n" + std::to_string(i), updates[i].first, updates[i].second});
        }
        return fedavg(entries, aggregation_mode_from_string(mode));
      },
      py::arg("updates"), py::arg("mode") = "sample_weighted");
  m.def("patterns", [] { return patterns_json().dump(); });
  m.def("gateway_shapes", [] { return gateway_shapes().dump(); });

  py::class_<PyFederation>(m, "Federation")
      .def_static("from_spec", &PyFederation::from_spec, py::arg("spec"),
                  py::call_guard<py::gil_scoped_release>())
      .def_static("from_dir", &PyFederation::from_dir, py::arg("data_dir"))
      .def_static("from_catalog", &PyFederation::from_catalog, py::arg("catalog"), py::arg("node_token"),
                  py::arg("timeout_ms") = 30000)
      .def("schema", &PyFederation::schema)
      .def("node_ids", &PyFederation::node_ids)
      .def("query", &PyFederation::query, py::arg("text"), py::call_guard<py::gil_scoped_release>())
      .def("train", &PyFederation::train, py::arg("pattern"), py::arg("train_config") = "",
           py::arg("federation") = "", py::call_guard<py::gil_scoped_release>())
      .def("metrics", &PyFederation::metrics, py::arg("pattern"))
      .def("model", &PyFederation::model, py::arg("pattern"))
      .def("load_model", &PyFederation::load_model, py::arg("model"));
}
