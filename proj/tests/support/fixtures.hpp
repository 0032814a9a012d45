#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedlake/federation.hpp"
#include "fedlake/node_client.hpp"
#include "fedlake/synthcohort.hpp"

namespace fixture {

using nlohmann::json;

/// A generated cohort served by in-process nodes behind a coordinator.
struct Federation {
  fedlake::Cohort cohort;
  std::vector<std::shared_ptr<fedlake::DataNode>> nodes;
  std::shared_ptr<fedlake::CatalogStore> catalog;
  std::shared_ptr<fedlake::Coordinator> coordinator;
};

inline Federation make_federation(const fedlake::CohortSpec& spec, fedlake::FederationConfig config = {}) {
  Federation f{fedlake::generate_cohort(spec), {}, {}, {}};
  f.nodes = f.cohort.data_nodes();
  f.catalog = std::make_shared<fedlake::CatalogStore>(f.cohort.catalog());
  std::vector<std::shared_ptr<fedlake::NodeClient>> clients;
  for (const auto& n : f.nodes) clients.push_back(std::make_shared<fedlake::LocalNodeClient>(n));
  f.coordinator = std::make_shared<fedlake::Coordinator>(f.catalog, std::move(clients), config);
  return f;
}

/// The default spec with fewer rows per node.
inline fedlake::CohortSpec small_spec(std::size_t rows_per_node) {
  auto spec = fedlake::default_cohort_spec();
  for (auto& n : spec.nodes) n.rows = rows_per_node;
  return spec;
}

/// Generator rows in global vocabulary as JSON objects, every node pooled.
/// Built field by field so it does not depend on the library serializers.
inline std::vector<json> pooled_global_rows(const fedlake::Cohort& cohort) {
  std::vector<json> out;
  for (const auto& n : cohort.nodes) {
    for (const auto& r : n.global_rows) {
      json row = json::object();
      for (const auto& [k, v] : r) {
        if (std::holds_alternative<double>(v)) row[k] = std::get<double>(v);
        else row[k] = std::get<std::string>(v);
      }
      out.push_back(std::move(row));
    }
  }
  return out;
}

/// Random labelled data: rows x width features in [-1, 1], labels uniform.
inline fedlake::Dataset random_dataset(std::size_t rows, std::size_t width, std::size_t classes,
                                       std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> lab(0, static_cast<int>(classes) - 1);
  fedlake::Dataset d;
  d.features = fedlake::Matrix(rows, width);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < width; ++j) d.features(i, j) = u(rng);
    d.labels.push_back(lab(rng));
  }
  return d;
}

inline fedlake::Dataset concat(const fedlake::Dataset& a, const fedlake::Dataset& b) {
  fedlake::Dataset out = a;
  for (std::size_t i = 0; i < b.size(); ++i) {
    out.features.append_row(b.features.row(i));
    out.labels.push_back(b.labels[i]);
  }
  return out;
}

}  // namespace fixture
