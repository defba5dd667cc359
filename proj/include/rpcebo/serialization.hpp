#pragma once

#include <complex>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rpcebo/inverse_problem.hpp"
#include "rpcebo/rpce_model.hpp"

namespace rpcebo {

using Json = nlohmann::json;

inline constexpr int kFormatVersion = 1;

/// Schema violations carry the path of the offending field.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& message) : std::runtime_error(message) {}
};

namespace detail_json {

inline const Json& require(const Json& node, const char* key, const std::string& path) {
  if (!node.is_object() || !node.contains(key)) {
    throw ConfigError(path + "." + key + ": missing required field");
  }
  return node.at(key);
}

inline void reject_unknown_keys(const Json& node, const std::vector<std::string>& allowed,
                                const std::string& path) {
  if (!node.is_object()) throw ConfigError(path + ": expected an object");
  for (const auto& item : node.items()) {
    bool known = false;
    for (const auto& key : allowed) known |= (key == item.key());
    if (!known) throw ConfigError(path + "." + item.key() + ": unknown field");
  }
}

inline double as_number(const Json& node, const std::string& path) {
  if (!node.is_number()) throw ConfigError(path + ": expected a number");
  return node.get<double>();
}

inline int as_int(const Json& node, const std::string& path) {
  if (!node.is_number_integer()) throw ConfigError(path + ": expected an integer");
  return node.get<int>();
}

inline void check_version(const Json& node, const std::string& path) {
  if (as_int(require(node, "format_version", path), path + ".format_version") !=
      kFormatVersion) {
    throw ConfigError(path + ".format_version: unsupported version");
  }
}

}  // namespace detail_json

/// Complex scalars serialize as two-element [re, im] arrays.
inline Json to_json(const std::complex<double>& z) {
  return Json::array({z.real(), z.imag()});
}

inline std::complex<double> complex_from_json(const Json& node, const std::string& path) {
  if (!node.is_array() || node.size() != 2 || !node[0].is_number() || !node[1].is_number()) {
    throw ConfigError(path + ": expected a [re, im] pair");
  }
  return {node[0].get<double>(), node[1].get<double>()};
}

inline Json to_json(const Eigen::VectorXcd& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(to_json(v(i)));
  return out;
}

inline Eigen::VectorXcd complex_vector_from_json(const Json& node, const std::string& path) {
  if (!node.is_array()) throw ConfigError(path + ": expected an array");
  Eigen::VectorXcd v(static_cast<Eigen::Index>(node.size()));
  for (std::size_t i = 0; i < node.size(); ++i) {
    v(static_cast<Eigen::Index>(i)) = complex_from_json(node[i], path + "[" + std::to_string(i) + "]");
  }
  return v;
}

inline Json to_json(const Eigen::VectorXd& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

inline Eigen::VectorXd real_vector_from_json(const Json& node, const std::string& path) {
  if (!node.is_array()) throw ConfigError(path + ": expected an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(node.size()));
  for (std::size_t i = 0; i < node.size(); ++i) {
    v(static_cast<Eigen::Index>(i)) =
        detail_json::as_number(node[i], path + "[" + std::to_string(i) + "]");
  }
  return v;
}

inline Json to_json(const Eigen::MatrixXd& m) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    out.push_back(to_json(Eigen::VectorXd(m.row(i).transpose())));
  }
  return out;
}

inline Eigen::MatrixXd real_matrix_from_json(const Json& node, const std::string& path) {
  if (!node.is_array()) throw ConfigError(path + ": expected an array of rows");
  const Eigen::Index rows = static_cast<Eigen::Index>(node.size());
  Eigen::MatrixXd m(rows, rows == 0 ? 0 : static_cast<Eigen::Index>(node[0].size()));
  for (Eigen::Index i = 0; i < rows; ++i) {
    const Eigen::VectorXd row =
        real_vector_from_json(node[static_cast<std::size_t>(i)],
                              path + "[" + std::to_string(i) + "]");
    if (row.size() != m.cols()) throw ConfigError(path + ": ragged matrix rows");
    m.row(i) = row.transpose();
  }
  return m;
}

inline Json to_json(const Eigen::MatrixXcd& m) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    out.push_back(to_json(Eigen::VectorXcd(m.row(i).transpose())));
  }
  return out;
}

inline Eigen::MatrixXcd complex_matrix_from_json(const Json& node, const std::string& path) {
  if (!node.is_array()) throw ConfigError(path + ": expected an array of rows");
  const Eigen::Index rows = static_cast<Eigen::Index>(node.size());
  Eigen::MatrixXcd m(rows, rows == 0 ? 0 : static_cast<Eigen::Index>(node[0].size()));
  for (Eigen::Index i = 0; i < rows; ++i) {
    const Eigen::VectorXcd row =
        complex_vector_from_json(node[static_cast<std::size_t>(i)],
                                 path + "[" + std::to_string(i) + "]");
    if (row.size() != m.cols()) throw ConfigError(path + ": ragged matrix rows");
    m.row(i) = row.transpose();
  }
  return m;
}

inline Json to_json(const MultiIndexSet& set) {
  Json indices = Json::array();
  for (const auto& index : set.indices) indices.push_back(index);
  return Json{{"dimension", set.dimension}, {"max_degree", set.max_degree},
              {"indices", indices}};
}

inline MultiIndexSet index_set_from_json(const Json& node, const std::string& path) {
  using detail_json::as_int;
  using detail_json::require;
  detail_json::reject_unknown_keys(node, {"dimension", "max_degree", "indices"}, path);
  MultiIndexSet set;
  set.dimension = as_int(require(node, "dimension", path), path + ".dimension");
  set.max_degree = as_int(require(node, "max_degree", path), path + ".max_degree");
  const Json& indices = require(node, "indices", path);
  if (!indices.is_array()) throw ConfigError(path + ".indices: expected an array");
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const Json& tuple = indices[j];
    const std::string tuple_path = path + ".indices[" + std::to_string(j) + "]";
    if (!tuple.is_array() || static_cast<int>(tuple.size()) != set.dimension) {
      throw ConfigError(tuple_path + ": expected a tuple of length dimension");
    }
    std::vector<int> index(tuple.size());
    for (std::size_t i = 0; i < tuple.size(); ++i) {
      index[i] = as_int(tuple[i], tuple_path);
      if (index[i] < 0) throw ConfigError(tuple_path + ": negative index entry");
    }
    set.indices.push_back(std::move(index));
  }
  return set;
}

/// Lossless model serialization; coefficient arrays round-trip bitwise
/// (doubles are emitted with shortest round-trip formatting).
inline Json to_json(const RpceModel& model) {
  Json training{{"n_tr", model.training.n_tr},
                {"iterations", model.training.iterations},
                {"converged", model.training.converged},
                {"duplicate_inputs", model.training.duplicate_inputs},
                {"inputs", to_json(model.training.inputs)},
                {"outputs", to_json(model.training.outputs)}};
  Json history = Json::array();
  for (const auto& [n_p, n_q] : model.training.retained_history) {
    history.push_back(Json::array({n_p, n_q}));
  }
  training["retained_history"] = history;
  return Json{{"format_version", kFormatVersion},
              {"numerator", Json{{"index_set", to_json(model.numerator_indices)},
                                 {"coefficients", to_json(model.p)}}},
              {"denominator", Json{{"index_set", to_json(model.denominator_indices)},
                                   {"coefficients", to_json(model.q)}}},
              {"sigma_pp", to_json(model.sigma_pp)},
              {"neg_hessian_qq", to_json(model.neg_hessian_qq)},
              {"alpha_p", to_json(model.alpha_p)},
              {"alpha_q", to_json(model.alpha_q)},
              {"beta_s", model.beta_s},
              {"training", training}};
}

inline RpceModel model_from_json(const Json& node, const std::string& path = "model") {
  using detail_json::require;
  detail_json::reject_unknown_keys(
      node, {"format_version", "numerator", "denominator", "sigma_pp", "neg_hessian_qq",
             "alpha_p", "alpha_q", "beta_s", "training"}, path);
  detail_json::check_version(node, path);
  RpceModel model;
  const Json& numerator = require(node, "numerator", path);
  model.numerator_indices =
      index_set_from_json(require(numerator, "index_set", path + ".numerator"),
                          path + ".numerator.index_set");
  model.p = complex_vector_from_json(require(numerator, "coefficients", path + ".numerator"),
                                     path + ".numerator.coefficients");
  const Json& denominator = require(node, "denominator", path);
  model.denominator_indices =
      index_set_from_json(require(denominator, "index_set", path + ".denominator"),
                          path + ".denominator.index_set");
  model.q = complex_vector_from_json(require(denominator, "coefficients", path + ".denominator"),
                                     path + ".denominator.coefficients");
  model.sigma_pp = real_matrix_from_json(require(node, "sigma_pp", path), path + ".sigma_pp");
  model.neg_hessian_qq = complex_matrix_from_json(require(node, "neg_hessian_qq", path),
                                                  path + ".neg_hessian_qq");
  model.alpha_p = real_vector_from_json(require(node, "alpha_p", path), path + ".alpha_p");
  model.alpha_q = real_vector_from_json(require(node, "alpha_q", path), path + ".alpha_q");
  model.beta_s = detail_json::as_number(require(node, "beta_s", path), path + ".beta_s");
  const Json& training = require(node, "training", path);
  const std::string tpath = path + ".training";
  model.training.n_tr = detail_json::as_int(require(training, "n_tr", tpath), tpath + ".n_tr");
  model.training.iterations =
      detail_json::as_int(require(training, "iterations", tpath), tpath + ".iterations");
  const Json& converged = require(training, "converged", tpath);
  if (!converged.is_boolean()) throw ConfigError(tpath + ".converged: expected a boolean");
  model.training.converged = converged.get<bool>();
  const Json& duplicates = require(training, "duplicate_inputs", tpath);
  if (!duplicates.is_boolean()) {
    throw ConfigError(tpath + ".duplicate_inputs: expected a boolean");
  }
  model.training.duplicate_inputs = duplicates.get<bool>();
  model.training.inputs =
      real_matrix_from_json(require(training, "inputs", tpath), tpath + ".inputs");
  model.training.outputs =
      complex_vector_from_json(require(training, "outputs", tpath), tpath + ".outputs");
  const Json& history = require(training, "retained_history", tpath);
  if (!history.is_array()) throw ConfigError(tpath + ".retained_history: expected an array");
  for (const auto& entry : history) {
    if (!entry.is_array() || entry.size() != 2) {
      throw ConfigError(tpath + ".retained_history: expected [n_p, n_q] pairs");
    }
    model.training.retained_history.emplace_back(entry[0].get<int>(), entry[1].get<int>());
  }
  if (model.p.size() != model.numerator_indices.size() ||
      model.q.size() != model.denominator_indices.size()) {
    throw ConfigError(path + ": coefficient count does not match index set");
  }
  return model;
}

inline Json to_json(const ObservationSet& obs) {
  return Json{{"format_version", kFormatVersion},
              {"frequencies_hz", to_json(obs.frequencies_hz)},
              {"sensor_ids", obs.sensor_ids},
              {"flattening", "frequency_major"},
              {"observations", to_json(obs.observations)}};
}

inline ObservationSet observations_from_json(const Json& node,
                                             const std::string& path = "observations") {
  using detail_json::require;
  detail_json::reject_unknown_keys(
      node, {"format_version", "frequencies_hz", "sensor_ids", "flattening", "observations"},
      path);
  detail_json::check_version(node, path);
  const Json& flattening = require(node, "flattening", path);
  if (!flattening.is_string() || flattening.get<std::string>() != "frequency_major") {
    throw ConfigError(path + ".flattening: expected \"frequency_major\"");
  }
  ObservationSet obs;
  obs.frequencies_hz =
      real_vector_from_json(require(node, "frequencies_hz", path), path + ".frequencies_hz");
  const Json& sensors = require(node, "sensor_ids", path);
  if (!sensors.is_array()) throw ConfigError(path + ".sensor_ids: expected an array");
  for (const auto& sensor : sensors) {
    if (!sensor.is_string()) throw ConfigError(path + ".sensor_ids: expected strings");
    obs.sensor_ids.push_back(sensor.get<std::string>());
  }
  obs.observations =
      complex_vector_from_json(require(node, "observations", path), path + ".observations");
  obs.validate();
  return obs;
}

inline Json parse_json_file(const std::string& file_path) {
  std::ifstream in(file_path);
  if (!in) throw ConfigError(file_path + ": cannot open file");
  Json node;
  try {
    in >> node;
  } catch (const Json::parse_error& error) {
    throw ConfigError(file_path + ": " + error.what());
  }
  return node;
}

inline void write_json_file(const std::string& file_path, const Json& node) {
  std::ofstream out(file_path);
  if (!out) throw std::runtime_error(file_path + ": cannot open for writing");
  out << node.dump(2) << '\n';
}

}  // namespace rpcebo
