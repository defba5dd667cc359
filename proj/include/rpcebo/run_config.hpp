#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rpcebo/bayes_opt.hpp"
#include "rpcebo/dyn_models.hpp"
#include "rpcebo/serialization.hpp"

namespace rpcebo {

/// One model parameter: either random with a lognormal prior (plus an
/// optional synthesis truth) or fixed at a constant.
struct ParameterSpec {
  std::string name;
  bool random = false;
  MarginalPrior prior;
  std::optional<double> true_value;
  double fixed_value = 0.0;
};

struct GeneralModelConfig {
  int input_dof = 0;  // zero-based after parsing
  std::vector<int> output_dofs;
  bool accelerance = false;
  Eigen::MatrixXd stiffness0, damping0, mass0;
  struct Component {
    std::string name;
    Eigen::MatrixXd stiffness, damping, mass;  // zero-sized = no contribution
  };
  std::vector<Component> components;
};

struct ProblemConfig {
  enum class Model { kTwoDof, kGeneral };
  Model model = Model::kTwoDof;
  Eigen::VectorXd frequencies_hz;
  std::vector<ParameterSpec> parameters;
  GeneralModelConfig general;
};

struct BoConfig {
  int n_init = 15;
  int n_budget = 50;
  int n_alpha = 100;
  double softplus_gamma = 100.0;
  double box_half_width = 6.0;
  int n_rep = 3;
  PsoSettings pso;
};

struct TrainCmdConfig {
  int n_tr = 0;  // 0 = use bo.n_budget
  int n_validation = 200;
};

struct RunConfig {
  ProblemConfig problem;
  ErrorModel error;
  bool noiseless = false;
  MapSpace map_space = MapSpace::kU;
  TrainerConfig trainer;
  TmcmcConfig tmcmc;
  BoConfig bo;
  TrainCmdConfig train_cmd;
  std::uint64_t seed = 0;
};

namespace detail_config {

using detail_json::as_int;
using detail_json::as_number;
using detail_json::reject_unknown_keys;
using detail_json::require;

inline double number_or(const Json& node, const char* key, double fallback,
                        const std::string& path) {
  if (!node.contains(key)) return fallback;
  return as_number(node.at(key), path + "." + key);
}

inline int int_or(const Json& node, const char* key, int fallback, const std::string& path) {
  if (!node.contains(key)) return fallback;
  return as_int(node.at(key), path + "." + key);
}

inline std::vector<ParameterSpec> parse_parameters(const Json& node, const std::string& path) {
  if (!node.is_array() || node.empty()) {
    throw ConfigError(path + ": expected a non-empty array of parameter objects");
  }
  std::vector<ParameterSpec> out;
  for (std::size_t i = 0; i < node.size(); ++i) {
    const Json& entry = node[i];
    const std::string entry_path = path + "[" + std::to_string(i) + "]";
    reject_unknown_keys(entry, {"name", "prior", "true_value", "fixed"}, entry_path);
    ParameterSpec spec;
    const Json& name = require(entry, "name", entry_path);
    if (!name.is_string()) throw ConfigError(entry_path + ".name: expected a string");
    spec.name = name.get<std::string>();
    const bool has_prior = entry.contains("prior");
    const bool has_fixed = entry.contains("fixed");
    if (has_prior == has_fixed) {
      throw ConfigError(entry_path + ": exactly one of \"prior\" or \"fixed\" is required");
    }
    if (has_prior) {
      const Json& prior = entry.at("prior");
      const std::string prior_path = entry_path + ".prior";
      reject_unknown_keys(prior, {"mean", "delta"}, prior_path);
      spec.random = true;
      spec.prior = MarginalPrior::lognormal(
          as_number(require(prior, "mean", prior_path), prior_path + ".mean"),
          as_number(require(prior, "delta", prior_path), prior_path + ".delta"));
      if (entry.contains("true_value")) {
        spec.true_value = as_number(entry.at("true_value"), entry_path + ".true_value");
      }
    } else {
      spec.fixed_value = as_number(entry.at("fixed"), entry_path + ".fixed");
    }
    out.push_back(std::move(spec));
  }
  return out;
}

inline GeneralModelConfig parse_general(const Json& node, const std::string& path,
                                        const std::vector<ParameterSpec>& parameters) {
  reject_unknown_keys(node,
                      {"input_dof", "output_dofs", "response", "stiffness0", "damping0",
                       "mass0", "components"},
                      path);
  GeneralModelConfig general;
  general.input_dof = as_int(require(node, "input_dof", path), path + ".input_dof") - 1;
  const Json& outputs = require(node, "output_dofs", path);
  if (!outputs.is_array() || outputs.empty()) {
    throw ConfigError(path + ".output_dofs: expected a non-empty array");
  }
  for (const auto& dof : outputs) {
    general.output_dofs.push_back(as_int(dof, path + ".output_dofs") - 1);
  }
  const Json& response = require(node, "response", path);
  if (!response.is_string() ||
      (response.get<std::string>() != "accelerance" &&
       response.get<std::string>() != "receptance")) {
    throw ConfigError(path + ".response: expected \"accelerance\" or \"receptance\"");
  }
  general.accelerance = response.get<std::string>() == "accelerance";
  general.stiffness0 = real_matrix_from_json(require(node, "stiffness0", path),
                                             path + ".stiffness0");
  general.damping0 = real_matrix_from_json(require(node, "damping0", path), path + ".damping0");
  general.mass0 = real_matrix_from_json(require(node, "mass0", path), path + ".mass0");
  const Json& components = require(node, "components", path);
  if (!components.is_array() || components.size() != parameters.size()) {
    throw ConfigError(path + ".components: expected one component per parameter");
  }
  for (std::size_t i = 0; i < components.size(); ++i) {
    const Json& entry = components[i];
    const std::string entry_path = path + ".components[" + std::to_string(i) + "]";
    reject_unknown_keys(entry, {"name", "stiffness", "damping", "mass"}, entry_path);
    GeneralModelConfig::Component component;
    component.name = require(entry, "name", entry_path).get<std::string>();
    if (component.name != parameters[i].name) {
      throw ConfigError(entry_path + ".name: must match parameter \"" + parameters[i].name +
                        "\"");
    }
    if (entry.contains("stiffness")) {
      component.stiffness =
          real_matrix_from_json(entry.at("stiffness"), entry_path + ".stiffness");
    }
    if (entry.contains("damping")) {
      component.damping = real_matrix_from_json(entry.at("damping"), entry_path + ".damping");
    }
    if (entry.contains("mass")) {
      component.mass = real_matrix_from_json(entry.at("mass"), entry_path + ".mass");
    }
    general.components.push_back(std::move(component));
  }
  const Eigen::Index n_dof = general.stiffness0.rows();
  const auto check_square = [&](const Eigen::MatrixXd& m, const std::string& what) {
    if (m.size() != 0 && (m.rows() != n_dof || m.cols() != n_dof)) {
      throw ConfigError(path + ": " + what + " dimension mismatch");
    }
  };
  check_square(general.damping0, "damping0");
  check_square(general.mass0, "mass0");
  for (const auto& component : general.components) {
    check_square(component.stiffness, component.name + ".stiffness");
    check_square(component.damping, component.name + ".damping");
    check_square(component.mass, component.name + ".mass");
  }
  if (general.input_dof < 0 || general.input_dof >= n_dof) {
    throw ConfigError(path + ".input_dof: out of range");
  }
  for (int dof : general.output_dofs) {
    if (dof < 0 || dof >= n_dof) throw ConfigError(path + ".output_dofs: out of range");
  }
  return general;
}

inline ErrorModel parse_error(const Json& node, bool* noiseless, const std::string& path) {
  const Json& kind = require(node, "kind", path);
  if (!kind.is_string()) throw ConfigError(path + ".kind: expected a string");
  *noiseless = node.contains("noiseless") && node.at("noiseless").is_boolean() &&
               node.at("noiseless").get<bool>();
  if (node.contains("noiseless") && !node.at("noiseless").is_boolean()) {
    throw ConfigError(path + ".noiseless: expected a boolean");
  }
  if (kind.get<std::string>() == "iid") {
    reject_unknown_keys(node, {"kind", "beta_o", "noiseless"}, path);
    return ErrorModel::iid(as_number(require(node, "beta_o", path), path + ".beta_o"));
  }
  if (kind.get<std::string>() == "correlated") {
    reject_unknown_keys(node, {"kind", "sigma_w", "sigma_phi", "l_co_hz", "r", "noiseless"},
                        path);
    return ErrorModel::correlated(
        as_number(require(node, "sigma_w", path), path + ".sigma_w"),
        as_number(require(node, "sigma_phi", path), path + ".sigma_phi"),
        as_number(require(node, "l_co_hz", path), path + ".l_co_hz"),
        as_number(require(node, "r", path), path + ".r"));
  }
  throw ConfigError(path + ".kind: expected \"iid\" or \"correlated\"");
}

inline TrainerConfig parse_trainer(const Json& node, const std::string& path) {
  reject_unknown_keys(node,
                      {"m_p", "m_q", "max_iterations", "tol_log10_alpha", "tol_log10_beta",
                       "alpha_p_max", "alpha_q_max", "normalization_exponent", "alpha_init",
                       "beta_init", "beta_cap", "update_scheme"},
                      path);
  TrainerConfig config;
  config.m_p = int_or(node, "m_p", config.m_p, path);
  config.m_q = int_or(node, "m_q", config.m_q, path);
  config.max_iterations = int_or(node, "max_iterations", config.max_iterations, path);
  config.tol_log10_alpha = number_or(node, "tol_log10_alpha", config.tol_log10_alpha, path);
  config.tol_log10_beta = number_or(node, "tol_log10_beta", config.tol_log10_beta, path);
  config.alpha_p_max = number_or(node, "alpha_p_max", config.alpha_p_max, path);
  config.alpha_q_max = number_or(node, "alpha_q_max", config.alpha_q_max, path);
  config.normalization_exponent =
      number_or(node, "normalization_exponent", config.normalization_exponent, path);
  config.alpha_init = number_or(node, "alpha_init", config.alpha_init, path);
  config.beta_init = number_or(node, "beta_init", config.beta_init, path);
  config.beta_cap = number_or(node, "beta_cap", config.beta_cap, path);
  if (node.contains("update_scheme")) {
    const std::string scheme = node.at("update_scheme").get<std::string>();
    if (scheme == "direct") {
      config.update_scheme = HyperUpdateScheme::kDirect;
    } else if (scheme == "gamma") {
      config.update_scheme = HyperUpdateScheme::kGamma;
    } else {
      throw ConfigError(path + ".update_scheme: expected \"direct\" or \"gamma\"");
    }
  }
  return config;
}

inline TmcmcConfig parse_tmcmc(const Json& node, const std::string& path) {
  reject_unknown_keys(node,
                      {"samples_per_stage", "proposal_scale", "target_weight_cov",
                       "max_stages", "mcmc_steps"},
                      path);
  TmcmcConfig config;
  config.samples_per_stage = int_or(node, "samples_per_stage", config.samples_per_stage, path);
  config.proposal_scale = number_or(node, "proposal_scale", config.proposal_scale, path);
  config.target_weight_cov =
      number_or(node, "target_weight_cov", config.target_weight_cov, path);
  config.max_stages = int_or(node, "max_stages", config.max_stages, path);
  config.mcmc_steps = int_or(node, "mcmc_steps", config.mcmc_steps, path);
  return config;
}

inline BoConfig parse_bo(const Json& node, const std::string& path) {
  reject_unknown_keys(node,
                      {"n_init", "n_budget", "n_alpha", "softplus_gamma", "box_half_width",
                       "n_rep", "pso"},
                      path);
  BoConfig config;
  config.n_init = int_or(node, "n_init", config.n_init, path);
  config.n_budget = int_or(node, "n_budget", config.n_budget, path);
  config.n_alpha = int_or(node, "n_alpha", config.n_alpha, path);
  config.softplus_gamma = number_or(node, "softplus_gamma", config.softplus_gamma, path);
  config.box_half_width = number_or(node, "box_half_width", config.box_half_width, path);
  config.n_rep = int_or(node, "n_rep", config.n_rep, path);
  if (node.contains("pso")) {
    const Json& pso = node.at("pso");
    const std::string pso_path = path + ".pso";
    reject_unknown_keys(pso,
                        {"n_particles", "inertia", "cognitive", "social", "max_iterations",
                         "stall_limit"},
                        pso_path);
    config.pso.n_particles = int_or(pso, "n_particles", config.pso.n_particles, pso_path);
    config.pso.inertia = number_or(pso, "inertia", config.pso.inertia, pso_path);
    config.pso.cognitive = number_or(pso, "cognitive", config.pso.cognitive, pso_path);
    config.pso.social = number_or(pso, "social", config.pso.social, pso_path);
    config.pso.max_iterations =
        int_or(pso, "max_iterations", config.pso.max_iterations, pso_path);
    config.pso.stall_limit = int_or(pso, "stall_limit", config.pso.stall_limit, pso_path);
  }
  return config;
}

}  // namespace detail_config

inline RunConfig run_config_from_json(const Json& node, const std::string& path = "config") {
  using namespace detail_config;
  reject_unknown_keys(node,
                      {"format_version", "seed", "problem", "error", "map_space", "trainer",
                       "tmcmc", "bo", "train"},
                      path);
  detail_json::check_version(node, path);
  RunConfig config;
  if (node.contains("seed")) {
    if (!node.at("seed").is_number_unsigned() && !node.at("seed").is_number_integer()) {
      throw ConfigError(path + ".seed: expected an integer");
    }
    config.seed = node.at("seed").get<std::uint64_t>();
  }

  const Json& problem = require(node, "problem", path);
  const std::string problem_path = path + ".problem";
  reject_unknown_keys(problem, {"model", "frequencies_hz", "parameters", "general"},
                      problem_path);
  const Json& model = require(problem, "model", problem_path);
  if (!model.is_string()) throw ConfigError(problem_path + ".model: expected a string");
  config.problem.frequencies_hz =
      real_vector_from_json(require(problem, "frequencies_hz", problem_path),
                            problem_path + ".frequencies_hz");
  config.problem.parameters = parse_parameters(
      require(problem, "parameters", problem_path), problem_path + ".parameters");
  if (model.get<std::string>() == "two_dof") {
    config.problem.model = ProblemConfig::Model::kTwoDof;
    if (config.problem.parameters.size() != 3) {
      throw ConfigError(problem_path + ".parameters: two_dof needs exactly k, m, c");
    }
    const std::vector<std::string> expected = {"k", "m", "c"};
    for (std::size_t i = 0; i < 3; ++i) {
      if (config.problem.parameters[i].name != expected[i]) {
        throw ConfigError(problem_path + ".parameters[" + std::to_string(i) +
                          "].name: expected \"" + expected[i] + "\"");
      }
    }
  } else if (model.get<std::string>() == "general") {
    config.problem.model = ProblemConfig::Model::kGeneral;
    config.problem.general =
        parse_general(require(problem, "general", problem_path), problem_path + ".general",
                      config.problem.parameters);
  } else {
    throw ConfigError(problem_path + ".model: expected \"two_dof\" or \"general\"");
  }

  config.error = parse_error(require(node, "error", path), &config.noiseless, path + ".error");

  if (node.contains("map_space")) {
    const std::string space = node.at("map_space").get<std::string>();
    if (space == "u") {
      config.map_space = MapSpace::kU;
    } else if (space == "x") {
      config.map_space = MapSpace::kX;
    } else {
      throw ConfigError(path + ".map_space: expected \"u\" or \"x\"");
    }
  }
  if (node.contains("trainer")) {
    config.trainer = parse_trainer(node.at("trainer"), path + ".trainer");
  }
  if (node.contains("tmcmc")) config.tmcmc = parse_tmcmc(node.at("tmcmc"), path + ".tmcmc");
  if (node.contains("bo")) config.bo = parse_bo(node.at("bo"), path + ".bo");
  if (node.contains("train")) {
    const Json& train = node.at("train");
    reject_unknown_keys(train, {"n_tr", "n_validation"}, path + ".train");
    config.train_cmd.n_tr = int_or(train, "n_tr", 0, path + ".train");
    config.train_cmd.n_validation =
        int_or(train, "n_validation", config.train_cmd.n_validation, path + ".train");
  }
  return config;
}

inline std::vector<MarginalPrior> random_priors(const RunConfig& config) {
  std::vector<MarginalPrior> priors;
  for (const auto& spec : config.problem.parameters) {
    if (spec.random) priors.push_back(spec.prior);
  }
  if (priors.empty()) throw ConfigError("config.problem.parameters: no random parameter");
  return priors;
}

/// Physical forward model over the random parameters only (fixed parameters
/// baked in), returning the frequency-major response vector.
inline std::function<Eigen::VectorXcd(const Eigen::VectorXd&)> physical_forward(
    const RunConfig& config) {
  const auto& problem = config.problem;
  const auto assemble = [&problem](const Eigen::VectorXd& x_random) {
    Eigen::VectorXd full(problem.parameters.size());
    Eigen::Index cursor = 0;
    for (std::size_t i = 0; i < problem.parameters.size(); ++i) {
      full(static_cast<Eigen::Index>(i)) = problem.parameters[i].random
                                               ? x_random(cursor++)
                                               : problem.parameters[i].fixed_value;
    }
    return full;
  };
  if (problem.model == ProblemConfig::Model::kTwoDof) {
    const Eigen::VectorXd frequencies = problem.frequencies_hz;
    return [assemble, frequencies](const Eigen::VectorXd& x_random) {
      const Eigen::VectorXd x = assemble(x_random);
      const TwoDofParams params = TwoDofParams::make(x(0), x(1), x(2));
      Eigen::VectorXcd y(frequencies.size());
      for (Eigen::Index j = 0; j < frequencies.size(); ++j) {
        y(j) = frf_2dof_accel(params, kTwoPi * frequencies(j));
      }
      return y;
    };
  }
  const GeneralModelConfig general = problem.general;
  const Eigen::VectorXd frequencies = problem.frequencies_hz;
  GeneralLinearModel model;
  model.input_dof = general.input_dof;
  model.output_dofs = general.output_dofs;
  model.accelerance = general.accelerance;
  const auto affine = [](const Eigen::MatrixXd& base,
                         const std::vector<GeneralModelConfig::Component>& components,
                         Eigen::MatrixXd GeneralModelConfig::Component::*member) {
    return [base, components, member](const Eigen::VectorXd& x_full) {
      Eigen::MatrixXd out = base;
      for (std::size_t i = 0; i < components.size(); ++i) {
        const Eigen::MatrixXd& contribution = components[i].*member;
        if (contribution.size() != 0) out += x_full(static_cast<Eigen::Index>(i)) * contribution;
      }
      return out;
    };
  };
  model.stiffness = affine(general.stiffness0, general.components,
                           &GeneralModelConfig::Component::stiffness);
  model.damping = affine(general.damping0, general.components,
                         &GeneralModelConfig::Component::damping);
  model.mass = affine(general.mass0, general.components, &GeneralModelConfig::Component::mass);
  return [assemble, model, frequencies](const Eigen::VectorXd& x_random) {
    return model.evaluate(assemble(x_random), frequencies);
  };
}

inline std::vector<std::string> sensor_ids(const RunConfig& config) {
  if (config.problem.model == ProblemConfig::Model::kTwoDof) return {"a21"};
  std::vector<std::string> ids;
  for (int dof : config.problem.general.output_dofs) {
    ids.push_back("dof" + std::to_string(dof + 1));
  }
  return ids;
}

inline Eigen::VectorXd true_random_values(const RunConfig& config) {
  std::vector<double> values;
  for (const auto& spec : config.problem.parameters) {
    if (!spec.random) continue;
    if (!spec.true_value) {
      throw ConfigError("config.problem.parameters." + spec.name +
                        ".true_value: required for synthesis");
    }
    values.push_back(*spec.true_value);
  }
  return Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

inline ObservationSet synthesize_from_config(const RunConfig& config, std::uint64_t seed) {
  const auto forward = physical_forward(config);
  const Eigen::VectorXcd y_true = forward(true_random_values(config));
  RngStream rng(derive_seed(seed, 42));
  return synthesize_observations(y_true, config.problem.frequencies_hz, sensor_ids(config),
                                 config.error, rng, config.noiseless);
}

inline InverseProblem problem_from_config(const RunConfig& config, ObservationSet observations) {
  const auto forward = physical_forward(config);
  const std::vector<MarginalPrior> priors = random_priors(config);
  return InverseProblem(priors, std::move(observations), config.error,
                        [forward, priors](const Eigen::VectorXd& u) {
                          return forward(from_standard_normal(u, priors));
                        },
                        config.map_space);
}

inline ActiveLearningConfig active_learning_config(const RunConfig& config) {
  ActiveLearningConfig out;
  out.n_init = config.bo.n_init;
  out.n_budget = config.bo.n_budget;
  out.n_alpha = config.bo.n_alpha;
  out.softplus_gamma = config.bo.softplus_gamma;
  out.box_half_width = config.bo.box_half_width;
  out.pso = config.bo.pso;
  out.trainer = config.trainer;
  out.tmcmc = config.tmcmc;
  out.seed = config.seed;
  return out;
}

}  // namespace rpcebo
