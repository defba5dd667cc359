// Command-line workflows: synthesize frequency-response data, train
// fixed-design surrogates, compute the exact-model reference MAP, and run
// the active-learning MAP estimation with machine-readable outputs.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <future>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "rpcebo/rpcebo.hpp"
#include "rpcebo/run_config.hpp"

namespace {

using namespace rpcebo;

std::string format_double(double value) {
  char buffer[40];
  std::snprintf(buffer, sizeof(buffer), "%.17g", value);
  return buffer;
}

RunConfig load_config(const std::string& path, std::optional<std::uint64_t> seed_override) {
  RunConfig config = run_config_from_json(parse_json_file(path));
  if (seed_override) config.seed = *seed_override;
  return config;
}

struct ReferenceMap {
  Eigen::VectorXd u;
  Eigen::VectorXd x;
  double h = 0.0;
};

ReferenceMap compute_reference(const InverseProblem& problem, const RunConfig& config) {
  PsoSettings pso = config.bo.pso;
  pso.lower = Eigen::VectorXd::Constant(problem.dimension(), -config.bo.box_half_width);
  pso.upper = Eigen::VectorXd::Constant(problem.dimension(), config.bo.box_half_width);
  RngStream rng(derive_seed(config.seed, 100));
  const auto objective = [&](const Eigen::VectorXd& u) {
    const auto h = problem.log_posterior_exact(u);
    return h ? *h : -std::numeric_limits<double>::infinity();
  };
  const PsoResult result = pso_maximize(objective, pso, rng);
  if (!result.found_valid) {
    throw std::runtime_error("reference MAP: objective invalid on the whole search box");
  }
  return {result.x, problem.to_physical(result.x), result.value};
}

Json reference_to_json(const ReferenceMap& reference) {
  return Json{{"u", to_json(reference.u)},
              {"x", to_json(reference.x)},
              {"h", reference.h}};
}

int cmd_synthesize(const std::string& config_path, const std::string& out_path,
                   std::optional<std::uint64_t> seed_override) {
  const RunConfig config = load_config(config_path, seed_override);
  const ObservationSet observations = synthesize_from_config(config, config.seed);
  write_json_file(out_path, to_json(observations));

  // sidecar with the generating truth for later scoring
  Json truth = Json::object();
  for (const auto& spec : config.problem.parameters) {
    truth[spec.name] = spec.random ? Json(*spec.true_value) : Json(spec.fixed_value);
  }
  const Eigen::VectorXd u_true =
      to_standard_normal(true_random_values(config), random_priors(config));
  write_json_file(out_path + ".meta.json",
                  Json{{"format_version", kFormatVersion},
                       {"seed", config.seed},
                       {"true_parameters", truth},
                       {"u_true", to_json(u_true)},
                       {"noiseless", config.noiseless}});
  std::cout << "wrote " << observations.n_observations() << " observations to " << out_path
            << "\n";
  return 0;
}

int cmd_reference(const std::string& config_path, const std::string& data_path,
                  const std::string& out_path, std::optional<std::uint64_t> seed_override) {
  const RunConfig config = load_config(config_path, seed_override);
  const ObservationSet observations = observations_from_json(parse_json_file(data_path));
  const InverseProblem problem = problem_from_config(config, observations);
  const ReferenceMap reference = compute_reference(problem, config);
  Json out = reference_to_json(reference);
  out["format_version"] = kFormatVersion;
  out["map_space"] = config.map_space == MapSpace::kU ? "u" : "x";
  write_json_file(out_path, out);
  std::cout << "reference h = " << format_double(reference.h) << "\n";
  return 0;
}

struct FixedDesignResult {
  std::vector<RpceModel> models;
  std::vector<double> validation_rmse;
  Eigen::VectorXd u_map;
  double h_plugin = 0.0;
};

FixedDesignResult train_fixed_design(const InverseProblem& problem, const RunConfig& config,
                                     int n_tr, std::uint64_t seed) {
  const int d = problem.dimension();
  const int n_obs = problem.observations().n_observations();
  RngStream rng_lhs(derive_seed(seed, 1));
  const Eigen::MatrixXd design = latin_hypercube(n_tr, d, rng_lhs);
  Eigen::MatrixXcd responses(n_tr, n_obs);
  for (int k = 0; k < n_tr; ++k) {
    responses.row(k) = problem.forward(design.row(k).transpose()).transpose();
  }
  FixedDesignResult result;
  for (int i = 0; i < n_obs; ++i) {
    TrainingData data;
    data.inputs = design;
    data.outputs = responses.col(i);
    result.models.push_back(train(data, config.trainer));
  }

  RngStream rng_validation(derive_seed(seed, 2));
  const int n_validation = std::max(config.train_cmd.n_validation, 10);
  const Eigen::MatrixXd held_out = latin_hypercube(n_validation, d, rng_validation);
  Eigen::VectorXd err2 = Eigen::VectorXd::Zero(n_obs);
  Eigen::VectorXd ref2 = Eigen::VectorXd::Zero(n_obs);
  for (int k = 0; k < n_validation; ++k) {
    const Eigen::VectorXcd y = problem.forward(held_out.row(k).transpose());
    for (int i = 0; i < n_obs; ++i) {
      std::complex<double> prediction;
      try {
        prediction = result.models[static_cast<std::size_t>(i)].evaluate(
            held_out.row(k).transpose());
      } catch (const SingularDenominator&) {
        prediction = std::numeric_limits<double>::infinity();
      }
      err2(i) += std::norm(prediction - y(i));
      ref2(i) += std::norm(y(i));
    }
  }
  for (int i = 0; i < n_obs; ++i) {
    result.validation_rmse.push_back(std::sqrt(err2(i) / ref2(i)));
  }

  SurrogateEnsemble plugin_only;
  plugin_only.models = result.models;
  PsoSettings pso = config.bo.pso;
  pso.lower = Eigen::VectorXd::Constant(d, -config.bo.box_half_width);
  pso.upper = Eigen::VectorXd::Constant(d, config.bo.box_half_width);
  RngStream rng_pso(derive_seed(seed, 3));
  const auto reward = global_reward(plugin_only, problem, pso, rng_pso);
  result.u_map = reward.first;
  result.h_plugin = reward.second;
  return result;
}

Json models_to_json(const std::vector<RpceModel>& models) {
  Json array = Json::array();
  for (const auto& model : models) array.push_back(to_json(model));
  return Json{{"format_version", kFormatVersion}, {"models", array}};
}

int cmd_train(const std::string& config_path, const std::string& data_path,
              const std::string& out_path, std::optional<std::uint64_t> seed_override) {
  const RunConfig config = load_config(config_path, seed_override);
  const ObservationSet observations = observations_from_json(parse_json_file(data_path));
  const InverseProblem problem = problem_from_config(config, observations);
  const int n_tr = config.train_cmd.n_tr > 0 ? config.train_cmd.n_tr : config.bo.n_budget;
  const FixedDesignResult result =
      train_fixed_design(problem, config, n_tr, derive_seed(config.seed, 400));
  const ReferenceMap reference = compute_reference(problem, config);

  Json out = models_to_json(result.models);
  Json retained = Json::array();
  for (const auto& model : result.models) {
    retained.push_back(Json::array(
        {model.numerator_indices.size(), model.denominator_indices.size()}));
  }
  out["summary"] = Json{{"n_tr", n_tr},
                        {"validation_rmse", result.validation_rmse},
                        {"retained_basis_sizes", retained},
                        {"map", Json{{"u", to_json(result.u_map)},
                                     {"x", to_json(problem.to_physical(result.u_map))},
                                     {"h_plugin", result.h_plugin}}},
                        {"reference", reference_to_json(reference)},
                        {"eps_map", map_error(result.u_map, reference.u)}};
  write_json_file(out_path, out);
  std::cout << "trained " << result.models.size() << " surrogates on n_tr = " << n_tr
            << ", eps_map = " << format_double(map_error(result.u_map, reference.u)) << "\n";
  return 0;
}

struct RepOutcome {
  std::vector<IterationRecord> records;
  std::vector<RpceModel> final_models;
  double fixed_design_eps = std::numeric_limits<double>::quiet_NaN();
};

void write_history_csv(const std::string& path, const std::vector<RepOutcome>& reps, int d) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out << "rep,iter,n_tr";
  for (int j = 1; j <= d; ++j) out << ",u_plus_" << j;
  out << ",h_plus,h_max,eps_map_simple,eps_map_global,rejects,seconds\n";
  for (std::size_t r = 0; r < reps.size(); ++r) {
    for (const auto& record : reps[r].records) {
      out << r << ',' << record.iteration << ',' << record.n_tr;
      for (int j = 0; j < d; ++j) out << ',' << format_double(record.u_added(j));
      out << ',' << format_double(record.h_added) << ',' << format_double(record.h_max) << ','
          << format_double(record.eps_map_simple) << ','
          << format_double(record.eps_map_global) << ',' << record.rejected_samples << ','
          << format_double(record.seconds) << '\n';
    }
  }
}

Json stats_json(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  const double median =
      n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
  return Json{{"median", median}, {"min", values.front()}, {"max", values.back()}};
}

int cmd_run(const std::string& config_path, const std::string& data_path,
            const std::string& out_dir, std::optional<std::uint64_t> seed_override,
            bool parallel_reps) {
  const RunConfig config = load_config(config_path, seed_override);
  const ObservationSet observations = observations_from_json(parse_json_file(data_path));
  const InverseProblem problem = problem_from_config(config, observations);
  const int d = problem.dimension();
  const ReferenceMap reference = compute_reference(problem, config);

  const auto run_rep = [&](int rep, bool quiet) {
    ActiveLearningConfig al = active_learning_config(config);
    al.seed = derive_seed(config.seed, 10, static_cast<std::uint64_t>(rep));
    al.reference_u = reference.u;
    al.progress = quiet ? nullptr : &std::cout;
    const ActiveLearningResult result = run_active_learning(problem, al);

    RepOutcome outcome;
    outcome.records = result.records;
    outcome.final_models = result.ensemble.models;
    const FixedDesignResult fixed =
        train_fixed_design(problem, config, config.bo.n_budget,
                           derive_seed(config.seed, 20, static_cast<std::uint64_t>(rep)));
    outcome.fixed_design_eps = map_error(fixed.u_map, reference.u);
    return outcome;
  };

  std::vector<RepOutcome> reps(static_cast<std::size_t>(config.bo.n_rep));
  if (parallel_reps) {
    std::vector<std::future<RepOutcome>> futures;
    for (int rep = 0; rep < config.bo.n_rep; ++rep) {
      futures.push_back(std::async(std::launch::async, run_rep, rep, true));
    }
    for (int rep = 0; rep < config.bo.n_rep; ++rep) {
      reps[static_cast<std::size_t>(rep)] = futures[static_cast<std::size_t>(rep)].get();
    }
  } else {
    for (int rep = 0; rep < config.bo.n_rep; ++rep) {
      reps[static_cast<std::size_t>(rep)] = run_rep(rep, false);
    }
  }

  write_history_csv(out_dir + "/history.csv", reps, d);
  write_json_file(out_dir + "/models.json", models_to_json(reps.front().final_models));

  Json per_n_tr = Json::array();
  for (std::size_t i = 0; i < reps.front().records.size(); ++i) {
    std::vector<double> eps_simple, eps_global;
    for (const auto& rep : reps) {
      eps_simple.push_back(rep.records[i].eps_map_simple);
      eps_global.push_back(rep.records[i].eps_map_global);
    }
    per_n_tr.push_back(Json{{"n_tr", reps.front().records[i].n_tr},
                            {"eps_map_simple", stats_json(eps_simple)},
                            {"eps_map_global", stats_json(eps_global)}});
  }
  std::vector<double> fixed_eps;
  for (const auto& rep : reps) fixed_eps.push_back(rep.fixed_design_eps);
  const Json summary{{"format_version", kFormatVersion},
                     {"n_rep", config.bo.n_rep},
                     {"dimension", d},
                     {"reference", reference_to_json(reference)},
                     {"per_n_tr", per_n_tr},
                     {"fixed_design",
                      Json{{"n_tr", config.bo.n_budget}, {"eps_map", stats_json(fixed_eps)}}}};
  write_json_file(out_dir + "/summary.json", summary);
  std::cout << "summary written to " << out_dir << "/summary.json\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rational-PCE Bayesian-optimization MAP estimation for FRF model updating"};
  app.require_subcommand(1);

  std::string config_path, data_path, out_path;
  std::optional<std::uint64_t> seed_override;
  bool parallel_reps = false;

  const auto add_common = [&](CLI::App* sub, bool needs_data) {
    sub->add_option("--config", config_path, "configuration file")->required();
    if (needs_data) sub->add_option("--data", data_path, "observation file")->required();
    sub->add_option("--out", out_path, "output path")->required();
    sub->add_option("--seed", seed_override, "override the configured seed");
  };

  CLI::App* synthesize = app.add_subcommand("synthesize", "generate synthetic observations");
  add_common(synthesize, false);
  CLI::App* train_cmd = app.add_subcommand("train", "train surrogates on a fixed design");
  add_common(train_cmd, true);
  CLI::App* reference = app.add_subcommand("reference", "exact-model reference MAP");
  add_common(reference, true);
  CLI::App* run = app.add_subcommand("run", "active-learning MAP estimation");
  add_common(run, true);
  run->add_option_function<bool>(
      "--parallel-reps", [&](bool value) { parallel_reps = value; },
      "run repetitions concurrently")
      ->expected(0)
      ->default_val(false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& error) {
    const int code = app.exit(error);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synthesize->parsed()) return cmd_synthesize(config_path, out_path, seed_override);
    if (train_cmd->parsed()) return cmd_train(config_path, data_path, out_path, seed_override);
    if (reference->parsed()) return cmd_reference(config_path, data_path, out_path, seed_override);
    if (run->parsed()) return cmd_run(config_path, data_path, out_path, seed_override, parallel_reps);
  } catch (const rpcebo::ConfigError& error) {
    std::cerr << "configuration error: " << error.what() << "\n";
    return 2;
  } catch (const std::exception& error) {
    std::cerr << "error: " << error.what() << "\n";
    return 3;
  }
  return 0;
}
