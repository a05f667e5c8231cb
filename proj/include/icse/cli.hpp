#pragma once

// Command-line front end: one executable, four subcommands (generate, train,
// eval, selftest), driven by a single JSON config document with exhaustive
// defaults. Profiles bake in the two reference setups; flags override the
// document; the merged result is echoed into the output directory.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "icse/checkpoint.hpp"
#include "icse/evaluation.hpp"
#include "icse/process.hpp"
#include "icse/selftest.hpp"
#include "icse/trainer.hpp"
#include "icse/trajectory_io.hpp"

namespace icse::cli {

class config_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline nlohmann::json params_to_json(const ProcessParams& p) {
  nlohmann::json j;
  const auto values = p.to_array();
  const auto& names = ProcessParams::names();
  for (std::size_t i = 0; i < values.size(); ++i) j[names[i]] = values[i];
  return j;
}

inline ProcessParams params_from_json(const nlohmann::json& j) {
  std::array<double, ProcessParams::kCount> values{};
  const auto& names = ProcessParams::names();
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = j.at(names[i]).get<double>();
  }
  return ProcessParams::from_array(values);
}

// The full schema with defaults (desk profile). Unknown keys in user
// documents are rejected against this skeleton.
inline nlohmann::json default_config() {
  nlohmann::json j;
  j["seed"] = 0;
  j["threads"] = 0;
  j["prior"] = {
      {"nominal_params", params_to_json(ProcessParams::nominal())},
      {"perturb_frac", 0.2},
      {"init_perturb_frac", 0.2},
      {"prbs_amplitude", 20.0},
      {"x_s", std::array<double, 2>{25.0, 49.743}},
      {"u_s", std::array<double, 2>{191.713, 215.888}}};
  j["noise"] = {{"process_var", std::array<double, 2>{0.5, 0.5}},
                {"output_var", 2.0}};
  j["model"] = {{"n_layers", 4}, {"n_heads", 4},  {"n_ctx", 128},
                {"d_filter", 64}, {"n_u", 2},      {"n_y", 1},
                {"n_x", 2},       {"dropout", 0.0}};
  j["train"] = {{"n_itr", 2000},        {"batch_size", 16},
                {"learning_rate", 1e-4}, {"warmup_iters", 200},
                {"grad_clip", 1.0},      {"checkpoint_every", 500},
                {"n_calibration", 1024}};
  j["eval"] = {{"n_test", 100},
               {"horizon", 500},
               {"transient_cutoff", 50},
               {"estimators", std::vector<std::string>{"meta", "oracle_ekf",
                                                       "enlarged_ekf"}},
               {"deployment", "streaming"},
               {"precision", "f64"},
               {"timing_instances", 3},
               {"timing_repeats", 1},
               {"ekf_jacobian_step", 1e-6}};
  return j;
}

inline void apply_profile(nlohmann::json& cfg, const std::string& profile) {
  if (profile == "desk") {
    cfg["model"]["n_layers"] = 4;
    cfg["model"]["n_heads"] = 4;
    cfg["model"]["n_ctx"] = 128;
    cfg["model"]["d_filter"] = 64;
    cfg["train"]["n_itr"] = 2000;
    cfg["train"]["batch_size"] = 16;
  } else if (profile == "paper") {
    cfg["model"]["n_layers"] = 12;
    cfg["model"]["n_heads"] = 4;
    cfg["model"]["n_ctx"] = 500;
    cfg["model"]["d_filter"] = 128;
    cfg["train"]["n_itr"] = 50000;
    cfg["train"]["batch_size"] = 32;
  } else {
    throw config_error("unknown profile '" + profile + "' (desk|paper)");
  }
}

// Merge `user` into `base`, rejecting keys/types the schema does not have.
inline void merge_config(nlohmann::json& base, const nlohmann::json& user,
                         const std::string& path = "") {
  if (!user.is_object()) {
    throw config_error("config node '" + (path.empty() ? "/" : path) +
                       "' must be an object");
  }
  for (const auto& [key, value] : user.items()) {
    const std::string here = path + "/" + key;
    if (!base.contains(key)) {
      throw config_error("unknown config key '" + here + "'");
    }
    nlohmann::json& slot = base[key];
    if (slot.is_object()) {
      merge_config(slot, value, here);
    } else if (slot.is_number_integer() || slot.is_number_unsigned()) {
      if (!value.is_number_integer() && !value.is_number_unsigned()) {
        throw config_error("config key '" + here + "' must be an integer");
      }
      slot = value;
    } else if (slot.is_number_float()) {
      if (!value.is_number()) {
        throw config_error("config key '" + here + "' must be a number");
      }
      slot = value.get<double>();
    } else if (slot.is_string()) {
      if (!value.is_string()) {
        throw config_error("config key '" + here + "' must be a string");
      }
      slot = value;
    } else if (slot.is_array()) {
      if (!value.is_array()) {
        throw config_error("config key '" + here + "' must be an array");
      }
      slot = value;
    } else {
      slot = value;
    }
  }
}

inline ClassPrior prior_from_json(const nlohmann::json& j) {
  ClassPrior prior;
  prior.nominal = params_from_json(j.at("nominal_params"));
  prior.perturb_frac = j.at("perturb_frac").get<double>();
  prior.init_perturb_frac = j.at("init_perturb_frac").get<double>();
  prior.prbs_amplitude = j.at("prbs_amplitude").get<double>();
  const auto xs = j.at("x_s").get<std::array<double, 2>>();
  const auto us = j.at("u_s").get<std::array<double, 2>>();
  prior.x_s = SimState{xs[0], xs[1]};
  prior.u_s = SimInput{us[0], us[1]};
  prior.validate();
  return prior;
}

inline NoiseSpec noise_from_json(const nlohmann::json& j) {
  NoiseSpec noise;
  noise.process_var = j.at("process_var").get<std::array<double, 2>>();
  noise.output_var = j.at("output_var").get<double>();
  noise.validate();
  return noise;
}

inline TrainConfig train_config_from_json(const nlohmann::json& cfg) {
  TrainConfig tc;
  tc.seed = cfg.at("seed").get<std::uint64_t>();
  tc.threads = cfg.at("threads").get<int>();
  tc.model = model_config_from_json(cfg.at("model"));
  tc.prior = prior_from_json(cfg.at("prior"));
  tc.noise = noise_from_json(cfg.at("noise"));
  const nlohmann::json& t = cfg.at("train");
  tc.n_itr = t.at("n_itr").get<int>();
  tc.batch_size = t.at("batch_size").get<int>();
  tc.learning_rate = t.at("learning_rate").get<double>();
  tc.warmup_iters = t.at("warmup_iters").get<int>();
  tc.grad_clip = t.at("grad_clip").get<double>();
  tc.checkpoint_every = t.at("checkpoint_every").get<int>();
  tc.n_calibration = t.at("n_calibration").get<int>();
  tc.validate();
  return tc;
}

inline EvalConfig eval_config_from_json(const nlohmann::json& cfg) {
  EvalConfig ec;
  ec.seed = cfg.at("seed").get<std::uint64_t>();
  ec.threads = cfg.at("threads").get<int>();
  ec.prior = prior_from_json(cfg.at("prior"));
  ec.noise = noise_from_json(cfg.at("noise"));
  const nlohmann::json& e = cfg.at("eval");
  ec.n_test = e.at("n_test").get<int>();
  ec.horizon = e.at("horizon").get<int>();
  ec.transient_cutoff = e.at("transient_cutoff").get<int>();
  ec.estimators = e.at("estimators").get<std::vector<std::string>>();
  const std::string deployment = e.at("deployment").get<std::string>();
  if (deployment == "streaming") {
    ec.deployment = Deployment::streaming;
  } else if (deployment == "batch") {
    ec.deployment = Deployment::batch;
  } else {
    throw config_error("eval.deployment must be 'streaming' or 'batch'");
  }
  const std::string precision = e.at("precision").get<std::string>();
  if (precision == "f64") {
    ec.precision = Precision::f64;
  } else if (precision == "f32") {
    ec.precision = Precision::f32;
  } else {
    throw config_error("eval.precision must be 'f64' or 'f32'");
  }
  ec.timing_instances = e.at("timing_instances").get<int>();
  ec.timing_repeats = e.at("timing_repeats").get<int>();
  ec.ekf_jacobian_step = e.at("ekf_jacobian_step").get<double>();
  ec.validate();
  return ec;
}

struct CommonArgs {
  std::string config_path;
  std::string profile;
  std::string out_dir;
  std::int64_t seed = -1;  // -1: keep document value
  int threads = -1;
};

inline nlohmann::json resolve_config(const CommonArgs& args) {
  nlohmann::json cfg = default_config();
  if (!args.profile.empty()) apply_profile(cfg, args.profile);
  if (!args.config_path.empty()) {
    std::ifstream in(args.config_path);
    if (!in) throw config_error("cannot open config file " + args.config_path);
    nlohmann::json user;
    try {
      user = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw config_error(std::string("config parse error: ") + e.what());
    }
    merge_config(cfg, user);
  }
  if (args.seed >= 0) cfg["seed"] = static_cast<std::uint64_t>(args.seed);
  if (args.threads >= 0) cfg["threads"] = args.threads;
  return cfg;
}

inline void echo_resolved_config(const nlohmann::json& cfg,
                                 const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::ofstream out(out_dir / "config.resolved.json", std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write config.resolved.json under " +
                             out_dir.string());
  }
  out << cfg.dump(2) << "\n";
}

inline int cmd_generate(const CommonArgs& common, int n_traj, int horizon,
                        bool csv) {
  const nlohmann::json cfg = resolve_config(common);
  const ClassPrior prior = prior_from_json(cfg.at("prior"));
  const NoiseSpec noise = noise_from_json(cfg.at("noise"));
  const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
  if (n_traj < 0) throw config_error("--n-traj must be >= 0");
  if (horizon < 1) throw config_error("--horizon must be >= 1");

  const std::filesystem::path out_dir(common.out_dir);
  std::filesystem::create_directories(out_dir);

  std::vector<Trajectory> batch;
  batch.reserve(static_cast<std::size_t>(n_traj));
  constexpr std::uint64_t kAttempts = 64;
  for (int i = 0; i < n_traj; ++i) {
    bool made = false;
    for (std::uint64_t a = 0; a < kAttempts && !made; ++a) {
      const std::uint64_t traj_seed =
          derive_seed(seed, SeedDomain::dataset_gen,
                      static_cast<std::uint64_t>(i) * kAttempts + a);
      try {
        batch.push_back(simulate_trajectory(prior, noise, horizon, traj_seed));
        made = true;
      } catch (const simulation_divergence&) {
      }
    }
    if (!made) {
      throw std::runtime_error("trajectory " + std::to_string(i) +
                               " kept diverging");
    }
  }

  write_trajectory_batch(out_dir / "dataset.bin", batch);
  if (csv) {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      char name[64];
      std::snprintf(name, sizeof(name), "traj_%04zu.csv", i);
      write_trajectory_csv(out_dir / name, batch[i]);
    }
  }
  echo_resolved_config(cfg, out_dir);

  std::cout << "index,seed\n";
  for (std::size_t i = 0; i < batch.size(); ++i) {
    std::cout << i << "," << batch[i].seed << "\n";
  }
  std::cout << "wrote " << batch.size() << " trajectories (N = " << horizon
            << ") to " << (out_dir / "dataset.bin").string() << "\n";
  return 0;
}

inline int cmd_train(const CommonArgs& common, int iters_override) {
  nlohmann::json cfg = resolve_config(common);
  if (iters_override > 0) cfg["train"]["n_itr"] = iters_override;
  const TrainConfig tc = train_config_from_json(cfg);

  const std::filesystem::path out_dir(common.out_dir);
  std::filesystem::create_directories(out_dir);
  echo_resolved_config(cfg, out_dir);

  const TrainResult result = train(tc, out_dir);

  double final_rmse = 0.0;
  const std::size_t tail =
      std::max<std::size_t>(1, result.log.size() / 10);
  for (std::size_t i = result.log.size() - tail; i < result.log.size(); ++i) {
    final_rmse += result.log[i].rmse;
  }
  final_rmse /= static_cast<double>(tail);

  std::cout << "n_param,n_layers,n_heads,n_ctx,d_filter,n_itr,b,train_time_s,rmse\n";
  std::cout << count_parameters(tc.model) << "," << tc.model.n_layers << ","
            << tc.model.n_heads << "," << tc.model.n_ctx << ","
            << tc.model.d_filter << "," << tc.n_itr << "," << tc.batch_size
            << "," << result.elapsed_s << "," << final_rmse << "\n";
  if (result.resampled > 0) {
    std::cout << "resampled_divergent_trajectories," << result.resampled << "\n";
  }
  std::cout << "checkpoint: " << (out_dir / "checkpoint.bin").string() << "\n";
  return 0;
}

inline int cmd_eval(const CommonArgs& common, const std::string& checkpoint_path,
                    const std::string& estimators_csv, int n_test_override,
                    int horizon_override, const std::string& deployment_override) {
  nlohmann::json cfg = resolve_config(common);
  if (!estimators_csv.empty()) {
    std::vector<std::string> list;
    std::string token;
    for (char c : estimators_csv + ",") {
      if (c == ',') {
        if (!token.empty()) list.push_back(token);
        token.clear();
      } else {
        token += c;
      }
    }
    cfg["eval"]["estimators"] = list;
  }
  if (n_test_override > 0) cfg["eval"]["n_test"] = n_test_override;
  if (horizon_override > 0) cfg["eval"]["horizon"] = horizon_override;
  if (!deployment_override.empty()) cfg["eval"]["deployment"] = deployment_override;
  const EvalConfig ec = eval_config_from_json(cfg);

  const bool needs_meta =
      std::find(ec.estimators.begin(), ec.estimators.end(), "meta") !=
      ec.estimators.end();
  Checkpoint ckpt;
  if (needs_meta) {
    if (checkpoint_path.empty()) {
      throw config_error("estimator 'meta' requires --checkpoint");
    }
    ckpt = load_checkpoint(checkpoint_path);
  }

  const std::filesystem::path out_dir(common.out_dir);
  std::filesystem::create_directories(out_dir);
  echo_resolved_config(cfg, out_dir);

  const EvalReport report = evaluate(ec, needs_meta ? &ckpt : nullptr);
  export_report(report, out_dir);

  std::cout << "estimator,rmse_post_transient,mae_x1,mae_x2,latency_ms_mean,failures\n";
  bool too_many_failures = false;
  for (const EstimatorReport& er : report.estimators) {
    std::cout << er.name << "," << er.rmse_post_transient << "," << er.mae_x1
              << "," << er.mae_x2 << "," << er.latency_ms_mean << ","
              << er.failures << "\n";
    if (er.failures * 10 > ec.n_test) too_many_failures = true;
  }
  std::cout << "report written to " << out_dir.string() << "\n";
  if (too_many_failures) {
    std::cerr << "error: an estimator failed on more than 10% of instances\n";
    return 2;
  }
  return 0;
}

inline int cmd_selftest(bool verbose, const std::string& checkpoint_path) {
  const std::vector<SelfTestCheck> checks = run_selftest();
  bool all_pass = true;
  std::printf("%-32s %-8s\n", "check", "result");
  for (const SelfTestCheck& c : checks) {
    all_pass = all_pass && c.pass;
    if (verbose) {
      std::printf("%-32s %-8s (measured %.3e, tolerance %.3e)\n", c.name.c_str(),
                  c.pass ? "pass" : "FAIL", c.measured, c.tolerance);
    } else {
      std::printf("%-32s %-8s\n", c.name.c_str(), c.pass ? "pass" : "FAIL");
    }
  }
  if (!checkpoint_path.empty()) {
    try {
      const Checkpoint ckpt = load_checkpoint(checkpoint_path);
      std::printf("%-32s %-8s\n", "checkpoint_loadable", "pass");
      (void)ckpt;
    } catch (const checkpoint_error& e) {
      std::printf("%-32s %-8s (%s)\n", "checkpoint_loadable", "FAIL", e.what());
      all_pass = false;
    }
  }
  return all_pass ? 0 : 2;
}

inline int run(int argc, const char* const* argv) {
  CLI::App app{"in-context state estimation for a nonlinear evaporation "
               "process: data generation, meta-filter training, EKF "
               "baselines, evaluation"};
  app.require_subcommand(1);

  CommonArgs common;
  auto add_common = [&](CLI::App* sub, bool needs_out) {
    sub->add_option("--config", common.config_path, "JSON config document");
    sub->add_option("--profile", common.profile,
                    "built-in profile: desk or paper");
    sub->add_option("--seed", common.seed, "base seed (overrides document)");
    sub->add_option("--threads", common.threads,
                    "worker threads, 0 = hardware (overrides document)");
    auto* out =
        sub->add_option("--out", common.out_dir, "output directory");
    if (needs_out) out->required();
  };

  auto* gen = app.add_subcommand("generate", "simulate and store trajectories");
  int n_traj = 8, gen_horizon = 500;
  bool gen_csv = false;
  add_common(gen, true);
  gen->add_option("--n-traj", n_traj, "number of trajectories");
  gen->add_option("--horizon", gen_horizon, "samples per trajectory");
  gen->add_flag("--csv", gen_csv, "also write one CSV per trajectory");

  auto* train_cmd = app.add_subcommand("train", "train the meta-filter");
  int iters_override = 0;
  add_common(train_cmd, true);
  train_cmd->add_option("--iters", iters_override,
                        "override train.n_itr from the document");

  auto* eval_cmd = app.add_subcommand("eval", "score estimators on unseen instances");
  std::string checkpoint_path, estimators_csv, deployment_override;
  int n_test_override = 0, eval_horizon_override = 0;
  add_common(eval_cmd, true);
  eval_cmd->add_option("--checkpoint", checkpoint_path,
                       "meta-filter checkpoint (required with estimator 'meta')");
  eval_cmd->add_option("--estimators", estimators_csv,
                       "comma list: meta,oracle_ekf,enlarged_ekf,constant,truth");
  eval_cmd->add_option("--n-test", n_test_override, "number of test instances");
  eval_cmd->add_option("--horizon", eval_horizon_override, "samples per instance");
  eval_cmd->add_option("--deployment", deployment_override,
                       "meta deployment: streaming or batch");

  auto* selftest_cmd =
      app.add_subcommand("selftest", "run the fast oracle suite");
  bool verbose = false;
  std::string selftest_ckpt;
  selftest_cmd->add_flag("--verbose", verbose, "print tolerances and measurements");
  selftest_cmd->add_option("--checkpoint", selftest_ckpt,
                           "also validate that this checkpoint loads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_generate(common, n_traj, gen_horizon, gen_csv);
    if (train_cmd->parsed()) return cmd_train(common, iters_override);
    if (eval_cmd->parsed()) {
      return cmd_eval(common, checkpoint_path, estimators_csv, n_test_override,
                      eval_horizon_override, deployment_override);
    }
    if (selftest_cmd->parsed()) return cmd_selftest(verbose, selftest_ckpt);
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const checkpoint_error& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return 1;
  } catch (const io_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace icse::cli
