#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "rompc/cert/falsify.hpp"
#include "rompc/sim/sim.hpp"

namespace {

using namespace rompc;

sim::SystemBundle load_bundle(const sim::SimConfig& cfg) {
  if (cfg.model_id == "quadrotor")
    return sim::quadrotor_bundle(sim::default_quadrotor_certs(),
                                 cfg.w_bar >= 0 ? cfg.w_bar : 0.9e-3, cfg.N);
  if (cfg.model_id == "double-integrator")
    return sim::double_integrator_bundle(cfg.w_bar >= 0 ? cfg.w_bar : 0.02, cfg.N);
  throw std::invalid_argument("unknown model " + cfg.model_id);
}

bool verify_bundle(const sim::SystemBundle& b, std::size_t samples, std::uint64_t seed) {
  auto opts = b.make_sample_opts(samples, seed);
  const auto observer = b.make_observer();
  const auto r1 = cert::verify_ioss_decrease(b.model, b.certs.ioss, opts);
  const auto r2 = cert::verify_iss_clf(b.model, b.certs.clf, opts);
  const auto r3 = cert::verify_observer(b.model, observer, b.certs.observer, opts);
  const auto r4 = cert::verify_tube_cross(b.model, observer, b.certs.clf,
                                          b.certs.observer, b.gains.gamma_so,
                                          b.gains.gamma_sw, opts);
  auto report = [](const char* name, const cert::FalsificationReport& r) {
    std::printf("%-12s samples=%zu violations=%zu worst_residual=%.3e %s\n", name,
                r.n_samples, r.n_violations, r.worst_residual,
                r.passed() ? "[ok]" : "[VIOLATED]");
    return r.passed();
  };
  bool ok = true;
  ok &= report("ioss", r1);
  ok &= report("iss-clf", r2);
  ok &= report("observer", r3);
  ok &= report("tube-cross", r4);
  return ok;
}

int run_one(const sim::SimConfig& cfg) {
  sim::SystemBundle b = load_bundle(cfg);
  if (cfg.strict_verify && !verify_bundle(b, 10000, 1)) {
    std::fprintf(stderr, "certificate verification failed (strict mode)\n");
    return 2;
  }
  sim::RunResult r = cfg.mode == "estimation" ? sim::run_estimation_study(b, cfg)
                                              : sim::run_closed_loop(b, cfg);
  std::printf("steps=%zu bound_valid=%d feasible=%d constraints_ok=%d\n",
              r.trace.rows.size(), r.bound_valid ? 1 : 0, r.feasible_all ? 1 : 0,
              r.constraints_ok ? 1 : 0);
  for (const auto& [k, v] : r.summary) std::printf("  %s = %.6g\n", k.c_str(), v);
  const bool ok = r.bound_valid && r.feasible_all && r.constraints_ok && !r.aborted;
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"robust output-feedback MPC with online-validated estimation bounds"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;

  auto* run = app.add_subcommand("run", "run one closed-loop or estimation config");
  run->add_option("--config", config_path, "config file")->required();

  auto* verify = app.add_subcommand("verify", "sampled falsification of the certificates");
  verify->add_option("--config", config_path, "config file")->required();
  std::size_t samples = 10000;
  verify->add_option("--samples", samples, "sample count");

  auto* sweep = app.add_subcommand("sweep", "seed sweep, aggregate summary CSV");
  sweep->add_option("--config", config_path, "config file")->required();
  int seed_lo = 1, seed_hi = 10;
  sweep->add_option("--seed-lo", seed_lo);
  sweep->add_option("--seed-hi", seed_hi);
  sweep->add_option("--out", out_dir, "output directory");

  auto* demo = app.add_subcommand("demo-quadrotor", "packaged quadrotor study");
  demo->add_option("--out", out_dir, "output directory")->default_val("demo_out");
  bool full = false;
  demo->add_flag("--full", full, "full-scale horizons (N=40, T=300)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      return run_one(sim::SimConfig::from_config(sim::KeyValueConfig::load(config_path)));
    }
    if (verify->parsed()) {
      auto cfg = sim::SimConfig::from_config(sim::KeyValueConfig::load(config_path));
      return verify_bundle(load_bundle(cfg), samples, 1) ? 0 : 2;
    }
    if (sweep->parsed()) {
      auto cfg = sim::SimConfig::from_config(sim::KeyValueConfig::load(config_path));
      sim::SystemBundle b = load_bundle(cfg);
      if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
      std::string agg = (out_dir.empty() ? std::string(".") : out_dir) + "/sweep.csv";
      std::ofstream out(agg);
      out << "seed,bound_valid,feasible,constraints_ok,mean_e_bar,min_margin\n";
      bool all_ok = true;
      for (int s = seed_lo; s <= seed_hi; ++s) {
        sim::SimConfig c = cfg;
        c.seed = static_cast<std::uint64_t>(s);
        c.trace_path.clear();
        c.summary_path.clear();
        sim::RunResult r = cfg.mode == "estimation" ? sim::run_estimation_study(b, c)
                                                    : sim::run_closed_loop(b, c);
        const double mean_e = r.summary.count("mean_e_bar") ? r.summary["mean_e_bar"]
                                                            : 0.0;
        const double margin = r.summary.count("min_margin") ? r.summary["min_margin"]
                                                            : 0.0;
        out << s << ',' << r.bound_valid << ',' << r.feasible_all << ','
            << r.constraints_ok << ',' << mean_e << ',' << margin << '\n';
        all_ok = all_ok && r.bound_valid && r.feasible_all && r.constraints_ok;
      }
      std::printf("sweep written to %s\n", agg.c_str());
      return all_ok ? 0 : 1;
    }
    if (demo->parsed()) {
      std::filesystem::create_directories(out_dir);
      const int N = full ? 40 : 20;
      const int T = full ? 300 : 150;
      sim::SimConfig cfg;
      cfg.model_id = "quadrotor";
      cfg.N = N;
      cfg.T = T;
      cfg.cost = "push-x1";
      sim::SystemBundle b = load_bundle(cfg);

      bool all_ok = true;
      {
        sim::SimConfig c = cfg;
        c.mode = "estimation";
        c.trace_path = out_dir + "/estimation.csv";
        c.summary_path = out_dir + "/estimation_summary.txt";
        auto r = sim::run_estimation_study(b, c);
        std::printf("[estimation] bound_valid=%d setm_reduction=%.3f mhe_error_ratio=%.3f\n",
                    r.bound_valid ? 1 : 0, r.summary["setm_reduction"],
                    r.summary["mhe_error_ratio"]);
        all_ok &= r.bound_valid;
      }
      for (const std::string ctrl : {"homothetic", "rigid", "mhe-mpc"}) {
        for (const std::string est :
             (ctrl == "homothetic" ? std::vector<std::string>{"apriori", "setmember", "mhe"}
                                   : std::vector<std::string>{"apriori"})) {
          sim::SimConfig c = cfg;
          c.controller = ctrl;
          c.estimator = est;
          c.trace_path = out_dir + "/" + ctrl + "_" + est + ".csv";
          auto r = sim::run_closed_loop(b, c);
          std::printf("[%s/%s] bound_valid=%d feasible=%d constraints_ok=%d mean_x1=%.4f\n",
                      ctrl.c_str(), est.c_str(), r.bound_valid ? 1 : 0,
                      r.feasible_all ? 1 : 0, r.constraints_ok ? 1 : 0,
                      r.summary.count("mean_vo_true") ? r.trace.rows.back()[r.trace.column("x1")]
                                                      : 0.0);
          all_ok &= r.bound_valid && r.feasible_all && r.constraints_ok;
        }
      }
      return all_ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
