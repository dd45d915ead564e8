#pragma once

#include <map>
#include <string>
#include <vector>

#include "rompc/sim/systems.hpp"

namespace rompc::sim {

// T disturbance vectors drawn uniformly on the sphere |w| = w_bar; an optional
// outlier step is scaled beyond the bound.
std::vector<VecXd> gen_disturbance(std::uint64_t seed, double w_bar, int T, int n_w,
                                   int outlier_step = -1, double outlier_factor = 1.0);

// Column-oriented per-step log.  write_csv emits a schema comment, a header
// row, and one row per step with 17-significant-digit values so identical
// configurations reproduce byte-identical files.
struct Trace {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  std::vector<std::string> events;  // per-step operation order (algorithm fidelity)

  int column(const std::string& name) const;
  double at(int row, const std::string& name) const { return rows[row][column(name)]; }
  void write_csv(const std::string& path) const;
};

struct RunResult {
  Trace trace;
  bool bound_valid = true;
  bool feasible_all = true;
  bool constraints_ok = true;
  bool aborted = false;  // initial infeasibility
  std::map<std::string, double> summary;
};

// Closed loop per the configured estimator/controller pair.
RunResult run_closed_loop(const SystemBundle& b, const SimConfig& cfg);

// Estimation-only study: observer feedback toward the setpoint, all bound
// methods evaluated on the shared data stream.
RunResult run_estimation_study(const SystemBundle& b, const SimConfig& cfg);

// Aggregates a trace into summary statistics (averages of bound columns,
// error ratios, margins, wall-time shares, soundness flags).
std::map<std::string, double> compute_metrics(const Trace& trace);

void write_summary(const std::map<std::string, double>& summary,
                   const std::string& path);

}  // namespace rompc::sim
