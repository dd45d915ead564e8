#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "rompc/core/gain.hpp"
#include "rompc/core/model.hpp"

namespace rompc::sim {

using core::Gain;
using core::MatXd;
using core::VecXd;

// Flat key-value configuration with dotted keys ("model.h = 0.05").  Matrices
// are rows separated by ';', entries by spaces; gains are "coeff:exponent"
// term lists.  Chosen for diff-friendliness over nesting.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig load(const std::string& path);
  static KeyValueConfig parse(const std::string& text);
  void save(const std::string& path) const;
  std::string serialize() const;

  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  long get_int(const std::string& key) const;
  long get_int(const std::string& key, long fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  VecXd get_vector(const std::string& key) const;
  MatXd get_matrix(const std::string& key) const;
  Gain get_gain(const std::string& key) const;

  void set_string(const std::string& key, const std::string& value);
  void set_double(const std::string& key, double value);
  void set_int(const std::string& key, long value);
  void set_vector(const std::string& key, const VecXd& v);
  void set_matrix(const std::string& key, const MatXd& m);
  void set_gain(const std::string& key, const Gain& g);

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

// Run-level configuration mirroring the CLI surface.
struct SimConfig {
  std::string model_id = "quadrotor";  // quadrotor | double-integrator
  std::string mode = "control";        // control | estimation
  std::string estimator = "ioss";      // apriori | ioss | setmember | mhe | combined
  std::string controller = "homothetic";  // homothetic | tightened | mhe-mpc | rigid
  int N = 20;
  int M = 10;       // MHE horizon
  int M_set = 4;    // set-membership window
  int M_bar = 1;    // detectability window
  int T = 150;
  std::uint64_t seed = 1;
  double w_bar = -1.0;  // negative: model default
  VecXd x0;             // empty: model default
  VecXd x_hat0;
  double e_bar0 = 0.0;
  std::string trace_path;
  std::string summary_path;
  bool strict_verify = false;
  int outlier_step = -1;      // inject |w| = outlier_factor * w_bar at this step
  double outlier_factor = 1.0;
  int nlp_max_iters = 120;
  std::string cost = "track";  // track (quadratic) | push-x1

  static SimConfig from_config(const KeyValueConfig& cfg);
  KeyValueConfig to_config() const;
};

}  // namespace rompc::sim
