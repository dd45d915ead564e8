#include "rompc/sim/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rompc::sim {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

KeyValueConfig KeyValueConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

KeyValueConfig KeyValueConfig::parse(const std::string& text) {
  KeyValueConfig cfg;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: malformed line: " + line);
    cfg.kv_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return cfg;
}

void KeyValueConfig::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("config: cannot write " + path);
  out << serialize();
}

std::string KeyValueConfig::serialize() const {
  std::ostringstream out;
  for (const auto& [k, v] : kv_) out << k << " = " << v << "\n";
  return out.str();
}

std::string KeyValueConfig::get_string(const std::string& key) const {
  const auto it = kv_.find(key);
  if (it == kv_.end()) throw std::invalid_argument("config: missing key " + key);
  return it->second;
}
std::string KeyValueConfig::get_string(const std::string& key,
                                       const std::string& fallback) const {
  const auto it = kv_.find(key);
  return it == kv_.end() ? fallback : it->second;
}
double KeyValueConfig::get_double(const std::string& key) const {
  return std::stod(get_string(key));
}
double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  const auto it = kv_.find(key);
  return it == kv_.end() ? fallback : std::stod(it->second);
}
long KeyValueConfig::get_int(const std::string& key) const {
  return std::stol(get_string(key));
}
long KeyValueConfig::get_int(const std::string& key, long fallback) const {
  const auto it = kv_.find(key);
  return it == kv_.end() ? fallback : std::stol(it->second);
}
std::uint64_t KeyValueConfig::get_u64(const std::string& key,
                                      std::uint64_t fallback) const {
  const auto it = kv_.find(key);
  return it == kv_.end() ? fallback : std::stoull(it->second);
}

VecXd KeyValueConfig::get_vector(const std::string& key) const {
  std::istringstream in(get_string(key));
  std::vector<double> vals;
  double v;
  while (in >> v) vals.push_back(v);
  VecXd out(vals.size());
  for (std::size_t i = 0; i < vals.size(); ++i) out[i] = vals[i];
  return out;
}

MatXd KeyValueConfig::get_matrix(const std::string& key) const {
  const std::string text = get_string(key);
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string row_text;
  while (std::getline(in, row_text, ';')) {
    std::istringstream rin(row_text);
    std::vector<double> row;
    double v;
    while (rin >> v) row.push_back(v);
    if (!row.empty()) rows.push_back(std::move(row));
  }
  if (rows.empty()) return MatXd(0, 0);
  MatXd out(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size())
      throw std::invalid_argument("config: ragged matrix for " + key);
    for (std::size_t j = 0; j < rows[i].size(); ++j) out(i, j) = rows[i][j];
  }
  return out;
}

Gain KeyValueConfig::get_gain(const std::string& key) const {
  const std::string text = get_string(key);
  std::vector<Gain::Term> terms;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) {
    if (tok == "zero") break;
    const auto colon = tok.find(':');
    if (colon == std::string::npos)
      throw std::invalid_argument("config: gain term must be coeff:exponent, got " + tok);
    terms.push_back(
        {std::stod(tok.substr(0, colon)), std::stod(tok.substr(colon + 1))});
  }
  return Gain(terms);
}

void KeyValueConfig::set_string(const std::string& key, const std::string& value) {
  kv_[key] = value;
}
void KeyValueConfig::set_double(const std::string& key, double value) {
  kv_[key] = format_double(value);
}
void KeyValueConfig::set_int(const std::string& key, long value) {
  kv_[key] = std::to_string(value);
}
void KeyValueConfig::set_vector(const std::string& key, const VecXd& v) {
  std::ostringstream out;
  for (int i = 0; i < v.size(); ++i) {
    if (i) out << ' ';
    out << format_double(v[i]);
  }
  kv_[key] = out.str();
}
void KeyValueConfig::set_matrix(const std::string& key, const MatXd& m) {
  std::ostringstream out;
  for (int i = 0; i < m.rows(); ++i) {
    if (i) out << " ; ";
    for (int j = 0; j < m.cols(); ++j) {
      if (j) out << ' ';
      out << format_double(m(i, j));
    }
  }
  kv_[key] = out.str();
}
void KeyValueConfig::set_gain(const std::string& key, const Gain& g) {
  if (g.is_zero()) {
    kv_[key] = "zero";
    return;
  }
  std::ostringstream out;
  bool first = true;
  for (const auto& t : g.terms()) {
    if (!first) out << ' ';
    out << format_double(t.coeff) << ':' << format_double(t.exponent);
    first = false;
  }
  kv_[key] = out.str();
}

SimConfig SimConfig::from_config(const KeyValueConfig& c) {
  SimConfig s;
  s.model_id = c.get_string("model", s.model_id);
  s.mode = c.get_string("mode", s.mode);
  s.estimator = c.get_string("estimator", s.estimator);
  s.controller = c.get_string("controller", s.controller);
  s.N = static_cast<int>(c.get_int("horizon.N", s.N));
  s.M = static_cast<int>(c.get_int("horizon.M", s.M));
  s.M_set = static_cast<int>(c.get_int("horizon.M_set", s.M_set));
  s.M_bar = static_cast<int>(c.get_int("horizon.M_bar", s.M_bar));
  s.T = static_cast<int>(c.get_int("run.T", s.T));
  s.seed = c.get_u64("run.seed", s.seed);
  s.w_bar = c.get_double("model.w_bar", s.w_bar);
  if (c.has("init.x0")) s.x0 = c.get_vector("init.x0");
  if (c.has("init.x_hat0")) s.x_hat0 = c.get_vector("init.x_hat0");
  s.e_bar0 = c.get_double("init.e_bar0", s.e_bar0);
  s.trace_path = c.get_string("out.trace", s.trace_path);
  s.summary_path = c.get_string("out.summary", s.summary_path);
  s.strict_verify = c.get_int("run.strict", 0) != 0;
  s.outlier_step = static_cast<int>(c.get_int("run.outlier_step", s.outlier_step));
  s.outlier_factor = c.get_double("run.outlier_factor", s.outlier_factor);
  s.nlp_max_iters = static_cast<int>(c.get_int("nlp.max_iters", s.nlp_max_iters));
  s.cost = c.get_string("cost", s.cost);
  return s;
}

KeyValueConfig SimConfig::to_config() const {
  KeyValueConfig c;
  c.set_string("model", model_id);
  c.set_string("mode", mode);
  c.set_string("estimator", estimator);
  c.set_string("controller", controller);
  c.set_int("horizon.N", N);
  c.set_int("horizon.M", M);
  c.set_int("horizon.M_set", M_set);
  c.set_int("horizon.M_bar", M_bar);
  c.set_int("run.T", T);
  c.set_int("run.seed", static_cast<long>(seed));
  if (w_bar >= 0.0) c.set_double("model.w_bar", w_bar);
  if (x0.size()) c.set_vector("init.x0", x0);
  if (x_hat0.size()) c.set_vector("init.x_hat0", x_hat0);
  c.set_double("init.e_bar0", e_bar0);
  if (!trace_path.empty()) c.set_string("out.trace", trace_path);
  if (!summary_path.empty()) c.set_string("out.summary", summary_path);
  c.set_int("run.strict", strict_verify ? 1 : 0);
  c.set_int("run.outlier_step", outlier_step);
  c.set_double("run.outlier_factor", outlier_factor);
  c.set_int("nlp.max_iters", nlp_max_iters);
  c.set_string("cost", cost);
  return c;
}

}  // namespace rompc::sim
