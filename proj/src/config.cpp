#include "opid/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

namespace opid {

namespace {

using json = nlohmann::json;

const std::vector<std::string> kSections{"model", "unknown", "basis", "algorithm",
                                         "optimizer", "gauss_newton", "sweep"};

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys{
      {"name", "string", "scenario", "label echoed into reports"},
      {"seed", "uint", "0", "base seed for every random choice; --seed overrides"},
      {"threads", "int", "0", "worker threads, 0 = OpenMP default; --threads overrides"},
      {"output", "string", "out", "output directory; --out overrides"},
      {"model.family", "enum", "linear_drift",
       "linear_drift | linear_control_matrix | bilinear_drift | bilinear_control | "
       "schrodinger"},
      {"model.dim", "int", "3", "state dimension of randomly generated models"},
      {"model.inputs", "int", "3", "columns of a random input matrix B (linear_drift)"},
      {"model.outputs", "int", "3", "rows of a random observer C"},
      {"model.channels", "int", "model.inputs",
       "control channels (linear_control_matrix)"},
      {"model.horizon", "number", "1 (schrodinger: 10 pi)", "final time T"},
      {"model.steps", "int", "0", "integration steps, 0 = 1000 for T <= 10 else 5000"},
      {"model.require_skew", "bool", "true",
       "bilinear families: demand skew-symmetric operators"},
      {"model.B", "matrix", "random",
       "input matrix (linear_drift) or control operator (bilinear_drift)"},
      {"model.C", "matrix", "random", "observer; schrodinger builds it from psi1"},
      {"model.M", "matrix", "random", "known drift (linear_control_matrix)"},
      {"model.H", "matrix", "random", "known drift (bilinear_control), real part of H "
                                      "(schrodinger)"},
      {"model.H_imag", "matrix", "0", "imaginary part of H (schrodinger)"},
      {"model.y0", "vector", "random unit vector", "initial state (not linear_drift)"},
      {"model.psi0", "vector", "[1, 0, 0]", "real part of psi0 (schrodinger)"},
      {"model.psi0_imag", "vector", "0", "imaginary part of psi0 (schrodinger)"},
      {"model.psi1", "vector", "[1, 1, 1] / sqrt 3", "real part of psi1 (schrodinger)"},
      {"model.psi1_imag", "vector", "0", "imaginary part of psi1 (schrodinger)"},
      {"unknown.A_star", "matrix", "random",
       "true operator (schrodinger: real part of the Hermitian dipole)"},
      {"unknown.A_star_imag", "matrix", "0", "imaginary part of the dipole (schrodinger)"},
      {"unknown.A_circ", "matrix", "from relative_error", "explicit initial guess"},
      {"unknown.A_circ_imag", "matrix", "0", "imaginary part of the guess (schrodinger)"},
      {"unknown.relative_error", "number", "0.01",
       "A_circ = A_star + rho ||A_star|| U with U a random unit direction in the span"},
      {"basis.kind", "enum", "canonical", "canonical | random | explicit | union"},
      {"basis.count", "int", "full", "number of random elements (kind random)"},
      {"basis.extra", "int", "basis size", "random elements appended (kind union)"},
      {"basis.seed", "uint", "derived from seed", "seed for random elements"},
      {"basis.elements", "matrix_list", "none", "explicit elements (kind explicit)"},
      {"algorithm.name", "enum", "LGR", "LGR | GR | OGR | OLGR"},
      {"algorithm.segments", "int", "10", "piecewise-constant control segments"},
      {"algorithm.bound", "number", "1", "admissible controls lie in [-bound, bound]"},
      {"algorithm.compact_radius", "number", "10", "coefficient bound for nonlinear fits"},
      {"algorithm.tol1", "number", "1e-6", "OGR reordering threshold"},
      {"algorithm.tol2", "number", "1e-6", "OGR skip-splitting threshold"},
      {"algorithm.positivity_tol", "number", "1e-10",
       "relative splitting value below which a warning is raised"},
      {"algorithm.max_split_retries", "int", "3", "GR retries of a failed splitting step"},
      {"algorithm.shift", "bool", "true", "work around A_circ instead of zero"},
      {"optimizer.multistart", "int", "5", "random starts on top of the deterministic ones"},
      {"optimizer.max_iters", "int", "200", "projected BFGS iterations per start"},
      {"optimizer.grad_tol", "number", "1e-8", "projected gradient tolerance"},
      {"optimizer.fd_step", "number", "1e-6", "finite-difference step when used"},
      {"gauss_newton.max_iters", "int", "50", "GN iteration cap"},
      {"gauss_newton.step_tol", "number", "1e-10", "stop when the step norm falls below"},
      {"gauss_newton.resid_tol", "number", "1e-12",
       "stop when the residual norm falls below"},
      {"sweep.radii", "number_list", "[0.1, 0.5, 1.0]", "relative sphere radii"},
      {"sweep.trials", "int", "100", "initializations per radius"},
      {"sweep.tolerance", "number", "0.005", "success threshold on relative Frobenius error"},
  };
  return keys;
}

std::string config_reference() {
  std::ostringstream out;
  out << "Config keys (JSON, nested by section):\n";
  for (const ConfigKey& k : config_keys()) {
    out << "  " << k.path << " (" << k.type << ", default " << k.fallback << ")\n"
        << "      " << k.help << "\n";
  }
  return out.str();
}

namespace {

class Reader {
 public:
  explicit Reader(const json& doc) {
    if (!doc.is_object()) throw ConfigError("config: top level must be a JSON object");
    for (const ConfigKey& k : config_keys()) types_[k.path] = k.type;
    flatten(doc, "");
  }

  bool has(const std::string& key) const { return leaves_.count(key) != 0; }

  std::string str(const std::string& key, const std::string& fallback) const {
    return has(key) ? leaves_.at(key).get<std::string>() : fallback;
  }
  double num(const std::string& key, double fallback) const {
    return has(key) ? leaves_.at(key).get<double>() : fallback;
  }
  int integer(const std::string& key, int fallback) const {
    return has(key) ? leaves_.at(key).get<int>() : fallback;
  }
  std::uint64_t uint(const std::string& key, std::uint64_t fallback) const {
    return has(key) ? leaves_.at(key).get<std::uint64_t>() : fallback;
  }
  bool boolean(const std::string& key, bool fallback) const {
    return has(key) ? leaves_.at(key).get<bool>() : fallback;
  }
  std::vector<double> numbers(const std::string& key, std::vector<double> fallback) const {
    return has(key) ? leaves_.at(key).get<std::vector<double>>() : fallback;
  }
  Vec vec(const std::string& key) const {
    const auto v = leaves_.at(key).get<std::vector<double>>();
    return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
  }
  Mat mat(const std::string& key) const { return to_matrix(leaves_.at(key), key); }
  std::vector<Mat> mats(const std::string& key) const {
    std::vector<Mat> out;
    for (const json& m : leaves_.at(key)) out.push_back(to_matrix(m, key));
    return out;
  }

 private:
  static Mat to_matrix(const json& m, const std::string& key) {
    const std::size_t rows = m.size();
    const std::size_t cols = m.at(0).size();
    Mat out(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < rows; ++i) {
      if (m[i].size() != cols) throw ConfigError("config: " + key + " has ragged rows");
      for (std::size_t j = 0; j < cols; ++j) {
        out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m[i][j].get<double>();
      }
    }
    return out;
  }

  static bool number_array(const json& v) {
    if (!v.is_array() || v.empty()) return false;
    for (const json& x : v) {
      if (!x.is_number()) return false;
    }
    return true;
  }
  static bool matrix_value(const json& v) {
    if (!v.is_array() || v.empty()) return false;
    for (const json& row : v) {
      if (!number_array(row)) return false;
    }
    return true;
  }

  void check_type(const std::string& key, const json& v) const {
    const std::string& t = types_.at(key);
    bool ok = false;
    if (t == "string" || t == "enum") ok = v.is_string();
    else if (t == "number") ok = v.is_number();
    else if (t == "int") ok = v.is_number_integer();
    else if (t == "uint") ok = v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
    else if (t == "bool") ok = v.is_boolean();
    else if (t == "vector") ok = number_array(v);
    else if (t == "number_list") ok = v.is_array() && (v.empty() || number_array(v));
    else if (t == "matrix") ok = matrix_value(v);
    else if (t == "matrix_list") {
      ok = v.is_array() && !v.empty();
      for (const json& m : v) ok = ok && matrix_value(m);
    }
    if (!ok) throw ConfigError("config: key '" + key + "' must be of type " + t);
  }

  void flatten(const json& obj, const std::string& prefix) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
      const bool section =
          prefix.empty() &&
          std::find(kSections.begin(), kSections.end(), it.key()) != kSections.end();
      if (section) {
        if (!it->is_object()) throw ConfigError("config: section '" + key + "' must be an object");
        flatten(*it, key);
        continue;
      }
      if (types_.count(key) == 0) throw ConfigError("config: unknown key '" + key + "'");
      check_type(key, *it);
      leaves_[key] = *it;
    }
  }

  std::map<std::string, std::string> types_;
  std::map<std::string, json> leaves_;
};

std::uint64_t mix(std::uint64_t base, std::uint64_t salt) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Mat gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  }
  return m;
}

Mat skew(const Mat& x) { return 0.5 * (x - x.transpose()); }

Vec unit_vector(int n, std::mt19937_64& rng) {
  Vec v = gaussian(n, 1, rng);
  return v / v.norm();
}

CMat complex_matrix(const Reader& r, const std::string& key, const CMat& fallback) {
  if (!r.has(key)) {
    if (r.has(key + "_imag")) throw ConfigError("config: " + key + "_imag given without " + key);
    return fallback;
  }
  const Mat re = r.mat(key);
  CMat out = re.cast<std::complex<double>>();
  if (r.has(key + "_imag")) {
    const Mat im = r.mat(key + "_imag");
    if (im.rows() != re.rows() || im.cols() != re.cols()) {
      throw ConfigError("config: " + key + "_imag shape differs from " + key);
    }
    out.imag() = im;
  }
  return out;
}

CVec complex_vector(const Reader& r, const std::string& key, const CVec& fallback) {
  if (!r.has(key)) {
    if (r.has(key + "_imag")) throw ConfigError("config: " + key + "_imag given without " + key);
    return fallback;
  }
  const Vec re = r.vec(key);
  CVec out = re.cast<std::complex<double>>();
  if (r.has(key + "_imag")) {
    const Vec im = r.vec(key + "_imag");
    if (im.size() != re.size()) throw ConfigError("config: " + key + "_imag length differs");
    out.imag() = im;
  }
  return out;
}

/// A_star + rho ||A_star|| U for U a random unit-norm combination of `elements`.
Mat perturb_in_span(const Mat& op_star, const std::vector<Mat>& elements, double rho,
                    std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat u = Mat::Zero(op_star.rows(), op_star.cols());
  while (u.norm() == 0.0) {
    for (const Mat& e : elements) u += normal(rng) * e;
  }
  return op_star + rho * op_star.norm() * u / u.norm();
}

/// Structure of the unknown operator, which fixes the canonical basis.
enum class Structure { General, Skew, Hermitian };

std::vector<Mat> make_basis(const Reader& r, Structure structure, Eigen::Index rows,
                            Eigen::Index cols, std::uint64_t seed) {
  const std::string kind = r.str("basis.kind", "canonical");
  const int n = static_cast<int>(rows);
  const int herm_n = n / 2;
  auto canonical = [&]() {
    switch (structure) {
      case Structure::Skew: return skew_canonical_basis(n);
      case Structure::Hermitian: {
        std::vector<Mat> out;
        for (const CMat& m : hermitian_canonical_basis(herm_n)) out.push_back(embed_hermitian(m));
        return out;
      }
      case Structure::General: break;
    }
    return BasisSet::canonical(rows, cols).elements();
  };
  auto random = [&](int count, std::uint64_t s) {
    switch (structure) {
      case Structure::Skew: return random_skew_basis(n, count, s);
      case Structure::Hermitian: {
        std::vector<Mat> out;
        for (const CMat& m : random_hermitian_basis(herm_n, count, s)) {
          out.push_back(embed_hermitian(m));
        }
        return out;
      }
      case Structure::General: break;
    }
    return random_basis(rows, cols, count, s);
  };
  const int full = static_cast<int>(canonical().size());
  for (const char* key : {"basis.count", "basis.extra", "basis.elements"}) {
    const std::string k = key;
    const bool allowed = (k == "basis.count" && kind == "random") ||
                         (k == "basis.extra" && kind == "union") ||
                         (k == "basis.elements" && kind == "explicit");
    if (r.has(k) && !allowed) throw ConfigError("config: " + k + " does not apply to basis.kind " + kind);
  }
  if (kind == "canonical") return canonical();
  if (kind == "random") return random(r.integer("basis.count", full), seed);
  if (kind == "explicit") {
    if (!r.has("basis.elements")) throw ConfigError("config: basis.kind explicit needs basis.elements");
    return r.mats("basis.elements");
  }
  if (kind == "union") {
    std::vector<Mat> out = canonical();
    const int extra = r.integer("basis.extra", full);
    if (extra < 0) throw ConfigError("config: basis.extra must be >= 0");
    if (extra > 0) {
      std::mt19937_64 rng(seed);
      for (int remaining = extra; remaining > 0;) {
        const int chunk = std::min(remaining, full);
        for (Mat& m : random(chunk, rng())) out.push_back(std::move(m));
        remaining -= chunk;
      }
    }
    return out;
  }
  throw ConfigError("config: basis.kind must be canonical, random, explicit or union");
}

Config build(const Reader& r, std::optional<std::uint64_t> seed_override) {
  Config cfg;
  cfg.seed = seed_override ? *seed_override : r.uint("seed", 0);
  cfg.threads = r.integer("threads", 0);
  if (cfg.threads < 0) throw ConfigError("config: threads must be >= 0");
  cfg.output = r.str("output", "out");

  Scenario& s = cfg.scenario;
  s.name = r.str("name", "scenario");
  s.seed = cfg.seed;
  const std::string family = r.str("model.family", "linear_drift");
  const std::set<std::string> bilinear{"bilinear_drift", "bilinear_control"};
  const std::map<std::string, std::set<std::string>> applies{
      {"model.inputs", {"linear_drift", "linear_control_matrix"}},
      {"model.channels", {"linear_control_matrix"}},
      {"model.require_skew", bilinear},
      {"model.B", {"linear_drift", "bilinear_drift"}},
      {"model.M", {"linear_control_matrix"}},
      {"model.H", {"bilinear_control", "schrodinger"}},
      {"model.y0", {"linear_control_matrix", "bilinear_drift", "bilinear_control"}},
      {"model.H_imag", {"schrodinger"}},
      {"model.psi0", {"schrodinger"}},
      {"model.psi0_imag", {"schrodinger"}},
      {"model.psi1", {"schrodinger"}},
      {"model.psi1_imag", {"schrodinger"}},
      {"unknown.A_star_imag", {"schrodinger"}},
      {"unknown.A_circ_imag", {"schrodinger"}},
  };
  for (const auto& [key, families] : applies) {
    if (r.has(key) && families.count(family) == 0) {
      throw ConfigError("config: " + key + " does not apply to model.family " + family);
    }
  }
  const double rho = r.num("unknown.relative_error", 0.01);
  if (!(rho >= 0.0)) throw ConfigError("config: unknown.relative_error must be >= 0");
  const int n = r.integer("model.dim", 3);
  const int inputs = r.integer("model.inputs", 3);
  const int outputs = r.integer("model.outputs", 3);
  if (n < 1 || inputs < 1 || outputs < 1) {
    throw ConfigError("config: model.dim, model.inputs and model.outputs must be >= 1");
  }
  const double horizon = r.num("model.horizon", family == "schrodinger" ? 10.0 * M_PI : 1.0);
  const bool require_skew = r.boolean("model.require_skew", true);
  const std::uint64_t basis_seed = r.uint("basis.seed", mix(cfg.seed, 1));
  std::mt19937_64 rng(mix(cfg.seed, 2));
  auto mat_or = [&](const std::string& key, const Mat& fallback) {
    return r.has(key) ? r.mat(key) : fallback;
  };
  auto skew_if = [&](const Mat& m) { return require_skew ? skew(m) : m; };

  bool circ_done = false;
  Structure structure = Structure::General;
  if (family == "linear_drift") {
    const bool any = r.has("unknown.A_star") || r.has("model.B") || r.has("model.C");
    if (!any) {
      const DriftInstance inst = random_drift_instance(n, inputs, outputs, rho, mix(cfg.seed, 3));
      s.model = SystemModel::linear_drift(inst.b, inst.c, horizon);
      s.op_star = inst.a_star;
      s.op_circ = inst.a_circ;
      circ_done = true;
    } else {
      for (const char* k : {"unknown.A_star", "model.B", "model.C"}) {
        if (!r.has(k)) {
          throw ConfigError(std::string("config: explicit linear_drift needs ") + k);
        }
      }
      s.model = SystemModel::linear_drift(r.mat("model.B"), r.mat("model.C"), horizon);
      s.op_star = r.mat("unknown.A_star");
    }
  } else if (family == "linear_control_matrix") {
    const int channels = r.integer("model.channels", inputs);
    const Mat m = mat_or("model.M", gaussian(n, n, rng));
    const int dim = static_cast<int>(m.rows());
    const Mat c = mat_or("model.C", gaussian(outputs, dim, rng));
    const Vec y0 = r.has("model.y0") ? r.vec("model.y0") : unit_vector(dim, rng);
    s.model = SystemModel::linear_control_matrix(m, channels, c, y0, horizon);
    s.op_star = mat_or("unknown.A_star", gaussian(dim, channels, rng));
  } else if (family == "bilinear_drift" || family == "bilinear_control") {
    const bool drift_unknown = family == "bilinear_drift";
    const std::string known_key = drift_unknown ? "model.B" : "model.H";
    const Mat known = mat_or(known_key, skew_if(gaussian(n, n, rng)));
    const int dim = static_cast<int>(known.rows());
    const Mat c = mat_or("model.C", gaussian(outputs, dim, rng));
    const Vec y0 = r.has("model.y0") ? r.vec("model.y0") : unit_vector(dim, rng);
    if (drift_unknown) {
      s.model = SystemModel::bilinear_drift(known, c, y0, horizon);
      s.model.require_skew = require_skew;
      validate(s.model);
    } else {
      s.model = SystemModel::bilinear_control(known, c, y0, horizon, require_skew);
    }
    s.op_star = mat_or("unknown.A_star", skew_if(gaussian(dim, dim, rng)));
    structure = require_skew ? Structure::Skew : Structure::General;
  } else if (family == "schrodinger") {
    const SchrodingerReference ref = reference_schrodinger();
    const CMat h = complex_matrix(r, "model.H", ref.h);
    const CVec psi0 = complex_vector(r, "model.psi0", ref.psi0);
    const CVec psi1 = complex_vector(r, "model.psi1", ref.psi1);
    const CMat mu = complex_matrix(r, "unknown.A_star", ref.mu_star);
    if (r.has("model.C") || r.has("model.y0")) {
      throw ConfigError("config: schrodinger builds C and y0 from psi1 and psi0");
    }
    const SchrodingerSetup setup = setup_schrodinger(
        h, hermitian_canonical_basis(static_cast<int>(h.rows())), psi0, psi1, horizon);
    s.model = setup.model;
    s.op_star = embed_hermitian(mu);
    if (r.has("unknown.A_circ")) {
      s.op_circ = embed_hermitian(
          complex_matrix(r, "unknown.A_circ", CMat::Zero(h.rows(), h.cols())));
      circ_done = true;
    }
    structure = Structure::Hermitian;
  } else {
    throw ConfigError("config: unknown model.family '" + family + "'");
  }

  s.elements = make_basis(r, structure, s.model.operator_rows(), s.model.operator_cols(),
                          basis_seed);
  if (family != "schrodinger" && r.has("unknown.A_circ")) {
    s.op_circ = r.mat("unknown.A_circ");
  } else if (!circ_done) {
    s.op_circ = perturb_in_span(s.op_star, s.elements, rho, mix(cfg.seed, 4));
  }

  s.algorithm = parse_algorithm(r.str("algorithm.name", "LGR"));
  s.use_shift = r.boolean("algorithm.shift", true);
  GreedySettings& g = s.greedy;
  g.segments = r.integer("algorithm.segments", 10);
  g.bound = r.num("algorithm.bound", 1.0);
  g.n_steps = r.integer("model.steps", 0);
  g.compact_radius = r.num("algorithm.compact_radius", 10.0);
  g.tol1 = r.num("algorithm.tol1", 1e-6);
  g.tol2 = r.num("algorithm.tol2", 1e-6);
  g.positivity_tol = r.num("algorithm.positivity_tol", 1e-10);
  g.max_split_retries = r.integer("algorithm.max_split_retries", 3);
  g.opt.multistart = r.integer("optimizer.multistart", 5);
  g.opt.max_iters = r.integer("optimizer.max_iters", 200);
  g.opt.grad_tol = r.num("optimizer.grad_tol", 1e-8);
  g.opt.fd_step = r.num("optimizer.fd_step", 1e-6);
  g.opt.seed = cfg.seed;
  if (g.segments < 1) throw ConfigError("config: algorithm.segments must be >= 1");
  if (!(g.bound > 0.0)) throw ConfigError("config: algorithm.bound must be positive");
  if (g.n_steps < 0) throw ConfigError("config: model.steps must be >= 0");
  g.opt.validate();

  s.gn.max_iters = r.integer("gauss_newton.max_iters", 50);
  s.gn.step_tol = r.num("gauss_newton.step_tol", 1e-10);
  s.gn.resid_tol = r.num("gauss_newton.resid_tol", 1e-12);
  if (s.gn.max_iters < 0) throw ConfigError("config: gauss_newton.max_iters must be >= 0");

  s.radii = r.numbers("sweep.radii", {0.1, 0.5, 1.0});
  s.trials = r.integer("sweep.trials", 100);
  s.tolerance = r.num("sweep.tolerance", 0.005);
  s.validate();
  return cfg;
}

}  // namespace

Config parse_config(const std::string& json_text, std::optional<std::uint64_t> seed_override) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  const Reader reader(doc);
  try {
    return build(reader, seed_override);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

Config load_config(const std::filesystem::path& path,
                   std::optional<std::uint64_t> seed_override) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), seed_override);
}

}  // namespace opid
