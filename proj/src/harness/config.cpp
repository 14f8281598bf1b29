#include "commopt/harness/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

#include <toml.hpp>

#include "commopt/errors.hpp"

namespace commopt {

namespace {

// Typed, strict view of one table. Every key must be consumed before
// finish(), so typos surface as errors instead of silent defaults.
class Section {
 public:
  Section(const toml::table* t, std::string name) : t_(t), name_(std::move(name)) {}

  bool present() const { return t_ != nullptr; }
  bool has(std::string_view key) const { return t_ && t_->contains(key); }

  double num(std::string_view key, double def) { return opt_num(key).value_or(def); }

  std::optional<double> opt_num(std::string_view key) {
    const toml::node* n = take(key);
    if (!n) return std::nullopt;
    if (auto i = n->value_exact<std::int64_t>()) return static_cast<double>(*i);
    if (auto d = n->value_exact<double>()) {
      if (!std::isfinite(*d)) throw ConfigError(path(key), "must be finite");
      return *d;
    }
    throw ConfigError(path(key), "expected a number");
  }

  std::size_t count(std::string_view key, std::size_t def) {
    const toml::node* n = take(key);
    if (!n) return def;
    return to_count(*n, path(key));
  }

  std::uint64_t seed(std::string_view key, std::uint64_t def) { return count(key, def); }

  std::string str(std::string_view key, std::string def) {
    const toml::node* n = take(key);
    if (!n) return def;
    if (auto s = n->value_exact<std::string>()) return *s;
    throw ConfigError(path(key), "expected a string");
  }

  bool flag(std::string_view key, bool def) {
    const toml::node* n = take(key);
    if (!n) return def;
    if (auto b = n->value_exact<bool>()) return *b;
    throw ConfigError(path(key), "expected true or false");
  }

  // A number or an array of numbers.
  Vec numbers(std::string_view key, Vec def) {
    const toml::node* n = take(key);
    if (!n) return def;
    if (const toml::array* a = n->as_array()) {
      Vec out;
      for (const toml::node& e : *a) {
        if (auto i = e.value_exact<std::int64_t>()) out.push_back(static_cast<double>(*i));
        else if (auto d = e.value_exact<double>()) out.push_back(*d);
        else throw ConfigError(path(key), "expected an array of numbers");
      }
      return out;
    }
    if (auto i = n->value_exact<std::int64_t>()) return {static_cast<double>(*i)};
    if (auto d = n->value_exact<double>()) return {*d};
    throw ConfigError(path(key), "expected a number or an array of numbers");
  }

  Blocks blocks(std::string_view key) {
    const toml::node* n = take(key);
    if (!n) return {};
    const toml::array* a = n->as_array();
    if (!a) throw ConfigError(path(key), "expected an array of index arrays");
    Blocks out;
    for (const toml::node& e : *a) {
      const toml::array* b = e.as_array();
      if (!b) throw ConfigError(path(key), "expected an array of index arrays");
      out.emplace_back();
      for (const toml::node& i : *b) out.back().push_back(to_count(i, path(key)));
    }
    return out;
  }

  void finish() const {
    if (!t_) return;
    for (auto&& [k, v] : *t_) {
      (void)v;
      if (!used_.count(std::string(k.str())))
        throw ConfigError(path(k.str()), "unknown key");
    }
  }

  std::string path(std::string_view key) const {
    return name_.empty() ? std::string(key) : name_ + "." + std::string(key);
  }

 private:
  const toml::node* take(std::string_view key) {
    if (!t_) return nullptr;
    used_.insert(std::string(key));
    return t_->get(key);
  }

  static std::size_t to_count(const toml::node& n, const std::string& where) {
    auto i = n.value_exact<std::int64_t>();
    if (!i || *i < 0) throw ConfigError(where, "expected a nonnegative integer");
    return static_cast<std::size_t>(*i);
  }

  const toml::table* t_;
  std::string name_;
  std::set<std::string> used_;
};

template <class F>
auto field(const std::string& where, F parse) {
  try {
    return parse();
  } catch (const Error& e) {
    throw ConfigError(where, e.what());
  }
}

void require(bool ok, const std::string& where, const char* what) {
  if (!ok) throw ConfigError(where, what);
}

ProblemConfig parse_problem(Section s) {
  ProblemConfig p;
  const std::string kind = s.str("kind", "quadratic");
  if (kind == "quadratic") p.kind = ProblemKind::quadratic;
  else if (kind == "logistic") p.kind = ProblemKind::l2_logistic;
  else if (kind == "nonconvex_logistic") p.kind = ProblemKind::nonconvex_logistic;
  else throw ConfigError("problem.kind", "expected quadratic, logistic or nonconvex_logistic");

  p.clients = s.count("clients", p.clients);
  require(p.clients >= 1, "problem.clients", "must be >= 1");
  if (p.kind == ProblemKind::quadratic) {
    p.fixture = s.str("fixture", p.fixture);
    require(p.fixture == "random" || p.fixture == "unit_cross", "problem.fixture",
            "expected random or unit_cross");
    p.dim = s.count("dim", p.dim);
    p.seed = s.seed("seed", 0);
    p.mu_min = s.num("mu_min", p.mu_min);
    p.mu_max = s.num("mu_max", p.mu_max);
    p.l_max = s.num("l_max", p.l_max);
    p.center_scale = s.num("center_scale", p.center_scale);
    p.interpolation = s.flag("interpolation", false);
    require(p.dim >= 1, "problem.dim", "must be >= 1");
    require(p.mu_min > 0 && p.mu_min <= p.mu_max, "problem.mu_min", "need 0 < mu_min <= mu_max");
    require(p.l_max >= p.mu_max, "problem.l_max", "must be >= mu_max");
  } else {
    p.data = s.str("data", "");
    auto& o = p.synthetic;
    o.samples = s.count("samples", o.samples);
    o.dim = s.count("dim", o.dim);
    o.clusters = s.count("feature_clusters", o.clusters);
    o.separation = s.num("separation", o.separation);
    o.label_noise = s.num("label_noise", o.label_noise);
    o.per_cluster_model = s.flag("per_cluster_model", o.per_cluster_model);
    o.normalize = s.flag("normalize", o.normalize);
    p.data_seed = s.seed("data_seed", 0);
    p.partition = field("problem.partition",
                        [&] { return parse_partition_scheme(s.str("partition", "iid")); });
    p.partition_seed = s.seed("partition_seed", 0);
    p.dirichlet_alpha = s.num("dirichlet_alpha", p.dirichlet_alpha);
    p.mu = s.num("mu", p.kind == ProblemKind::l2_logistic ? 0.1 : kDefaultNonconvexLambda);
    require(p.mu >= 0, "problem.mu", "must be >= 0");
    require(p.dirichlet_alpha > 0, "problem.dirichlet_alpha", "must be > 0");
  }
  s.finish();
  return p;
}

EfbvSection parse_efbv(Section s) {
  EfbvSection e;
  e.compressor = s.str("compressor", e.compressor);
  const std::string dep = s.str("dependence", "independent");
  if (dep == "independent") e.dependence = Dependence::independent;
  else if (dep == "m_nice") e.dependence = Dependence::m_nice_joint;
  else throw ConfigError("efbv.dependence", "expected independent or m_nice");
  e.nice_m = s.count("nice_m", e.nice_m);
  e.lambda = s.opt_num("lambda");
  e.nu = s.opt_num("nu");
  e.gamma = s.opt_num("gamma");
  e.T = s.count("T", e.T);
  e.l2 = s.num("l2", 0);
  e.smoothness = field("efbv.smoothness",
                       [&] { return parse_smoothness_convention(s.str("smoothness", "mean")); });
  e.stop_gap = s.num("stop_gap", 0);
  require(e.l2 >= 0, "efbv.l2", "must be >= 0");
  require(!e.gamma || *e.gamma > 0, "efbv.gamma", "must be > 0");
  s.finish();
  return e;
}

ScafflixSection parse_scafflix(Section s) {
  ScafflixSection c;
  c.alpha = s.numbers("alpha", c.alpha);
  for (double a : c.alpha) require(a >= 0 && a <= 1, "scafflix.alpha", "must lie in [0, 1]");
  require(!c.alpha.empty(), "scafflix.alpha", "must not be empty");
  c.p = s.num("p", c.p);
  require(c.p > 0 && c.p <= 1, "scafflix.p", "must lie in (0, 1]");
  c.T = s.count("T", c.T);
  c.grad_mode = field("scafflix.grad_mode",
                      [&] { return parse_grad_mode(s.str("grad_mode", "exact")); });
  c.gamma_scale = s.num("gamma_scale", 1.0);
  require(c.gamma_scale > 0, "scafflix.gamma_scale", "must be > 0");
  c.gamma = s.opt_num("gamma");
  require(!c.gamma || *c.gamma > 0, "scafflix.gamma", "must be > 0");
  c.eps_loc = s.num("eps_loc", c.eps_loc);
  require(c.eps_loc > 0, "scafflix.eps_loc", "must be > 0");
  c.stop_gap = s.num("stop_gap", 0);
  s.finish();
  return c;
}

SppmSection parse_sppm(Section s) {
  SppmSection c;
  c.gamma = s.num("gamma", c.gamma);
  require(c.gamma > 0, "sppm.gamma", "must be > 0");
  c.T = s.count("T", c.T);
  c.target = s.num("target", 0);
  c.sampling = field("sppm.sampling", [&] { return parse_sampling_kind(s.str("sampling", "full")); });
  c.tau = s.count("tau", c.tau);
  c.p = s.numbers("p", {});
  c.blocks = s.blocks("blocks");
  c.q = s.numbers("q", {});
  c.clusters = s.count("clusters", 0);
  c.cluster_mode = field("sppm.cluster_mode",
                         [&] { return parse_clustering_mode(s.str("cluster_mode", "kmeans")); });
  c.solver = field("sppm.solver",
                   [&] { return parse_prox_solver(s.str("solver", "closed_form_quadratic")); });
  c.K = s.count("K", c.K);
  require(c.K >= 1, "sppm.K", "must be >= 1");
  c.inner_tol = s.num("inner_tol", 0);
  require(c.inner_tol >= 0, "sppm.inner_tol", "must be >= 0");
  c.measure_prox_error = s.flag("measure_prox_error", false);
  c.cost.c1 = s.num("c1", c.cost.c1);
  c.cost.c2 = s.num("c2", c.cost.c2);
  require(c.cost.c1 >= 0, "sppm.c1", "must be >= 0");
  require(c.cost.c2 >= 0, "sppm.c2", "must be >= 0");
  c.stepsize = s.num("stepsize", c.stepsize);
  require(c.stepsize > 0, "sppm.stepsize", "must be > 0");
  c.local_steps = s.count("local_steps", c.local_steps);
  require(c.local_steps >= 1, "sppm.local_steps", "must be >= 1");
  c.alpha_loc = s.num("alpha_loc", c.alpha_loc);
  require(c.alpha_loc > 0, "sppm.alpha_loc", "must be > 0");
  const bool partitioned = c.sampling == SamplingKind::block || c.sampling == SamplingKind::stratified;
  if (partitioned)
    require(!c.blocks.empty() || c.clusters >= 1, "sppm.blocks",
            "block and stratified sampling need blocks or clusters");
  s.finish();
  return c;
}

toml::table parse_toml(std::string_view text) {
  try {
    return toml::parse(text);
  } catch (const toml::parse_error& e) {
    throw ParseError(e.source().begin.line, std::string(e.description()));
  }
}

std::string to_text(const toml::table& t) {
  std::ostringstream os;
  os << t;
  return os.str();
}

ExperimentConfig from_table(const toml::table& doc, const std::string& base_dir) {
  ExperimentConfig cfg;
  cfg.base_dir = base_dir;
  Section top(&doc, "");
  cfg.algorithm = field("algorithm", [&] {
    if (!doc.contains("algorithm")) throw ConfigError("algorithm", "missing");
    return parse_algorithm(top.str("algorithm", ""));
  });
  {
    const Vec seeds = top.numbers("seeds", {0});
    require(!seeds.empty(), "seeds", "must list at least one seed");
    cfg.seeds.clear();
    for (double v : seeds) {
      require(v >= 0 && v == std::floor(v) && v < 9.007199254740992e15, "seeds",
              "seeds must be nonnegative integers");
      cfg.seeds.push_back(static_cast<std::uint64_t>(v));
    }
  }
  cfg.output = top.str("output", "");

  auto table = [&](std::string_view name) -> const toml::table* {
    const toml::node* n = doc.get(name);
    if (!n) return nullptr;
    if (!n->is_table()) throw ConfigError(std::string(name), "expected a table");
    return n->as_table();
  };
  std::set<std::string> known = {"algorithm", "seeds", "output", "problem",
                                 "efbv", "scafflix", "sppm", "sweep"};
  for (auto&& [k, v] : doc) {
    (void)v;
    if (!known.count(std::string(k.str()))) throw ConfigError(std::string(k.str()), "unknown key");
  }

  cfg.problem = parse_problem(Section(table("problem"), "problem"));
  cfg.efbv = parse_efbv(Section(table("efbv"), "efbv"));
  cfg.scafflix = parse_scafflix(Section(table("scafflix"), "scafflix"));
  cfg.sppm = parse_sppm(Section(table("sppm"), "sppm"));
  {
    Section sw(table("sweep"), "sweep");
    cfg.sweep_eps = sw.num("eps", cfg.sweep_eps);
    require(cfg.sweep_eps > 0, "sweep.eps", "must be > 0");
    sw.finish();
  }

  if (!cfg.problem.data.empty()) {
    const std::filesystem::path p = std::filesystem::path(base_dir) / cfg.problem.data;
    if (!std::filesystem::exists(p))
      throw ConfigError("problem.data", "file not found: " + p.string());
  }
  const Algorithm a = cfg.algorithm;
  const bool sppm_family = section_of(a) == "sppm";
  if (sppm_family && cfg.problem.kind == ProblemKind::nonconvex_logistic)
    throw ConfigError("problem.kind", "the SPPM family needs a convex problem");
  if (sppm_family && cfg.sppm.solver == ProxSolverKind::closed_form_quadratic &&
      cfg.problem.kind != ProblemKind::quadratic && a == Algorithm::sppm_as)
    throw ConfigError("sppm.solver", "closed_form_quadratic needs a quadratic problem");
  if (section_of(a) == "scafflix" && cfg.problem.kind == ProblemKind::nonconvex_logistic)
    throw ConfigError("problem.kind", "Scafflix needs a convex problem");
  if (a == Algorithm::scafflix && cfg.scafflix.alpha.size() != 1 &&
      cfg.scafflix.alpha.size() != cfg.problem.clients)
    throw ConfigError("scafflix.alpha", "give one value or one per client");

  cfg.canonical = to_text(doc);
  return cfg;
}

}  // namespace

std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::efbv: return "efbv";
    case Algorithm::ef21: return "ef21";
    case Algorithm::diana: return "diana";
    case Algorithm::scafflix: return "scafflix";
    case Algorithm::iscaffnew: return "iscaffnew";
    case Algorithm::flix_gd: return "flix_gd";
    case Algorithm::sppm_as: return "sppm_as";
    case Algorithm::localgd: return "localgd";
    case Algorithm::mbgd: return "mbgd";
    case Algorithm::fedprox_sppm: return "fedprox_sppm";
    case Algorithm::fedavg_sppm: return "fedavg_sppm";
  }
  return "?";
}

Algorithm parse_algorithm(std::string_view s) {
  for (auto a : {Algorithm::efbv, Algorithm::ef21, Algorithm::diana, Algorithm::scafflix,
                 Algorithm::iscaffnew, Algorithm::flix_gd, Algorithm::sppm_as,
                 Algorithm::localgd, Algorithm::mbgd, Algorithm::fedprox_sppm,
                 Algorithm::fedavg_sppm})
    if (s == to_string(a)) return a;
  throw ConfigError("algorithm", "unknown algorithm '" + std::string(s) + "'");
}

std::string_view section_of(Algorithm a) {
  switch (a) {
    case Algorithm::efbv:
    case Algorithm::ef21:
    case Algorithm::diana: return "efbv";
    case Algorithm::scafflix:
    case Algorithm::iscaffnew:
    case Algorithm::flix_gd: return "scafflix";
    default: return "sppm";
  }
}

ExperimentConfig parse_config(std::string_view text, const std::string& base_dir) {
  return from_table(parse_toml(text), base_dir);
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::filesystem::path dir = std::filesystem::path(path).parent_path();
  return parse_config(ss.str(), dir.empty() ? "." : dir.string());
}

ExperimentConfig with_param(const ExperimentConfig& cfg, std::string_view key,
                            std::string_view value) {
  toml::table doc = parse_toml(cfg.canonical);
  std::string table_name, leaf;
  if (auto dot = key.find('.'); dot != std::string_view::npos) {
    table_name = std::string(key.substr(0, dot));
    leaf = std::string(key.substr(dot + 1));
  } else if (key == "seeds" || key == "output" || key == "algorithm") {
    leaf = std::string(key);
  } else {
    table_name = std::string(section_of(cfg.algorithm));
    leaf = std::string(key);
  }
  if (leaf.empty() || leaf.find('.') != std::string::npos)
    throw ConfigError(std::string(key), "expected key or table.key");

  toml::table* target = &doc;
  if (!table_name.empty()) {
    if (!doc.contains(table_name)) doc.insert(table_name, toml::table{});
    target = doc.get_as<toml::table>(table_name);
    if (!target) throw ConfigError(table_name, "expected a table");
  }
  std::int64_t i = 0;
  double d = 0;
  const char* b = value.data();
  const char* e = value.data() + value.size();
  if (auto [p, ec] = std::from_chars(b, e, i); ec == std::errc() && p == e) {
    target->insert_or_assign(leaf, i);
  } else if (auto [p2, ec2] = std::from_chars(b, e, d); ec2 == std::errc() && p2 == e) {
    target->insert_or_assign(leaf, d);
  } else {
    target->insert_or_assign(leaf, std::string(value));
  }
  return from_table(doc, cfg.base_dir);
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  toml::table doc = parse_toml(cfg.canonical);
  doc.erase("seeds");
  doc.erase("output");
  const std::string text = to_text(doc);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash_hex(const ExperimentConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(config_hash(cfg)));
  return buf;
}

namespace {

Problem make_problem(const ExperimentConfig& cfg) {
  const ProblemConfig& pc = cfg.problem;
  if (pc.kind == ProblemKind::quadratic) {
    if (pc.fixture == "unit_cross") return unit_cross_fixture();
    RandomQuadraticOptions o;
    o.clients = pc.clients;
    o.dim = pc.dim;
    o.mu_min = pc.mu_min;
    o.mu_max = pc.mu_max;
    o.l_max = pc.l_max;
    o.center_scale = pc.center_scale;
    o.interpolation = pc.interpolation;
    return random_quadratic(o, pc.seed);
  }
  const Dataset ds = pc.data.empty()
                         ? synth_logistic_dataset(pc.synthetic, pc.data_seed)
                         : load_libsvm((std::filesystem::path(cfg.base_dir) / pc.data).string());
  PartitionOptions po;
  po.dirichlet_alpha = pc.dirichlet_alpha;
  const ClientPartition part = field("problem.partition", [&] {
    return partition(ds, pc.partition, pc.clients, pc.partition_seed, po);
  });
  return pc.kind == ProblemKind::l2_logistic ? Problem::logistic(ds, part, pc.mu)
                                             : Problem::nonconvex_logistic(ds, part, pc.mu);
}

// Problems are immutable and share their cached constants and optimum, so
// the seeds and sweep points of one config build each problem once.
std::mutex problem_cache_mutex;
std::map<std::string, Problem> problem_cache;

}  // namespace

void clear_problem_cache() {
  std::lock_guard lock(problem_cache_mutex);
  problem_cache.clear();
}

Problem build_problem(const ExperimentConfig& cfg) {
  if (cfg.canonical.empty()) return make_problem(cfg);
  auto& m = problem_cache_mutex;
  auto& cache = problem_cache;
  const toml::table doc = parse_toml(cfg.canonical);
  std::string key = cfg.base_dir + '\n';
  if (const toml::table* t = doc["problem"].as_table()) key += to_text(*t);
  {
    std::lock_guard lock(m);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  Problem p = make_problem(cfg);
  std::lock_guard lock(m);
  if (cache.size() >= 16) cache.clear();
  cache.emplace(key, p);
  return p;
}

SamplingScheme build_scheme(const ExperimentConfig& cfg, const Problem& p) {
  const SppmSection& s = cfg.sppm;
  const std::size_t n = p.clients();
  SamplingScheme out;
  switch (s.sampling) {
    case SamplingKind::full: out = SamplingScheme::full(n); break;
    case SamplingKind::nonuniform:
      out = SamplingScheme::nonuniform(s.p.empty() ? Vec(n, 1.0 / static_cast<double>(n)) : s.p);
      break;
    case SamplingKind::nice: out = SamplingScheme::nice(n, s.tau); break;
    case SamplingKind::block:
    case SamplingKind::stratified: {
      Blocks blocks = s.blocks;
      if (blocks.empty()) {
        const Vec xs = reference_solution(p);
        blocks = field("sppm.clusters", [&] {
          return optimal_stratified_clustering(grads_at(p, xs), s.clusters, s.cluster_mode).blocks;
        });
      }
      out = s.sampling == SamplingKind::block ? SamplingScheme::block(n, std::move(blocks), s.q)
                                              : SamplingScheme::stratified(n, std::move(blocks));
      break;
    }
  }
  out.validate();
  return out;
}

}  // namespace commopt
