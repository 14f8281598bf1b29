#include "commopt/compressors/compressor.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numeric>

#include "commopt/errors.hpp"

namespace commopt {

std::string_view to_string(CompressorKind k) {
  switch (k) {
    case CompressorKind::identity: return "identity";
    case CompressorKind::rand_k: return "rand_k";
    case CompressorKind::top_k: return "top_k";
    case CompressorKind::mix: return "mix";
    case CompressorKind::comp: return "comp";
    case CompressorKind::participation_nice: return "nice";
    case CompressorKind::scaled: return "scaled";
  }
  return "?";
}

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidArgument(what);
}

}  // namespace

CompressorSpec CompressorSpec::identity(std::size_t d) {
  require(d >= 1, "compressor dimension must be >= 1");
  return {CompressorKind::identity, d};
}

CompressorSpec CompressorSpec::rand_k(std::size_t d, std::size_t k) {
  require(d >= 1 && k >= 1 && k <= d, "rand_k needs 1 <= k <= d");
  CompressorSpec s(CompressorKind::rand_k, d);
  s.k_ = k;
  return s;
}

CompressorSpec CompressorSpec::top_k(std::size_t d, std::size_t k) {
  require(d >= 1 && k >= 1 && k <= d, "top_k needs 1 <= k <= d");
  CompressorSpec s(CompressorKind::top_k, d);
  s.k_ = k;
  return s;
}

CompressorSpec CompressorSpec::mix(std::size_t d, std::size_t k, std::size_t kp) {
  require(k >= 1 && kp >= 1 && k + kp <= d, "mix needs k, k' >= 1 and k + k' <= d");
  CompressorSpec s(CompressorKind::mix, d);
  s.k_ = k;
  s.kp_ = kp;
  return s;
}

CompressorSpec CompressorSpec::comp(std::size_t d, std::size_t k, std::size_t kp) {
  require(k >= 1 && k <= kp && kp <= d, "comp needs 1 <= k <= k' <= d");
  CompressorSpec s(CompressorKind::comp, d);
  s.k_ = k;
  s.kp_ = kp;
  return s;
}

CompressorSpec CompressorSpec::participation_nice(std::size_t d, std::size_t m, std::size_t n) {
  require(d >= 1 && m >= 1 && m <= n, "participation needs 1 <= m <= n");
  CompressorSpec s(CompressorKind::participation_nice, d);
  s.k_ = m;
  s.kp_ = n;
  return s;
}

CompressorParams certified_params(CompressorKind kind, std::size_t d, std::size_t k,
                                  std::size_t kp) {
  const double D = static_cast<double>(d), K = static_cast<double>(k),
               KP = static_cast<double>(kp);
  switch (kind) {
    case CompressorKind::identity: return {0, 0};
    case CompressorKind::rand_k:
      require(k >= 1 && k <= d, "rand_k needs 1 <= k <= d");
      return {0, D / K - 1};
    case CompressorKind::top_k:
      require(k >= 1 && k <= d, "top_k needs 1 <= k <= d");
      return {std::sqrt((D - K) / D), 0};
    case CompressorKind::mix:
      require(k >= 1 && kp >= 1 && k + kp <= d, "mix needs k, k' >= 1 and k + k' <= d");
      if (k + kp == d) return {0, 0};
      return {(D - K - KP) / std::sqrt((D - K) * D), KP * (D - K - KP) / ((D - K) * D)};
    case CompressorKind::comp:
      require(k >= 1 && k <= kp && kp <= d, "comp needs 1 <= k <= k' <= d");
      return {std::sqrt((D - KP) / D), (KP - K) / K};
    case CompressorKind::participation_nice:
      require(k >= 1 && k <= kp, "participation needs 1 <= m <= n");
      return {0, (KP - K) / K};
    case CompressorKind::scaled: break;
  }
  throw InvalidArgument("certified_params: scaled compressors carry their own certificate");
}

CompressorParams CompressorSpec::certified() const {
  if (kind_ == CompressorKind::scaled) {
    auto in = inner_->certified();
    return {lambda_ * in.eta + 1 - lambda_, lambda_ * lambda_ * in.omega};
  }
  return certified_params(kind_, d_, k_, kp_);
}

bool CompressorSpec::deterministic() const {
  switch (kind_) {
    case CompressorKind::identity:
    case CompressorKind::top_k: return true;
    case CompressorKind::comp: return k_ == kp_;
    case CompressorKind::participation_nice: return k_ == kp_;
    case CompressorKind::scaled: return inner_->deterministic();
    default: return false;
  }
}

std::string CompressorSpec::to_string() const {
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  switch (kind_) {
    case CompressorKind::identity: return "identity";
    case CompressorKind::rand_k: return "rand_k:k=" + std::to_string(k_);
    case CompressorKind::top_k: return "top_k:k=" + std::to_string(k_);
    case CompressorKind::mix:
      return "mix:k=" + std::to_string(k_) + ",kp=" + std::to_string(kp_);
    case CompressorKind::comp:
      return "comp:k=" + std::to_string(k_) + ",kp=" + std::to_string(kp_);
    case CompressorKind::participation_nice:
      return "nice:m=" + std::to_string(k_) + ",n=" + std::to_string(kp_);
    case CompressorKind::scaled: {
      std::string in = inner_->to_string();
      return in + (in.find(':') == std::string::npos ? ":" : ",") + "lambda=" + num(lambda_);
    }
  }
  return "?";
}

bool CompressorSpec::operator==(const CompressorSpec& o) const {
  if (kind_ != o.kind_ || d_ != o.d_ || k_ != o.k_ || kp_ != o.kp_ || lambda_ != o.lambda_)
    return false;
  if (kind_ == CompressorKind::scaled) return *inner_ == *o.inner_;
  return true;
}

CompressorSpec scale_spec(const CompressorSpec& spec, double lambda) {
  if (!(lambda > 0 && lambda <= 1)) throw InvalidArgument("scaling factor must be in (0, 1]");
  if (lambda == 1.0) return spec;
  if (spec.kind() == CompressorKind::scaled) return scale_spec(spec.inner(), lambda * spec.lambda());
  CompressorSpec s(CompressorKind::scaled, spec.dim());
  s.lambda_ = lambda;
  s.inner_ = std::make_shared<const CompressorSpec>(spec);
  return s;
}

double optimal_scaling(double eta, double variance) {
  if (!(eta >= 0 && eta < 1)) throw InvalidArgument("eta must be in [0, 1)");
  if (!(variance >= 0)) throw InvalidArgument("variance must be >= 0");
  const double a = 1 - eta;
  return std::min(a / (a * a + variance), 1.0);
}

std::vector<std::size_t> top_indices(std::span<const double> x, std::size_t k) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      const double fa = std::abs(x[a]), fb = std::abs(x[b]);
                      return fa > fb || (fa == fb && a < b);
                    });
  idx.resize(k);
  return idx;
}

namespace {

// Moves k uniformly chosen elements of `pool` to its front (partial
// Fisher-Yates).
void choose_front(std::vector<std::size_t>& pool, std::size_t k, Rng& rng) {
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
}

}  // namespace

std::vector<bool> nice_mask(std::size_t n, std::size_t m, Rng& rng) {
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  choose_front(pool, m, rng);
  std::vector<bool> mask(n, false);
  for (std::size_t i = 0; i < m; ++i) mask[pool[i]] = true;
  return mask;
}

Compressed apply_participation(const CompressorSpec& spec, std::span<const double> x,
                               bool member) {
  if (spec.kind() != CompressorKind::participation_nice)
    throw InvalidArgument("not a participation compressor");
  if (x.size() != spec.dim()) throw InvalidArgument("compressor input has wrong dimension");
  if (!member) return {Vec(x.size(), 0.0), 0};
  return {scaled(static_cast<double>(spec.n()) / static_cast<double>(spec.m()), x), x.size()};
}

Compressed apply(const CompressorSpec& spec, std::span<const double> x, Rng& rng) {
  const std::size_t d = spec.dim();
  if (x.size() != d) throw InvalidArgument("compressor input has wrong dimension");
  Compressed out{Vec(d, 0.0), 0};
  switch (spec.kind()) {
    case CompressorKind::identity:
      out.value.assign(x.begin(), x.end());
      out.scalars = d;
      break;
    case CompressorKind::rand_k: {
      std::vector<std::size_t> pool(d);
      std::iota(pool.begin(), pool.end(), std::size_t{0});
      choose_front(pool, spec.k(), rng);
      const double s = static_cast<double>(d) / static_cast<double>(spec.k());
      for (std::size_t i = 0; i < spec.k(); ++i) out.value[pool[i]] = s * x[pool[i]];
      out.scalars = spec.k();
      break;
    }
    case CompressorKind::top_k:
      for (auto j : top_indices(x, spec.k())) out.value[j] = x[j];
      out.scalars = spec.k();
      break;
    case CompressorKind::mix: {
      std::vector<bool> kept(d, false);
      for (auto j : top_indices(x, spec.k())) {
        out.value[j] = x[j];
        kept[j] = true;
      }
      std::vector<std::size_t> rest;
      for (std::size_t j = 0; j < d; ++j)
        if (!kept[j]) rest.push_back(j);
      choose_front(rest, spec.kp(), rng);
      for (std::size_t i = 0; i < spec.kp(); ++i) out.value[rest[i]] = x[rest[i]];
      out.scalars = spec.k() + spec.kp();
      break;
    }
    case CompressorKind::comp: {
      auto top = top_indices(x, spec.kp());
      choose_front(top, spec.k(), rng);
      const double s = static_cast<double>(spec.kp()) / static_cast<double>(spec.k());
      for (std::size_t i = 0; i < spec.k(); ++i) out.value[top[i]] = s * x[top[i]];
      out.scalars = spec.k();
      break;
    }
    case CompressorKind::participation_nice: {
      const bool member = rng.uniform() * static_cast<double>(spec.n()) <
                          static_cast<double>(spec.m());
      return apply_participation(spec, x, member);
    }
    case CompressorKind::scaled: {
      out = apply(spec.inner(), x, rng);
      for (double& v : out.value) v *= spec.lambda();
      break;
    }
  }
  return out;
}

namespace {

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

CompressorSpec parse_compressor(std::string_view text, std::size_t d) {
  const std::string src(text);
  auto colon = text.find(':');
  const std::string kind = trim(text.substr(0, colon));
  std::map<std::string, double> kv;
  if (colon != std::string_view::npos) {
    std::string_view rest = text.substr(colon + 1);
    while (!rest.empty()) {
      auto comma = rest.find(',');
      auto item = rest.substr(0, comma);
      auto eq = item.find('=');
      if (eq == std::string_view::npos)
        throw InvalidArgument("compressor '" + src + "': expected key=value");
      const std::string key = trim(item.substr(0, eq));
      const std::string val = trim(item.substr(eq + 1));
      double v;
      auto [p, ec] = std::from_chars(val.data(), val.data() + val.size(), v);
      if (ec != std::errc() || p != val.data() + val.size())
        throw InvalidArgument("compressor '" + src + "': bad number for " + key);
      if (!kv.emplace(key, v).second)
        throw InvalidArgument("compressor '" + src + "': duplicate key " + key);
      rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
    }
  }
  auto take_int = [&](const std::string& key) -> std::size_t {
    auto it = kv.find(key);
    if (it == kv.end()) throw InvalidArgument("compressor '" + src + "': missing " + key);
    const double v = it->second;
    kv.erase(it);
    if (!(v >= 0) || v != std::floor(v))
      throw InvalidArgument("compressor '" + src + "': " + key + " must be a whole number");
    return static_cast<std::size_t>(v);
  };
  double lambda = 1.0;
  if (auto it = kv.find("lambda"); it != kv.end()) {
    lambda = it->second;
    kv.erase(it);
  }

  CompressorSpec spec = CompressorSpec::identity(std::max<std::size_t>(d, 1));
  if (kind == "identity") {
    spec = CompressorSpec::identity(d);
  } else if (kind == "rand_k" || kind == "rand") {
    spec = CompressorSpec::rand_k(d, take_int("k"));
  } else if (kind == "top_k" || kind == "top") {
    spec = CompressorSpec::top_k(d, take_int("k"));
  } else if (kind == "mix") {
    const auto k = take_int("k");
    spec = CompressorSpec::mix(d, k, take_int("kp"));
  } else if (kind == "comp") {
    const auto k = take_int("k");
    spec = CompressorSpec::comp(d, k, take_int("kp"));
  } else if (kind == "nice") {
    const auto m = take_int("m");
    spec = CompressorSpec::participation_nice(d, m, take_int("n"));
  } else {
    throw InvalidArgument("unknown compressor kind '" + kind + "'");
  }
  if (!kv.empty())
    throw InvalidArgument("compressor '" + src + "': unknown key " + kv.begin()->first);
  return scale_spec(spec, lambda);
}

EnsembleSpec EnsembleSpec::independent(const CompressorSpec& spec, std::size_t n) {
  if (n == 0) throw InvalidArgument("ensemble needs at least one client");
  if (spec.kind() == CompressorKind::participation_nice)
    throw InvalidArgument("participation compressors need the m-nice ensemble");
  return {std::vector<CompressorSpec>(n, spec), Dependence::independent};
}

EnsembleSpec EnsembleSpec::m_nice(std::size_t d, std::size_t m, std::size_t n) {
  return {std::vector<CompressorSpec>(n, CompressorSpec::participation_nice(d, m, n)),
          Dependence::m_nice_joint};
}

CompressorParams EnsembleSpec::params() const {
  CompressorParams p;
  for (const auto& s : per_client) {
    auto c = s.certified();
    p.eta = std::max(p.eta, c.eta);
    p.omega = std::max(p.omega, c.omega);
  }
  return p;
}

double EnsembleSpec::omega_ran() const {
  const std::size_t n = clients();
  if (n == 0) throw InvalidArgument("empty ensemble");
  if (dependence == Dependence::m_nice_joint) {
    const std::size_t m = per_client.front().m();
    if (n == 1) return 0.0;
    return static_cast<double>(n - m) / (static_cast<double>(m) * static_cast<double>(n - 1));
  }
  return params().omega / static_cast<double>(n);
}

double omega_ran(const EnsembleSpec& e) { return e.omega_ran(); }

std::size_t apply_ensemble(const EnsembleSpec& e, const std::vector<Vec>& inputs,
                           std::uint64_t seed, std::uint64_t round, std::vector<Vec>& out) {
  const std::size_t n = e.clients();
  if (inputs.size() != n) throw InvalidArgument("one input per client required");
  out.resize(n);
  std::size_t scalars = 0;
  if (e.dependence == Dependence::m_nice_joint) {
    Rng joint = Rng::stream(seed, stream_tag::joint_draw, round);
    auto mask = nice_mask(n, e.per_client.front().m(), joint);
    for (std::size_t i = 0; i < n; ++i) {
      auto c = apply_participation(e.per_client[i], inputs[i], mask[i]);
      out[i] = std::move(c.value);
      scalars += c.scalars;
    }
    return scalars;
  }
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::stream(seed, i, round, stream_tag::compressor);
    auto c = apply(e.per_client[i], inputs[i], rng);
    out[i] = std::move(c.value);
    scalars += c.scalars;
  }
  return scalars;
}

CertificateEstimate estimate_params(const CompressorSpec& spec, std::size_t trials, Rng& rng) {
  if (trials == 0) throw InvalidArgument("estimate_params needs trials >= 1");
  const std::size_t d = spec.dim();
  std::vector<Vec> battery;
  for (int r = 0; r < 8; ++r) {
    Vec v(d);
    // Box-Muller keeps this independent of <random> distribution details
    for (std::size_t j = 0; j < d; ++j) {
      const double u1 = 1.0 - rng.uniform(), u2 = rng.uniform();
      v[j] = std::sqrt(-2 * std::log(u1)) * std::cos(2 * M_PI * u2);
    }
    battery.push_back(std::move(v));
  }
  Vec e1(d, 0.0);
  e1[0] = 1;
  battery.push_back(e1);
  battery.emplace_back(d, 1.0);
  Vec two(d, 1.0);
  for (std::size_t j = 0; j < (d + 1) / 2; ++j) two[j] = 4.0;
  battery.push_back(two);
  for (auto& v : battery) {
    const double nrm = std::sqrt(norm_sq(v));
    for (auto& x : v) x /= nrm;
  }

  const auto cert = spec.certified();
  const double T = static_cast<double>(trials);
  const double base = 3.0 / std::sqrt(T);
  CertificateEstimate est;
  est.inputs = battery.size();
  std::vector<Vec> draws(trials);
  for (std::size_t b = 0; b < battery.size(); ++b) {
    const Vec& x = battery[b];
    // shifted by the first draw, so identical draws average exactly
    for (std::size_t t = 0; t < trials; ++t) draws[t] = apply(spec, x, rng).value;
    Vec shift(d, 0.0);
    for (std::size_t t = 1; t < trials; ++t)
      for (std::size_t j = 0; j < d; ++j) shift[j] += draws[t][j] - draws[0][j];
    Vec mean = draws[0];
    axpy(1.0 / T, shift, mean);
    double var = 0, var_sq = 0;
    for (std::size_t t = 0; t < trials; ++t) {
      const double z = dist_sq(draws[t], mean);
      var += z;
      var_sq += z * z;
    }
    var /= T;
    const double spread = std::sqrt(std::max(var_sq / T - var * var, 0.0));
    const double bias = std::sqrt(dist_sq(mean, x));
    est.eta_hat = std::max(est.eta_hat, bias);
    est.omega_hat = std::max(est.omega_hat, var);
    const double bias_slack = base * std::max(1.0, std::sqrt(var));
    const double var_slack = base * std::max(1.0, spread);
    if (bias > cert.eta + bias_slack || var > cert.omega + var_slack)
      est.violations.push_back({b, bias, var});
  }
  return est;
}

}  // namespace commopt
