#include "fperr/symexpr.hpp"

#include <algorithm>
#include <atomic>
#include <cassert>
#include <cmath>
#include <cstring>
#include <mutex>
#include <set>
#include <sstream>

namespace fperr::sym {

namespace {
std::atomic<size_t> g_expand_limit{2'000'000};

const std::vector<Term>& empty_terms() {
  static const std::vector<Term> e;
  return e;
}

const char* kernel_name(AtomKind k) {
  switch (k) {
    case AtomKind::Recip: return "recip";
    case AtomKind::Sqrt: return "sqrt";
    case AtomKind::Sin: return "sin";
    case AtomKind::Cos: return "cos";
    case AtomKind::Exp: return "exp";
    case AtomKind::Log: return "log";
    default: return "?";
  }
}
}  // namespace

void set_expand_limit(size_t limit) { g_expand_limit.store(limit); }
size_t expand_limit() { return g_expand_limit.load(); }

// ---------------------------------------------------------------------------
// AtomTable

AtomTable& AtomTable::instance() {
  static AtomTable t;
  return t;
}

AtomId AtomTable::var(const std::string& name) {
  {
    std::shared_lock lk(mu_);
    auto it = var_ids_.find(name);
    if (it != var_ids_.end()) return it->second;
  }
  std::unique_lock lk(mu_);
  auto it = var_ids_.find(name);
  if (it != var_ids_.end()) return it->second;
  auto d = std::make_unique<AtomData>();
  d->kind = AtomKind::Var;
  d->name = name;
  atoms_.push_back(std::move(d));
  AtomId id = static_cast<AtomId>(atoms_.size() - 1);
  var_ids_.emplace(name, id);
  return id;
}

AtomId AtomTable::kernel(AtomKind k, const SymExpr& arg) {
  std::string key = std::string(kernel_name(k)) + "|" + arg.serialize(nullptr);
  {
    std::shared_lock lk(mu_);
    auto it = kernel_ids_.find(key);
    if (it != kernel_ids_.end()) return it->second;
  }
  std::unique_lock lk(mu_);
  auto it = kernel_ids_.find(key);
  if (it != kernel_ids_.end()) return it->second;
  auto d = std::make_unique<AtomData>();
  d->kind = k;
  d->arg = std::make_shared<const SymExpr>(arg);
  atoms_.push_back(std::move(d));
  AtomId id = static_cast<AtomId>(atoms_.size() - 1);
  kernel_ids_.emplace(std::move(key), id);
  return id;
}

AtomId AtomTable::node_ref(uint64_t key) {
  {
    std::shared_lock lk(mu_);
    auto it = node_ids_.find(key);
    if (it != node_ids_.end()) return it->second;
  }
  std::unique_lock lk(mu_);
  auto it = node_ids_.find(key);
  if (it != node_ids_.end()) return it->second;
  auto d = std::make_unique<AtomData>();
  d->kind = AtomKind::NodeRef;
  d->node_key = key;
  atoms_.push_back(std::move(d));
  AtomId id = static_cast<AtomId>(atoms_.size() - 1);
  node_ids_.emplace(key, id);
  return id;
}

const AtomData& AtomTable::data(AtomId id) const {
  std::shared_lock lk(mu_);
  return *atoms_.at(id);
}

// ---------------------------------------------------------------------------
// rational helpers

mpq_class rational_of(double d) {
  if (!std::isfinite(d)) throw Error("rational_of: non-finite value");
  return mpq_class(d);
}

Interval rational_to_interval(const mpq_class& q) {
  double d = mpq_get_d(q.get_mpq_t());  // rounds toward zero
  if (mpq_class(d) == q) return Interval(d, d);
  if (sgn(q) >= 0) return Interval(d, std::nextafter(d, HUGE_VAL));
  return Interval(std::nextafter(d, -HUGE_VAL), d);
}

namespace {
__float128 mpz_to_quad(const mpz_class& z) {
  if (mpz_sizeinbase(z.get_mpz_t(), 2) <= 52)
    return static_cast<__float128>(mpz_get_d(z.get_mpz_t()));
  std::string s = z.get_str();
  return strtoflt128(s.c_str(), nullptr);
}
}  // namespace

__float128 rational_to_quad(const mpq_class& q) {
  return mpz_to_quad(q.get_num()) / mpz_to_quad(q.get_den());
}

// ---------------------------------------------------------------------------
// Term / SymExpr basics

void Term::seal() {
  Interval c = rational_to_interval(coeff);
  coeff_lo = c.lo;
  coeff_hi = c.hi;
}

const std::vector<Term>& SymExpr::terms() const { return terms_ ? *terms_ : empty_terms(); }

SymExpr SymExpr::make(std::vector<Term> t) {
  std::sort(t.begin(), t.end(), [](const Term& a, const Term& b) { return a.pw < b.pw; });
  std::vector<Term> out;
  out.reserve(t.size());
  for (auto& term : t) {
    if (!out.empty() && out.back().pw == term.pw) {
      out.back().coeff += term.coeff;
      if (out.back().coeff == 0) out.pop_back();
    } else if (term.coeff != 0) {
      out.push_back(std::move(term));
    }
  }
  if (out.empty()) return SymExpr();
  for (auto& term : out) term.seal();
  out.shrink_to_fit();
  return SymExpr(std::make_shared<const std::vector<Term>>(std::move(out)));
}

SymExpr SymExpr::constant(const mpq_class& q) {
  if (q == 0) return SymExpr();
  Term t;
  t.coeff = q;
  return make({std::move(t)});
}

SymExpr SymExpr::constant(double d) { return constant(rational_of(d)); }

SymExpr SymExpr::var(const std::string& name) {
  return from_atom(AtomTable::instance().var(name));
}

SymExpr SymExpr::from_atom(AtomId id, int32_t exp) {
  if (exp == 0) return constant(mpq_class(1));
  Term t;
  t.coeff = 1;
  t.pw.emplace_back(id, exp);
  return make({std::move(t)});
}

SymExpr SymExpr::node_ref(uint64_t key) {
  return from_atom(AtomTable::instance().node_ref(key));
}

bool SymExpr::is_constant() const {
  const auto& t = terms();
  return t.empty() || (t.size() == 1 && t[0].pw.empty());
}

std::optional<mpq_class> SymExpr::as_constant() const {
  const auto& t = terms();
  if (t.empty()) return mpq_class(0);
  if (t.size() == 1 && t[0].pw.empty()) return t[0].coeff;
  return std::nullopt;
}

bool SymExpr::is_monomial() const { return terms().size() == 1; }

bool SymExpr::operator==(const SymExpr& o) const {
  const auto& a = terms();
  const auto& b = o.terms();
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if (a[i].pw != b[i].pw || a[i].coeff != b[i].coeff) return false;
  return true;
}

// ---------------------------------------------------------------------------
// arithmetic

SymExpr add(const SymExpr& a, const SymExpr& b) {
  if (a.is_zero()) return b;
  if (b.is_zero()) return a;
  const auto& ta = a.terms();
  const auto& tb = b.terms();
  std::vector<Term> out;
  out.reserve(ta.size() + tb.size());
  size_t i = 0, j = 0;
  while (i < ta.size() && j < tb.size()) {
    if (ta[i].pw < tb[j].pw) out.push_back(ta[i++]);
    else if (tb[j].pw < ta[i].pw) out.push_back(tb[j++]);
    else {
      Term t = ta[i++];
      t.coeff += tb[j++].coeff;
      if (t.coeff != 0) out.push_back(std::move(t));
    }
  }
  for (; i < ta.size(); ++i) out.push_back(ta[i]);
  for (; j < tb.size(); ++j) out.push_back(tb[j]);
  if (out.empty()) return SymExpr();
  for (auto& t : out) t.seal();
  return SymExpr(std::make_shared<const std::vector<Term>>(std::move(out)));
}

SymExpr neg(const SymExpr& a) {
  std::vector<Term> out = a.terms();
  for (auto& t : out) {
    t.coeff = -t.coeff;
    t.seal();
  }
  if (out.empty()) return SymExpr();
  return SymExpr::make(std::move(out));
}

SymExpr sub(const SymExpr& a, const SymExpr& b) { return add(a, neg(b)); }

namespace {
// Multiplies power vectors; exponents add, zeros vanish.
std::vector<std::pair<AtomId, int32_t>> pw_mul(const std::vector<std::pair<AtomId, int32_t>>& a,
                                               const std::vector<std::pair<AtomId, int32_t>>& b) {
  std::vector<std::pair<AtomId, int32_t>> out;
  out.reserve(a.size() + b.size());
  size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i].first < b[j].first) out.push_back(a[i++]);
    else if (b[j].first < a[i].first) out.push_back(b[j++]);
    else {
      int32_t e = a[i].second + b[j].second;
      if (e != 0) out.emplace_back(a[i].first, e);
      ++i, ++j;
    }
  }
  for (; i < a.size(); ++i) out.push_back(a[i]);
  for (; j < b.size(); ++j) out.push_back(b[j]);
  return out;
}

// recip(E)^k with k < 0 denotes E^{-k}; normalize while building a term
// product so inverse kernels never carry negative exponents.
SymExpr expand_power(AtomId id, int32_t exp);

SymExpr term_to_expr(const mpq_class& coeff,
                     const std::vector<std::pair<AtomId, int32_t>>& pw) {
  bool needs_fix = false;
  for (auto& [id, e] : pw)
    if (e < 0 && AtomTable::instance().data(id).kind == AtomKind::Recip) needs_fix = true;
  if (!needs_fix) {
    Term t;
    t.coeff = coeff;
    t.pw = pw;
    std::vector<Term> v{std::move(t)};
    return SymExpr::make(std::move(v));
  }
  SymExpr res = SymExpr::constant(coeff);
  for (auto& [id, e] : pw) res = mul(res, expand_power(id, e));
  return res;
}

SymExpr expand_power(AtomId id, int32_t exp) {
  const AtomData& d = AtomTable::instance().data(id);
  if (exp < 0 && d.kind == AtomKind::Recip) return pow_int(*d.arg, -exp);
  return SymExpr::from_atom(id, exp);
}
}  // namespace

SymExpr mul(const SymExpr& a, const SymExpr& b) {
  if (a.is_zero() || b.is_zero()) return SymExpr();
  const auto& ta = a.terms();
  const auto& tb = b.terms();
  if (ta.size() * tb.size() > expand_limit())
    throw ExpressionTooLarge("product of " + std::to_string(ta.size()) + " x " +
                             std::to_string(tb.size()) + " terms exceeds expansion ceiling");
  // fast path: plain monomial products
  std::vector<Term> out;
  out.reserve(ta.size() * tb.size());
  SymExpr slow_acc;
  bool any_slow = false;
  for (const auto& x : ta) {
    for (const auto& y : tb) {
      auto pw = pw_mul(x.pw, y.pw);
      bool fix = false;
      for (auto& [id, e] : pw)
        if (e < 0 && AtomTable::instance().data(id).kind == AtomKind::Recip) fix = true;
      if (!fix) {
        Term t;
        t.coeff = x.coeff * y.coeff;
        t.pw = std::move(pw);
        out.push_back(std::move(t));
      } else {
        slow_acc = add(slow_acc, term_to_expr(x.coeff * y.coeff, pw));
        any_slow = true;
      }
    }
  }
  SymExpr fast = SymExpr::make(std::move(out));
  return any_slow ? add(fast, slow_acc) : fast;
}

SymExpr pow_int(const SymExpr& a, int32_t k) {
  if (k == 0) return SymExpr::constant(mpq_class(1));
  if (k == 1) return a;
  if (a.is_zero()) {
    if (k < 0) throw EvalDomain("zero raised to a negative power");
    return SymExpr();
  }
  const auto& t = a.terms();
  if (t.size() == 1) {
    mpq_class c;
    int32_t kk = k;
    if (kk < 0 && t[0].coeff == 0) throw EvalDomain("inverse of zero");
    mpz_pow_ui(c.get_num_mpz_t(), t[0].coeff.get_num_mpz_t(), std::abs(kk));
    mpz_pow_ui(c.get_den_mpz_t(), t[0].coeff.get_den_mpz_t(), std::abs(kk));
    c.canonicalize();
    if (kk < 0) c = 1 / c;
    std::vector<std::pair<AtomId, int32_t>> pw = t[0].pw;
    for (auto& [id, e] : pw) e *= kk;
    return term_to_expr(c, pw);
  }
  if (k < 0) return recip(pow_int(a, -k));
  SymExpr acc = SymExpr::constant(mpq_class(1));
  SymExpr base = a;
  uint32_t n = static_cast<uint32_t>(k);
  while (n) {
    if (n & 1) acc = mul(acc, base);
    n >>= 1;
    if (n) base = mul(base, base);
  }
  return acc;
}

SymExpr div(const SymExpr& a, const SymExpr& b) {
  if (b.is_zero()) throw EvalDomain("division by zero expression");
  if (a.is_zero()) return SymExpr();
  const auto& tb = b.terms();
  if (tb.size() == 1) {
    // invert the monomial directly: coeff^-1, exponents negated
    mpq_class c = 1 / tb[0].coeff;
    std::vector<std::pair<AtomId, int32_t>> pw = tb[0].pw;
    for (auto& [id, e] : pw) e = -e;
    return mul(a, term_to_expr(c, pw));
  }
  return mul(a, kernel(AtomKind::Recip, b));
}

SymExpr kernel(AtomKind k, const SymExpr& arg) {
  if (auto c = arg.as_constant()) {
    const mpq_class& q = *c;
    switch (k) {
      case AtomKind::Recip:
        if (q == 0) throw EvalDomain("recip of zero");
        return SymExpr::constant(mpq_class(1 / q));
      case AtomKind::Sqrt: {
        if (q < 0) throw EvalDomain("sqrt of negative constant");
        if (q == 0) return SymExpr();
        mpz_class n = q.get_num(), d = q.get_den();
        if (mpz_perfect_square_p(n.get_mpz_t()) && mpz_perfect_square_p(d.get_mpz_t())) {
          mpz_class rn, rd;
          mpz_sqrt(rn.get_mpz_t(), n.get_mpz_t());
          mpz_sqrt(rd.get_mpz_t(), d.get_mpz_t());
          return SymExpr::constant(mpq_class(rn, rd));
        }
        break;
      }
      case AtomKind::Sin:
        if (q == 0) return SymExpr();
        break;
      case AtomKind::Cos:
        if (q == 0) return SymExpr::constant(mpq_class(1));
        break;
      case AtomKind::Exp:
        if (q == 0) return SymExpr::constant(mpq_class(1));
        break;
      case AtomKind::Log:
        if (q <= 0) throw EvalDomain("log of non-positive constant");
        if (q == 1) return SymExpr();
        break;
      default: break;
    }
  }
  return SymExpr::from_atom(AtomTable::instance().kernel(k, arg));
}

// ---------------------------------------------------------------------------
// traversal helpers

void SymExpr::collect_vars(std::vector<AtomId>& out) const {
  for (const auto& t : terms()) {
    for (auto& [id, e] : t.pw) {
      const AtomData& d = AtomTable::instance().data(id);
      if (d.kind == AtomKind::Var) out.push_back(id);
      else if (d.kind != AtomKind::NodeRef) d.arg->collect_vars(out);
    }
  }
}

bool SymExpr::references_node_refs() const {
  for (const auto& t : terms())
    for (auto& [id, e] : t.pw) {
      const AtomData& d = AtomTable::instance().data(id);
      if (d.kind == AtomKind::NodeRef) return true;
      if (d.kind != AtomKind::Var && d.arg->references_node_refs()) return true;
    }
  return false;
}

// ---------------------------------------------------------------------------
// serialization

const std::string& Renamer::name_for(AtomId id) {
  auto it = names.find(id);
  if (it != names.end()) return it->second;
  return names.emplace(id, "v" + std::to_string(next++)).first->second;
}

namespace {
void serialize_atom(std::string& out, AtomId id, Renamer* r) {
  const AtomData& d = AtomTable::instance().data(id);
  switch (d.kind) {
    case AtomKind::Var: out += r ? r->name_for(id) : d.name; break;
    case AtomKind::NodeRef: {
      char buf[32];
      std::snprintf(buf, sizeof buf, "@%llx", (unsigned long long)d.node_key);
      out += buf;
      break;
    }
    default:
      out += kernel_name(d.kind);
      out += '(';
      out += d.arg->serialize(r);
      out += ')';
  }
}

// Term order for digests: exponent pattern and coefficient first so that the
// order survives variable renaming; atom ids only break ties.
std::vector<size_t> digest_order(const std::vector<Term>& terms) {
  std::vector<size_t> idx(terms.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
    const Term& x = terms[a];
    const Term& y = terms[b];
    if (x.pw.size() != y.pw.size()) return x.pw.size() < y.pw.size();
    for (size_t i = 0; i < x.pw.size(); ++i)
      if (x.pw[i].second != y.pw[i].second) return x.pw[i].second < y.pw[i].second;
    if (x.coeff != y.coeff) return x.coeff < y.coeff;
    return x.pw < y.pw;
  });
  return idx;
}
}  // namespace

std::string SymExpr::serialize(Renamer* r) const {
  const auto& ts = terms();
  if (ts.empty()) return "0";
  std::string out;
  std::vector<size_t> order;
  if (r) order = digest_order(ts);
  for (size_t k = 0; k < ts.size(); ++k) {
    const Term& t = ts[r ? order[k] : k];
    if (k) out += " + ";
    out += t.coeff.get_str();
    for (auto& [id, e] : t.pw) {
      out += '*';
      serialize_atom(out, id, r);
      if (e != 1) {
        out += '^';
        out += std::to_string(e);
      }
    }
  }
  return out;
}

std::string SymExpr::str() const { return serialize(nullptr); }

// ---------------------------------------------------------------------------
// evaluation

namespace {
double eval_atom_double(AtomId id, const std::unordered_map<AtomId, double>& env,
                        const NodeContext* ctx);

double kernel_double(const AtomData& d, const std::unordered_map<AtomId, double>& env,
                     const NodeContext* ctx) {
  double v = d.arg->eval_double(env, ctx);
  switch (d.kind) {
    case AtomKind::Recip:
      if (v == 0.0) throw EvalDomain("recip(0)");
      return 1.0 / v;
    case AtomKind::Sqrt:
      if (v < 0.0) throw EvalDomain("sqrt of negative");
      return std::sqrt(v);
    case AtomKind::Sin: return std::sin(v);
    case AtomKind::Cos: return std::cos(v);
    case AtomKind::Exp: return std::exp(v);
    case AtomKind::Log:
      if (v <= 0.0) throw EvalDomain("log of non-positive");
      return std::log(v);
    default: throw Error("kernel_double: bad kind");
  }
}

double eval_atom_double(AtomId id, const std::unordered_map<AtomId, double>& env,
                        const NodeContext* ctx) {
  const AtomData& d = AtomTable::instance().data(id);
  if (d.kind == AtomKind::Var) {
    auto it = env.find(id);
    if (it == env.end()) throw EvalDomain("unbound variable " + d.name);
    return it->second;
  }
  if (d.kind == AtomKind::NodeRef) {
    if (!ctx) throw Error("NodeRef evaluation without context");
    std::unordered_map<AtomId, __float128> qenv;
    for (auto& [k, v] : env) qenv.emplace(k, static_cast<__float128>(v));
    return static_cast<double>(ctx->node_quad(d.node_key, qenv));
  }
  return kernel_double(d, env, ctx);
}
}  // namespace

double SymExpr::eval_double(const std::unordered_map<AtomId, double>& env,
                            const NodeContext* ctx) const {
  double acc = 0.0;
  for (const auto& t : terms()) {
    double v = static_cast<double>(rational_to_quad(t.coeff));
    for (auto& [id, e] : t.pw) {
      double av = eval_atom_double(id, env, ctx);
      if (av == 0.0 && e < 0) throw EvalDomain("zero to negative power");
      v *= std::pow(av, static_cast<double>(e));
    }
    acc += v;
  }
  return acc;
}

namespace {
__float128 eval_atom_quad(AtomId id, const std::unordered_map<AtomId, __float128>& env,
                          const NodeContext* ctx) {
  const AtomData& d = AtomTable::instance().data(id);
  if (d.kind == AtomKind::Var) {
    auto it = env.find(id);
    if (it == env.end()) throw EvalDomain("unbound variable " + d.name);
    return it->second;
  }
  if (d.kind == AtomKind::NodeRef) {
    if (!ctx) throw Error("NodeRef evaluation without context");
    return ctx->node_quad(d.node_key, env);
  }
  __float128 v = d.arg->eval_quad(env, ctx);
  switch (d.kind) {
    case AtomKind::Recip:
      if (v == 0) throw EvalDomain("recip(0)");
      return 1 / v;
    case AtomKind::Sqrt:
      if (v < 0) throw EvalDomain("sqrt of negative");
      return sqrtq(v);
    case AtomKind::Sin: return sinq(v);
    case AtomKind::Cos: return cosq(v);
    case AtomKind::Exp: return expq(v);
    case AtomKind::Log:
      if (v <= 0) throw EvalDomain("log of non-positive");
      return logq(v);
    default: throw Error("eval_atom_quad: bad kind");
  }
}

__float128 ipow_quad(__float128 base, int32_t e) {
  if (e < 0) {
    if (base == 0) throw EvalDomain("zero to negative power");
    return 1 / ipow_quad(base, -e);
  }
  __float128 acc = 1;
  while (e) {
    if (e & 1) acc *= base;
    base *= base;
    e >>= 1;
  }
  return acc;
}
}  // namespace

__float128 SymExpr::eval_quad(const std::unordered_map<AtomId, __float128>& env,
                              const NodeContext* ctx) const {
  __float128 acc = 0;
  for (const auto& t : terms()) {
    __float128 v = rational_to_quad(t.coeff);
    for (auto& [id, e] : t.pw) v *= ipow_quad(eval_atom_quad(id, env, ctx), e);
    acc += v;
  }
  return acc;
}

namespace {
Interval eval_atom_interval(AtomId id, const std::unordered_map<AtomId, Interval>& env,
                            const NodeContext* ctx) {
  const AtomData& d = AtomTable::instance().data(id);
  if (d.kind == AtomKind::Var) {
    auto it = env.find(id);
    if (it == env.end()) throw EvalDomain("unbound variable " + d.name);
    return it->second;
  }
  if (d.kind == AtomKind::NodeRef) {
    if (!ctx) throw Error("NodeRef evaluation without context");
    return ctx->node_interval(d.node_key, env);
  }
  Interval v = d.arg->eval_interval(env, ctx);
  switch (d.kind) {
    case AtomKind::Recip: return iv_div(Interval(1.0, 1.0), v);
    case AtomKind::Sqrt: return iv_sqrt(v);
    case AtomKind::Sin: return iv_sin(v);
    case AtomKind::Cos: return iv_cos(v);
    case AtomKind::Exp: return iv_exp(v);
    case AtomKind::Log: return iv_log(v);
    default: throw Error("eval_atom_interval: bad kind");
  }
}
}  // namespace

Interval SymExpr::eval_interval(const std::unordered_map<AtomId, Interval>& env,
                                const NodeContext* ctx) const {
  Interval acc(0.0, 0.0);
  for (const auto& t : terms()) {
    Interval v(t.coeff_lo, t.coeff_hi);
    for (auto& [id, e] : t.pw)
      v = iv_mul(v, iv_pow_int(eval_atom_interval(id, env, ctx), e));
    acc = iv_add(acc, v);
  }
  return acc;
}

// ---------------------------------------------------------------------------
// op_count

namespace {
void collect_kernels(const SymExpr& e, std::set<AtomId>& out) {
  for (const auto& t : e.terms())
    for (auto& [id, ex] : t.pw) {
      const AtomData& d = AtomTable::instance().data(id);
      if (d.kind != AtomKind::Var && d.kind != AtomKind::NodeRef && out.insert(id).second)
        collect_kernels(*d.arg, out);
    }
}
}  // namespace

int64_t op_count(const SymExpr& e, const NodeContext* ctx) {
  const auto& ts = e.terms();
  if (ts.empty()) return 0;
  int64_t ops = static_cast<int64_t>(ts.size()) - 1;  // adds
  for (const auto& t : ts) {
    int64_t factors = static_cast<int64_t>(t.pw.size());
    if (t.coeff != 1 && t.coeff != -1) ++factors;
    if (factors > 0) ops += factors - 1;
    for (auto& [id, ex] : t.pw) {
      if (ex >= 2 || ex <= -2) ++ops;  // one pow op
      const AtomData& d = AtomTable::instance().data(id);
      if (d.kind == AtomKind::NodeRef && ctx) ops += ctx->node_op_count(d.node_key);
    }
  }
  std::set<AtomId> kernels;
  collect_kernels(e, kernels);
  for (AtomId id : kernels) {
    const AtomData& d = AtomTable::instance().data(id);
    ops += 1 + op_count(*d.arg, ctx);
  }
  return ops;
}

// ---------------------------------------------------------------------------
// substitution

namespace {
bool mentions_any(const SymExpr& e, const std::unordered_map<AtomId, SymExpr>& b) {
  for (const auto& t : e.terms())
    for (auto& [id, ex] : t.pw) {
      if (b.count(id)) return true;
      const AtomData& d = AtomTable::instance().data(id);
      if (d.kind != AtomKind::Var && d.kind != AtomKind::NodeRef && mentions_any(*d.arg, b))
        return true;
    }
  return false;
}
}  // namespace

SymExpr substitute(const SymExpr& e, const std::unordered_map<AtomId, SymExpr>& bindings) {
  if (!mentions_any(e, bindings)) return e;
  SymExpr acc;
  for (const auto& t : e.terms()) {
    SymExpr v = SymExpr::constant(t.coeff);
    for (auto& [id, ex] : t.pw) {
      auto it = bindings.find(id);
      SymExpr factor;
      if (it != bindings.end()) {
        factor = pow_int(it->second, ex);
      } else {
        const AtomData& d = AtomTable::instance().data(id);
        if (d.kind != AtomKind::Var && d.kind != AtomKind::NodeRef &&
            mentions_any(*d.arg, bindings)) {
          SymExpr newarg = substitute(*d.arg, bindings);
          SymExpr k = d.kind == AtomKind::Recip ? recip(newarg) : kernel(d.kind, newarg);
          factor = pow_int(k, ex);
        } else {
          factor = SymExpr::from_atom(id, ex);
        }
      }
      v = mul(v, factor);
    }
    acc = add(acc, v);
  }
  return acc;
}

// ---------------------------------------------------------------------------
// primitive derivatives

SymExpr diff_primitive(OpKind op, int which, const std::vector<SymExpr>& args, long pow_exp) {
  auto one = [] { return SymExpr::constant(mpq_class(1)); };
  switch (op) {
    case OpKind::Add: return one();
    case OpKind::Sub: return which == 0 ? one() : SymExpr::constant(mpq_class(-1));
    case OpKind::Mul: return args.at(1 - which);
    case OpKind::Div:
      if (which == 0) return recip(args.at(1));
      return neg(div(args.at(0), pow_int(args.at(1), 2)));
    case OpKind::Neg: return SymExpr::constant(mpq_class(-1));
    case OpKind::Sqrt: return recip(mul(SymExpr::constant(mpq_class(2)), kernel(AtomKind::Sqrt, args.at(0))));
    case OpKind::Sin: return kernel(AtomKind::Cos, args.at(0));
    case OpKind::Cos: return neg(kernel(AtomKind::Sin, args.at(0)));
    case OpKind::Exp: return kernel(AtomKind::Exp, args.at(0));
    case OpKind::Log: return recip(args.at(0));
    case OpKind::PowInt:
      return mul(SymExpr::constant(mpq_class(pow_exp)),
                 pow_int(args.at(0), static_cast<int32_t>(pow_exp - 1)));
    case OpKind::Select:
      throw NonDifferentiable("select nodes have guarded, not symbolic, derivatives");
    default: throw Error("diff_primitive: leaf op");
  }
}

// ---------------------------------------------------------------------------
// point evaluation with per-primitive rounding

namespace {
double working_atom(AtomId id, const std::unordered_map<AtomId, double>& point, Precision prec,
                    const NodeContext* ctx);

double working_eval(const SymExpr& e, const std::unordered_map<AtomId, double>& point,
                    Precision prec, const NodeContext* ctx) {
  const auto& ts = e.terms();
  if (ts.empty()) return 0.0;
  bool first_term = true;
  double acc = 0.0;
  for (const auto& t : ts) {
    bool coeff_is_unit = (t.coeff == 1);
    double v = coeff_is_unit && !t.pw.empty()
                   ? 1.0
                   : static_cast<double>(rational_to_quad(t.coeff));
    bool have = !coeff_is_unit || t.pw.empty();
    for (auto& [id, ex] : t.pw) {
      double av = working_atom(id, point, prec, ctx);
      int32_t mag = std::abs(ex);
      double f = av;
      if (mag >= 2) f = round_to(std::pow(av, static_cast<double>(mag)), prec);
      if (!have) {
        v = (ex < 0) ? round_to(1.0 / f, prec) : f;
        have = true;
      } else {
        if (ex < 0) {
          if (f == 0.0) throw EvalDomain("division by zero");
          v = round_to(v / f, prec);
        } else {
          v = round_to(v * f, prec);
        }
      }
    }
    acc = first_term ? v : round_to(acc + v, prec);
    first_term = false;
  }
  return acc;
}

double working_atom(AtomId id, const std::unordered_map<AtomId, double>& point, Precision prec,
                    const NodeContext* ctx) {
  const AtomData& d = AtomTable::instance().data(id);
  if (d.kind == AtomKind::Var) {
    auto it = point.find(id);
    if (it == point.end()) throw EvalDomain("unbound variable " + d.name);
    return it->second;
  }
  if (d.kind == AtomKind::NodeRef) {
    std::unordered_map<AtomId, double> denv = point;
    return eval_atom_double(id, denv, ctx);
  }
  double v = working_eval(*d.arg, point, prec, ctx);
  switch (d.kind) {
    case AtomKind::Recip:
      if (v == 0.0) throw EvalDomain("recip(0)");
      return round_to(1.0 / v, prec);
    case AtomKind::Sqrt:
      if (v < 0.0) throw EvalDomain("sqrt of negative");
      return round_to(std::sqrt(v), prec);
    case AtomKind::Sin: return round_to(std::sin(v), prec);
    case AtomKind::Cos: return round_to(std::cos(v), prec);
    case AtomKind::Exp: return round_to(std::exp(v), prec);
    case AtomKind::Log:
      if (v <= 0.0) throw EvalDomain("log of non-positive");
      return round_to(std::log(v), prec);
    default: throw Error("working_atom: bad kind");
  }
}
}  // namespace

double eval_point(const SymExpr& e, const std::unordered_map<AtomId, double>& point,
                  EvalMode mode, Precision prec, const NodeContext* ctx) {
  if (mode == EvalMode::Working) return working_eval(e, point, prec, ctx);
  std::unordered_map<AtomId, __float128> qenv;
  qenv.reserve(point.size());
  for (auto& [k, v] : point) qenv.emplace(k, static_cast<__float128>(v));
  return static_cast<double>(e.eval_quad(qenv, ctx));
}

}  // namespace fperr::sym
