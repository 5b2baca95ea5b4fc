#include "fperr/gopt.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <fstream>
#include <limits>
#include <queue>
#include <thread>

#include "fperr/digest.hpp"

namespace fperr::gopt {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kSingularWidth = 1e-12;
}  // namespace

std::unordered_map<sym::AtomId, Interval> Box::env() const {
  std::unordered_map<sym::AtomId, Interval> e;
  e.reserve(vars.size());
  for (size_t i = 0; i < vars.size(); ++i) e.emplace(vars[i], iv[i]);
  return e;
}

Box Box::of(std::initializer_list<std::pair<std::string, Interval>> doms) {
  Box b;
  for (auto& [name, i] : doms) {
    b.vars.push_back(sym::AtomTable::instance().var(name));
    b.iv.push_back(i);
  }
  return b;
}

Objective Objective::leaf(sym::SymExpr e, double w, bool abs) {
  Objective o;
  o.kind = Kind::Leaf;
  o.expr = std::move(e);
  o.weight = w;
  o.absolute = abs;
  return o;
}

Objective Objective::sum(std::vector<Objective> kids) {
  Objective o;
  o.kind = Kind::Sum;
  o.kids = std::move(kids);
  return o;
}

Objective Objective::max_of(std::vector<Objective> kids) {
  Objective o;
  o.kind = Kind::Max;
  o.kids = std::move(kids);
  return o;
}

Interval Objective::eval(const std::unordered_map<sym::AtomId, Interval>& env,
                         const sym::NodeContext* ctx) const {
  switch (kind) {
    case Kind::Leaf: {
      Interval v = expr.eval_interval(env, ctx);
      if (absolute) v = iv_abs(v);
      return iv_scale(v, weight);
    }
    case Kind::Sum: {
      Interval acc(0.0, 0.0);
      for (const auto& k : kids) acc = iv_add(acc, k.eval(env, ctx));
      return acc;
    }
    case Kind::Max: {
      if (kids.empty()) return Interval(0.0, 0.0);
      Interval acc = kids[0].eval(env, ctx);
      for (size_t i = 1; i < kids.size(); ++i) acc = iv_max(acc, kids[i].eval(env, ctx));
      return acc;
    }
  }
  return Interval(0.0, 0.0);
}

std::string Objective::serialize(sym::Renamer* r) const {
  char buf[40];
  switch (kind) {
    case Kind::Leaf: {
      std::snprintf(buf, sizeof buf, "%.17g", weight);
      std::string s = absolute ? "A(" : "L(";
      s += buf;
      s += ';';
      s += expr.serialize(r);
      s += ')';
      return s;
    }
    case Kind::Sum:
    case Kind::Max: {
      std::string s = kind == Kind::Sum ? "S(" : "M(";
      for (size_t i = 0; i < kids.size(); ++i) {
        if (i) s += ';';
        s += kids[i].serialize(r);
      }
      s += ')';
      return s;
    }
  }
  return "";
}

bool Objective::cacheable() const {
  if (kind == Kind::Leaf) return !expr.references_node_refs();
  for (const auto& k : kids)
    if (!k.cacheable()) return false;
  return true;
}

int64_t Objective::ops(const sym::NodeContext* ctx) const {
  if (kind == Kind::Leaf) return sym::op_count(expr, ctx);
  int64_t acc = 0;
  for (const auto& k : kids) acc += k.ops(ctx);
  return acc;
}

void Objective::collect_vars(std::vector<sym::AtomId>& out) const {
  if (kind == Kind::Leaf) expr.collect_vars(out);
  for (const auto& k : kids) k.collect_vars(out);
}

// ---------------------------------------------------------------------------
// memo cache

MemoCache::MemoCache(std::string path) : path_(std::move(path)) {
  if (path_.empty()) return;
  std::ifstream in(path_);
  std::string line;
  while (std::getline(in, line)) {
    size_t t1 = line.find('\t');
    size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) continue;
    double up = std::strtod(line.c_str() + t1 + 1, nullptr);
    double lo = std::strtod(line.c_str() + t2 + 1, nullptr);
    map_.emplace(line.substr(0, t1), std::make_pair(up, lo));
  }
}

std::optional<std::pair<double, double>> MemoCache::lookup(const std::string& digest) {
  std::lock_guard lk(mu_);
  auto it = map_.find(digest);
  if (it == map_.end()) return std::nullopt;
  ++hits_;
  return it->second;
}

void MemoCache::store(const std::string& digest, double upper, double lower) {
  std::lock_guard lk(mu_);
  auto [it, inserted] = map_.emplace(digest, std::make_pair(upper, lower));
  if (inserted && !path_.empty()) {
    std::ofstream out(path_, std::ios::app);
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s\t%.17g\t%.17g\n", digest.c_str(), upper, lower);
    out << buf;
  }
}

std::string query_signature(const Objective& obj, const Box& domain,
                            const std::string& guard_key) {
  sym::Renamer renamer;
  std::string payload = obj.serialize(&renamer);
  payload += '|';
  // domains permuted to match the renamed variable order; variables of the
  // box that the objective never mentions still shape the search space, so
  // they are appended afterwards in renamed form as well.
  std::vector<std::pair<std::string, Interval>> doms;
  for (size_t i = 0; i < domain.vars.size(); ++i) {
    auto it = renamer.names.find(domain.vars[i]);
    std::string nm = it != renamer.names.end() ? it->second : std::string();
    if (!nm.empty()) doms.emplace_back(nm, domain.iv[i]);
  }
  std::sort(doms.begin(), doms.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  char buf[96];
  for (auto& [nm, iv] : doms) {
    std::snprintf(buf, sizeof buf, "%s:[%.17g,%.17g];", nm.c_str(), iv.lo, iv.hi);
    payload += buf;
  }
  payload += '|';
  payload += guard_key;
  return md5_hex(payload);
}

// ---------------------------------------------------------------------------
// branch and bound

namespace {

struct Item {
  std::vector<Interval> iv;
  double ub;
  int depth;
  uint64_t seq;
};

struct ItemOrder {
  bool operator()(const Item& a, const Item& b) const {
    if (a.ub != b.ub) return a.ub < b.ub;  // max-heap on upper bound
    return a.seq > b.seq;                  // then FIFO for determinism
  }
};

struct Search {
  Search(const Objective& o, const Box& d, const OptConfig& c, const GuardFn* g,
         const sym::NodeContext* x)
      : obj(o), domain(d), cfg(c), guard(g), ctx(x) {}

  const Objective& obj;
  const Box& domain;
  const OptConfig& cfg;
  const GuardFn* guard;
  const sym::NodeContext* ctx;

  std::mutex mu;
  std::condition_variable cv;
  std::priority_queue<Item, std::vector<Item>, ItemOrder> heap;
  int active = 0;
  bool stop = false;
  uint64_t seq = 0;
  long splits = 0;
  long queries = 0;
  double best_lo = -kInf;
  double retired_ub = -kInf;
  double final_top = -kInf;
  OptStatus status = OptStatus::Converged;
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

  bool gap_ok(double ub, double lo) const {
    if (lo == -kInf) return false;
    double gap = ub - lo;
    if (gap <= 0) return true;
    return gap <= cfg.tolerance * std::max(std::abs(ub), std::abs(lo));
  }

  bool out_of_budget() {
    if (splits > cfg.max_subdivisions) return true;
    auto dt = std::chrono::steady_clock::now() - t0;
    return std::chrono::duration<double>(dt).count() > cfg.timeout_seconds;
  }

  std::unordered_map<sym::AtomId, Interval> env_of(const std::vector<Interval>& iv) const {
    std::unordered_map<sym::AtomId, Interval> e;
    e.reserve(iv.size());
    for (size_t i = 0; i < iv.size(); ++i) e.emplace(domain.vars[i], iv[i]);
    return e;
  }

  // Evaluates a box and pushes it; splits on a domain violation until the
  // violating region is narrower than kSingularWidth, then reports.
  void push_box(std::vector<Interval> iv, int depth) {
    auto env = env_of(iv);
    if (guard && cfg.constraint_mode == ConstraintMode::Prune) {
      if ((*guard)(env) == Certainty::False) return;
    }
    Interval v;
    try {
      ++queries;
      v = obj.eval(env, ctx);
    } catch (const DomainViolation& e) {
      double w = 0;
      size_t axis = 0;
      for (size_t i = 0; i < iv.size(); ++i)
        if (iv_width(iv[i]) > w) { w = iv_width(iv[i]); axis = i; }
      if (w <= kSingularWidth) {
        status = OptStatus::DomainViolation;
        stop = true;
        return;
      }
      auto [a, b] = iv_split(iv[axis]);
      ++splits;
      std::vector<Interval> left = iv, right = std::move(iv);
      left[axis] = a;
      right[axis] = b;
      push_box(std::move(left), depth + 1);
      if (!stop) push_box(std::move(right), depth + 1);
      return;
    } catch (const EvalDomain& e) {
      status = OptStatus::DomainViolation;
      stop = true;
      return;
    }
    if (v.hi <= best_lo) return;  // cannot contain the maximum
    heap.push(Item{std::move(iv), v.hi, depth, seq++});
  }

  void sample_point(const std::vector<Interval>& pt) {
    auto env = env_of(pt);
    if (guard && cfg.constraint_mode == ConstraintMode::Prune) {
      if ((*guard)(env) != Certainty::True) return;
    }
    try {
      Interval v = obj.eval(env, ctx);
      best_lo = std::max(best_lo, v.lo);
    } catch (const Error&) {
      // singular sample point; ignore
    }
  }

  // Local candidates certifying lower bounds: the midpoint and the two
  // extreme corners (monotone objectives peak at a corner). In prune mode a
  // point counts only when it certainly satisfies the guard.
  void sample(const std::vector<Interval>& iv) {
    std::vector<Interval> pt(iv.size());
    for (size_t i = 0; i < iv.size(); ++i) {
      double m = iv[i].lo + 0.5 * (iv[i].hi - iv[i].lo);
      pt[i] = Interval::point(std::clamp(m, iv[i].lo, iv[i].hi));
    }
    sample_point(pt);
    bool degenerate = true;
    for (const auto& v : iv) degenerate &= v.degenerate();
    if (degenerate) return;
    for (size_t i = 0; i < iv.size(); ++i) pt[i] = Interval::point(iv[i].lo);
    sample_point(pt);
    for (size_t i = 0; i < iv.size(); ++i) pt[i] = Interval::point(iv[i].hi);
    sample_point(pt);
  }

  void worker() {
    std::unique_lock lk(mu);
    for (;;) {
      cv.wait(lk, [&] { return stop || !heap.empty() || active == 0; });
      if (stop) return;
      if (heap.empty()) {
        if (active == 0) return;
        continue;
      }
      Item it = heap.top();
      heap.pop();
      if (it.ub <= best_lo) continue;  // pruned late
      if (gap_ok(it.ub, best_lo)) {
        final_top = std::max(final_top, it.ub);
        stop = true;
        status = OptStatus::Converged;
        cv.notify_all();
        return;
      }
      if (out_of_budget()) {
        final_top = std::max(final_top, it.ub);
        stop = true;
        status = OptStatus::BudgetExhausted;
        cv.notify_all();
        return;
      }
      ++active;
      lk.unlock();

      // process outside the lock: sample + split
      size_t axis = 0;
      double w = 0;
      for (size_t i = 0; i < it.iv.size(); ++i) {
        double wi = iv_width(it.iv[i]);
        if (wi > w) { w = wi; axis = i; }
      }
      std::vector<Interval> a_iv, b_iv;
      bool splittable = w > 0 && it.iv.size() > 0;
      if (splittable) {
        auto [a, b] = iv_split(it.iv[axis]);
        a_iv = it.iv;
        a_iv[axis] = a;
        b_iv = std::move(it.iv);
        b_iv[axis] = b;
      }

      lk.lock();
      sample(splittable ? a_iv : it.iv);
      if (splittable) sample(b_iv);
      if (!splittable) {
        // a point box: its bound is final
        retired_ub = std::max(retired_ub, it.ub);
      } else if (!stop) {
        ++splits;
        push_box(std::move(a_iv), it.depth + 1);
        if (!stop) push_box(std::move(b_iv), it.depth + 1);
      }
      --active;
      cv.notify_all();
    }
  }

  OptResult run() {
    {
      std::lock_guard lk(mu);
      std::vector<Interval> root = domain.iv;
      sample(root);
      push_box(std::move(root), 0);
      if (heap.empty() && status != OptStatus::DomainViolation && best_lo == -kInf) {
        // everything pruned: bound by the certified floor
        best_lo = -kInf;
      }
    }
    int n = std::max(1, cfg.workers);
    if (n == 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      pool.reserve(n);
      for (int i = 0; i < n; ++i) pool.emplace_back([this] { worker(); });
      for (auto& t : pool) t.join();
    }
    std::lock_guard lk(mu);
    if (status == OptStatus::DomainViolation) {
      // no sound finite bound exists on this domain; report rather than widen
      OptResult r;
      r.upper_bound = kInf;
      r.certified_lower = best_lo == -kInf ? 0.0 : best_lo;
      r.queries = queries;
      r.status = OptStatus::DomainViolation;
      return r;
    }
    double top = final_top;
    if (!heap.empty()) top = std::max(top, heap.top().ub);
    top = std::max(top, retired_ub);
    double up = std::max(top, best_lo);
    double lo = best_lo;
    if (lo == -kInf) {
      // no certified sample (e.g. fully pruned guard): fall back to the bound
      lo = up == -kInf ? 0.0 : up;
      if (up == -kInf) up = 0.0;
    }
    OptResult r;
    r.upper_bound = up;
    r.certified_lower = std::min(lo, up);
    r.queries = queries;
    r.cache_hits = 0;
    r.status = status;
    return r;
  }
};

}  // namespace

OptResult maximize_upper(const Objective& obj, const Box& domain, const OptConfig& cfg,
                         const GuardFn* guard, const std::string& guard_key, MemoCache* cache,
                         const sym::NodeContext* ctx) {
  std::string digest;
  if (cache && obj.cacheable()) {
    digest = query_signature(obj, domain, guard_key);
    if (auto hit = cache->lookup(digest)) {
      OptResult r;
      r.upper_bound = hit->first;
      r.certified_lower = hit->second;
      r.queries = 0;
      r.cache_hits = 1;
      r.status = OptStatus::Converged;
      return r;
    }
  }
  Search s{obj, domain, cfg, guard, ctx};
  OptResult r = s.run();
  if (cache && !digest.empty() && r.status != OptStatus::DomainViolation)
    cache->store(digest, r.upper_bound, r.certified_lower);
  return r;
}

OptResult maximize_upper(const sym::SymExpr& e, const Box& domain, const OptConfig& cfg,
                         MemoCache* cache, const sym::NodeContext* ctx) {
  return maximize_upper(Objective::leaf(e), domain, cfg, nullptr, "", cache, ctx);
}

Interval range(const sym::SymExpr& e, const Box& domain, const OptConfig& cfg, MemoCache* cache,
               const sym::NodeContext* ctx) {
  OptResult up = maximize_upper(Objective::leaf(e), domain, cfg, nullptr, "", cache, ctx);
  OptResult dn = maximize_upper(Objective::leaf(e, -1.0), domain, cfg, nullptr, "", cache, ctx);
  if (up.status == OptStatus::DomainViolation || dn.status == OptStatus::DomainViolation)
    throw DomainViolation("range query hit a singular operation on the live domain");
  return Interval(-dn.upper_bound, up.upper_bound);
}

double min_abs_lower(const sym::SymExpr& e, const Box& domain, const OptConfig& cfg,
                     MemoCache* cache, const sym::NodeContext* ctx) {
  OptResult r =
      maximize_upper(Objective::leaf(e, -1.0, /*abs=*/true), domain, cfg, nullptr, "", cache, ctx);
  if (r.status == OptStatus::DomainViolation)
    throw DomainViolation("min-abs query hit a singular operation on the live domain");
  return std::max(0.0, -r.upper_bound);
}

}  // namespace fperr::gopt
