#include "fperr/empirical.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace fperr::emp {

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

struct QuadEval {
  const Problem& p;
  const std::map<NodeId, bool>* force = nullptr;  // select -> branch (true = then)

  // exact real evaluation; select decisions by exact comparison unless forced
  bool eval(const std::vector<__float128>& inputs_by_node,
            const std::unordered_map<sym::AtomId, __float128>& var_env,
            std::vector<__float128>& out) const {
    (void)inputs_by_node;
    const auto& nodes = p.dag.nodes;
    out.assign(nodes.size(), 0);
    for (const Node& n : nodes) {
      switch (n.op) {
        case OpKind::Input:
          out[n.id] = var_env.at(sym::AtomTable::instance().var(n.var));
          break;
        case OpKind::Const: out[n.id] = sym::rational_to_quad(n.cval); break;
        case OpKind::Select: {
          bool t;
          if (force && force->count(n.id)) {
            t = force->at(n.id);
          } else {
            t = pred_truth_quad(*n.guard, false, out);
          }
          out[n.id] = out[n.children[t ? 0 : 1]];
          break;
        }
        case OpKind::Add: out[n.id] = out[n.children[0]] + out[n.children[1]]; break;
        case OpKind::Sub: out[n.id] = out[n.children[0]] - out[n.children[1]]; break;
        case OpKind::Mul: out[n.id] = out[n.children[0]] * out[n.children[1]]; break;
        case OpKind::Div: {
          __float128 d = out[n.children[1]];
          if (d == 0) return false;
          out[n.id] = out[n.children[0]] / d;
          break;
        }
        case OpKind::Neg: out[n.id] = -out[n.children[0]]; break;
        case OpKind::Sqrt: {
          __float128 a = out[n.children[0]];
          if (a < 0) return false;
          out[n.id] = sqrtq(a);
          break;
        }
        case OpKind::Sin: out[n.id] = sinq(out[n.children[0]]); break;
        case OpKind::Cos: out[n.id] = cosq(out[n.children[0]]); break;
        case OpKind::Exp: out[n.id] = expq(out[n.children[0]]); break;
        case OpKind::Log: {
          __float128 a = out[n.children[0]];
          if (a <= 0) return false;
          out[n.id] = logq(a);
          break;
        }
        case OpKind::PowInt: {
          __float128 a = out[n.children[0]];
          __float128 acc = 1;
          for (long i = 0; i < std::labs(n.pow_exp); ++i) acc *= a;
          if (n.pow_exp < 0) {
            if (acc == 0) return false;
            acc = 1 / acc;
          }
          out[n.id] = acc;
          break;
        }
      }
    }
    return true;
  }

  static bool pred_truth_quad(const Predicate& pr, bool negated,
                              const std::vector<__float128>& vals) {
    switch (pr.kind) {
      case Predicate::Kind::True: return !negated;
      case Predicate::Kind::Atom: {
        __float128 l = vals[pr.lhs], r = vals[pr.rhs];
        CmpOp cmp = pr.cmp;
        if (negated) {
          switch (cmp) {
            case CmpOp::Lt: cmp = CmpOp::Ge; break;
            case CmpOp::Le: cmp = CmpOp::Gt; break;
            case CmpOp::Gt: cmp = CmpOp::Le; break;
            case CmpOp::Ge: cmp = CmpOp::Lt; break;
          }
        }
        switch (cmp) {
          case CmpOp::Lt: return l < r;
          case CmpOp::Le: return l <= r;
          case CmpOp::Gt: return l > r;
          case CmpOp::Ge: return l >= r;
        }
        return false;
      }
      case Predicate::Kind::Not: return pred_truth_quad(pr.kids[0], !negated, vals);
      case Predicate::Kind::And:
      case Predicate::Kind::Or: {
        bool is_and = (pr.kind == Predicate::Kind::And) != negated;
        for (const auto& k : pr.kids) {
          bool v = pred_truth_quad(k, negated, vals);
          if (is_and && !v) return false;
          if (!is_and && v) return true;
        }
        return is_and;
      }
    }
    return false;
  }

  static bool pred_truth_working(const Predicate& pr, bool negated,
                                 const std::vector<double>& vals) {
    switch (pr.kind) {
      case Predicate::Kind::True: return !negated;
      case Predicate::Kind::Atom: {
        double l = vals[pr.lhs], r = vals[pr.rhs];
        CmpOp cmp = pr.cmp;
        if (negated) {
          switch (cmp) {
            case CmpOp::Lt: cmp = CmpOp::Ge; break;
            case CmpOp::Le: cmp = CmpOp::Gt; break;
            case CmpOp::Gt: cmp = CmpOp::Le; break;
            case CmpOp::Ge: cmp = CmpOp::Lt; break;
          }
        }
        switch (cmp) {
          case CmpOp::Lt: return l < r;
          case CmpOp::Le: return l <= r;
          case CmpOp::Gt: return l > r;
          case CmpOp::Ge: return l >= r;
        }
        return false;
      }
      case Predicate::Kind::Not: return pred_truth_working(pr.kids[0], !negated, vals);
      case Predicate::Kind::And:
      case Predicate::Kind::Or: {
        bool is_and = (pr.kind == Predicate::Kind::And) != negated;
        for (const auto& k : pr.kids) {
          bool v = pred_truth_working(k, negated, vals);
          if (is_and && !v) return false;
          if (!is_and && v) return true;
        }
        return is_and;
      }
    }
    return false;
  }
};

// working-precision evaluation: rounds each operator result at the node's
// precision, operands first cast to the consumer precision
bool working_eval(const Problem& p, const std::unordered_map<std::string, double>& vars,
                  std::vector<double>& out, std::map<NodeId, bool>& choices) {
  const auto& nodes = p.dag.nodes;
  out.assign(nodes.size(), 0.0);
  for (const Node& n : nodes) {
    switch (n.op) {
      case OpKind::Input: {
        double v = vars.at(n.var);
        out[n.id] = p.rounded_inputs.count(n.var) ? round_to(v, n.precision) : v;
        break;
      }
      case OpKind::Const:
        out[n.id] = static_cast<double>(sym::rational_to_quad(n.cval));
        break;
      case OpKind::Select: {
        bool t = QuadEval::pred_truth_working(*n.guard, false, out);
        choices[n.id] = t;
        out[n.id] = round_to(out[n.children[t ? 0 : 1]], n.precision);
        break;
      }
      default: {
        double a = round_to(out[n.children[0]], n.precision);
        double b = n.value_arity() > 1 ? round_to(out[n.children[1]], n.precision) : 0.0;
        double r;
        switch (n.op) {
          case OpKind::Add: r = a + b; break;
          case OpKind::Sub: r = a - b; break;
          case OpKind::Mul: r = a * b; break;
          case OpKind::Div:
            if (b == 0.0) return false;
            r = a / b;
            break;
          case OpKind::Neg: r = -a; break;
          case OpKind::Sqrt:
            if (a < 0.0) return false;
            r = std::sqrt(a);
            break;
          case OpKind::Sin: r = std::sin(a); break;
          case OpKind::Cos: r = std::cos(a); break;
          case OpKind::Exp: r = std::exp(a); break;
          case OpKind::Log:
            if (a <= 0.0) return false;
            r = std::log(a);
            break;
          case OpKind::PowInt: {
            r = 1.0;
            for (long i = 0; i < std::labs(n.pow_exp); ++i) r *= a;
            if (n.pow_exp < 0) {
              if (r == 0.0) return false;
              r = 1.0 / r;
            }
            break;
          }
          default: r = 0.0;
        }
        out[n.id] = round_to(r, n.precision);
      }
    }
  }
  return true;
}

struct VarList {
  std::vector<std::string> names;
  std::vector<Interval> domains;
  std::vector<sym::AtomId> atoms;
};

VarList var_list(const Problem& p) {
  VarList v;
  for (auto& [name, iv] : p.input_domains) {
    v.names.push_back(name);
    v.domains.push_back(iv);
    v.atoms.push_back(sym::AtomTable::instance().var(name));
  }
  return v;
}

template <typename F>
double parallel_max(long n_samples, F&& per_sample) {
  unsigned nthreads = std::min(8u, std::max(1u, std::thread::hardware_concurrency()));
  if (n_samples < 1024) nthreads = 1;
  std::vector<double> maxima(nthreads, 0.0);
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < nthreads; ++t) {
    pool.emplace_back([&, t] {
      double m = 0.0;
      for (long i = t; i < n_samples; i += nthreads) m = std::max(m, per_sample(i));
      maxima[t] = m;
    });
  }
  for (auto& th : pool) th.join();
  return *std::max_element(maxima.begin(), maxima.end());
}

}  // namespace

double sample_uniform(uint64_t seed, uint64_t stream, double lo, double hi) {
  uint64_t x = splitmix64(seed ^ splitmix64(stream));
  double t = static_cast<double>(x >> 11) * 0x1p-53;
  return lo + t * (hi - lo);
}

double shadow_test(const Problem& p, const SampleConfig& cfg, long* skipped) {
  VarList vars = var_list(p);
  std::atomic<long> skip_count{0};

  double result = parallel_max(cfg.n_samples, [&](long i) -> double {
    std::unordered_map<std::string, double> vals;
    std::unordered_map<sym::AtomId, __float128> qenv;
    for (size_t v = 0; v < vars.names.size(); ++v) {
      double x = sample_uniform(cfg.seed, uint64_t(i) * vars.names.size() + v,
                                vars.domains[v].lo, vars.domains[v].hi);
      // exact inputs denote values of the declared type; only 'rounded'
      // inputs model an initial real-to-float rounding
      if (!p.rounded_inputs.count(vars.names[v])) {
        x = round_to(x, p.input_precisions.at(vars.names[v]));
        x = std::clamp(x, vars.domains[v].lo, vars.domains[v].hi);
      }
      vals.emplace(vars.names[v], x);
      qenv.emplace(vars.atoms[v], static_cast<__float128>(x));
    }
    std::vector<double> w;
    std::map<NodeId, bool> choices;
    if (!working_eval(p, vals, w, choices)) {
      ++skip_count;
      return 0.0;
    }
    QuadEval qe{p, nullptr};
    std::vector<__float128> q;
    if (!qe.eval({}, qenv, q)) {
      ++skip_count;
      return 0.0;
    }
    bool diverged = false;
    for (auto& [s, b] : choices) {
      bool exact = QuadEval::pred_truth_quad(*p.dag.nodes[s].guard, false, q);
      if (exact != b) diverged = true;
    }
    std::vector<__float128> q_forced;
    bool have_forced = false;
    if (diverged) {
      QuadEval qf{p, &choices};
      have_forced = qf.eval({}, qenv, q_forced);
    }
    double dev = 0.0;
    for (NodeId o : p.outputs) {
      dev = std::max(dev, std::abs(w[o] - static_cast<double>(q[o])));
      if (have_forced) dev = std::max(dev, std::abs(w[o] - static_cast<double>(q_forced[o])));
    }
    return dev;
  });
  if (skipped) *skipped = skip_count.load();
  return result;
}

namespace {

bool add_only(const Problem& p) {
  for (const Node& n : p.dag.nodes)
    if (n.op != OpKind::Add && n.op != OpKind::Input && n.op != OpKind::Const) return false;
  return true;
}

double dop_quad(const Node& n, size_t pos, const std::vector<__float128>& v, bool& ok) {
  switch (n.op) {
    case OpKind::Add: return 1.0;
    case OpKind::Sub: return pos == 0 ? 1.0 : -1.0;
    case OpKind::Mul: return static_cast<double>(v[n.children[1 - pos]]);
    case OpKind::Div: {
      __float128 b = v[n.children[1]];
      if (b == 0) { ok = false; return 0.0; }
      if (pos == 0) return static_cast<double>(1 / b);
      return static_cast<double>(-v[n.children[0]] / (b * b));
    }
    case OpKind::Neg: return -1.0;
    case OpKind::Sqrt: {
      __float128 a = v[n.children[0]];
      if (a <= 0) { ok = false; return 0.0; }
      return static_cast<double>(1 / (2 * sqrtq(a)));
    }
    case OpKind::Sin: return static_cast<double>(cosq(v[n.children[0]]));
    case OpKind::Cos: return static_cast<double>(-sinq(v[n.children[0]]));
    case OpKind::Exp: return static_cast<double>(expq(v[n.children[0]]));
    case OpKind::Log: {
      __float128 a = v[n.children[0]];
      if (a == 0) { ok = false; return 0.0; }
      return static_cast<double>(1 / a);
    }
    case OpKind::PowInt: {
      __float128 a = v[n.children[0]];
      __float128 acc = 1;
      for (long i = 0; i < n.pow_exp - 1; ++i) acc *= a;
      return static_cast<double>(static_cast<__float128>(n.pow_exp) * acc);
    }
    default: return 0.0;
  }
}

}  // namespace

double profile_error_expr(taylor::Analysis& a, const SampleConfig& cfg, long* skipped) {
  a.prepare();
  const Problem& p = a.problem();
  VarList vars = var_list(p);
  std::atomic<long> skip_count{0};
  bool fast_linear = add_only(p);
  auto multiplier = [&a](OpKind op) {
    auto it = a.config().delta_multiplier.find(op);
    return it == a.config().delta_multiplier.end() ? 1.0 : it->second;
  };

  double result = parallel_max(cfg.n_samples, [&](long i) -> double {
    std::unordered_map<sym::AtomId, __float128> qenv;
    for (size_t v = 0; v < vars.names.size(); ++v) {
      double x = sample_uniform(cfg.seed, uint64_t(i) * vars.names.size() + v,
                                vars.domains[v].lo, vars.domains[v].hi);
      if (!p.rounded_inputs.count(vars.names[v])) {
        x = round_to(x, p.input_precisions.at(vars.names[v]));
        x = std::clamp(x, vars.domains[v].lo, vars.domains[v].hi);
      }
      qenv.emplace(vars.atoms[v], static_cast<__float128>(x));
    }

    if (fast_linear) {
      // all derivatives are +1 path sums: forward accumulation is exact
      QuadEval qe{p, nullptr};
      std::vector<__float128> v;
      if (!qe.eval({}, qenv, v)) {
        ++skip_count;
        return 0.0;
      }
      std::vector<double> err(p.dag.nodes.size(), 0.0);
      double best = 0.0;
      for (const Node& n : p.dag.nodes) {
        double e = 0.0;
        if (n.op == OpKind::Add) {
          for (size_t k = 0; k < 2; ++k) {
            e += err[n.children[k]];
            double cast = k < n.cast_bounds.size() ? n.cast_bounds[k] : 0.0;
            if (cast > 0) e += std::abs(static_cast<double>(v[n.children[k]])) * cast;
          }
          e += std::abs(static_cast<double>(v[n.id])) * n.delta_bound;
        } else if (n.op == OpKind::Input) {
          if (p.rounded_inputs.count(n.var))
            e = std::abs(static_cast<double>(v[n.id])) * n.delta_bound;
          auto fv = p.free_var_meta.find(n.var);
          if (fv != p.free_var_meta.end()) e = fv->second.error_bound;
        }
        err[n.id] = e;
      }
      for (NodeId o : p.outputs) best = std::max(best, err[o]);
      return best;
    }

    // branch decisions by the weakened guards; gray selects enumerate both
    std::map<NodeId, bool> choice;
    std::vector<NodeId> gray;
    for (NodeId s : a.selects()) {
      bool t = a.lit_truth(s, true, qenv);
      bool e = a.lit_truth(s, false, qenv);
      if (t && e) gray.push_back(s);
      else if (t) choice[s] = true;
      else if (e) choice[s] = false;
      else {
        ++skip_count;  // impossible after weakening; counted if it happens
        return 0.0;
      }
    }
    if (gray.size() > 10) gray.resize(10);

    double best = 0.0;
    for (size_t combo = 0; combo < (size_t(1) << gray.size()); ++combo) {
      std::map<NodeId, bool> full = choice;
      for (size_t g = 0; g < gray.size(); ++g) full[gray[g]] = (combo >> g) & 1;
      QuadEval qe{p, &full};
      std::vector<__float128> v;
      if (!qe.eval({}, qenv, v)) continue;

      for (NodeId o : p.outputs) {
        // adjoint sweep from this output
        std::vector<double> adj(p.dag.nodes.size(), 0.0);
        adj[o] = 1.0;
        double total = 0.0;
        std::map<std::string, double> var_adj;
        bool ok = true;
        for (NodeId id = o + 1; id-- > 0 && ok;) {
          const Node& n = p.dag.nodes[id];
          double ad = adj[id];
          if (ad == 0.0) continue;
          switch (n.op) {
            case OpKind::Input: {
              if (p.rounded_inputs.count(n.var) || p.free_var_meta.count(n.var))
                var_adj[n.var] += ad;
              break;
            }
            case OpKind::Const: break;
            case OpKind::Select: {
              bool t = full.at(id);
              NodeId c = n.children[t ? 0 : 1];
              adj[c] += ad;
              double cast = (t ? 0 : 1) < n.cast_bounds.size() ? n.cast_bounds[t ? 0 : 1] : 0.0;
              if (cast > 0) total += std::abs(ad * static_cast<double>(v[c])) * cast;
              break;
            }
            default: {
              total += std::abs(ad * static_cast<double>(v[id])) * n.delta_bound * multiplier(n.op);
              for (size_t pos = 0; pos < n.value_arity(); ++pos) {
                double d = dop_quad(n, pos, v, ok);
                NodeId c = n.children[pos];
                adj[c] += ad * d;
                double cast = pos < n.cast_bounds.size() ? n.cast_bounds[pos] : 0.0;
                if (cast > 0) total += std::abs(ad * d * static_cast<double>(v[c])) * cast;
              }
            }
          }
        }
        if (!ok) continue;
        for (auto& [var, vadj] : var_adj) {
          auto fv = p.free_var_meta.find(var);
          if (fv != p.free_var_meta.end()) {
            total += std::abs(vadj) * fv->second.error_bound;
          } else {
            double x = static_cast<double>(qenv.at(sym::AtomTable::instance().var(var)));
            total += std::abs(vadj * x) * unit_roundoff(p.input_precisions.at(var));
          }
        }
        best = std::max(best, total);
      }
    }
    return best;
  });
  if (skipped) *skipped = skip_count.load();
  return result;
}

EmpiricalReport check_ordering(double shadow_max, double profiled_max, double rigorous) {
  EmpiricalReport r;
  r.shadow_max = shadow_max;
  r.profiled_max = profiled_max;
  r.rigorous_bound = rigorous;
  double slack = 0x1p-50;
  r.ordering_ok = shadow_max <= profiled_max * (1.0 + slack) + 1e-300 &&
                  profiled_max <= rigorous * (1.0 + slack) + 1e-300;
  return r;
}

}  // namespace fperr::emp
