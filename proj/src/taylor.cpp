#include "fperr/taylor.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace fperr::taylor {

using gopt::Certainty;
using sym::SymExpr;

namespace {
SymExpr mul2(const SymExpr& a, const SymExpr& b) { return sym::mul(a, b); }
SymExpr add2(const SymExpr& a, const SymExpr& b) { return sym::add(a, b); }

SymExpr apply_primitive(OpKind op, const std::vector<SymExpr>& args, long pow_exp) {
  switch (op) {
    case OpKind::Add: return sym::add(args.at(0), args.at(1));
    case OpKind::Sub: return sym::sub(args.at(0), args.at(1));
    case OpKind::Mul: return sym::mul(args.at(0), args.at(1));
    case OpKind::Div: return sym::div(args.at(0), args.at(1));
    case OpKind::Neg: return sym::neg(args.at(0));
    case OpKind::Sqrt: return sym::kernel(sym::AtomKind::Sqrt, args.at(0));
    case OpKind::Sin: return sym::kernel(sym::AtomKind::Sin, args.at(0));
    case OpKind::Cos: return sym::kernel(sym::AtomKind::Cos, args.at(0));
    case OpKind::Exp: return sym::kernel(sym::AtomKind::Exp, args.at(0));
    case OpKind::Log: return sym::kernel(sym::AtomKind::Log, args.at(0));
    case OpKind::PowInt: return sym::pow_int(args.at(0), static_cast<int32_t>(pow_exp));
    default: throw Error("apply_primitive: unsupported op");
  }
}

size_t max_case_terms(const PredicatedExpr& pe) {
  size_t m = 1;
  for (auto& c : pe.cases) m = std::max(m, c.expr.term_count());
  return m;
}
}  // namespace

double BoundReport::max_bound() const {
  double m = 0.0;
  for (auto& o : outputs)
    if (o.error.empty()) m = std::max(m, o.absolute_bound);
  return m;
}

Analysis::Analysis(const Problem& p, AnalysisConfig cfg) : p_(p), cfg_(std::move(cfg)) {}

void Analysis::prepare() {
  if (prepared_) return;
  forward_symbolic();
  // weakening recurses into assemble/bound for the operand cones; the forward
  // tables are complete at this point, so re-entry must be a no-op
  prepared_ = true;
  compute_weakening();
}

// ---------------------------------------------------------------------------
// forward pass

void Analysis::forward_symbolic() {
  const auto& nodes = p_.dag.nodes;
  fwd_.assign(nodes.size(), PredicatedExpr{});
  cone_ops_.assign(nodes.size(), 0);
  for (const Node& n : nodes) {
    fwd_[n.id] = forward_node(n);
    int ops = op_arity(n.op) > 0 ? 1 : 0;
    for (NodeId c : n.children) ops += cone_ops_[c];
    cone_ops_[n.id] = ops;
    if (n.op == OpKind::Select) selects_.push_back(n.id);
  }
}

PredicatedExpr Analysis::forward_node(const Node& n) {
  switch (n.op) {
    case OpKind::Input: return PredicatedExpr::always(SymExpr::var(n.var));
    case OpKind::Const: return PredicatedExpr::always(SymExpr::constant(n.cval));
    case OpKind::Select: {
      PredicatedExpr r;
      const PredicatedExpr& t = fwd_[n.children[0]];
      const PredicatedExpr& e = fwd_[n.children[1]];
      for (const auto& c : t.cases)
        r.cases.push_back(PredCase{Guard::conj(Guard::lit(n.id, true), c.guard), c.expr});
      if (t.empty())
        r.cases.push_back(PredCase{Guard::lit(n.id, true), SymExpr()});
      for (const auto& c : e.cases)
        r.cases.push_back(PredCase{Guard::conj(Guard::lit(n.id, false), c.guard), c.expr});
      if (e.empty())
        r.cases.push_back(PredCase{Guard::lit(n.id, false), SymExpr()});
      std::erase_if(r.cases, [](const PredCase& c) { return c.expr.is_zero(); });
      r.cap_cases();
      return r;
    }
    default: {
      std::vector<const PredicatedExpr*> args;
      for (size_t i = 0; i < n.value_arity(); ++i) args.push_back(&fwd_[n.children[i]]);
      // canonicalization throttle: predict the expanded size and keep the
      // node factored past maxOpCount
      size_t est = 1;
      if (n.op == OpKind::Mul || n.op == OpKind::Div) {
        est = max_case_terms(*args[0]) * max_case_terms(*args[1]);
      } else if (n.op == OpKind::Add || n.op == OpKind::Sub) {
        est = max_case_terms(*args[0]) + max_case_terms(*args[1]);
      } else if (n.op == OpKind::PowInt) {
        double e = std::pow(static_cast<double>(max_case_terms(*args[0])),
                            static_cast<double>(std::max(1L, n.pow_exp)));
        est = e > 1e18 ? size_t(1) << 62 : static_cast<size_t>(e);
      }
      if (est > static_cast<size_t>(cfg_.max_op_count))
        return PredicatedExpr::always(SymExpr::node_ref(p_.dag.node_key(n.id)));
      long pe_exp = n.pow_exp;
      OpKind op = n.op;
      return pe_product_n(args, [op, pe_exp](const std::vector<SymExpr>& xs) {
        return apply_primitive(op, xs, pe_exp);
      });
    }
  }
}

// ---------------------------------------------------------------------------
// weakening

void Analysis::compute_weakening() {
  for (NodeId s : selects_) {  // ascending: inner selects first
    Predicate g = *p_.dag.nodes[s].guard;
    std::vector<Predicate*> atoms;
    g.collect_atoms_mut(atoms);
    for (Predicate* a : atoms) {
      double sl = node_error_bound(a->lhs);
      double sr = node_error_bound(a->rhs);
      a->weakening_slack = std::make_pair(sl, sr);
    }
    weakened_.emplace(s, std::move(g));
  }
}

// ---------------------------------------------------------------------------
// reverse pass

const Analysis::Reverse& Analysis::reverse_for(NodeId target) {
  prepare();
  auto it = reverse_.find(target);
  if (it != reverse_.end()) return it->second;

  Reverse rev;
  rev.deriv.assign(p_.dag.nodes.size(), PredicatedExpr{});
  rev.deriv[target] = PredicatedExpr::always(SymExpr::constant(mpq_class(1)));

  for (NodeId id = target + 1; id-- > 0;) {
    const PredicatedExpr& d = rev.deriv[id];
    if (d.empty()) continue;
    const Node& n = p_.dag.nodes[id];
    if (n.op == OpKind::Input || n.op == OpKind::Const) continue;
    if (n.op == OpKind::Select) {
      for (int br = 0; br < 2; ++br) {
        ++rev.edge_visits;
        PredicatedExpr contrib;
        for (const auto& c : d.cases) {
          Guard g = Guard::conj(c.guard, Guard::lit(id, br == 0));
          if (!g.is_false()) contrib.cases.push_back(PredCase{std::move(g), c.expr});
        }
        contrib.cap_cases();
        NodeId child = n.children[br];
        rev.deriv[child] = bowtie(rev.deriv[child], contrib, add2);
      }
      // guard-operand edges carry derivative 0
      for (size_t i = 2; i < n.children.size(); ++i) ++rev.edge_visits;
      continue;
    }
    std::vector<const PredicatedExpr*> args;
    for (size_t i = 0; i < n.value_arity(); ++i) args.push_back(&fwd_[n.children[i]]);
    for (size_t pos = 0; pos < n.value_arity(); ++pos) {
      ++rev.edge_visits;
      OpKind op = n.op;
      long pe_exp = n.pow_exp;
      int which = static_cast<int>(pos);
      PredicatedExpr partial = pe_product_n(args, [op, which, pe_exp](
                                                      const std::vector<SymExpr>& xs) {
        return sym::diff_primitive(op, which, xs, pe_exp);
      });
      PredicatedExpr contrib = pe_product(d, partial, mul2);
      NodeId child = n.children[pos];
      rev.deriv[child] = bowtie(rev.deriv[child], contrib, add2);
    }
  }
  return reverse_.emplace(target, std::move(rev)).first->second;
}

// ---------------------------------------------------------------------------
// assembly

ErrorAccumulator Analysis::assemble(NodeId target) {
  prepare();
  const Reverse& rev = reverse_for(target);
  ErrorAccumulator acc;
  acc.output = target;

  auto emit = [&](const PredicatedExpr& pe, double noise, NodeId source, ErrorTerm::Kind kind) {
    if (noise <= 0.0) return;
    for (const auto& c : pe.cases) {
      if (c.expr.is_zero()) continue;
      acc.terms.push_back(ErrorTerm{c.guard, c.expr, noise, source, kind});
    }
  };

  double mult_default = 1.0;
  auto noise_of = [&](const Node& n) {
    auto it = cfg_.delta_multiplier.find(n.op);
    return n.delta_bound * (it != cfg_.delta_multiplier.end() ? it->second : mult_default);
  };

  // operator rounding terms
  for (const Node& n : p_.dag.nodes) {
    if (rev.deriv[n.id].empty()) continue;
    if (n.op == OpKind::Input || n.op == OpKind::Const || n.op == OpKind::Select) continue;
    if (n.delta_bound <= 0.0) continue;
    PredicatedExpr coeff = pe_product(rev.deriv[n.id], fwd_[n.id], mul2);
    emit(coeff, noise_of(n), n.id, ErrorTerm::Kind::Rounding);
  }

  // type-cast terms, one per down-cast edge
  for (const Node& n : p_.dag.nodes) {
    if (rev.deriv[n.id].empty()) continue;
    if (n.cast_bounds.empty()) continue;
    std::vector<const PredicatedExpr*> args;
    for (size_t i = 0; i < n.value_arity(); ++i) args.push_back(&fwd_[n.children[i]]);
    for (size_t pos = 0; pos < n.value_arity(); ++pos) {
      double cast = pos < n.cast_bounds.size() ? n.cast_bounds[pos] : 0.0;
      if (cast <= 0.0) continue;
      NodeId child = n.children[pos];
      PredicatedExpr through;
      if (n.op == OpKind::Select) {
        through.cases.push_back(
            PredCase{Guard::lit(n.id, pos == 0), SymExpr::constant(mpq_class(1))});
      } else {
        OpKind op = n.op;
        long pe_exp = n.pow_exp;
        int which = static_cast<int>(pos);
        through = pe_product_n(args, [op, which, pe_exp](const std::vector<SymExpr>& xs) {
          return sym::diff_primitive(op, which, xs, pe_exp);
        });
      }
      PredicatedExpr coeff =
          pe_product(pe_product(rev.deriv[n.id], through, mul2), fwd_[child], mul2);
      emit(coeff, cast, child, ErrorTerm::Kind::Cast);
    }
  }

  // input rounding (per variable: occurrences share one noise symbol) and
  // abstracted free-variable error constants
  std::map<std::string, PredicatedExpr> var_deriv;
  std::map<std::string, NodeId> var_leaf;
  for (const Node& n : p_.dag.nodes) {
    if (n.op != OpKind::Input || rev.deriv[n.id].empty()) continue;
    bool rounded = p_.rounded_inputs.count(n.var) > 0;
    bool fv = p_.free_var_meta.count(n.var) > 0;
    if (!rounded && !fv) continue;
    auto [it, fresh] = var_deriv.try_emplace(n.var);
    it->second = bowtie(it->second, rev.deriv[n.id], add2);
    var_leaf.try_emplace(n.var, n.id);
  }
  for (auto& [var, dpe] : var_deriv) {
    auto fvit = p_.free_var_meta.find(var);
    if (fvit != p_.free_var_meta.end()) {
      emit(dpe, fvit->second.error_bound, var_leaf[var], ErrorTerm::Kind::AbstractedConstant);
    } else {
      SymExpr v = SymExpr::var(var);
      PredicatedExpr coeff = pe_map(dpe, [&](const SymExpr& e) { return sym::mul(e, v); });
      emit(coeff, unit_roundoff(p_.input_precisions.at(var)), var_leaf[var],
           ErrorTerm::Kind::Rounding);
    }
  }

  std::vector<NodeId> sel;
  for (const auto& t : acc.terms) t.guard.collect_selects(sel);
  std::sort(sel.begin(), sel.end());
  sel.erase(std::unique(sel.begin(), sel.end()), sel.end());
  acc.selects = std::move(sel);
  return acc;
}

// ---------------------------------------------------------------------------
// guard machinery

Certainty Analysis::atom_certainty(const Predicate& a, bool negated,
                                   const std::unordered_map<sym::AtomId, Interval>& env) const {
  CmpOp cmp = a.cmp;
  if (negated) {
    switch (cmp) {
      case CmpOp::Lt: cmp = CmpOp::Ge; break;
      case CmpOp::Le: cmp = CmpOp::Gt; break;
      case CmpOp::Gt: cmp = CmpOp::Le; break;
      case CmpOp::Ge: cmp = CmpOp::Lt; break;
    }
  }
  double sl = 0.0, sr = 0.0;
  if (a.weakening_slack) {
    sl = a.weakening_slack->first;
    sr = a.weakening_slack->second;
  }
  Interval L, R;
  try {
    L = node_value_interval(a.lhs, env);
    R = node_value_interval(a.rhs, env);
  } catch (const Error&) {
    return Certainty::Unknown;
  }
  // weakened comparison: lhs loosened toward satisfaction by sl, rhs by sr
  bool leish = cmp == CmpOp::Lt || cmp == CmpOp::Le;
  double lhs_hi, lhs_lo, rhs_hi, rhs_lo;
  if (leish) {
    lhs_hi = sub_ru(L.hi, sl);
    lhs_lo = sub_rd(L.lo, sl);
    rhs_lo = add_rd(R.lo, sr);
    rhs_hi = add_ru(R.hi, sr);
    bool strict = cmp == CmpOp::Lt;
    if (strict ? lhs_hi < rhs_lo : lhs_hi <= rhs_lo) return Certainty::True;
    if (strict ? lhs_lo >= rhs_hi : lhs_lo > rhs_hi) return Certainty::False;
  } else {
    lhs_lo = add_rd(L.lo, sl);
    lhs_hi = add_ru(L.hi, sl);
    rhs_hi = sub_ru(R.hi, sr);
    rhs_lo = sub_rd(R.lo, sr);
    bool strict = cmp == CmpOp::Gt;
    if (strict ? lhs_lo > rhs_hi : lhs_lo >= rhs_hi) return Certainty::True;
    if (strict ? lhs_hi <= rhs_lo : lhs_hi < rhs_lo) return Certainty::False;
  }
  return Certainty::Unknown;
}

Certainty Analysis::pred_certainty(const Predicate& p, bool negated,
                                   const std::unordered_map<sym::AtomId, Interval>& env) const {
  switch (p.kind) {
    case Predicate::Kind::True: return negated ? Certainty::False : Certainty::True;
    case Predicate::Kind::Atom: return atom_certainty(p, negated, env);
    case Predicate::Kind::Not: return pred_certainty(p.kids[0], !negated, env);
    case Predicate::Kind::And:
    case Predicate::Kind::Or: {
      bool is_and = (p.kind == Predicate::Kind::And) != negated;
      Certainty acc = is_and ? Certainty::True : Certainty::False;
      for (const auto& k : p.kids) {
        Certainty c = pred_certainty(k, negated, env);
        if (is_and) {
          if (c == Certainty::False) return Certainty::False;
          if (c == Certainty::Unknown) acc = Certainty::Unknown;
        } else {
          if (c == Certainty::True) return Certainty::True;
          if (c == Certainty::Unknown) acc = Certainty::Unknown;
        }
      }
      return acc;
    }
  }
  return Certainty::Unknown;
}

Certainty Analysis::lit_certainty(NodeId select, bool positive,
                                  const std::unordered_map<sym::AtomId, Interval>& env) const {
  return pred_certainty(weakened_.at(select), !positive, env);
}

bool Analysis::pred_truth(const Predicate& p, bool negated, bool weakened,
                          const std::unordered_map<sym::AtomId, __float128>& env) const {
  switch (p.kind) {
    case Predicate::Kind::True: return !negated;
    case Predicate::Kind::Atom: {
      std::vector<std::optional<__float128>> memo(p_.dag.nodes.size());
      __float128 L = node_quad_rec(p.lhs, env, memo);
      __float128 R = node_quad_rec(p.rhs, env, memo);
      CmpOp cmp = p.cmp;
      if (negated) {
        switch (cmp) {
          case CmpOp::Lt: cmp = CmpOp::Ge; break;
          case CmpOp::Le: cmp = CmpOp::Gt; break;
          case CmpOp::Gt: cmp = CmpOp::Le; break;
          case CmpOp::Ge: cmp = CmpOp::Lt; break;
        }
      }
      __float128 sl = 0, sr = 0;
      if (weakened && p.weakening_slack) {
        sl = p.weakening_slack->first;
        sr = p.weakening_slack->second;
      }
      bool leish = cmp == CmpOp::Lt || cmp == CmpOp::Le;
      __float128 lhs = leish ? L - sl : L + sl;
      __float128 rhs = leish ? R + sr : R - sr;
      switch (cmp) {
        case CmpOp::Lt: return lhs < rhs;
        case CmpOp::Le: return lhs <= rhs;
        case CmpOp::Gt: return lhs > rhs;
        case CmpOp::Ge: return lhs >= rhs;
      }
      return false;
    }
    case Predicate::Kind::Not: return pred_truth(p.kids[0], !negated, weakened, env);
    case Predicate::Kind::And:
    case Predicate::Kind::Or: {
      bool is_and = (p.kind == Predicate::Kind::And) != negated;
      for (const auto& k : p.kids) {
        bool v = pred_truth(k, negated, weakened, env);
        if (is_and && !v) return false;
        if (!is_and && v) return true;
      }
      return is_and;
    }
  }
  return false;
}

bool Analysis::lit_truth(NodeId select, bool positive,
                         const std::unordered_map<sym::AtomId, __float128>& env) const {
  return pred_truth(weakened_.at(select), !positive, /*weakened=*/true, env);
}

bool Analysis::exact_guard_truth(NodeId select,
                                 const std::unordered_map<sym::AtomId, __float128>& env) const {
  return pred_truth(*p_.dag.nodes[select].guard, false, /*weakened=*/false, env);
}

gopt::GuardFn Analysis::scenario_guard_fn(const std::map<NodeId, bool>& choice) const {
  return [this, choice](const std::unordered_map<sym::AtomId, Interval>& env) -> Certainty {
    Certainty acc = Certainty::True;
    for (auto& [sel, pos] : choice) {
      Certainty c = lit_certainty(sel, pos, env);
      if (c == Certainty::False) return Certainty::False;
      if (c == Certainty::Unknown) acc = Certainty::Unknown;
    }
    return acc;
  };
}

std::string Analysis::scenario_guard_key(const std::map<NodeId, bool>& choice) const {
  if (choice.empty()) return "";
  std::string s;
  for (auto& [sel, pos] : choice) {
    s += pos ? 'P' : 'N';
    s += std::to_string(sel);
    const Predicate& g = weakened_.at(sel);
    std::vector<const Predicate*> atoms;
    g.collect_atoms(atoms);
    char buf[64];
    for (auto* a : atoms) {
      std::snprintf(buf, sizeof buf, "[%u%s%u~%.17g,%.17g]", a->lhs, cmp_name(a->cmp), a->rhs,
                    a->weakening_slack ? a->weakening_slack->first : 0.0,
                    a->weakening_slack ? a->weakening_slack->second : 0.0);
      s += buf;
    }
    s += ';';
  }
  s += cfg_.opt.constraint_mode == gopt::ConstraintMode::Prune ? "prune" : "ignore";
  return s;
}

// ---------------------------------------------------------------------------
// bounding

gopt::OptResult Analysis::run_query(const gopt::Objective& obj, const gopt::GuardFn* guard,
                                    const std::string& guard_key) {
  gopt::OptResult r =
      gopt::maximize_upper(obj, full_box(), cfg_.opt, guard, guard_key, cfg_.cache, this);
  queries_ += r.queries;
  cache_hits_ += r.cache_hits;
  if (r.status == gopt::OptStatus::DomainViolation)
    throw DomainViolation("bound optimization hit a singular operation on the live domain");
  return r;
}

Analysis::BoundOutcome Analysis::bound_total_error(const ErrorAccumulator& acc) {
  prepare();
  BoundOutcome out;
  if (acc.terms.empty()) {
    out.per_guard.push_back(GuardBound{"true", 0.0});
    return out;
  }

  // branch-choice scenarios over the selects the accumulator mentions;
  // too many selects coarsen to a single unconstrained scenario
  std::vector<std::map<NodeId, bool>> scenarios;
  size_t k = acc.selects.size();
  if (k == 0 || k > 6) {
    scenarios.push_back({});
  } else {
    for (size_t bits = 0; bits < (size_t(1) << k); ++bits) {
      std::map<NodeId, bool> choice;
      for (size_t i = 0; i < k; ++i) choice[acc.selects[i]] = (bits >> i) & 1;
      scenarios.push_back(std::move(choice));
    }
  }

  for (const auto& choice : scenarios) {
    std::vector<gopt::Objective> term_objs;
    // group the accumulator by (source, kind, noise): one contribution per
    // physical error site, max over the cases live under this choice
    size_t i = 0;
    while (i < acc.terms.size()) {
      size_t j = i;
      std::vector<gopt::Objective> live;
      while (j < acc.terms.size() && acc.terms[j].source == acc.terms[i].source &&
             acc.terms[j].kind == acc.terms[i].kind && acc.terms[j].noise == acc.terms[i].noise) {
        const ErrorTerm& t = acc.terms[j];
        bool selected = choice.empty() || t.guard.eval_choice(choice);
        if (selected) live.push_back(gopt::Objective::leaf(t.coeff, t.noise, /*abs=*/true));
        ++j;
      }
      if (live.size() == 1) term_objs.push_back(std::move(live[0]));
      else if (!live.empty()) term_objs.push_back(gopt::Objective::max_of(std::move(live)));
      i = j;
    }
    std::string gname = "true";
    if (!choice.empty()) {
      Guard g = Guard::make_true();
      for (auto& [sel, pos] : choice) g = Guard::conj(g, Guard::lit(sel, pos));
      gname = g.str();
    }
    if (term_objs.empty()) {
      out.per_guard.push_back(GuardBound{gname, 0.0});
      continue;
    }
    gopt::Objective fused = gopt::Objective::sum(std::move(term_objs));
    gopt::GuardFn gfn;
    const gopt::GuardFn* gptr = nullptr;
    std::string gkey = scenario_guard_key(choice);
    if (!choice.empty() && cfg_.opt.constraint_mode == gopt::ConstraintMode::Prune) {
      gfn = scenario_guard_fn(choice);
      gptr = &gfn;
    }
    double bound;
    if (fused.ops(this) > cfg_.max_op_count) {
      // per-term fallback: sound, looser than the fused query
      double s = 0.0;
      for (auto& to : fused.kids) s += run_query(to, gptr, gkey).upper_bound;
      bound = s;
    } else {
      bound = run_query(fused, gptr, gkey).upper_bound;
    }
    out.per_guard.push_back(GuardBound{gname, bound});
    out.bound = std::max(out.bound, bound);
  }
  return out;
}

double Analysis::node_error_bound(NodeId id) {
  auto it = node_error_.find(id);
  if (it != node_error_.end()) return it->second;
  const Node& n = p_.dag.nodes[id];
  double b = 0.0;
  if (n.op == OpKind::Const ||
      (n.op == OpKind::Input && !p_.rounded_inputs.count(n.var) &&
       !p_.free_var_meta.count(n.var))) {
    b = 0.0;  // exact by default
  } else {
    ErrorAccumulator acc = assemble(id);
    b = bound_total_error(acc).bound;
  }
  node_error_.emplace(id, b);
  return b;
}

Interval Analysis::node_value_interval(
    NodeId id, const std::unordered_map<sym::AtomId, Interval>& env) const {
  const PredicatedExpr& pe = fwd_.at(id);
  if (pe.empty()) return Interval(0.0, 0.0);
  bool first = true;
  Interval acc(0.0, 0.0);
  for (const auto& c : pe.cases) {
    Interval v = c.expr.eval_interval(env, this);
    acc = first ? v : iv_hull(acc, v);
    first = false;
  }
  return acc;
}

Interval Analysis::node_value_range(NodeId id) {
  prepare();
  gopt::Box box = full_box();
  const PredicatedExpr& pe = fwd_.at(id);
  if (pe.empty()) return Interval(0.0, 0.0);
  bool first = true;
  Interval acc(0.0, 0.0);
  for (const auto& c : pe.cases) {
    gopt::OptResult up = run_query(gopt::Objective::leaf(c.expr), nullptr, "");
    gopt::OptResult dn = run_query(gopt::Objective::leaf(c.expr, -1.0), nullptr, "");
    Interval v(-dn.upper_bound, up.upper_bound);
    acc = first ? v : iv_hull(acc, v);
    first = false;
  }
  return acc;
}

std::optional<double> Analysis::relative_estimate(NodeId output, double bound) {
  prepare();
  const PredicatedExpr& pe = fwd_.at(output);
  double m = std::numeric_limits<double>::infinity();
  gopt::Box box = full_box();
  for (const auto& c : pe.cases) {
    // fast path: a root-box enclosure through zero pins the minimum at 0
    try {
      Interval v = c.expr.eval_interval(box.env(), this);
      if (v.contains(0.0)) return std::nullopt;
    } catch (const Error&) {
      return std::nullopt;
    }
    double lo = gopt::min_abs_lower(c.expr, box, cfg_.opt, cfg_.cache, this);
    m = std::min(m, lo);
  }
  if (!(m > 0.0) || !std::isfinite(m)) return std::nullopt;
  return bound / m;
}

gopt::Box Analysis::full_box() const {
  gopt::Box b;
  for (auto& [name, iv] : p_.input_domains) {
    b.vars.push_back(sym::AtomTable::instance().var(name));
    b.iv.push_back(iv);
  }
  return b;
}

// ---------------------------------------------------------------------------
// deferred-node context

Interval Analysis::node_interval(uint64_t key,
                                 const std::unordered_map<sym::AtomId, Interval>& env) const {
  if ((key >> 32) != p_.dag.scope) throw Error("node reference from a different problem");
  NodeId id = static_cast<NodeId>(key & 0xffffffffu);
  std::vector<std::optional<Interval>> memo(p_.dag.nodes.size());
  auto rec = [&](auto&& self, NodeId nid) -> Interval {
    if (memo[nid]) return *memo[nid];
    const Node& n = p_.dag.nodes[nid];
    Interval v;
    switch (n.op) {
      case OpKind::Input: v = env.at(sym::AtomTable::instance().var(n.var)); break;
      case OpKind::Const: v = sym::rational_to_interval(n.cval); break;
      default: {
        std::vector<Interval> args;
        for (size_t i = 0; i < n.value_arity(); ++i) args.push_back(self(self, n.children[i]));
        v = interval_apply(n.op, args, n.pow_exp);
      }
    }
    memo[nid] = v;
    return v;
  };
  return rec(rec, id);
}

__float128 Analysis::node_quad_rec(NodeId id,
                                   const std::unordered_map<sym::AtomId, __float128>& env,
                                   std::vector<std::optional<__float128>>& memo) const {
  if (memo[id]) return *memo[id];
  const Node& n = p_.dag.nodes[id];
  __float128 v = 0;
  switch (n.op) {
    case OpKind::Input: v = env.at(sym::AtomTable::instance().var(n.var)); break;
    case OpKind::Const: v = sym::rational_to_quad(n.cval); break;
    case OpKind::Select: {
      bool t = pred_truth(*n.guard, false, /*weakened=*/false, env);
      v = node_quad_rec(n.children[t ? 0 : 1], env, memo);
      break;
    }
    case OpKind::Add: v = node_quad_rec(n.children[0], env, memo) + node_quad_rec(n.children[1], env, memo); break;
    case OpKind::Sub: v = node_quad_rec(n.children[0], env, memo) - node_quad_rec(n.children[1], env, memo); break;
    case OpKind::Mul: v = node_quad_rec(n.children[0], env, memo) * node_quad_rec(n.children[1], env, memo); break;
    case OpKind::Div: {
      __float128 d = node_quad_rec(n.children[1], env, memo);
      if (d == 0) throw EvalDomain("division by zero");
      v = node_quad_rec(n.children[0], env, memo) / d;
      break;
    }
    case OpKind::Neg: v = -node_quad_rec(n.children[0], env, memo); break;
    case OpKind::Sqrt: {
      __float128 a = node_quad_rec(n.children[0], env, memo);
      if (a < 0) throw EvalDomain("sqrt of negative");
      v = sqrtq(a);
      break;
    }
    case OpKind::Sin: v = sinq(node_quad_rec(n.children[0], env, memo)); break;
    case OpKind::Cos: v = cosq(node_quad_rec(n.children[0], env, memo)); break;
    case OpKind::Exp: v = expq(node_quad_rec(n.children[0], env, memo)); break;
    case OpKind::Log: {
      __float128 a = node_quad_rec(n.children[0], env, memo);
      if (a <= 0) throw EvalDomain("log of non-positive");
      v = logq(a);
      break;
    }
    case OpKind::PowInt: {
      __float128 a = node_quad_rec(n.children[0], env, memo);
      __float128 acc = 1;
      long e = n.pow_exp;
      bool inv = e < 0;
      for (long i = 0; i < std::labs(e); ++i) acc *= a;
      if (inv) {
        if (acc == 0) throw EvalDomain("zero to negative power");
        acc = 1 / acc;
      }
      v = acc;
      break;
    }
  }
  memo[id] = v;
  return v;
}

__float128 Analysis::node_quad(uint64_t key,
                               const std::unordered_map<sym::AtomId, __float128>& env) const {
  if ((key >> 32) != p_.dag.scope) throw Error("node reference from a different problem");
  NodeId id = static_cast<NodeId>(key & 0xffffffffu);
  std::vector<std::optional<__float128>> memo(p_.dag.nodes.size());
  return node_quad_rec(id, env, memo);
}

int Analysis::node_op_count(uint64_t key) const {
  if ((key >> 32) != p_.dag.scope) return 0;
  NodeId id = static_cast<NodeId>(key & 0xffffffffu);
  return cone_ops_.at(id);
}

// ---------------------------------------------------------------------------

BoundReport analyze(const Problem& p, const AnalysisConfig& cfg) {
  auto t0 = std::chrono::steady_clock::now();
  BoundReport rep;
  Analysis a(p, cfg);
  a.prepare();
  for (size_t i = 0; i < p.outputs.size(); ++i) {
    OutputReport orep;
    orep.output = p.outputs[i];
    orep.name = i < p.output_names.size() ? p.output_names[i] : std::to_string(p.outputs[i]);
    auto s0 = std::chrono::steady_clock::now();
    long q0 = a.total_queries(), c0 = a.total_cache_hits();
    try {
      ErrorAccumulator acc = a.assemble(p.outputs[i]);
      Analysis::BoundOutcome b = a.bound_total_error(acc);
      orep.absolute_bound = b.bound;
      orep.guards = std::move(b.per_guard);
      if (cfg.relative_estimates) {
        try {
          orep.relative_estimate = a.relative_estimate(p.outputs[i], b.bound);
        } catch (const Error&) {
          // a singular minimum query leaves the estimate undefined
        }
      }
    } catch (const Error& e) {
      orep.error = e.what();
    }
    orep.queries = a.total_queries() - q0;
    orep.cache_hits = a.total_cache_hits() - c0;
    orep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - s0).count();
    rep.outputs.push_back(std::move(orep));
  }
  rep.queries = a.total_queries();
  rep.cache_hits = a.total_cache_hits();
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace fperr::taylor
