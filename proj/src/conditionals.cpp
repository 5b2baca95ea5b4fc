#include "fperr/conditionals.hpp"

#include <algorithm>

namespace fperr::cond {

using gopt::Certainty;

Predicate weaken_predicate(const Predicate& p, const std::map<NodeId, double>& operand_bounds) {
  Predicate out = p;
  std::vector<Predicate*> atoms;
  out.collect_atoms_mut(atoms);
  for (Predicate* a : atoms) {
    auto l = operand_bounds.find(a->lhs);
    auto r = operand_bounds.find(a->rhs);
    if (l == operand_bounds.end() || r == operand_bounds.end())
      throw Error("weaken_predicate: missing error bound for an atom operand");
    a->weakening_slack = std::make_pair(l->second, r->second);
  }
  return out;
}

double instability_window_width(taylor::Analysis& a, const Predicate& atom) {
  if (atom.kind != Predicate::Kind::Atom)
    throw Error("instability_window_width expects a single comparison atom");
  taylor::ErrorAccumulator lhs = a.assemble(atom.lhs);
  taylor::ErrorAccumulator rhs = a.assemble(atom.rhs);
  taylor::ErrorAccumulator merged;
  merged.output = atom.lhs;
  merged.terms = lhs.terms;
  merged.terms.insert(merged.terms.end(), rhs.terms.begin(), rhs.terms.end());
  std::vector<NodeId> sel;
  sel.insert(sel.end(), lhs.selects.begin(), lhs.selects.end());
  sel.insert(sel.end(), rhs.selects.begin(), rhs.selects.end());
  std::sort(sel.begin(), sel.end());
  sel.erase(std::unique(sel.begin(), sel.end()), sel.end());
  merged.selects = std::move(sel);
  return a.bound_total_error(merged).bound;
}

double instability_jump(taylor::Analysis& a, NodeId select, const PredCase& then_case,
                        const PredCase& else_case) {
  sym::SymExpr diff = sym::sub(then_case.expr, else_case.expr);
  gopt::Objective obj = gopt::Objective::leaf(diff, 1.0, /*abs=*/true);

  Guard overlap = Guard::conj(Guard::lit(select, true), Guard::lit(select, false));
  overlap = Guard::conj(overlap, then_case.guard);
  overlap = Guard::conj(overlap, else_case.guard);

  gopt::GuardFn gfn = [&a, overlap](const std::unordered_map<sym::AtomId, Interval>& env) {
    return overlap.eval([&](NodeId s, bool pos) { return a.lit_certainty(s, pos, env); });
  };
  const gopt::GuardFn* gptr =
      a.config().opt.constraint_mode == gopt::ConstraintMode::Prune ? &gfn : nullptr;
  std::string gkey = "jump|" + overlap.key() + "|" + a.scenario_guard_key({{select, true}}) +
                     a.scenario_guard_key({{select, false}});
  return a.run_query(obj, gptr, gkey).upper_bound;
}

InstabilityReport rank_instability(taylor::Analysis& a) {
  a.prepare();
  InstabilityReport rep;
  for (NodeId s : a.selects()) {
    const Predicate& g = a.select_guard(s);
    std::vector<const Predicate*> atoms;
    g.collect_atoms(atoms);
    for (size_t i = 0; i < atoms.size(); ++i) {
      WindowEntry w;
      w.select = s;
      w.atom_index = i;
      w.width = instability_window_width(a, *atoms[i]);
      rep.windows.push_back(w);
    }
    const Node& nd = a.problem().dag.nodes[s];
    const PredicatedExpr& tpe = a.fwd(nd.children[0]);
    const PredicatedExpr& epe = a.fwd(nd.children[1]);
    PredCase tdefault{Guard::make_true(), sym::SymExpr()};
    PredCase edefault{Guard::make_true(), sym::SymExpr()};
    auto tcases = tpe.cases.empty() ? std::vector<PredCase>{tdefault} : tpe.cases;
    auto ecases = epe.cases.empty() ? std::vector<PredCase>{edefault} : epe.cases;
    for (const auto& tc : tcases)
      for (const auto& ec : ecases) {
        JumpEntry e;
        e.select = s;
        e.then_guard = Guard::conj(Guard::lit(s, true), tc.guard).str();
        e.else_guard = Guard::conj(Guard::lit(s, false), ec.guard).str();
        e.jump = instability_jump(a, s, tc, ec);
        rep.ranking.push_back(std::move(e));
      }
  }
  std::stable_sort(rep.ranking.begin(), rep.ranking.end(),
                   [](const JumpEntry& x, const JumpEntry& y) { return x.jump > y.jump; });
  return rep;
}

}  // namespace fperr::cond
