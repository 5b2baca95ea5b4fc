#include "fperr/predexpr.hpp"

#include <algorithm>
#include <unordered_map>

namespace fperr {

using gopt::Certainty;

Guard Guard::make_false() {
  Guard g;
  g.kind = Kind::False;
  return g;
}

Guard Guard::lit(NodeId s, bool pos) {
  Guard g;
  g.kind = Kind::Lit;
  g.select = s;
  g.positive = pos;
  return g;
}

namespace {
// flatten + sort + dedupe conjunction/disjunction children by key
Guard normalized(Guard::Kind kind, std::vector<Guard> kids) {
  std::vector<Guard> flat;
  for (auto& k : kids) {
    if (k.kind == kind) {
      for (auto& kk : k.kids) flat.push_back(std::move(kk));
    } else {
      flat.push_back(std::move(k));
    }
  }
  bool is_and = kind == Guard::Kind::And;
  std::vector<Guard> keep;
  for (auto& k : flat) {
    if (is_and) {
      if (k.is_true()) continue;
      if (k.is_false()) return Guard::make_false();
    } else {
      if (k.is_false()) continue;
      if (k.is_true()) return Guard::make_true();
    }
    keep.push_back(std::move(k));
  }
  std::sort(keep.begin(), keep.end(),
            [](const Guard& a, const Guard& b) { return a.key() < b.key(); });
  keep.erase(std::unique(keep.begin(), keep.end(),
                         [](const Guard& a, const Guard& b) { return a.key() == b.key(); }),
             keep.end());
  if (keep.empty()) return is_and ? Guard::make_true() : Guard::make_false();
  if (keep.size() == 1) return keep[0];
  Guard g;
  g.kind = kind;
  g.kids = std::move(keep);
  return g;
}
}  // namespace

Guard Guard::conj(const Guard& a, const Guard& b) {
  return normalized(Kind::And, {a, b});
}

Guard Guard::disj(const Guard& a, const Guard& b) {
  return normalized(Kind::Or, {a, b});
}

Guard Guard::negate(const Guard& g) {
  switch (g.kind) {
    case Kind::True: return make_false();
    case Kind::False: return make_true();
    case Kind::Lit: return lit(g.select, !g.positive);
    case Kind::And:
    case Kind::Or: {
      std::vector<Guard> kids;
      kids.reserve(g.kids.size());
      for (const auto& k : g.kids) kids.push_back(negate(k));
      return normalized(g.kind == Kind::And ? Kind::Or : Kind::And, std::move(kids));
    }
  }
  return make_true();
}

std::string Guard::key() const {
  switch (kind) {
    case Kind::True: return "T";
    case Kind::False: return "F";
    case Kind::Lit: return (positive ? "p" : "n") + std::to_string(select);
    case Kind::And:
    case Kind::Or: {
      std::string s = kind == Kind::And ? "A(" : "O(";
      for (auto& k : kids) {
        s += k.key();
        s += ',';
      }
      s += ')';
      return s;
    }
  }
  return "?";
}

std::string Guard::str() const {
  switch (kind) {
    case Kind::True: return "true";
    case Kind::False: return "false";
    case Kind::Lit:
      return positive ? "P" + std::to_string(select) + "^w"
                      : "(~P" + std::to_string(select) + ")^w";
    case Kind::And:
    case Kind::Or: {
      std::string s = "(";
      for (size_t i = 0; i < kids.size(); ++i) {
        if (i) s += kind == Kind::And ? " & " : " | ";
        s += kids[i].str();
      }
      s += ')';
      return s;
    }
  }
  return "?";
}

bool Guard::eval_choice(const std::map<NodeId, bool>& choice) const {
  switch (kind) {
    case Kind::True: return true;
    case Kind::False: return false;
    case Kind::Lit: {
      auto it = choice.find(select);
      if (it == choice.end()) return true;
      return it->second == positive;
    }
    case Kind::And:
      for (auto& k : kids)
        if (!k.eval_choice(choice)) return false;
      return true;
    case Kind::Or:
      for (auto& k : kids)
        if (k.eval_choice(choice)) return true;
      return false;
  }
  return true;
}

Certainty Guard::eval(const std::function<Certainty(NodeId, bool)>& lit_fn) const {
  switch (kind) {
    case Kind::True: return Certainty::True;
    case Kind::False: return Certainty::False;
    case Kind::Lit: return lit_fn(select, positive);
    case Kind::And: {
      Certainty acc = Certainty::True;
      for (auto& k : kids) {
        Certainty c = k.eval(lit_fn);
        if (c == Certainty::False) return Certainty::False;
        if (c == Certainty::Unknown) acc = Certainty::Unknown;
      }
      return acc;
    }
    case Kind::Or: {
      Certainty acc = Certainty::False;
      for (auto& k : kids) {
        Certainty c = k.eval(lit_fn);
        if (c == Certainty::True) return Certainty::True;
        if (c == Certainty::Unknown) acc = Certainty::Unknown;
      }
      return acc;
    }
  }
  return Certainty::Unknown;
}

void Guard::collect_selects(std::vector<NodeId>& out) const {
  if (kind == Kind::Lit) out.push_back(select);
  for (auto& k : kids) k.collect_selects(out);
}

PredicatedExpr PredicatedExpr::always(sym::SymExpr e) {
  PredicatedExpr p;
  if (!e.is_zero()) p.cases.push_back(PredCase{Guard::make_true(), std::move(e)});
  return p;
}

void PredicatedExpr::cap_cases(size_t cap) {
  if (cases.size() <= cap) return;
  for (auto& c : cases) c.guard = Guard::make_true();
  // dedupe identical expressions under the coarsened guard
  std::sort(cases.begin(), cases.end(), [](const PredCase& a, const PredCase& b) {
    return a.expr.serialize(nullptr) < b.expr.serialize(nullptr);
  });
  cases.erase(std::unique(cases.begin(), cases.end(),
                          [](const PredCase& a, const PredCase& b) { return a.expr == b.expr; }),
              cases.end());
}

namespace {
void add_case(std::vector<PredCase>& out, Guard g, sym::SymExpr e) {
  if (g.is_false() || e.is_zero()) return;
  out.push_back(PredCase{std::move(g), std::move(e)});
}

// merge duplicates that share a guard key
std::vector<PredCase> coalesce(std::vector<PredCase> cases, const Combine2& combine) {
  std::unordered_map<std::string, size_t> seen;
  std::vector<PredCase> out;
  for (auto& c : cases) {
    std::string k = c.guard.key();
    auto it = seen.find(k);
    if (it == seen.end()) {
      seen.emplace(std::move(k), out.size());
      out.push_back(std::move(c));
    } else {
      out[it->second].expr = combine(out[it->second].expr, c.expr);
    }
  }
  std::erase_if(out, [](const PredCase& c) { return c.expr.is_zero(); });
  return out;
}
}  // namespace

PredicatedExpr bowtie(const PredicatedExpr& a, const PredicatedExpr& b, const Combine2& combine) {
  if (a.empty()) return b;
  if (b.empty()) return a;

  // split sides into guard-matched pairs (merged directly) and the rest
  std::unordered_map<std::string, size_t> bkeys;
  for (size_t j = 0; j < b.cases.size(); ++j) bkeys.emplace(b.cases[j].guard.key(), j);

  std::vector<PredCase> out;
  std::vector<bool> b_used(b.cases.size(), false);
  std::vector<const PredCase*> a_rest;
  for (const auto& ca : a.cases) {
    auto it = bkeys.find(ca.guard.key());
    if (it != bkeys.end() && !b_used[it->second]) {
      b_used[it->second] = true;
      add_case(out, ca.guard, combine(ca.expr, b.cases[it->second].expr));
    } else {
      a_rest.push_back(&ca);
    }
  }
  std::vector<const PredCase*> b_rest;
  for (size_t j = 0; j < b.cases.size(); ++j)
    if (!b_used[j]) b_rest.push_back(&b.cases[j]);

  // the four-way split over the remaining cases
  Guard union_a = Guard::make_false();
  for (const auto* ca : a_rest) union_a = Guard::disj(union_a, ca->guard);
  Guard union_b = Guard::make_false();
  for (const auto* cb : b_rest) union_b = Guard::disj(union_b, cb->guard);
  Guard not_union_a = Guard::negate(union_a);
  Guard not_union_b = Guard::negate(union_b);

  for (const auto* ca : a_rest) {
    for (const auto* cb : b_rest)
      add_case(out, Guard::conj(ca->guard, cb->guard), combine(ca->expr, cb->expr));
    add_case(out, Guard::conj(ca->guard, not_union_b), ca->expr);
  }
  for (const auto* cb : b_rest) add_case(out, Guard::conj(not_union_a, cb->guard), cb->expr);

  PredicatedExpr r;
  r.cases = coalesce(std::move(out), combine);
  r.cap_cases();
  return r;
}

PredicatedExpr pe_product(const PredicatedExpr& a, const PredicatedExpr& b,
                          const Combine2& combine) {
  PredicatedExpr r;
  for (const auto& ca : a.cases)
    for (const auto& cb : b.cases) {
      Guard g = Guard::conj(ca.guard, cb.guard);
      if (g.is_false()) continue;
      sym::SymExpr e = combine(ca.expr, cb.expr);
      if (!e.is_zero()) r.cases.push_back(PredCase{std::move(g), std::move(e)});
    }
  r.cases = coalesce(std::move(r.cases), [](const sym::SymExpr& x, const sym::SymExpr& y) {
    return sym::add(x, y);
  });
  r.cap_cases();
  return r;
}

PredicatedExpr pe_map(const PredicatedExpr& a,
                      const std::function<sym::SymExpr(const sym::SymExpr&)>& f) {
  PredicatedExpr r;
  for (const auto& c : a.cases) {
    sym::SymExpr e = f(c.expr);
    if (!e.is_zero()) r.cases.push_back(PredCase{c.guard, std::move(e)});
  }
  return r;
}

PredicatedExpr pe_product_n(
    const std::vector<const PredicatedExpr*>& args,
    const std::function<sym::SymExpr(const std::vector<sym::SymExpr>&)>& f) {
  std::vector<PredCase> acc{PredCase{Guard::make_true(), sym::SymExpr()}};
  std::vector<std::vector<sym::SymExpr>> exprs{{}};
  for (const auto* arg : args) {
    std::vector<PredCase> nacc;
    std::vector<std::vector<sym::SymExpr>> nexprs;
    for (size_t i = 0; i < acc.size(); ++i) {
      for (const auto& c : arg->cases) {
        Guard g = Guard::conj(acc[i].guard, c.guard);
        if (g.is_false()) continue;
        nacc.push_back(PredCase{std::move(g), sym::SymExpr()});
        auto v = exprs[i];
        v.push_back(c.expr);
        nexprs.push_back(std::move(v));
      }
    }
    acc = std::move(nacc);
    exprs = std::move(nexprs);
  }
  PredicatedExpr r;
  for (size_t i = 0; i < acc.size(); ++i) {
    sym::SymExpr e = f(exprs[i]);
    if (!e.is_zero()) r.cases.push_back(PredCase{std::move(acc[i].guard), std::move(e)});
  }
  r.cases = coalesce(std::move(r.cases), [](const sym::SymExpr& x, const sym::SymExpr& y) {
    return sym::add(x, y);
  });
  r.cap_cases();
  return r;
}

}  // namespace fperr
