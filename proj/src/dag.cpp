#include "fperr/dag.hpp"

#include <algorithm>

#include "fperr/errors.hpp"

namespace fperr {

const char* cmp_name(CmpOp c) {
  switch (c) {
    case CmpOp::Lt: return "<";
    case CmpOp::Le: return "<=";
    case CmpOp::Gt: return ">";
    case CmpOp::Ge: return ">=";
  }
  return "?";
}

Predicate Predicate::atom(NodeId l, CmpOp c, NodeId r) {
  Predicate p;
  p.kind = Kind::Atom;
  p.lhs = l;
  p.rhs = r;
  p.cmp = c;
  return p;
}

Predicate Predicate::negate(Predicate p) {
  Predicate n;
  n.kind = Kind::Not;
  n.kids.push_back(std::move(p));
  return n;
}

Predicate Predicate::conj(Predicate a, Predicate b) {
  if (a.kind == Kind::True) return b;
  if (b.kind == Kind::True) return a;
  Predicate n;
  n.kind = Kind::And;
  n.kids.push_back(std::move(a));
  n.kids.push_back(std::move(b));
  return n;
}

Predicate Predicate::disj(Predicate a, Predicate b) {
  Predicate n;
  n.kind = Kind::Or;
  n.kids.push_back(std::move(a));
  n.kids.push_back(std::move(b));
  return n;
}

void Predicate::collect_atoms(std::vector<const Predicate*>& out) const {
  if (kind == Kind::Atom) out.push_back(this);
  for (const auto& k : kids) k.collect_atoms(out);
}

void Predicate::collect_atoms_mut(std::vector<Predicate*>& out) {
  if (kind == Kind::Atom) out.push_back(this);
  for (auto& k : kids) k.collect_atoms_mut(out);
}

NodeId Problem::binding(const std::string& name) const {
  for (auto& [n, id] : bindings)
    if (n == name) return id;
  throw Error("unknown binding " + name);
}

std::unordered_map<sym::AtomId, Interval> Problem::interval_env() const {
  std::unordered_map<sym::AtomId, Interval> env;
  for (auto& [name, iv] : input_domains)
    env.emplace(sym::AtomTable::instance().var(name), iv);
  return env;
}

Dag post_order_number(const Dag& dag) {
  const size_t n = dag.nodes.size();
  std::vector<uint8_t> state(n, 0);  // 0 unseen, 1 on stack, 2 done
  std::vector<NodeId> order;
  order.reserve(n);

  auto dfs = [&](NodeId root) {
    std::vector<std::pair<NodeId, size_t>> stack{{root, 0}};
    while (!stack.empty()) {
      auto& [id, next] = stack.back();
      if (state[id] == 2) {
        stack.pop_back();
        continue;
      }
      state[id] = 1;
      const Node& nd = dag.nodes.at(id);
      if (next < nd.children.size()) {
        NodeId c = nd.children[next++];
        if (c >= n) throw Error("dangling child id");
        if (state[c] == 1) throw Error("cycle detected in expression graph");
        if (state[c] == 0) stack.emplace_back(c, 0);
      } else {
        state[id] = 2;
        order.push_back(id);
        stack.pop_back();
      }
    }
  };
  for (NodeId r : dag.roots) dfs(r);
  for (NodeId i = 0; i < n; ++i)
    if (state[i] == 0) dfs(i);  // keep unreachable nodes, deterministically

  std::vector<NodeId> remap(n);
  for (NodeId pos = 0; pos < order.size(); ++pos) remap[order[pos]] = pos;

  Dag out;
  out.scope = dag.scope;
  out.nodes.resize(n);
  for (NodeId old = 0; old < n; ++old) {
    Node nd = dag.nodes[old];
    nd.id = remap[old];
    for (auto& c : nd.children) c = remap[c];
    if (nd.guard) {
      std::vector<Predicate*> atoms;
      nd.guard->collect_atoms_mut(atoms);
      for (auto* a : atoms) {
        a->lhs = remap[a->lhs];
        a->rhs = remap[a->rhs];
      }
    }
    out.nodes[nd.id] = std::move(nd);
  }
  out.roots = dag.roots;
  for (auto& r : out.roots) r = remap[r];
  return out;
}

Dag infer_cast_map(Dag dag) {
  for (auto& n : dag.nodes) {
    n.cast_bounds.assign(n.children.size(), 0.0);
    size_t val_kids = n.op == OpKind::Select ? 2 : n.children.size();
    for (size_t i = 0; i < val_kids; ++i) {
      const Node& c = dag.nodes.at(n.children[i]);
      if (is_downcast(c.precision, n.precision))
        n.cast_bounds[i] = unit_roundoff(n.precision);
    }
  }
  return dag;
}

std::vector<double> cast_bound_list(const Dag& dag) {
  std::vector<double> out;
  for (const auto& n : dag.nodes)
    for (size_t i = 0; i < n.children.size(); ++i)
      out.push_back(i < n.cast_bounds.size() ? n.cast_bounds[i] : 0.0);
  for (size_t i = 0; i < dag.roots.size(); ++i) out.push_back(0.0);
  return out;
}

std::vector<Interval> eval_dag_intervals(const Problem& p) {
  std::vector<Interval> val(p.dag.nodes.size());
  for (const auto& n : p.dag.nodes) {
    switch (n.op) {
      case OpKind::Input: {
        auto it = p.input_domains.find(n.var);
        if (it == p.input_domains.end()) throw Error("input without domain: " + n.var);
        val[n.id] = it->second;
        break;
      }
      case OpKind::Const: val[n.id] = sym::rational_to_interval(n.cval); break;
      default: {
        std::vector<Interval> args;
        for (size_t i = 0; i < n.value_arity(); ++i) args.push_back(val[n.children[i]]);
        val[n.id] = interval_apply(n.op, args, n.pow_exp);
      }
    }
  }
  return val;
}

void validate_problem(const Problem& p) {
  for (const auto& n : p.dag.nodes) {
    if (n.id >= p.dag.nodes.size() || p.dag.nodes[n.id].id != n.id)
      throw Error("node ids not dense");
    for (NodeId c : n.children)
      if (c >= n.id) throw Error("child id not below parent (post-order violated)");
    if (n.op == OpKind::Input && !p.input_domains.count(n.var))
      throw Error("variable " + n.var + " missing from input domains");
  }
  for (NodeId o : p.outputs)
    if (o >= p.dag.nodes.size()) throw Error("output id out of range");
  for (auto& [name, iv] : p.input_domains)
    if (iv.lo > iv.hi) throw Error("invalid interval for " + name);
}

}  // namespace fperr
