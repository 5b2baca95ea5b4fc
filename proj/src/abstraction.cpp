#include "fperr/abstraction.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>

namespace fperr::abst {

namespace {
std::atomic<long> g_fv_counter{1};

bool is_leaf(const Node& n) { return n.op == OpKind::Input || n.op == OpKind::Const; }
}  // namespace

HeightIndex height_index(const Dag& dag) {
  HeightIndex hi;
  const size_t n = dag.nodes.size();
  hi.height.assign(n, 0);
  hi.fanout.assign(n, 0);
  for (auto id = static_cast<size_t>(n); id-- > 0;) {
    const Node& nd = dag.nodes[id];
    for (NodeId c : nd.children) {
      hi.height[c] = std::max(hi.height[c], hi.height[id] + 1);
      ++hi.fanout[c];
    }
  }
  for (size_t id = 0; id < n; ++id) {
    hi.dag_height = std::max(hi.dag_height, hi.height[id]);
    if (!is_leaf(dag.nodes[id])) hi.internal_height = std::max(hi.internal_height, hi.height[id]);
  }
  return hi;
}

double node_information(int fanout, int h, int H) {
  if (h <= 0 || H <= 0) return 0.0;
  return -std::log(static_cast<double>(h) / H) * fanout;
}

std::optional<int> select_abstraction_height(const Dag& dag, const AbstractionWindow& w) {
  HeightIndex hi = height_index(dag);
  if (hi.internal_height < w.lo) return std::nullopt;
  int lo = std::max(1, w.lo);
  int top = std::min(w.hi, hi.dag_height);
  double H2 = static_cast<double>(w.hi);
  double best = -1.0;
  int best_h = -1;
  for (int h = lo; h <= top; ++h) {
    double cost = 0.0;
    bool any_internal = false;
    for (size_t id = 0; id < dag.nodes.size(); ++id) {
      if (hi.height[id] != h || is_leaf(dag.nodes[id])) continue;
      any_internal = true;
      double r = h / H2;
      cost += (r >= 1.0 ? 0.0 : -r * std::log(r)) * hi.fanout[id];
    }
    if (!any_internal) continue;
    if (cost > best) {  // strictly greater: ties keep the smaller height
      best = cost;
      best_h = h;
    }
  }
  if (best_h < 0) return std::nullopt;
  return best_h;
}

std::pair<Problem, std::vector<FreeVar>> abstract_at_height(const Problem& p, int h,
                                                            taylor::Analysis& analysis) {
  HeightIndex hidx = height_index(p.dag);
  std::vector<NodeId> targets;
  for (const Node& n : p.dag.nodes)
    if (hidx.height[n.id] == h && !is_leaf(n)) targets.push_back(n.id);

  std::vector<FreeVar> fvs;
  std::map<NodeId, FreeVar> by_node;
  for (NodeId t : targets) {
    FreeVar fv;
    fv.name = "__fv" + std::to_string(g_fv_counter.fetch_add(1));
    fv.origin = t;
    try {
      fv.value_range = analysis.node_value_range(t);
      fv.error_bound = analysis.node_error_bound(t);
    } catch (const DomainViolation& e) {
      throw DomainViolation("abstraction of node " + std::to_string(t) + " failed: " + e.what());
    }
    by_node.emplace(t, fv);
    fvs.push_back(std::move(fv));
  }
  if (targets.empty()) return {p, {}};

  // rebuild: reachability from the roots with abstracted nodes cut off
  const size_t n = p.dag.nodes.size();
  std::vector<bool> reach(n, false);
  {
    std::vector<NodeId> stack(p.dag.roots.begin(), p.dag.roots.end());
    while (!stack.empty()) {
      NodeId id = stack.back();
      stack.pop_back();
      if (reach[id]) continue;
      reach[id] = true;
      if (by_node.count(id)) continue;  // children summarized away
      for (NodeId c : p.dag.nodes[id].children) stack.push_back(c);
    }
  }

  Problem out;
  // the rebuilt dag is a new problem: fresh scope for its deferred-node keys
  static std::atomic<uint64_t> rebuild_scope{1u << 20};
  out.dag.scope = rebuild_scope.fetch_add(1);
  std::vector<NodeId> remap(n, 0);
  for (NodeId id = 0; id < n; ++id) {
    if (!reach[id]) continue;
    Node nd = p.dag.nodes[id];
    auto ab = by_node.find(id);
    if (ab != by_node.end()) {
      Node fvn;
      fvn.op = OpKind::Input;
      fvn.var = ab->second.name;
      fvn.precision = nd.precision;
      fvn.delta_bound = 0.0;
      nd = std::move(fvn);
    } else {
      for (auto& c : nd.children) c = remap[c];
      if (nd.guard) {
        std::vector<Predicate*> atoms;
        nd.guard->collect_atoms_mut(atoms);
        for (auto* a : atoms) {
          a->lhs = remap[a->lhs];
          a->rhs = remap[a->rhs];
        }
      }
    }
    nd.id = static_cast<NodeId>(out.dag.nodes.size());
    remap[id] = nd.id;
    out.dag.nodes.push_back(std::move(nd));
  }
  for (NodeId r : p.dag.roots) out.dag.roots.push_back(remap[r]);
  out.outputs = out.dag.roots;
  out.output_names = p.output_names;
  for (auto& [name, id] : p.bindings)
    if (reach[id]) out.bindings.emplace_back(name, remap[id]);

  out.input_domains = p.input_domains;
  out.input_precisions = p.input_precisions;
  out.rounded_inputs = p.rounded_inputs;
  for (auto& [name, meta] : p.free_var_meta) {
    // keep only free variables that still occur
    bool present = false;
    for (const Node& nd : out.dag.nodes)
      if (nd.op == OpKind::Input && nd.var == name) present = true;
    if (present) out.free_var_meta.emplace(name, meta);
  }
  for (NodeId t : targets) {
    const FreeVar& fv = by_node.at(t);
    out.input_domains.emplace(fv.name, fv.value_range);
    out.input_precisions.emplace(fv.name, p.dag.nodes[t].precision);
    out.free_var_meta.emplace(fv.name, FreeVarMeta{fv.value_range, fv.error_bound, t});
  }
  // drop domains of inputs that no longer occur (fully abstracted away)
  {
    std::set<std::string> used;
    for (const Node& nd : out.dag.nodes)
      if (nd.op == OpKind::Input) used.insert(nd.var);
    for (auto it = out.input_domains.begin(); it != out.input_domains.end();) {
      if (!used.count(it->first)) it = out.input_domains.erase(it);
      else ++it;
    }
  }
  out.dag = infer_cast_map(std::move(out.dag));
  validate_problem(out);
  return {std::move(out), std::move(fvs)};
}

taylor::BoundReport abstraction_loop(const Problem& p, const AbstractionWindow& w,
                                     const taylor::AnalysisConfig& cfg,
                                     std::vector<AbstractionRound>* rounds) {
  Problem cur = p;
  AbstractionWindow win = w;
  std::string trail;
  int prev_height = -1;
  for (int round = 0; round < 1000; ++round) {
    auto h = select_abstraction_height(cur.dag, win);
    if (!h) break;

    // oversized expressions at the chosen height reduce the window's lower
    // edge once and re-select
    {
      taylor::Analysis probe(cur, cfg);
      probe.prepare();
      HeightIndex hidx = height_index(cur.dag);
      bool oversized = false;
      for (const Node& n : cur.dag.nodes) {
        if (hidx.height[n.id] != *h || is_leaf(n)) continue;
        for (const auto& c : probe.fwd(n.id).cases)
          if (sym::op_count(c.expr, &probe) > cfg.max_op_count) oversized = true;
      }
      if (oversized && win.lo > 1) {
        win.lo = std::max(1, win.lo / 2);
        auto h2 = select_abstraction_height(cur.dag, win);
        if (h2) h = h2;
      }
    }

    taylor::Analysis analysis(cur, cfg);
    analysis.prepare();
    long q0 = analysis.total_queries();
    auto t0 = std::chrono::steady_clock::now();
    std::pair<Problem, std::vector<FreeVar>> next;
    try {
      next = abstract_at_height(cur, *h, analysis);
    } catch (const DomainViolation&) {
      throw;
    }
    double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    // runtime saturation: sub-solves dominated the budget, lower the window's
    // upper edge below this height and re-select next round
    double per_node =
        next.second.empty() ? 0.0 : dt / static_cast<double>(next.second.size());
    if (per_node > 3.0 * cfg.opt.timeout_seconds && *h - 1 >= win.lo) win.hi = *h - 1;

    if (rounds)
      rounds->push_back(
          AbstractionRound{*h, static_cast<int>(next.second.size()),
                           analysis.total_queries() - q0});
    trail += (trail.empty() ? "" : ",") + std::to_string(*h);
    int new_height = height_index(next.first.dag).internal_height;
    if (next.second.empty() || (prev_height >= 0 && new_height >= prev_height)) {
      cur = std::move(next.first);
      break;  // no progress; solve the residue directly
    }
    prev_height = new_height;
    cur = std::move(next.first);
  }
  taylor::BoundReport rep = taylor::analyze(cur, cfg);
  rep.mode = trail.empty()
                 ? "direct"
                 : "abstracted window=[" + std::to_string(w.lo) + "," + std::to_string(w.hi) +
                       "] heights=[" + trail + "]";
  for (auto& o : rep.outputs) o.mode = rep.mode;
  return rep;
}

}  // namespace fperr::abst
