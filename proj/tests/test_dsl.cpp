#include <doctest.h>

#include <fstream>
#include <sstream>

#include "fperr/parser.hpp"
#include "fperr/precision.hpp"

using namespace fperr;

namespace {
std::string bench(const std::string& name) {
  std::ifstream in(std::string(FPERR_BENCH_DIR) + "/" + name);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}
}  // namespace

TEST_CASE("minimal program parses to three nodes") {
  Problem p = parse_problem("INPUTS{x: fl64 in [0.1,5.0];} EXPRS{y: fl64 = x*x;} OUTPUTS{y;}");
  CHECK(p.dag.nodes.size() == 3);  // two occurrence leaves + the multiply
  CHECK(p.outputs.size() == 1);
  CHECK(p.output_names[0] == "y");
  CHECK(p.dag.nodes[2].op == OpKind::Mul);
  CHECK(p.dag.nodes[0].op == OpKind::Input);
  CHECK(p.dag.nodes[1].op == OpKind::Input);
}

TEST_CASE("conditional program parses to one select with a single atom") {
  Problem p = parse_problem(bench("intro.sat"));
  int selects = 0;
  for (const Node& n : p.dag.nodes)
    if (n.op == OpKind::Select) {
      ++selects;
      REQUIRE(n.guard.has_value());
      CHECK(n.guard->kind == Predicate::Kind::Atom);
      CHECK(n.guard->cmp == CmpOp::Le);
      CHECK(n.delta_bound == 0.0);
      CHECK(n.precision == Precision::fp32);
    }
  CHECK(selects == 1);
}

TEST_CASE("parse errors") {
  CHECK_THROWS_AS(
      parse_problem("INPUTS{z: fl64 in [2.0,1.0];} EXPRS{y: fl64 = z;} OUTPUTS{y;}"),
      ParseError);  // lo > hi
  CHECK_THROWS_AS(
      parse_problem("INPUTS{x: fl64 in [0,1];} EXPRS{y: fl64 = w+1.0;} OUTPUTS{y;}"),
      ParseError);  // undefined variable
  CHECK_THROWS_AS(parse_problem("INPUTS{x: fl64 in [0,1];} EXPRS{y: fl64 = x; y: fl64 = x;} "
                                "OUTPUTS{y;}"),
                  ParseError);  // duplicate binding
  CHECK_THROWS_AS(parse_problem("INPUTS{x: fl64 in [0,1];} EXPRS{y: fl64 = x;} OUTPUTS{}"),
                  ParseError);  // empty outputs
  try {
    parse_problem("INPUTS{x: fl64 in [0,1];}\nEXPRS{y: fl64 = x +;}\nOUTPUTS{y;}");
    FAIL("expected a syntax error");
  } catch (const ParseError& e) {
    CHECK(e.line == 2);
    CHECK(e.col > 0);
  }
}

TEST_CASE("mixed-precision cancellation program matches the five-slot numbering") {
  Problem p = parse_problem(bench("eq10.sat"));
  REQUIRE(p.dag.nodes.size() == 5);
  // 1-based slots 1..5: x, y, +, x, -
  CHECK(p.dag.nodes[0].op == OpKind::Input);
  CHECK(p.dag.nodes[0].var == "x");
  CHECK(p.dag.nodes[1].op == OpKind::Input);
  CHECK(p.dag.nodes[1].var == "y");
  CHECK(p.dag.nodes[2].op == OpKind::Add);
  CHECK(p.dag.nodes[3].op == OpKind::Input);
  CHECK(p.dag.nodes[3].var == "x");
  CHECK(p.dag.nodes[4].op == OpKind::Sub);
  CHECK(p.dag.nodes[4].precision == Precision::fp32);

  // inferred edge casts in (consumer, position) order plus the root:
  // {0, 0, eps32, eps32, 0}
  std::vector<double> cb = cast_bound_list(p.dag);
  REQUIRE(cb.size() == 5);
  CHECK(cb[0] == 0.0);
  CHECK(cb[1] == 0.0);
  CHECK(cb[2] == kU32);
  CHECK(cb[3] == kU32);
  CHECK(cb[4] == 0.0);
}

TEST_CASE("uniform precision has no casts; widening is exact") {
  Problem p = parse_problem(
      "INPUTS{x: fl64 in [0,1]; y: fl64 in [0,1];} EXPRS{t: fl64 = x+y; u: fl64 = t*t;} "
      "OUTPUTS{u;}");
  for (double c : cast_bound_list(p.dag)) CHECK(c == 0.0);

  Problem q = parse_problem(
      "INPUTS{x: fl32 in [0,1];} EXPRS{t: fl64 = x + x;} OUTPUTS{t;}");
  for (double c : cast_bound_list(q.dag)) CHECK(c == 0.0);  // up-cast edges are exact
}

TEST_CASE("cast inference is idempotent") {
  Problem p = parse_problem(bench("eq10.sat"));
  Dag once = p.dag;
  Dag twice = infer_cast_map(once);
  for (size_t i = 0; i < once.nodes.size(); ++i)
    CHECK(once.nodes[i].cast_bounds == twice.nodes[i].cast_bounds);
}

TEST_CASE("print/parse round trip preserves the dag") {
  for (const char* name : {"intro.sat", "eq10.sat", "branch_paths.sat", "dqmom.sat"}) {
    Problem p = parse_problem(bench(name));
    Problem q = parse_problem(print_problem(p));
    REQUIRE(q.dag.nodes.size() == p.dag.nodes.size());
    for (size_t i = 0; i < p.dag.nodes.size(); ++i) {
      CHECK(q.dag.nodes[i].op == p.dag.nodes[i].op);
      CHECK(q.dag.nodes[i].precision == p.dag.nodes[i].precision);
      CHECK(q.dag.nodes[i].children == p.dag.nodes[i].children);
      if (p.dag.nodes[i].op == OpKind::Const)
        CHECK(q.dag.nodes[i].cval == p.dag.nodes[i].cval);
    }
    CHECK(q.input_domains.size() == p.input_domains.size());
    for (auto& [name2, iv] : p.input_domains) {
      CHECK(q.input_domains.at(name2).lo == iv.lo);
      CHECK(q.input_domains.at(name2).hi == iv.hi);
    }
  }
}

TEST_CASE("numbering is a topological order; shared bindings number once") {
  Problem p = parse_problem("INPUTS{x: fl64 in [0,1]; y: fl64 in [0,1];} EXPRS{s: fl64 = x + y;} "
                            "OUTPUTS{s;}");
  REQUIRE(p.dag.nodes.size() == 3);
  CHECK(p.dag.nodes[0].var == "x");
  CHECK(p.dag.nodes[1].var == "y");
  CHECK(p.dag.nodes[2].op == OpKind::Add);

  Problem q = parse_problem(
      "INPUTS{x: fl64 in [0,1]; y: fl64 in [0,1];} EXPRS{t: fl64 = x + y; u: fl64 = t*t;} "
      "OUTPUTS{u;}");
  // the shared subterm is one node referenced twice
  const Node& mulnode = q.dag.nodes.back();
  REQUIRE(mulnode.op == OpKind::Mul);
  CHECK(mulnode.children[0] == mulnode.children[1]);
  for (const Node& n : q.dag.nodes)
    for (NodeId c : n.children) CHECK(c < n.id);
}

TEST_CASE("post_order_number renumbers and detects cycles") {
  Problem p = parse_problem(bench("branch_paths.sat"));
  Dag renum = post_order_number(p.dag);
  REQUIRE(renum.nodes.size() == p.dag.nodes.size());
  for (const Node& n : renum.nodes) {
    CHECK(n.id < renum.nodes.size());
    for (NodeId c : n.children) CHECK(c < n.id);
  }

  Dag cyclic;
  cyclic.scope = 777;
  Node a;
  a.id = 0;
  a.op = OpKind::Neg;
  a.children = {1};
  Node b;
  b.id = 1;
  b.op = OpKind::Neg;
  b.children = {0};
  cyclic.nodes = {a, b};
  cyclic.roots = {1};
  CHECK_THROWS_AS(post_order_number(cyclic), Error);
}

TEST_CASE("identity folds preserve the value-level program") {
  Problem p = parse_problem(
      "INPUTS{m: fl64 in [-1,1];} EXPRS{r: fl64 = ((m * 1.0) + 0.0) - 0.0;} OUTPUTS{r;}");
  // everything folds away to the bare input leaf
  CHECK(p.dag.nodes.size() == 1);
  CHECK(p.dag.nodes[0].op == OpKind::Input);

  Problem q = parse_problem("INPUTS{m: fl64 in [-1,1];} EXPRS{r: fl64 = 0.0 - m;} OUTPUTS{r;}");
  REQUIRE(q.dag.nodes.size() == 2);
  CHECK(q.dag.nodes[1].op == OpKind::Neg);
  CHECK(q.dag.nodes[1].delta_bound == 0.0);  // sign flip is exact
}

TEST_CASE("rounded inputs carry their unit roundoff") {
  Problem p = parse_problem(
      "INPUTS{x: fl32 rounded in [0,1]; y: fl32 in [0,1];} EXPRS{s: fl32 = x + y;} OUTPUTS{s;}");
  CHECK(p.rounded_inputs.count("x") == 1);
  CHECK(p.rounded_inputs.count("y") == 0);
  for (const Node& n : p.dag.nodes) {
    if (n.op == OpKind::Input && n.var == "x") CHECK(n.delta_bound == kU32);
    if (n.op == OpKind::Input && n.var == "y") CHECK(n.delta_bound == 0.0);
  }
}

TEST_CASE("non-representable constants snap to the rounded binary value") {
  Problem p = parse_problem("INPUTS{x: fl32 in [0,1];} EXPRS{y: fl32 = 0.1 * x;} OUTPUTS{y;}");
  const Node* cn = nullptr;
  for (const Node& n : p.dag.nodes)
    if (n.op == OpKind::Const) cn = &n;
  REQUIRE(cn != nullptr);
  CHECK(cn->cval == sym::rational_of(static_cast<double>(0.1f)));
  CHECK(cn->delta_bound == 0.0);
}

TEST_CASE("compound predicates parse") {
  Problem p = parse_problem(
      "INPUTS{x: fl64 in [0,1]; y: fl64 in [0,1];}"
      "EXPRS{r: fl64 = if ((x < y || x >= 0.5) && !(y > 0.9)) then x else y;} OUTPUTS{r;}");
  const Node& sel = p.dag.nodes.back();
  REQUIRE(sel.op == OpKind::Select);
  std::vector<const Predicate*> atoms;
  sel.guard->collect_atoms(atoms);
  CHECK(atoms.size() == 3);
}
