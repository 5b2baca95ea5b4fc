#include <doctest.h>

#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "fperr/conditionals.hpp"
#include "fperr/parser.hpp"

using namespace fperr;
using namespace fperr::cond;
using sym::SymExpr;

namespace {
SymExpr V(const char* n) { return SymExpr::var(n); }
SymExpr C(double d) { return SymExpr::constant(d); }

std::string bench(const std::string& name) {
  std::ifstream in(std::string(FPERR_BENCH_DIR) + "/" + name);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Combine2 plus = [](const SymExpr& a, const SymExpr& b) { return sym::add(a, b); };
}  // namespace

TEST_CASE("bowtie merges unconditional cases by the combiner") {
  PredicatedExpr a = PredicatedExpr::always(V("a"));
  PredicatedExpr b = PredicatedExpr::always(V("b"));
  PredicatedExpr r = bowtie(a, b, plus);
  REQUIRE(r.cases.size() == 1);
  CHECK(r.cases[0].guard.is_true());
  CHECK(r.cases[0].expr == sym::add(V("a"), V("b")));
}

TEST_CASE("bowtie with an empty side is the identity") {
  PredicatedExpr a;
  a.cases.push_back(PredCase{Guard::lit(3, true), V("a")});
  PredicatedExpr zero;
  PredicatedExpr r = bowtie(a, zero, plus);
  REQUIRE(r.cases.size() == 1);
  CHECK(r.cases[0].expr == V("a"));
  CHECK(r.cases[0].guard.key() == Guard::lit(3, true).key());
  PredicatedExpr l = bowtie(zero, a, plus);
  CHECK(l.cases.size() == 1);
}

TEST_CASE("bowtie case split matches the four-way algebra") {
  PredicatedExpr a;
  a.cases.push_back(PredCase{Guard::lit(1, true), V("ea")});
  PredicatedExpr b;
  b.cases.push_back(PredCase{Guard::conj(Guard::lit(1, false), Guard::lit(2, false)), V("eb")});
  PredicatedExpr r = bowtie(a, b, plus);
  REQUIRE(r.cases.size() == 3);

  // truth-table over the two atoms: under every pure assignment of (P1, P2),
  // the generated guards are pairwise contradictory; the one uncovered
  // assignment is the doubly-negative (dropped, contribution 0) quadrant,
  // here P1 false with P2 true (neither Pi nor Pj holds)
  int covered = 0;
  for (int p1 = 0; p1 < 2; ++p1)
    for (int p2 = 0; p2 < 2; ++p2) {
      std::map<NodeId, bool> assign{{1, p1 == 1}, {2, p2 == 1}};
      int live = 0;
      for (const auto& c : r.cases) live += c.guard.eval_choice(assign) ? 1 : 0;
      CHECK(live <= 1);
      covered += live;
      if (!p1 && p2) CHECK(live == 0);  // neither case's guard holds here
      if (!p1 && !p2) CHECK(live == 1);  // Pj alone holds
    }
  CHECK(covered == 3);
}

TEST_CASE("bowtie with + is associative and commutative up to guard sets") {
  auto key_of = [](const PredicatedExpr& pe) {
    std::vector<std::string> keys;
    for (const auto& c : pe.cases) keys.push_back(c.guard.key() + "=>" + c.expr.str());
    std::sort(keys.begin(), keys.end());
    std::string all;
    for (auto& k : keys) all += k + "|";
    return all;
  };
  // accumulated value under a pure branch assignment (the guard sets may be
  // partitioned differently by association; the denoted function may not)
  auto value_at = [](const PredicatedExpr& pe, const std::map<NodeId, bool>& assign) {
    SymExpr acc;
    for (const auto& c : pe.cases)
      if (c.guard.eval_choice(assign)) acc = sym::add(acc, c.expr);
    return acc;
  };
  PredicatedExpr a;
  a.cases.push_back(PredCase{Guard::lit(1, true), V("qa")});
  PredicatedExpr b;
  b.cases.push_back(PredCase{Guard::lit(2, true), V("qb")});
  PredicatedExpr c;
  c.cases.push_back(PredCase{Guard::lit(1, false), V("qc")});

  CHECK(key_of(bowtie(a, b, plus)) == key_of(bowtie(b, a, plus)));
  PredicatedExpr l = bowtie(bowtie(a, b, plus), c, plus);
  PredicatedExpr r = bowtie(a, bowtie(b, c, plus), plus);
  for (int p1 = 0; p1 < 2; ++p1)
    for (int p2 = 0; p2 < 2; ++p2) {
      std::map<NodeId, bool> assign{{1, p1 == 1}, {2, p2 == 1}};
      CHECK(value_at(l, assign) == value_at(r, assign));
    }
}

TEST_CASE("weaken_predicate slackens atoms and requires bounds") {
  Predicate p = Predicate::atom(0, CmpOp::Le, 1);
  std::map<NodeId, double> bounds{{0, 1e-6}, {1, 0.0}};
  Predicate w = weaken_predicate(p, bounds);
  REQUIRE(w.weakening_slack.has_value());
  CHECK(w.weakening_slack->first == 1e-6);
  CHECK(w.weakening_slack->second == 0.0);
  CHECK_THROWS_AS(weaken_predicate(p, std::map<NodeId, double>{{0, 1e-6}}), Error);
}

TEST_CASE("weakening containment: exact satisfaction implies weakened satisfaction") {
  Problem p = parse_problem(bench("intro.sat"));
  taylor::AnalysisConfig cfg;
  taylor::Analysis a(p, cfg);
  a.prepare();
  NodeId sel = a.selects().at(0);
  sym::AtomId x1 = sym::AtomTable::instance().var("x1");
  sym::AtomId x2 = sym::AtomTable::instance().var("x2");
  std::mt19937_64 rng(31);
  for (int i = 0; i < 10000; ++i) {
    double a1 = std::uniform_real_distribution<double>(0.1, 5.0)(rng);
    double a2 = std::uniform_real_distribution<double>(0.1, 5.0)(rng);
    std::unordered_map<sym::AtomId, __float128> env{{x1, a1}, {x2, a2}};
    bool exact_then = a.exact_guard_truth(sel, env);
    if (exact_then) CHECK(a.lit_truth(sel, true, env));
    else CHECK(a.lit_truth(sel, false, env));
  }
}

TEST_CASE("instability window widths") {
  taylor::AnalysisConfig cfg;
  {
    Problem p = parse_problem(bench("intro.sat"));
    taylor::Analysis a(p, cfg);
    InstabilityReport rep = rank_instability(a);
    REQUIRE(rep.windows.size() == 1);
    CHECK(rep.windows[0].width == doctest::Approx(100 * 0x1p-24).epsilon(0.01));
  }
  {
    Problem p = parse_problem(bench("intro64.sat"));
    taylor::Analysis a(p, cfg);
    InstabilityReport rep = rank_instability(a);
    REQUIRE(rep.windows.size() == 1);
    CHECK(rep.windows[0].width == doctest::Approx(100 * 0x1p-53).epsilon(0.01));
    // within 15% of the rounded 1.0e-14 headline value
    CHECK(std::abs(rep.windows[0].width - 1.0e-14) / 1.0e-14 <= 0.15);
  }
  {
    // constant-only guard: zero gray zone
    Problem p = parse_problem(
        "INPUTS{x: fl64 in [0,1];} EXPRS{r: fl64 = if (3.0 <= 5.0) then x + x else x;} "
        "OUTPUTS{r;}");
    taylor::Analysis a(p, cfg);
    InstabilityReport rep = rank_instability(a);
    REQUIRE(rep.windows.size() == 1);
    CHECK(rep.windows[0].width == 0.0);
  }
}

TEST_CASE("instability jumps") {
  taylor::AnalysisConfig cfg;
  {
    Problem p = parse_problem(bench("intro.sat"));
    taylor::Analysis a(p, cfg);
    InstabilityReport rep = rank_instability(a);
    REQUIRE(rep.ranking.size() == 1);
    CHECK(rep.ranking[0].jump == doctest::Approx(0.99).epsilon(0.01));
  }
  {
    Problem p = parse_problem(
        "INPUTS{x: fl64 in [0,1];} EXPRS{r: fl64 = if (x <= 0.5) then x + x else x + x;} "
        "OUTPUTS{r;}");
    taylor::Analysis a(p, cfg);
    InstabilityReport rep = rank_instability(a);
    REQUIRE(rep.ranking.size() == 1);
    CHECK(rep.ranking[0].jump == 0.0);  // identical branches
  }
  {
    Problem p = parse_problem(
        "INPUTS{x: fl64 in [0,1];} EXPRS{r: fl64 = if (x <= 0.5) then x else x + 0.25;} "
        "OUTPUTS{r;}");
    taylor::Analysis a(p, cfg);
    InstabilityReport rep = rank_instability(a);
    REQUIRE(rep.ranking.size() == 1);
    CHECK(rep.ranking[0].jump == doctest::Approx(0.25).epsilon(0.01));
  }
}

TEST_CASE("ranking covers nested selects and is sorted") {
  taylor::AnalysisConfig cfg;
  Problem p = parse_problem(bench("branch_paths.sat"));
  taylor::Analysis a(p, cfg);
  InstabilityReport rep = rank_instability(a);
  CHECK(rep.ranking.size() >= 2);  // outer select pairs + the inner select
  for (size_t i = 1; i < rep.ranking.size(); ++i)
    CHECK(rep.ranking[i - 1].jump >= rep.ranking[i].jump);

  Problem q = parse_problem("INPUTS{x: fl64 in [0,1];} EXPRS{y: fl64 = x + x;} OUTPUTS{y;}");
  taylor::Analysis aq(q, cfg);
  InstabilityReport rq = rank_instability(aq);
  CHECK(rq.ranking.empty());
  CHECK(rq.windows.empty());
}

TEST_CASE("zero-overlap degeneration: bound equals the best branch-only bound") {
  taylor::AnalysisConfig cfg;
  // guard operand is an exact input: slack 0, overlap empty
  Problem p = parse_problem(
      "INPUTS{x: fl64 in [0,2]; y: fl64 in [0,3];}"
      "EXPRS{r: fl64 = if (x <= 1.0) then 2.0*x else 3.0*y;} OUTPUTS{r;}");
  double whole = taylor::analyze(p, cfg).outputs[0].absolute_bound;
  Problem pt = parse_problem("INPUTS{x: fl64 in [0,2];} EXPRS{r: fl64 = 2.0*x;} OUTPUTS{r;}");
  Problem pe = parse_problem("INPUTS{y: fl64 in [0,3];} EXPRS{r: fl64 = 3.0*y;} OUTPUTS{r;}");
  double bt = taylor::analyze(pt, cfg).outputs[0].absolute_bound;
  double be = taylor::analyze(pe, cfg).outputs[0].absolute_bound;
  CHECK(whole == doctest::Approx(std::max(bt, be)).epsilon(1e-9));
}

TEST_CASE("prune-mode jump never exceeds ignore-mode jump") {
  Problem p = parse_problem(bench("intro.sat"));
  taylor::AnalysisConfig ignore_cfg;
  taylor::AnalysisConfig prune_cfg;
  prune_cfg.opt.constraint_mode = gopt::ConstraintMode::Prune;
  prune_cfg.opt.max_subdivisions = 20000;
  taylor::Analysis ai(p, ignore_cfg);
  taylor::Analysis ap(p, prune_cfg);
  double ji = rank_instability(ai).ranking[0].jump;
  double jp = rank_instability(ap).ranking[0].jump;
  CHECK(jp <= ji * (1 + 1e-12));
}
