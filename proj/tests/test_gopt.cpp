#include <doctest.h>
#include <quadmath.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "fperr/gopt.hpp"
#include "fperr/parser.hpp"

using namespace fperr;
using namespace fperr::gopt;
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
}  // namespace

TEST_CASE("pow keeps variable sharing: exact [-1,125]") {
  SymExpr e = sym::mul(sym::mul(V("x"), V("x")), V("x"));
  Box box = Box::of({{"x", Interval(-1, 5)}});
  OptConfig cfg;
  OptResult r = maximize_upper(e, box, cfg);
  CHECK(r.upper_bound == 125.0);
  CHECK(r.certified_lower >= 125.0 * (1 - cfg.tolerance));
  Interval rng = range(e, box, cfg);
  CHECK(rng.lo == -1.0);
  CHECK(rng.hi == 125.0);
}

TEST_CASE("absolute-value objective over the rectangle") {
  // |0.1 x1 - 0.2 x2| peaks at the mixed corner: 0.99
  SymExpr e = sym::sub(sym::mul(C(0.1), V("x1")), sym::mul(C(0.2), V("x2")));
  Box box = Box::of({{"x1", Interval(0.1, 5)}, {"x2", Interval(0.1, 5)}});
  OptConfig cfg;
  OptResult r = maximize_upper(Objective::leaf(e, 1.0, /*abs=*/true), box, cfg);
  CHECK(r.upper_bound >= 0.99);
  CHECK(r.upper_bound <= 0.99 * 1.01);
  CHECK(r.status == OptStatus::Converged);
}

TEST_CASE("degenerate interval short-circuits to the point value") {
  Box box = Box::of({{"x", Interval(2, 2)}});
  OptResult r = maximize_upper(V("x"), box, OptConfig{});
  CHECK(r.upper_bound == 2.0);
  CHECK(r.certified_lower == 2.0);
  CHECK(r.status == OptStatus::Converged);
}

TEST_CASE("range of x - x is exactly zero after canonicalization") {
  SymExpr e = sym::sub(V("x"), V("x"));
  CHECK(e.is_zero());
  Interval r = range(e, Box::of({{"x", Interval(-3, 7)}}), OptConfig{});
  CHECK(r.lo == 0.0);
  CHECK(r.hi == 0.0);
}

TEST_CASE("quadrature kernel: canonical range vs naive interval evaluation") {
  Problem p = parse_problem(bench("dqmom.sat"));
  // naive factored evaluation blows up past [-4.5e10, 4.5e10]
  std::vector<Interval> naive = eval_dag_intervals(p);
  Interval root = naive[p.outputs[0]];
  CHECK(root.lo <= -4.5e10);
  CHECK(root.hi >= 4.5e10);

  // canonical: 3 a^2 m / w terms, range [-9e5, 9e5] within 1%
  auto grp = [](const char* a, const char* m, const char* w) {
    return sym::mul(C(3.0), sym::mul(sym::pow_int(V(a), 2), sym::div(V(m), V(w))));
  };
  SymExpr r = sym::add(sym::add(grp("a0", "m0", "w0"), grp("a1", "m1", "w1")),
                       grp("a2", "m2", "w2"));
  Box box;
  for (auto& [name, iv] : p.input_domains) {
    box.vars.push_back(sym::AtomTable::instance().var(name));
    box.iv.push_back(iv);
  }
  Interval cr = range(r, box, OptConfig{});
  CHECK(cr.hi <= 9.0e5 * 1.01);
  CHECK(cr.hi >= 9.0e5 * 0.99);
  CHECK(cr.lo >= -9.0e5 * 1.01);
  CHECK(cr.lo <= -9.0e5 * 0.99);
}

TEST_CASE("min_abs_lower") {
  OptConfig cfg;
  CHECK(min_abs_lower(V("x"), Box::of({{"x", Interval(1, 2)}}), cfg) == doctest::Approx(1.0).epsilon(0.02));
  CHECK(min_abs_lower(V("x"), Box::of({{"x", Interval(-1, 2)}}), cfg) == 0.0);
  // min of x^2 + 1 on [-1,1] is 1 at x = 0 (calculus oracle)
  SymExpr e = sym::add(sym::pow_int(V("x"), 2), C(1.0));
  double m = min_abs_lower(e, Box::of({{"x", Interval(-1, 1)}}), cfg);
  CHECK(m <= 1.0);
  CHECK(m >= 1.0 - 2 * cfg.tolerance);
}

TEST_CASE("query signatures normalize variable renaming") {
  Box b1 = Box::of({{"sx", Interval(0, 1)}, {"sy", Interval(0, 1)}});
  Box b2 = Box::of({{"sa", Interval(0, 1)}, {"sb", Interval(0, 1)}});
  Objective o1 = Objective::leaf(sym::add(V("sx"), V("sy")));
  Objective o2 = Objective::leaf(sym::add(V("sa"), V("sb")));
  CHECK(query_signature(o1, b1, "") == query_signature(o2, b2, ""));

  Box b3 = Box::of({{"sx", Interval(0, 2)}, {"sy", Interval(0, 2)}});
  CHECK(query_signature(o1, b1, "") != query_signature(o1, b3, ""));
  CHECK(query_signature(o1, b1, "") != query_signature(o1, b1, "guarded"));
}

TEST_CASE("memo cache: hits, transparency, disk round trip") {
  SymExpr e = sym::mul(V("cx"), V("cy"));
  Box box = Box::of({{"cx", Interval(0, 3)}, {"cy", Interval(-1, 2)}});
  OptConfig cfg;
  MemoCache cache;
  OptResult first = maximize_upper(Objective::leaf(e), box, cfg, nullptr, "", &cache);
  CHECK(first.cache_hits == 0);
  OptResult second = maximize_upper(Objective::leaf(e), box, cfg, nullptr, "", &cache);
  CHECK(second.cache_hits == 1);
  CHECK(second.upper_bound == first.upper_bound);
  CHECK(second.certified_lower == first.certified_lower);

  OptResult plain = maximize_upper(Objective::leaf(e), box, cfg);
  CHECK(plain.upper_bound == first.upper_bound);  // cache transparency

  auto path = std::filesystem::temp_directory_path() / "fperr_cache_test.tsv";
  std::filesystem::remove(path);
  {
    MemoCache disk(path.string());
    maximize_upper(Objective::leaf(e), box, cfg, nullptr, "", &disk);
  }
  {
    std::ifstream in(path);
    std::string line;
    REQUIRE(std::getline(in, line));
    size_t t1 = line.find('\t');
    size_t t2 = line.find('\t', t1 + 1);
    REQUIRE(t1 == 32);  // 128-bit digest in hex
    REQUIRE(t2 != std::string::npos);
    CHECK(std::strtod(line.c_str() + t1 + 1, nullptr) == first.upper_bound);
  }
  {
    MemoCache disk(path.string());
    OptResult hit = maximize_upper(Objective::leaf(e), box, cfg, nullptr, "", &disk);
    CHECK(hit.cache_hits == 1);
    CHECK(hit.upper_bound == first.upper_bound);
  }
  std::filesystem::remove(path);
}

TEST_CASE("single-worker determinism") {
  SymExpr e = sym::sub(sym::mul(V("dx"), V("dy")), sym::pow_int(V("dx"), 2));
  Box box = Box::of({{"dx", Interval(-1, 2)}, {"dy", Interval(-2, 1)}});
  OptConfig cfg;
  cfg.tolerance = 1e-4;
  OptResult a = maximize_upper(e, box, cfg);
  OptResult b = maximize_upper(e, box, cfg);
  CHECK(a.upper_bound == b.upper_bound);
  CHECK(a.certified_lower == b.certified_lower);
  CHECK(a.queries == b.queries);
  CHECK(a.status == b.status);
}

TEST_CASE("soundness against dense sampling") {
  std::mt19937_64 rng(2718);
  for (int iter = 0; iter < 20; ++iter) {
    // random cubic in two variables
    SymExpr x = V("fx"), y = V("fy");
    SymExpr e;
    for (int i = 0; i <= 2; ++i)
      for (int j = 0; j <= 2; ++j) {
        double c = std::uniform_real_distribution<double>(-2, 2)(rng);
        e = sym::add(e, sym::mul(C(c), sym::mul(sym::pow_int(x, i), sym::pow_int(y, j))));
      }
    Box box = Box::of({{"fx", Interval(-1.5, 1.5)}, {"fy", Interval(-1.5, 1.5)}});
    OptResult r = maximize_upper(e, box, OptConfig{});
    sym::AtomId ix = sym::AtomTable::instance().var("fx");
    sym::AtomId iy = sym::AtomTable::instance().var("fy");
    double best = -1e300;
    for (int s = 0; s < 100000; ++s) {
      std::unordered_map<sym::AtomId, __float128> env{
          {ix, std::uniform_real_distribution<double>(-1.5, 1.5)(rng)},
          {iy, std::uniform_real_distribution<double>(-1.5, 1.5)(rng)}};
      best = std::max(best, static_cast<double>(e.eval_quad(env)));
    }
    CHECK(r.upper_bound >= best);
  }
}

TEST_CASE("convergence on smooth polynomials") {
  SymExpr x = V("gx");
  // max of 4x - x^2 - x^4/8 on [0, 2.5]
  SymExpr e = sym::sub(sym::sub(sym::mul(C(4.0), x), sym::pow_int(x, 2)),
                       sym::mul(C(0.125), sym::pow_int(x, 4)));
  OptConfig cfg;
  cfg.tolerance = 1e-4;
  OptResult r = maximize_upper(e, Box::of({{"gx", Interval(0, 2.5)}}), cfg);
  CHECK(r.status == OptStatus::Converged);
  // independent oracle: dense scan
  double best = -1e300;
  sym::AtomId ix = sym::AtomTable::instance().var("gx");
  for (int i = 0; i <= 1000000; ++i) {
    double v = 2.5 * i / 1000000.0;
    std::unordered_map<sym::AtomId, __float128> env{{ix, v}};
    best = std::max(best, static_cast<double>(e.eval_quad(env)));
  }
  CHECK(r.upper_bound >= best);
  CHECK(r.upper_bound - best <= 2 * cfg.tolerance * std::abs(best));
}

TEST_CASE("prune mode never exceeds ignore mode") {
  SymExpr e = sym::add(V("px"), V("py"));
  Box box = Box::of({{"px", Interval(0, 1)}, {"py", Interval(0, 1)}});
  sym::AtomId ix = sym::AtomTable::instance().var("px");
  GuardFn guard = [ix](const std::unordered_map<sym::AtomId, Interval>& env) {
    const Interval& x = env.at(ix);
    if (x.lo > 0.5) return Certainty::False;  // constraint: x <= 0.5
    if (x.hi <= 0.5) return Certainty::True;
    return Certainty::Unknown;
  };
  OptConfig ignore_cfg;
  OptConfig prune_cfg;
  prune_cfg.constraint_mode = ConstraintMode::Prune;
  double up_ignore = maximize_upper(Objective::leaf(e), box, ignore_cfg).upper_bound;
  double up_prune =
      maximize_upper(Objective::leaf(e), box, prune_cfg, &guard, "x<=0.5").upper_bound;
  CHECK(up_prune <= up_ignore);
  CHECK(up_prune <= 1.5 * 1.02);
  CHECK(up_prune >= 1.5 * 0.97);
}

TEST_CASE("parallel workers stay sound") {
  SymExpr e = sym::mul(sym::sub(C(1.0), V("wx")), sym::add(V("wy"), sym::pow_int(V("wx"), 2)));
  Box box = Box::of({{"wx", Interval(-2, 2)}, {"wy", Interval(-2, 2)}});
  OptConfig cfg;
  cfg.workers = 4;
  cfg.tolerance = 1e-3;
  OptResult r = maximize_upper(e, box, cfg);
  std::mt19937_64 rng(5);
  sym::AtomId ix = sym::AtomTable::instance().var("wx");
  sym::AtomId iy = sym::AtomTable::instance().var("wy");
  double best = -1e300;
  for (int s = 0; s < 200000; ++s) {
    std::unordered_map<sym::AtomId, __float128> env{
        {ix, std::uniform_real_distribution<double>(-2, 2)(rng)},
        {iy, std::uniform_real_distribution<double>(-2, 2)(rng)}};
    best = std::max(best, static_cast<double>(e.eval_quad(env)));
  }
  CHECK(r.upper_bound >= best);
  CHECK(r.upper_bound <= best * 1.05 + 1e-12);
}

TEST_CASE("domain violations are reported, not widened") {
  SymExpr e = sym::recip(V("zx"));
  Box box = Box::of({{"zx", Interval(-1, 1)}});
  OptResult r = maximize_upper(e, box, OptConfig{});
  CHECK(r.status == OptStatus::DomainViolation);
  CHECK(std::isinf(r.upper_bound));
  CHECK_THROWS_AS(range(e, box, OptConfig{}), DomainViolation);
}
