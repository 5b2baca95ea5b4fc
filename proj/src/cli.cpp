#include "fperr/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "fperr/abstraction.hpp"
#include "fperr/conditionals.hpp"
#include "fperr/empirical.hpp"
#include "fperr/parser.hpp"
#include "fperr/taylor.hpp"

namespace fperr::cli {

namespace {

struct RunConfig {
  std::string input;
  bool abstract_on = true;
  std::pair<int, int> window{10, 40};
  long maxopcount = 30000;
  double tolerance = 1e-2;
  double timeout = 10.0;
  int workers = 1;
  std::string constraints = "none";
  std::string instability = "off";
  long shadow_n = 0;
  long profile_n = 0;
  uint64_t seed = 42;
  std::string format = "text";
  std::string cache_path;
  bool relative = true;
};

taylor::AnalysisConfig analysis_config(const RunConfig& rc, gopt::MemoCache* cache) {
  taylor::AnalysisConfig cfg;
  cfg.opt.tolerance = rc.tolerance;
  cfg.opt.timeout_seconds = rc.timeout;
  cfg.opt.workers = rc.workers;
  cfg.opt.constraint_mode =
      rc.constraints == "prune" ? gopt::ConstraintMode::Prune : gopt::ConstraintMode::Ignore;
  cfg.max_op_count = rc.maxopcount;
  cfg.cache = cache;
  cfg.relative_estimates = rc.relative;
  return cfg;
}

nlohmann::json report_json(const taylor::BoundReport& rep) {
  nlohmann::json outs = nlohmann::json::array();
  for (const auto& o : rep.outputs) {
    nlohmann::json guards = nlohmann::json::array();
    for (const auto& g : o.guards) guards.push_back({{"guard", g.guard}, {"bound", g.bound}});
    nlohmann::json j{{"output", o.name},
                     {"bound", o.absolute_bound},
                     {"guards", guards},
                     {"stats",
                      {{"queries", o.queries}, {"cache_hits", o.cache_hits}, {"seconds", o.seconds}}},
                     {"mode", o.mode}};
    if (o.relative_estimate) j["relative"] = *o.relative_estimate;
    else j["relative"] = nullptr;
    if (!o.error.empty()) j["error"] = o.error;
    outs.push_back(std::move(j));
  }
  return outs;
}

void print_text(std::ostream& os, const taylor::BoundReport& rep) {
  for (const auto& o : rep.outputs) {
    if (!o.error.empty()) {
      os << "output " << o.name << ": ERROR: " << o.error << "\n";
      continue;
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6e", o.absolute_bound);
    os << "output " << o.name << ": absolute error bound = " << buf;
    std::snprintf(buf, sizeof buf, "%.3f", o.seconds);
    os << "  (time " << buf << " s, queries " << o.queries << ", cache hits " << o.cache_hits
       << ")\n";
    if (o.guards.size() > 1) {
      for (const auto& g : o.guards) {
        std::snprintf(buf, sizeof buf, "%.6e", g.bound);
        os << "    guard " << g.guard << ": " << buf << "\n";
      }
    }
    if (o.relative_estimate) {
      std::snprintf(buf, sizeof buf, "%.6e", *o.relative_estimate);
      os << "    relative error estimate: " << buf << "\n";
    }
  }
  os << "mode: " << rep.mode << "\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"rigorous worst-case rounding-error analysis for loop-free programs"};
  app.require_subcommand(0, 1);

  RunConfig rc;
  std::string subcmd = "analyze";

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("input", rc.input, "problem definition file (.sat)")->required();
    cmd->add_flag("--abstract,!--no-abstract", rc.abstract_on, "enable graph abstraction");
    cmd->add_option("--window", rc.window, "abstraction window LO,HI")->delimiter(',');
    cmd->add_option("--maxopcount", rc.maxopcount, "canonicalization throttle");
    cmd->add_option("--tol", rc.tolerance, "optimizer relative tolerance");
    cmd->add_option("--timeout", rc.timeout, "optimizer timeout per query, seconds");
    cmd->add_option("--workers", rc.workers, "optimizer worker threads");
    cmd->add_option("--constraints", rc.constraints, "constraint mode")
        ->check(CLI::IsMember({"none", "prune"}));
    cmd->add_option("--instability", rc.instability, "instability analysis")
        ->check(CLI::IsMember({"off", "report", "rank"}));
    cmd->add_option("--shadow", rc.shadow_n, "shadow-test sample count");
    cmd->add_option("--profile", rc.profile_n, "error-expression profiling sample count");
    cmd->add_option("--seed", rc.seed, "sampling seed");
    cmd->add_option("--format", rc.format, "report format")
        ->check(CLI::IsMember({"text", "json"}));
    cmd->add_option("--cache", rc.cache_path, "optimizer memo cache file");
    cmd->add_flag("--relative,!--no-relative", rc.relative, "estimate relative error");
  };

  CLI::App* analyze_cmd = app.add_subcommand("analyze", "full analysis pipeline (default)");
  CLI::App* shadow_cmd = app.add_subcommand("shadow", "shadow-value testing only");
  CLI::App* profile_cmd = app.add_subcommand("profile", "error-expression profiling only");
  CLI::App* instab_cmd = app.add_subcommand("instability", "instability analysis only");
  for (auto* c : {analyze_cmd, shadow_cmd, profile_cmd, instab_cmd}) add_common(c);

  // bare `fperr file.sat` == `fperr analyze file.sat`
  std::vector<std::string> argv = args;
  if (!argv.empty()) {
    const std::string& first = argv[0];
    if (first != "analyze" && first != "shadow" && first != "profile" &&
        first != "instability" && first.rfind("-", 0) != 0)
      argv.insert(argv.begin(), "analyze");
  }
  try {
    std::vector<const char*> cargs{"fperr"};
    for (auto& a : argv) cargs.push_back(a.c_str());
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      out << app.help();
      return 0;
    }
    err << "usage error: " << e.what() << "\n";
    return 2;
  }
  for (auto* c : {shadow_cmd, profile_cmd, instab_cmd})
    if (c->parsed()) subcmd = c->get_name();

  if (const char* env = std::getenv("FPERR_CACHE")) rc.cache_path = env;
  if (subcmd == "shadow" && rc.shadow_n == 0) rc.shadow_n = 100000;
  if (subcmd == "profile" && rc.profile_n == 0) rc.profile_n = 100000;
  if (subcmd == "instability" && rc.instability == "off") rc.instability = "rank";

  std::ifstream in(rc.input);
  if (!in) {
    err << "usage error: cannot read input file '" << rc.input << "'\n";
    return 2;
  }
  std::stringstream ss;
  ss << in.rdbuf();

  nlohmann::json jrep;
  jrep["file"] = rc.input;
  int exit_code = 0;

  try {
    Problem problem = parse_problem(ss.str());
    std::unique_ptr<gopt::MemoCache> cache;
    if (!rc.cache_path.empty()) cache = std::make_unique<gopt::MemoCache>(rc.cache_path);
    else cache = std::make_unique<gopt::MemoCache>();
    taylor::AnalysisConfig cfg = analysis_config(rc, cache.get());

    taylor::BoundReport rep;
    bool ran_bounds = false;
    if (subcmd == "analyze" || subcmd == "profile" || subcmd == "instability" ||
        rc.instability != "off") {
      if (rc.abstract_on) {
        abst::AbstractionWindow w{rc.window.first, rc.window.second};
        rep = abst::abstraction_loop(problem, w, cfg);
      } else {
        rep = taylor::analyze(problem, cfg);
      }
      ran_bounds = true;
      for (const auto& o : rep.outputs)
        if (!o.error.empty()) exit_code = 1;
    }

    if (ran_bounds && subcmd != "shadow") {
      jrep["mode"] = rep.mode;
      jrep["outputs"] = report_json(rep);
      if (rc.format == "text") print_text(out, rep);
    }

    if (rc.instability != "off") {
      taylor::Analysis a(problem, cfg);
      cond::InstabilityReport ir = cond::rank_instability(a);
      nlohmann::json windows = nlohmann::json::array();
      for (auto& w : ir.windows)
        windows.push_back({{"select", w.select}, {"atom", w.atom_index}, {"width", w.width}});
      nlohmann::json ranking = nlohmann::json::array();
      for (auto& j : ir.ranking)
        ranking.push_back({{"select", j.select},
                           {"then_guard", j.then_guard},
                           {"else_guard", j.else_guard},
                           {"jump", j.jump}});
      jrep["instability"] = {{"windows", windows}, {"ranking", ranking}};
      if (rc.format == "text") {
        char buf[64];
        for (auto& w : ir.windows) {
          std::snprintf(buf, sizeof buf, "%.6e", w.width);
          out << "instability window (select " << w.select << ", atom " << w.atom_index
              << "): " << buf << "\n";
        }
        for (auto& j : ir.ranking) {
          std::snprintf(buf, sizeof buf, "%.6e", j.jump);
          out << "instability jump (select " << j.select << "): " << buf << "  ["
              << j.then_guard << " vs " << j.else_guard << "]\n";
        }
      }
    }

    if (rc.shadow_n > 0 || rc.profile_n > 0) {
      emp::SampleConfig sc;
      sc.seed = rc.seed;
      nlohmann::json jemp;
      double shadow = 0.0, profiled = 0.0;
      long skipped = 0;
      if (rc.shadow_n > 0) {
        sc.n_samples = rc.shadow_n;
        shadow = emp::shadow_test(problem, sc, &skipped);
        jemp["shadow_max"] = shadow;
        jemp["skipped_samples"] = skipped;
        if (rc.format == "text") {
          char buf[64];
          std::snprintf(buf, sizeof buf, "%.6e", shadow);
          out << "shadow max (" << rc.shadow_n << " samples): " << buf << "\n";
        }
      }
      if (rc.profile_n > 0) {
        sc.n_samples = rc.profile_n;
        taylor::Analysis a(problem, cfg);
        profiled = emp::profile_error_expr(a, sc, &skipped);
        jemp["profiled_max"] = profiled;
        if (rc.format == "text") {
          char buf[64];
          std::snprintf(buf, sizeof buf, "%.6e", profiled);
          out << "profiled error-expression max (" << rc.profile_n << " samples): " << buf
              << "\n";
        }
      }
      if (rc.shadow_n > 0 && rc.profile_n > 0 && ran_bounds) {
        emp::EmpiricalReport er = emp::check_ordering(shadow, profiled, rep.max_bound());
        jemp["rigorous_bound"] = er.rigorous_bound;
        jemp["ordering_ok"] = er.ordering_ok;
        if (rc.format == "text")
          out << "empirical ordering (shadow <= profiled <= bound): "
              << (er.ordering_ok ? "ok" : "VIOLATED") << "\n";
      }
      jrep["empirical"] = std::move(jemp);
    }
  } catch (const ParseError& e) {
    jrep["error"] = {{"category", "dsl_frontend"}, {"message", e.what()}};
    if (rc.format == "json") out << jrep.dump(2) << "\n";
    else err << "error [dsl_frontend]: " << e.what() << "\n";
    return 1;
  } catch (const DomainViolation& e) {
    jrep["error"] = {{"category", "interval_core"}, {"message", e.what()}};
    if (rc.format == "json") out << jrep.dump(2) << "\n";
    else err << "error [interval_core]: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    jrep["error"] = {{"category", "analysis"}, {"message", e.what()}};
    if (rc.format == "json") out << jrep.dump(2) << "\n";
    else err << "error [analysis]: " << e.what() << "\n";
    return 1;
  }

  if (rc.format == "json") out << jrep.dump(2) << "\n";
  return exit_code;
}

}  // namespace fperr::cli
