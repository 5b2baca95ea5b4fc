#include "fperr/parser.hpp"

#include <atomic>
#include <cctype>
#include <cstdlib>
#include <sstream>
#include <unordered_map>

#include "fperr/errors.hpp"

namespace fperr {

namespace {

std::atomic<uint64_t> g_scope_counter{1};

struct Token {
  enum class Kind { Ident, Number, Punct, End };
  Kind kind;
  std::string text;
  int line, col;
};

std::vector<Token> lex(const std::string& src) {
  std::vector<Token> out;
  int line = 1, col = 1;
  size_t i = 0;
  auto advance = [&](size_t k) {
    for (size_t j = 0; j < k; ++j, ++i) {
      if (src[i] == '\n') { ++line; col = 1; }
      else ++col;
    }
  };
  while (i < src.size()) {
    char c = src[i];
    if (c == '#') {
      while (i < src.size() && src[i] != '\n') advance(1);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) { advance(1); continue; }
    int tl = line, tc = col;
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      size_t j = i;
      while (j < src.size() && (std::isalnum(static_cast<unsigned char>(src[j])) || src[j] == '_')) ++j;
      out.push_back({Token::Kind::Ident, src.substr(i, j - i), tl, tc});
      advance(j - i);
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) ||
        (c == '.' && i + 1 < src.size() && std::isdigit(static_cast<unsigned char>(src[i + 1])))) {
      size_t j = i;
      while (j < src.size() && (std::isdigit(static_cast<unsigned char>(src[j])) || src[j] == '.')) ++j;
      if (j < src.size() && (src[j] == 'e' || src[j] == 'E')) {
        size_t k = j + 1;
        if (k < src.size() && (src[k] == '+' || src[k] == '-')) ++k;
        if (k < src.size() && std::isdigit(static_cast<unsigned char>(src[k]))) {
          ++k;
          while (k < src.size() && std::isdigit(static_cast<unsigned char>(src[k]))) ++k;
          j = k;
        }
      }
      out.push_back({Token::Kind::Number, src.substr(i, j - i), tl, tc});
      advance(j - i);
      continue;
    }
    // multi-char punctuation first
    static const char* two[] = {"<=", ">=", "&&", "||"};
    bool matched = false;
    for (const char* t : two) {
      if (src.compare(i, 2, t) == 0) {
        out.push_back({Token::Kind::Punct, t, tl, tc});
        advance(2);
        matched = true;
        break;
      }
    }
    if (matched) continue;
    static const std::string singles = "{}[](),;:=+-*/<>!";
    if (singles.find(c) != std::string::npos) {
      out.push_back({Token::Kind::Punct, std::string(1, c), tl, tc});
      advance(1);
      continue;
    }
    throw ParseError(std::string("unexpected character '") + c + "'", tl, tc);
  }
  out.push_back({Token::Kind::End, "", line, col});
  return out;
}

struct InputDecl {
  Precision prec;
  bool rounded;
  Interval domain;
};

class Parser {
 public:
  explicit Parser(const std::string& src) : toks_(lex(src)) {
    problem_.dag.scope = g_scope_counter.fetch_add(1);
  }

  Problem run() {
    expect_ident("INPUTS");
    expect("{");
    while (!peek_is("}")) parse_input_decl();
    expect("}");
    if (problem_.input_domains.empty())
      throw ParseError("at least one input is required", cur().line, cur().col);
    expect_ident("EXPRS");
    expect("{");
    while (!peek_is("}")) parse_binding();
    expect("}");
    if (problem_.bindings.empty())
      throw ParseError("at least one expression binding is required", cur().line, cur().col);
    expect_ident("OUTPUTS");
    expect("{");
    while (!peek_is("}")) parse_output();
    expect("}");
    if (problem_.outputs.empty())
      throw ParseError("empty OUTPUTS section", cur().line, cur().col);
    if (!peek_end())
      throw ParseError("trailing input after OUTPUTS", cur().line, cur().col);
    problem_.dag.roots = problem_.outputs;
    prune_unreachable();
    problem_.dag = infer_cast_map(std::move(problem_.dag));
    validate_problem(problem_);
    return std::move(problem_);
  }

  // Folding can orphan literal nodes (a folded-away 0.0 or 1.0); compact the
  // dag to the nodes reachable from bindings and outputs.
  void prune_unreachable() {
    const size_t n = problem_.dag.nodes.size();
    std::vector<bool> reach(n, false);
    std::vector<NodeId> stack;
    for (auto& [name, id] : problem_.bindings) stack.push_back(id);
    for (NodeId r : problem_.dag.roots) stack.push_back(r);
    while (!stack.empty()) {
      NodeId id = stack.back();
      stack.pop_back();
      if (reach[id]) continue;
      reach[id] = true;
      for (NodeId c : problem_.dag.nodes[id].children) stack.push_back(c);
    }
    std::vector<NodeId> remap(n, 0);
    std::vector<Node> kept;
    kept.reserve(n);
    for (NodeId id = 0; id < n; ++id) {
      if (!reach[id]) continue;
      Node nd = std::move(problem_.dag.nodes[id]);
      for (auto& c : nd.children) c = remap[c];
      if (nd.guard) {
        std::vector<Predicate*> atoms;
        nd.guard->collect_atoms_mut(atoms);
        for (auto* a : atoms) {
          a->lhs = remap[a->lhs];
          a->rhs = remap[a->rhs];
        }
      }
      nd.id = static_cast<NodeId>(kept.size());
      remap[id] = nd.id;
      kept.push_back(std::move(nd));
    }
    problem_.dag.nodes = std::move(kept);
    for (auto& r : problem_.dag.roots) r = remap[r];
    for (auto& o : problem_.outputs) o = remap[o];
    for (auto& [name, id] : problem_.bindings) id = remap[id];
  }

 private:
  std::vector<Token> toks_;
  size_t pos_ = 0;
  Problem problem_;
  std::unordered_map<std::string, InputDecl> inputs_;
  std::unordered_map<std::string, NodeId> bound_;

  const Token& cur() const { return toks_[pos_]; }
  bool peek_is(const std::string& t) const {
    return cur().kind == Token::Kind::Punct && cur().text == t;
  }
  bool peek_ident(const std::string& t) const {
    return cur().kind == Token::Kind::Ident && cur().text == t;
  }
  bool peek_end() const { return cur().kind == Token::Kind::End; }
  void expect(const std::string& t) {
    if (!peek_is(t))
      throw ParseError("expected '" + t + "', found '" + cur().text + "'", cur().line, cur().col);
    ++pos_;
  }
  void expect_ident(const std::string& t) {
    if (!peek_ident(t))
      throw ParseError("expected '" + t + "', found '" + cur().text + "'", cur().line, cur().col);
    ++pos_;
  }
  std::string take_ident() {
    if (cur().kind != Token::Kind::Ident)
      throw ParseError("expected identifier, found '" + cur().text + "'", cur().line, cur().col);
    return toks_[pos_++].text;
  }
  bool accept(const std::string& t) {
    if (peek_is(t)) { ++pos_; return true; }
    return false;
  }
  bool accept_ident(const std::string& t) {
    if (peek_ident(t)) { ++pos_; return true; }
    return false;
  }

  Precision parse_precision() {
    std::string p = take_ident();
    if (p == "fl16") return Precision::fp16;
    if (p == "fl32") return Precision::fp32;
    if (p == "fl64") return Precision::fp64;
    throw ParseError("unknown precision '" + p + "'", toks_[pos_ - 1].line, toks_[pos_ - 1].col);
  }

  double parse_number() {
    bool negate = accept("-");
    if (cur().kind != Token::Kind::Number)
      throw ParseError("expected number, found '" + cur().text + "'", cur().line, cur().col);
    double v = std::strtod(toks_[pos_++].text.c_str(), nullptr);
    return negate ? -v : v;
  }

  void parse_input_decl() {
    const Token& nameTok = cur();
    std::string name = take_ident();
    if (inputs_.count(name))
      throw ParseError("duplicate binding '" + name + "'", nameTok.line, nameTok.col);
    expect(":");
    Precision prec = parse_precision();
    bool rounded = accept_ident("rounded");
    expect_ident("in");
    expect("[");
    double lo = parse_number();
    expect(",");
    double hi = parse_number();
    expect("]");
    expect(";");
    if (lo > hi)
      throw ParseError("invalid interval [" + std::to_string(lo) + ", " + std::to_string(hi) +
                           "] (lo > hi)",
                       nameTok.line, nameTok.col);
    inputs_.emplace(name, InputDecl{prec, rounded, Interval(lo, hi)});
    problem_.input_domains.emplace(name, Interval(lo, hi));
    problem_.input_precisions.emplace(name, prec);
    if (rounded) problem_.rounded_inputs.insert(name);
  }

  void parse_binding() {
    const Token& nameTok = cur();
    std::string name = take_ident();
    if (bound_.count(name) || inputs_.count(name))
      throw ParseError("duplicate binding '" + name + "'", nameTok.line, nameTok.col);
    expect(":");
    Precision prec = parse_precision();
    expect("=");
    NodeId id = parse_expr(prec);
    expect(";");
    bound_.emplace(name, id);
    problem_.bindings.emplace_back(name, id);
  }

  void parse_output() {
    const Token& nameTok = cur();
    std::string name = take_ident();
    expect(";");
    auto it = bound_.find(name);
    if (it == bound_.end())
      throw ParseError("undefined variable '" + name + "' in OUTPUTS", nameTok.line, nameTok.col);
    problem_.outputs.push_back(it->second);
    problem_.output_names.push_back(name);
  }

  // -- node construction ----------------------------------------------------

  NodeId push_node(Node n) {
    n.id = static_cast<NodeId>(problem_.dag.nodes.size());
    problem_.dag.nodes.push_back(std::move(n));
    return problem_.dag.nodes.back().id;
  }

  NodeId mk_const(const mpq_class& exact, Precision prec) {
    // snap a non-representable literal to its correctly rounded binary value
    double d = static_cast<double>(sym::rational_to_quad(exact));
    d = round_to(d, prec);
    Node n;
    n.op = OpKind::Const;
    n.precision = prec;
    n.cval = sym::rational_of(d);
    return push_node(std::move(n));
  }

  NodeId mk_leaf(const std::string& var, const Token& tok) {
    auto it = inputs_.find(var);
    if (it == inputs_.end())
      throw ParseError("undefined variable '" + var + "'", tok.line, tok.col);
    Node n;
    n.op = OpKind::Input;
    n.precision = it->second.prec;
    n.var = var;
    if (it->second.rounded) n.delta_bound = unit_roundoff(it->second.prec);
    return push_node(std::move(n));
  }

  bool is_const(NodeId id, const mpq_class& v) const {
    const Node& n = problem_.dag.nodes[id];
    return n.op == OpKind::Const && n.cval == v;
  }

  std::optional<mpq_class> const_of(NodeId id) const {
    const Node& n = problem_.dag.nodes[id];
    if (n.op == OpKind::Const) return n.cval;
    return std::nullopt;
  }

  NodeId mk_op(OpKind op, std::vector<NodeId> kids, Precision prec) {
    // identity folds (only when no precision change is hidden by the fold)
    auto same_prec = [&](NodeId k) { return problem_.dag.nodes[k].precision == prec; };
    if (op == OpKind::Mul) {
      if (is_const(kids[0], 1) && same_prec(kids[1])) return kids[1];
      if (is_const(kids[1], 1) && same_prec(kids[0])) return kids[0];
    }
    if (op == OpKind::Add) {
      if (is_const(kids[0], 0) && same_prec(kids[1])) return kids[1];
      if (is_const(kids[1], 0) && same_prec(kids[0])) return kids[0];
    }
    if (op == OpKind::Sub) {
      if (is_const(kids[1], 0) && same_prec(kids[0])) return kids[0];
      if (is_const(kids[0], 0)) return mk_op(OpKind::Neg, {kids[1]}, prec);
    }
    if (op == OpKind::Neg) {
      if (auto c = const_of(kids[0])) return mk_const(mpq_class(-*c), prec);
    }
    // exact constant arithmetic folds only when the result is representable
    if (op == OpKind::Add || op == OpKind::Sub || op == OpKind::Mul || op == OpKind::Div) {
      auto ca = const_of(kids[0]);
      auto cb = const_of(kids[1]);
      if (ca && cb) {
        mpq_class r;
        bool ok = true;
        switch (op) {
          case OpKind::Add: r = *ca + *cb; break;
          case OpKind::Sub: r = *ca - *cb; break;
          case OpKind::Mul: r = *ca * *cb; break;
          default:
            if (*cb == 0) ok = false;
            else r = *ca / *cb;
        }
        if (ok) {
          double d = static_cast<double>(sym::rational_to_quad(r));
          if (sym::rational_of(round_to(d, prec)) == r) return mk_const(r, prec);
        }
      }
    }
    Node n;
    n.op = op;
    n.children = std::move(kids);
    n.precision = prec;
    // sign flips are exact in IEEE arithmetic; everything else rounds
    n.delta_bound = op == OpKind::Neg ? 0.0 : unit_roundoff(prec);
    return push_node(std::move(n));
  }

  // -- expressions ----------------------------------------------------------

  NodeId parse_expr(Precision prec) {
    if (accept_ident("if")) {
      expect("(");
      Predicate pred = parse_pred(prec);
      expect(")");
      expect_ident("then");
      NodeId t = parse_expr(prec);
      expect_ident("else");
      NodeId e = parse_expr(prec);
      std::vector<Predicate*> atoms;
      std::vector<NodeId> kids{t, e};
      pred.collect_atoms_mut(atoms);
      for (auto* a : atoms) {
        kids.push_back(a->lhs);
        kids.push_back(a->rhs);
      }
      Node n;
      n.op = OpKind::Select;
      n.children = std::move(kids);
      n.precision = prec;
      n.delta_bound = 0.0;  // selection introduces no rounding
      n.guard = std::move(pred);
      return push_node(std::move(n));
    }
    return parse_addsub(prec);
  }

  NodeId parse_addsub(Precision prec) {
    NodeId lhs = parse_muldiv(prec);
    for (;;) {
      if (accept("+")) lhs = mk_op(OpKind::Add, {lhs, parse_muldiv(prec)}, prec);
      else if (accept("-")) lhs = mk_op(OpKind::Sub, {lhs, parse_muldiv(prec)}, prec);
      else return lhs;
    }
  }

  NodeId parse_muldiv(Precision prec) {
    NodeId lhs = parse_unary(prec);
    for (;;) {
      if (accept("*")) lhs = mk_op(OpKind::Mul, {lhs, parse_unary(prec)}, prec);
      else if (accept("/")) lhs = mk_op(OpKind::Div, {lhs, parse_unary(prec)}, prec);
      else return lhs;
    }
  }

  NodeId parse_unary(Precision prec) {
    if (accept("-")) return mk_op(OpKind::Neg, {parse_unary(prec)}, prec);
    return parse_primary(prec);
  }

  NodeId parse_primary(Precision prec) {
    if (cur().kind == Token::Kind::Number) {
      mpq_class q = decimal_to_rational(toks_[pos_].text, cur());
      ++pos_;
      return mk_const(q, prec);
    }
    if (accept("(")) {
      NodeId e = parse_expr(prec);
      expect(")");
      return e;
    }
    if (cur().kind == Token::Kind::Ident) {
      static const std::unordered_map<std::string, OpKind> funcs = {
          {"sqrt", OpKind::Sqrt}, {"sin", OpKind::Sin}, {"cos", OpKind::Cos},
          {"exp", OpKind::Exp},   {"log", OpKind::Log},
      };
      auto f = funcs.find(cur().text);
      if (f != funcs.end()) {
        ++pos_;
        expect("(");
        NodeId a = parse_expr(prec);
        expect(")");
        return mk_op(f->second, {a}, prec);
      }
      const Token& tok = cur();
      std::string name = take_ident();
      auto b = bound_.find(name);
      if (b != bound_.end()) return b->second;  // shared reference
      return mk_leaf(name, tok);                // fresh occurrence leaf
    }
    throw ParseError("expected expression, found '" + cur().text + "'", cur().line, cur().col);
  }

  mpq_class decimal_to_rational(const std::string& text, const Token& tok) {
    // exact decimal value: digits / 10^k, scaled by the exponent
    std::string mant = text;
    long exp10 = 0;
    size_t epos = mant.find_first_of("eE");
    if (epos != std::string::npos) {
      exp10 = std::strtol(mant.c_str() + epos + 1, nullptr, 10);
      mant = mant.substr(0, epos);
    }
    size_t dot = mant.find('.');
    if (dot != std::string::npos) {
      exp10 -= static_cast<long>(mant.size() - dot - 1);
      mant.erase(dot, 1);
    }
    if (mant.empty()) throw ParseError("malformed number '" + text + "'", tok.line, tok.col);
    mpq_class q(mpz_class(mant, 10));
    mpz_class p10;
    mpz_ui_pow_ui(p10.get_mpz_t(), 10, static_cast<unsigned long>(std::labs(exp10)));
    if (exp10 >= 0) q *= mpq_class(p10);
    else q /= mpq_class(p10);
    q.canonicalize();
    return q;
  }

  // -- predicates -----------------------------------------------------------

  Predicate parse_pred(Precision prec) { return parse_or(prec); }

  Predicate parse_or(Precision prec) {
    Predicate lhs = parse_and(prec);
    while (accept("||")) lhs = Predicate::disj(std::move(lhs), parse_and(prec));
    return lhs;
  }

  Predicate parse_and(Precision prec) {
    Predicate lhs = parse_not(prec);
    while (accept("&&")) lhs = Predicate::conj(std::move(lhs), parse_not(prec));
    return lhs;
  }

  Predicate parse_not(Precision prec) {
    if (accept("!")) return Predicate::negate(parse_not(prec));
    // '(' may open a nested predicate or a parenthesized comparison operand;
    // try the comparison first and backtrack.
    size_t save = pos_;
    size_t dag_save = problem_.dag.nodes.size();
    try {
      NodeId l = parse_addsub(prec);
      CmpOp cmp;
      if (accept("<=")) cmp = CmpOp::Le;
      else if (accept(">=")) cmp = CmpOp::Ge;
      else if (accept("<")) cmp = CmpOp::Lt;
      else if (accept(">")) cmp = CmpOp::Gt;
      else throw ParseError("expected comparison", cur().line, cur().col);
      NodeId r = parse_addsub(prec);
      return Predicate::atom(l, cmp, r);
    } catch (const ParseError&) {
      pos_ = save;
      problem_.dag.nodes.resize(dag_save);
      if (accept("(")) {
        Predicate p = parse_pred(prec);
        expect(")");
        return p;
      }
      throw;
    }
  }
};

// ---------------------------------------------------------------------------
// printing

void print_expr(std::ostream& os, const Problem& p, NodeId id,
                const std::unordered_map<NodeId, std::string>& names, bool toplevel);

void print_pred(std::ostream& os, const Problem& p, const Predicate& pred,
                const std::unordered_map<NodeId, std::string>& names) {
  switch (pred.kind) {
    case Predicate::Kind::True: os << "0.0 <= 1.0"; break;
    case Predicate::Kind::Atom:
      print_expr(os, p, pred.lhs, names, false);
      os << ' ' << cmp_name(pred.cmp) << ' ';
      print_expr(os, p, pred.rhs, names, false);
      break;
    case Predicate::Kind::Not:
      os << "!(";
      print_pred(os, p, pred.kids[0], names);
      os << ')';
      break;
    case Predicate::Kind::And:
    case Predicate::Kind::Or:
      os << '(';
      print_pred(os, p, pred.kids[0], names);
      os << (pred.kind == Predicate::Kind::And ? " && " : " || ");
      print_pred(os, p, pred.kids[1], names);
      os << ')';
      break;
  }
}

void print_expr(std::ostream& os, const Problem& p, NodeId id,
                const std::unordered_map<NodeId, std::string>& names, bool toplevel) {
  if (!toplevel) {
    auto it = names.find(id);
    if (it != names.end()) {
      os << it->second;
      return;
    }
  }
  const Node& n = p.dag.nodes[id];
  char buf[40];
  switch (n.op) {
    case OpKind::Input: os << n.var; break;
    case OpKind::Const: {
      double d = static_cast<double>(sym::rational_to_quad(n.cval));
      std::snprintf(buf, sizeof buf, "%.17g", d);
      if (d < 0) os << '(' << buf << ')';
      else os << buf;
      break;
    }
    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::Mul:
    case OpKind::Div:
      os << '(';
      print_expr(os, p, n.children[0], names, false);
      os << ' ' << op_name(n.op) << ' ';
      print_expr(os, p, n.children[1], names, false);
      os << ')';
      break;
    case OpKind::Neg:
      os << "(-";
      print_expr(os, p, n.children[0], names, false);
      os << ')';
      break;
    case OpKind::Sqrt:
    case OpKind::Sin:
    case OpKind::Cos:
    case OpKind::Exp:
    case OpKind::Log:
      os << op_name(n.op) << '(';
      print_expr(os, p, n.children[0], names, false);
      os << ')';
      break;
    case OpKind::Select:
      os << "if (";
      print_pred(os, p, *n.guard, names);
      os << ") then ";
      print_expr(os, p, n.children[0], names, false);
      os << " else ";
      print_expr(os, p, n.children[1], names, false);
      break;
    case OpKind::PowInt:
      // no surface syntax; expand as a product
      os << '(';
      for (long i = 0; i < n.pow_exp; ++i) {
        if (i) os << " * ";
        print_expr(os, p, n.children[0], names, false);
      }
      os << ')';
      break;
  }
}

}  // namespace

Problem parse_problem(const std::string& text) { return Parser(text).run(); }

std::string print_problem(const Problem& p) {
  std::ostringstream os;
  os << "INPUTS {\n";
  for (auto& [name, iv] : p.input_domains) {
    os << "  " << name << " : " << precision_name(p.input_precisions.at(name));
    if (p.rounded_inputs.count(name)) os << " rounded";
    char lo[40], hi[40];
    std::snprintf(lo, sizeof lo, "%.17g", iv.lo);
    std::snprintf(hi, sizeof hi, "%.17g", iv.hi);
    os << " in [" << lo << ", " << hi << "];\n";
  }
  os << "}\nEXPRS {\n";
  std::unordered_map<NodeId, std::string> names;
  for (auto& [name, id] : p.bindings) names.emplace(id, name);
  for (auto& [name, id] : p.bindings) {
    os << "  " << name << " : " << precision_name(p.dag.nodes[id].precision) << " = ";
    // an alias of an earlier binding prints as a reference to it
    bool alias = names.at(id) != name;
    print_expr(os, p, id, names, !alias);
    os << ";\n";
  }
  os << "}\nOUTPUTS {\n";
  for (auto& name : p.output_names) os << "  " << name << ";\n";
  os << "}\n";
  return os.str();
}

}  // namespace fperr
