// Regenerates the benchmark corpus (.sat files). Run from the repo root:
//   build/make_corpus [benchmarks]
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace {

void write_file(const std::filesystem::path& dir, const std::string& name,
                const std::string& body) {
  std::ofstream out(dir / name);
  out << body;
  std::cout << "wrote " << (dir / name).string() << "\n";
}

std::string intro_program(const char* prec) {
  std::ostringstream os;
  os << "# conditional with an unstable guard\n";
  os << "INPUTS {\n  x1 : " << prec << " in [0.1, 5.0];\n  x2 : " << prec
     << " in [0.1, 5.0];\n}\n";
  os << "EXPRS {\n  y : " << prec
     << " = if (x1*x1 + x2*x2 <= 10.0) then 0.1*x1 else 0.2*x2;\n}\n";
  os << "OUTPUTS { y; }\n";
  return os.str();
}

std::string serial_sum(int n, const std::string& prec_first, const std::string& prec_rest,
                       int split) {
  std::ostringstream os;
  os << "# serial summation of " << n << " values\nINPUTS {\n";
  for (int i = 1; i <= n; ++i) {
    const std::string& prec = (i <= split + 1) ? prec_first : prec_rest;
    os << "  x" << i << " : " << prec << " in [0.0, 0.5];\n";
  }
  os << "}\nEXPRS {\n";
  os << "  s1 : " << (1 <= split ? prec_first : prec_rest) << " = x1 + x2;\n";
  for (int k = 2; k <= n - 1; ++k)
    os << "  s" << k << " : " << (k <= split ? prec_first : prec_rest) << " = s" << k - 1
       << " + x" << k + 1 << ";\n";
  os << "}\nOUTPUTS { s" << n - 1 << "; }\n";
  return os.str();
}

std::string reduction(int n, const char* prec) {
  std::ostringstream os;
  os << "# reduction-tree summation of " << n << " values\nINPUTS {\n";
  for (int i = 0; i < n; ++i) os << "  x" << i << " : " << prec << " in [0.0, 0.5];\n";
  os << "}\nEXPRS {\n";
  std::vector<std::string> cur;
  for (int i = 0; i < n; ++i) cur.push_back("x" + std::to_string(i));
  int level = 1;
  while (cur.size() > 1) {
    std::vector<std::string> next;
    for (size_t i = 0; i + 1 < cur.size(); i += 2) {
      std::string name = "r" + std::to_string(level) + "_" + std::to_string(i / 2);
      os << "  " << name << " : " << prec << " = " << cur[i] << " + " << cur[i + 1] << ";\n";
      next.push_back(name);
    }
    if (cur.size() % 2) next.push_back(cur.back());
    cur = std::move(next);
    ++level;
  }
  os << "}\nOUTPUTS { " << cur[0] << "; }\n";
  return os.str();
}

std::string horner(int deg, const std::string& coeff, const std::string& lo,
                   const std::string& hi, const std::string& prec_first,
                   const std::string& prec_rest, int split) {
  std::ostringstream os;
  os << "# degree-" << deg << " polynomial, Horner evaluation\nINPUTS {\n  x : " << prec_first
     << " in [" << lo << ", " << hi << "];\n}\nEXPRS {\n";
  os << "  h0 : " << prec_first << " = " << coeff << ";\n";
  for (int k = 1; k <= deg; ++k) {
    const std::string& prec = (k <= split) ? prec_first : prec_rest;
    os << "  m" << k << " : " << prec << " = x * h" << k - 1 << ";\n";
    os << "  h" << k << " : " << prec << " = " << coeff << " + m" << k << ";\n";
  }
  os << "}\nOUTPUTS { h" << deg << "; }\n";
  return os.str();
}

std::string poly(int deg, const std::string& coeff, const std::string& lo, const std::string& hi,
                 const char* prec) {
  std::ostringstream os;
  os << "# degree-" << deg << " polynomial, term-by-term evaluation\nINPUTS {\n  x : " << prec
     << " in [" << lo << ", " << hi << "];\n}\nEXPRS {\n";
  os << "  s0 : " << prec << " = " << coeff << ";\n";
  for (int k = 1; k <= deg; ++k) {
    std::string power = "x";
    for (int j = 2; j <= k; ++j) {
      std::string name = "q" + std::to_string(k) + "_" + std::to_string(j);
      os << "  " << name << " : " << prec << " = " << power << " * x;\n";
      power = name;
    }
    os << "  t" << k << " : " << prec << " = " << coeff << " * " << power << ";\n";
    os << "  s" << k << " : " << prec << " = s" << k - 1 << " + t" << k << ";\n";
  }
  os << "}\nOUTPUTS { s" << deg << "; }\n";
  return os.str();
}

std::string scan(int n, const char* prec) {
  // Brent-Kung inclusive prefix sum: upsweep + downsweep, 2n - 2 - log2(n) adds
  std::ostringstream os;
  os << "# " << n << "-point inclusive prefix sum (work-efficient scan)\nINPUTS {\n";
  for (int i = 0; i < n; ++i) os << "  x" << i << " : " << prec << " in [0.0, 0.5];\n";
  os << "}\nEXPRS {\n";
  std::vector<std::string> cur;
  for (int i = 0; i < n; ++i) cur.push_back("x" + std::to_string(i));
  int levels = 0;
  while ((1 << levels) < n) ++levels;
  for (int d = 1; d <= levels; ++d) {
    int step = 1 << d;
    for (int i = step - 1; i < n; i += step) {
      std::string name = "u" + std::to_string(d) + "_" + std::to_string(i);
      os << "  " << name << " : " << prec << " = " << cur[i - step / 2] << " + " << cur[i]
         << ";\n";
      cur[i] = name;
    }
  }
  for (int d = levels - 1; d >= 1; --d) {
    int step = 1 << d;
    for (int i = step + step / 2 - 1; i < n; i += step) {
      std::string name = "v" + std::to_string(d) + "_" + std::to_string(i);
      os << "  " << name << " : " << prec << " = " << cur[i - step / 2] << " + " << cur[i]
         << ";\n";
      cur[i] = name;
    }
  }
  for (int i = 0; i < n; ++i)
    os << "  y" << i << " : " << prec << " = " << cur[i] << ";\n";
  os << "}\nOUTPUTS {\n";
  for (int i = 0; i < n; ++i) os << "  y" << i << ";\n";
  os << "}\n";
  return os.str();
}

std::string dqmom() {
  std::ostringstream os;
  os << "# direct quadrature method of moments kernel\nINPUTS {\n";
  for (int i = 0; i < 3; ++i) os << "  m" << i << " : fl64 in [-1.0, 1.0];\n";
  for (int i = 0; i < 3; ++i) os << "  w" << i << " : fl64 in [0.00001, 1.0];\n";
  for (int i = 0; i < 3; ++i) os << "  a" << i << " : fl64 in [0.00001, 1.0];\n";
  os << "}\nEXPRS {\n  r : fl64 = 0.0 + ((((w2 * (0.0 - m2)) * (-3.0 * ((1.0 * (a2/w2)) * "
        "(a2/w2)))) * 1.0) + ((((w1 * (0.0 - m1)) * (-3.0 * ((1.0 * (a1/w1)) * (a1/w1)))) * "
        "1.0) + ((((w0 * (0.0 - m0)) * (-3.0 * ((1.0 * (a0/w0)) * (a0/w0)))) * 1.0) + 0.0)));\n";
  os << "}\nOUTPUTS { r; }\n";
  return os.str();
}

std::string branch_paths() {
  std::ostringstream os;
  os << "# reconvergent conditional paths through nested selects\n";
  os << "INPUTS {\n  x : fl64 in [0.1, 2.0];\n  y : fl64 in [0.1, 2.0];\n}\n";
  os << "EXPRS {\n";
  os << "  n3 : fl64 = x * y;\n";
  os << "  n6 : fl64 = 1.0 / (x + n3);\n";
  os << "  res : fl64 = if (x + n3 > 1.0) then n6 else (if (y < 0.5) then x - y else n3);\n";
  os << "}\nOUTPUTS { res; }\n";
  return os.str();
}

std::string eq10() {
  std::ostringstream os;
  os << "# mixed-precision cancellation: x - (x + y)\n";
  os << "INPUTS {\n  x : fl64 in [1.0, 2.0];\n  y : fl64 in [1.0, 2.0];\n}\n";
  os << "EXPRS {\n  t : fl64 = x + y;\n  e : fl32 = x - t;\n}\nOUTPUTS { e; }\n";
  return os.str();
}

}  // namespace

int main(int argc, char** argv) {
  std::filesystem::path dir = argc > 1 ? argv[1] : "benchmarks";
  std::filesystem::create_directories(dir);
  write_file(dir, "intro.sat", intro_program("fl32"));
  write_file(dir, "intro64.sat", intro_program("fl64"));
  write_file(dir, "sum1024.sat", serial_sum(1024, "fl64", "fl64", 1023));
  write_file(dir, "sum1024_fp32.sat", serial_sum(1024, "fl32", "fl32", 1023));
  write_file(dir, "sum1024_mixed.sat", serial_sum(1024, "fl64", "fl32", 512));
  write_file(dir, "reduction1024.sat", reduction(1024, "fl64"));
  write_file(dir, "horner50.sat", horner(50, "5.0", "0.0", "0.9", "fl64", "fl64", 50));
  write_file(dir, "horner50_fp32.sat", horner(50, "5.0", "0.0", "0.9", "fl32", "fl32", 50));
  write_file(dir, "horner50_mixed.sat", horner(50, "5.0", "0.0", "0.9", "fl32", "fl64", 25));
  write_file(dir, "poly50.sat", poly(50, "5.0", "0.0", "0.9", "fl64"));
  write_file(dir, "scan1024.sat", scan(1024, "fl64"));
  write_file(dir, "dqmom.sat", dqmom());
  write_file(dir, "branch_paths.sat", branch_paths());
  write_file(dir, "eq10.sat", eq10());
  return 0;
}
