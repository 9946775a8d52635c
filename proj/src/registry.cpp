#include "dgsr/corpus.hpp"

namespace dgsr {

namespace {

struct Row {
  const char* name;
  const char* infix;
  const char* sampling;
  const char* library;
};

// Ground truths as conventional infix; sinh/cosh are written through exp.
constexpr Row kRows[] = {
    {"Nguyen-1", "x1^3 + x1^2 + x1", "U(-1,1,20)", "koza-d1"},
    {"Nguyen-2", "x1^4 + x1^3 + x1^2 + x1", "U(-1,1,20)", "koza-d1"},
    {"Nguyen-3", "x1^5 + x1^4 + x1^3 + x1^2 + x1", "U(-1,1,20)", "koza-d1"},
    {"Nguyen-4", "x1^6 + x1^5 + x1^4 + x1^3 + x1^2 + x1", "U(-1,1,20)", "koza-d1"},
    {"Nguyen-5", "sin(x1^2)*cos(x1) - 1", "U(-1,1,20)", "koza-d1"},
    {"Nguyen-6", "sin(x1) + sin(x1 + x1^2)", "U(-1,1,20)", "koza-d1"},
    {"Nguyen-7", "log(x1 + 1) + log(x1^2 + 1)", "U(0,2,20)", "koza-d1"},
    {"Nguyen-8", "sqrt(x1)", "U(0,4,20)", "koza-d1"},
    {"Nguyen-9", "sin(x1) + sin(x2^2)", "U(0,1,20)", "koza-d2"},
    {"Nguyen-10", "2*sin(x1)*cos(x2)", "U(0,1,20)", "koza-d2"},
    {"Nguyen-11", "x1^x2", "U(0,1,20)", "koza-d2"},
    {"Nguyen-12", "x1^4 - x1^3 + 1/2*x2^2 - x2", "U(0,1,20)", "koza-d2"},

    {"Nguyen-1c", "3.39*x1^3 + 2.12*x1^2 + 1.78*x1", "U(-1,1,20)", "koza-const-d1"},
    {"Nguyen-5c", "sin(x1^2)*cos(x1) - 0.75", "U(-1,1,20)", "koza-const-d1"},
    {"Nguyen-7c", "log(x1 + 1.4) + log(x1^2 + 1.3)", "U(0,2,20)", "koza-const-d1"},
    {"Nguyen-8c", "sqrt(1.23*x1)", "U(0,4,20)", "koza-const-d1"},
    {"Nguyen-10c", "sin(1.5*x1)*cos(0.5*x2)", "U(0,1,20)", "koza-const-d2"},

    {"R-1", "(x1 + 1)^3/(x1^2 - x1 + 1)", "E(-1,1,20)", "koza-d1"},
    {"R-2", "(x1^5 - 3*x1^3 + 1)/(x1^2 + 1)", "E(-1,1,20)", "koza-d1"},
    {"R-3", "(x1^6 + x1^5)/(x1^4 + x1^3 + x1^2 + x1 + 1)", "E(-1,1,20)", "koza-d1"},
    {"R-1*", "(x1 + 1)^3/(x1^2 - x1 + 1)", "E(-10,10,20)", "koza-d1"},
    {"R-2*", "(x1^5 - 3*x1^3 + 1)/(x1^2 + 1)", "E(-10,10,20)", "koza-d1"},
    {"R-3*", "(x1^6 + x1^5)/(x1^4 + x1^3 + x1^2 + x1 + 1)", "E(-10,10,20)", "koza-d1"},

    {"Livermore-1", "1/3 + x1 + sin(x1^2)", "U(-10,10,1000)", "koza-d1"},
    {"Livermore-2", "sin(x1^2)*cos(x1) - 2", "U(-1,1,20)", "koza-d1"},
    {"Livermore-3", "sin(x1^3)*cos(x1^2) - 1", "U(-1,1,20)", "koza-d1"},
    {"Livermore-4", "log(x1 + 1) + log(x1^2 + 1) + log(x1)", "U(0,2,20)", "koza-d1"},
    {"Livermore-5", "x1^4 - x1^3 + x1^2 - x2", "U(0,1,20)", "koza-d2"},
    {"Livermore-6", "4*x1^4 + 3*x1^3 + 2*x1^2 + x1", "U(-1,1,20)", "koza-d1"},
    {"Livermore-7", "(exp(x1) - exp(-x1))/2", "U(-1,1,20)", "koza-d1"},
    {"Livermore-8", "(exp(x1) + exp(-x1))/2", "U(-1,1,20)", "koza-d1"},
    {"Livermore-9", "x1^9 + x1^8 + x1^7 + x1^6 + x1^5 + x1^4 + x1^3 + x1^2 + x1", "U(-1,1,20)", "koza-d1"},
    {"Livermore-10", "6*sin(x1)*cos(x2)", "U(0,1,20)", "koza-d2"},
    {"Livermore-11", "x1^2*x1^2/(x1 + x2)", "U(-1,1,50)", "koza-d2"},
    {"Livermore-12", "x1^5/x2^3", "U(-1,1,50)", "koza-d2"},
    {"Livermore-13", "x1^(1/3)", "U(0,4,20)", "koza-d1"},
    {"Livermore-14", "x1^3 + x1^2 + x1 + sin(x1) + sin(x1^2)", "U(-1,1,20)", "koza-d1"},
    {"Livermore-15", "x1^(1/5)", "U(0,4,20)", "koza-d1"},
    {"Livermore-16", "x1^(2/5)", "U(0,4,20)", "koza-d1"},
    {"Livermore-17", "4*sin(x1)*cos(x2)", "U(0,1,20)", "koza-d2"},
    {"Livermore-18", "sin(x1^2)*cos(x1) - 5", "U(-1,1,20)", "koza-d1"},
    {"Livermore-19", "x1^5 + x1^4 + x1^2 + x1", "U(-1,1,20)", "koza-d1"},
    {"Livermore-20", "exp(-x1^2)", "U(-1,1,20)", "koza-d1"},
    {"Livermore-21", "x1^8 + x1^7 + x1^6 + x1^5 + x1^4 + x1^3 + x1^2 + x1", "U(-1,1,20)", "koza-d1"},
    {"Livermore-22", "exp(-0.5*x1^2)", "U(-1,1,20)", "koza-d1"},

    {"Feynman-1", "x1*x2", "U(1,5,20)", "koza-d2"},
    {"Feynman-2", "x1/(2*(1 + x2))", "U(1,5,20)", "koza-d2"},
    {"Feynman-3", "x1*x2^2", "U(1,5,20)", "koza-d2"},
    {"Feynman-4", "1 + x1*x2/(1 - x1*x2/3)", "U(0,1,20)", "koza-d2"},
    {"Feynman-5", "x1/x2", "U(1,5,20)", "koza-d2"},
    {"Feynman-6", "1/2*x1*x2^2", "U(1,5,20)", "koza-d2"},
    {"Feynman-7", "3/2*x1*x2", "U(1,5,20)", "koza-d2"},
    {"Feynman-8", "x1/(exp(x4*x5/(x2*x3)) + exp(-x4*x5/(x2*x3)))", "U(1,3,50)", "koza-d5"},
    {"Feynman-9", "x1*x2*x3*log(x5/x4)", "U(1,5,50)", "koza-d5"},
    {"Feynman-10", "x1*(x3 - x2)*x4/x5", "U(1,5,50)", "koza-d5"},
    {"Feynman-11", "x1*x2/(x5*(x3^2 - x4^2))", "U(1,3,50)", "koza-d5"},
    {"Feynman-12", "x1*x2^2*x3/(3*x4*x5)", "U(1,5,50)", "koza-d5"},
    {"Feynman-13", "x1*(exp(x2*x3/(x4*x5)) - 1)", "U(1,5,50)", "koza-d5"},
    {"Feynman-14", "x5*x1*x2*(1/x4 - 1/x3)", "U(1,5,50)", "koza-d5"},
    {"Feynman-15", "x1*(x2 + x3*x4*sin(x5))", "U(1,5,50)", "koza-d5"},

    {"Feynman-A-1", "x3*x1*x2/((x5 - x4)^2 + (x7 - x6)^2 + (x9 - x8)^2)", "U(1,2,90)", "koza-d9"},
    {"Feynman-A-2", "x1*x2/(x3*x4) + x1*x5/(x6*x7^2*x3*x4)*x8", "U(1,3,80)", "koza-d8"},
    {"Feynman-A-3", "x1*exp(-x2*x5*x3/(x6*x4))", "U(1,5,60)", "koza-d6"},
    {"Feynman-A-4", "x1*x4 + x2*x5 + x3*x6", "U(1,5,60)", "koza-d6"},
    {"Feynman-A-5", "x1*(1 + x5*x6*cos(x4)/(x2*x3))", "U(1,3,60)", "koza-d6"},
    {"Feynman-A-6", "x1*(1 + x3)*x2", "U(1,5,60)", "koza-d6"},
    {"Feynman-A-7", "x1*x4*x2/x3", "U(1,5,40)", "koza-d4"},
    {"Feynman-A-8", "x1*x2*x3/x4", "U(1,5,40)", "koza-d4"},
    {"Feynman-A-9", "1/(x1 - 1)*x2*x4/x3", "U(2,5,40)", "koza-d4"},
    {"Feynman-A-10", "x1*x2*x3/(2*x4)", "U(1,5,40)", "koza-d4"},
    {"Feynman-A-11", "x1*x2*x4/x3", "U(1,5,40)", "koza-d4"},
    {"Feynman-A-12", "x1*(cos(x2*x3) + x4*cos(x2*x3)^2)", "U(1,3,40)", "koza-d4"},
    {"Feynman-A-13", "-x1*x2*x3/x4", "U(1,5,40)", "koza-d4"},
    {"Feynman-A-14", "(x1*x3 + x2*x4)/(x1 + x2)", "U(1,5,40)", "koza-d4"},
    {"Feynman-A-15", "1/2*x1*(x2^2 + x3^2 + x4^2)", "U(1,5,40)", "koza-d4"},
    {"Feynman-A-16", "-x1*x2*cos(x3)", "U(1,5,30)", "koza-d3"},
    {"Feynman-A-17", "(x3 + x2)/(1 + x3*x2/x1^2)", "U(1,5,30)", "koza-d3"},
    {"Feynman-A-18", "x1*x2*x3", "U(1,5,30)", "koza-d3"},
    {"Feynman-A-19", "x1*x2*x3^2", "U(1,5,30)", "koza-d3"},
    {"Feynman-A-20", "x1*x2*x3/2", "U(1,5,30)", "koza-d3"},
    {"Feynman-A-21", "1/(x1 - 1)*x2*x3", "U(2,5,30)", "koza-d3"},
    {"Feynman-A-22", "x3/(1 - x2/x1)", "U(3,10,30)", "koza-d3"},
    {"Feynman-A-23", "x1*x3*x2", "U(1,5,30)", "koza-d3"},
    {"Feynman-A-24", "x1*sin(x3*x2/2)^2/sin(x2/2)^2", "U(1,5,30)", "koza-d3"},
    {"Feynman-A-25", "x1*(1 + x2*cos(x3))", "U(1,5,30)", "koza-d3"},
    {"Feynman-A-26", "1/(1/x1 + x3/x2)", "U(1,5,30)", "koza-d3"},
    {"Feynman-A-27", "2*x1*(1 - cos(x2*x3))", "U(1,5,30)", "koza-d3"},
    {"Feynman-A-28", "x1/(x2*(1 + x3))", "U(1,5,30)", "koza-d3"},
    {"Feynman-A-29", "(x1*x2*x3*x4*x5/(4*x6*sin(x7/2)^2))^2", "U(1,2,70)", "koza-d7"},
    {"Feynman-A-30", "x1/(1 + x1/(x2*x3^2)*(1 - cos(x4)))", "U(1,3,40)", "koza-d4"},
    {"Feynman-A-31", "x1*(1 - x2^2)/(1 + x2*cos(x3 - x4))", "U(1,3,40)", "koza-d4"},
    {"Feynman-A-32", "x1*(sin(x2/2)*sin(x4*x3/2)/(x2/2*sin(x3/2)))^2", "U(4,6,40)", "koza-d4"},

    {"Synthetic-1", "x12 + x9*(x10 + x11) + x1 + x2 + x3 + x4 + x5 + x6 + x7*x8", "U(-1,1,120)", "synth-d12"},
    {"Synthetic-2", "x10 + x11 + x12 + x3*(x1 + x2) + x4*x5 + x6 + x7 + x8 + x9", "U(-1,1,120)", "synth-d12"},
    {"Synthetic-3", "x10 + x9*(x1 + x2 + x3 + x4 + x5 + x6 + x7 + x8) + x11 + x12", "U(-1,1,120)", "synth-d12"},
    {"Synthetic-4", "x8*(x6 + x7) - (x10 + x11*x12 + x9)*x1 + x2 + x3 + x4 + x5", "U(-1,1,120)", "synth-d12"},
    {"Synthetic-5", "x10 + x11 + x12 + x9*(x1 + x2) - x3 + x4 + x5 + x6 + x7 + x8", "U(-1,1,120)", "synth-d12"},
    {"Synthetic-6", "x1*(x10 - x11) - x12 + x2 + x3 + x4 + x5 + x6 + x7 + x8 + x9", "U(-1,1,120)", "synth-d12"},
    {"Synthetic-7", "x1*x2 - x11*(-x10 + x6 + x7) + x8 - x9 + x12 + x3 + x4 + x5", "U(-1,1,120)", "synth-d12"},
};

std::vector<ProblemSpec> build() {
  std::vector<ProblemSpec> out;
  for (const auto& r : kRows) {
    ProblemSpec p;
    p.name = r.name;
    p.infix = r.infix;
    p.truth = parse_infix(r.infix);
    p.library = library_by_name(r.library);
    p.sampling = SamplingSpec::parse(r.sampling);
    p.d = p.library.d;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

const std::vector<ProblemSpec>& registry() {
  static const std::vector<ProblemSpec> problems = build();
  return problems;
}

const ProblemSpec& find_problem(const std::string& name) {
  for (const auto& p : registry())
    if (p.name == name) return p;
  throw Error(Errc::InvalidArgument, "unknown problem '" + name + "'");
}

}  // namespace dgsr
