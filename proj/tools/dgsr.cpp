// dgsr command-line entry point.
#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "dgsr/bench.hpp"
#include "dgsr/canonical.hpp"
#include "dgsr/config.hpp"

namespace fs = std::filesystem;
using namespace dgsr;

namespace {

// Thrown for bad flags, configs or inputs (exit code 2).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

bool is_usage(Errc c) {
  switch (c) {
    case Errc::InvalidArgument:
    case Errc::UnknownToken:
    case Errc::IncompleteSequence:
    case Errc::ExtraTokens:
    case Errc::Io:
    case Errc::VersionMismatch:
    case Errc::IncompatibleCheckpoint:
    case Errc::ConstArityMismatch:
      return true;
    default:
      return false;
  }
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw Error(Errc::Io, "cannot write " + p.string());
  f << text;
}

int effective_threads(int requested) {
  const int cap = worker_count();
  return requested > 0 ? std::min(requested, cap) : cap;
}

// Rejects keys in the command's sections that nothing read.
void check_unused(const Config& c, std::initializer_list<const char*> sections) {
  for (const auto& k : c.unused())
    for (const char* s : sections)
      if (k.rfind(std::string(s) + ".", 0) == 0) throw UsageError("unknown config key '" + k + "'");
}

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  int threads = 0;

  Config load() const {
    Config c = config_path.empty() ? Config{} : Config::load(config_path);
    for (const auto& s : sets) c.set_assignment(s);
    return c;
  }
};

void add_common(CLI::App* app, Common& common) {
  app->add_option("--config", common.config_path, "Configuration file ([section] key = value)");
  app->add_option("--set", common.sets, "Override a config key: section.key=value")->take_all();
  app->add_option("--threads", common.threads, "Worker threads (capped by DGSR_THREADS)");
}

// ---------------------------------------------------------------- gen-corpus

int cmd_gen_corpus(const Config& c) {
  SkeletonSampler sampler;
  const std::string lib_name = c.str("corpus.library", "koza-d2");
  const LibrarySpec lib = library_by_name(lib_name);
  sampler.d = lib.d;
  sampler.has_const = lib.has_const;
  apply(c, sampler);
  const long count = c.integer("corpus.count", 5000);
  const auto seed = static_cast<std::uint64_t>(c.integer("corpus.seed", 1));
  const SamplingSpec domain = SamplingSpec::parse(c.str("corpus.domain", "U(1,5,20)"));
  const std::string out = c.str("corpus.out", "corpus.txt");
  check_unused(c, {"corpus"});
  if (count < 0) throw UsageError("corpus.count must be >= 0");

  std::vector<Equation> holdouts;
  for (const auto& p : registry())
    if (p.truth && p.d <= sampler.d) holdouts.push_back(*p.truth);
  const Corpus corpus = build_pretrain_corpus(static_cast<int>(count), sampler, domain, holdouts, seed, lib_name);
  std::ostringstream body;
  write_corpus(corpus, body);
  write_file(out, body.str());

  const nlohmann::json manifest{{"library", lib_name},
                                {"count", corpus.entries.size()},
                                {"seed", seed},
                                {"domain", domain.str()},
                                {"rejected_invalid", corpus.stats.invalid},
                                {"rejected_degenerate", corpus.stats.degenerate},
                                {"rejected_holdout", corpus.stats.holdout},
                                {"holdouts", holdouts.size()},
                                {"config", c.dump()}};
  write_file(out + ".manifest.json", manifest.dump(2) + "\n");
  std::cout << "wrote " << corpus.entries.size() << " equations to " << out << "\n";
  return 0;
}

// ---------------------------------------------------------------- pretrain

int cmd_pretrain(const Config& c, int threads) {
  const std::string corpus_path = c.str("pretrain.corpus", "");
  const std::string out = c.str("pretrain.out", "generator.ckpt");
  const std::string resume = c.str("pretrain.resume", "");
  if (corpus_path.empty()) throw UsageError("pretrain needs --corpus");
  const Corpus corpus = load_corpus(corpus_path);
  const LibrarySpec lib = library_by_name(c.str("pretrain.library", corpus.library));
  PretrainConfig pc;
  apply(c, pc);
  pc.threads = effective_threads(threads);
  ArchConfig arch;
  apply(c, arch);
  check_unused(c, {"pretrain", "train", "model"});

  std::optional<Checkpoint> ck;
  if (!resume.empty()) {
    ck = load_checkpoint(resume, &lib, pc.seed);
    if (!ck->state) throw UsageError("checkpoint " + resume + " carries no training state to resume");
  } else {
    ck = Checkpoint{Generator(lib, arch, pc.seed), std::nullopt};
  }
  std::ofstream log(out + ".log.jsonl", resume.empty() ? std::ios::trunc : std::ios::app);
  const auto res = pretrain(ck->generator, corpus, pc, ck->state ? &*ck->state : nullptr, &log);
  save_checkpoint(out, ck->generator, &res.state);
  write_file(out + ".config", c.dump());
  std::cout << "iterations " << res.state.iteration << ", best validation reward " << res.best_validation
            << (res.early_stopped ? " (early stop)" : "") << "\n";
  return 0;
}

// ---------------------------------------------------------------- run

struct RunJob {
  const ProblemSpec* problem;
  std::uint64_t seed;
};

void run_one(const RunJob& job, const Config& c, const InferConfig& base, const std::string& checkpoint,
             const ArchConfig& arch, double noise, long sub, const fs::path& out_dir, int threads) {
  const ProblemSpec& p = *job.problem;
  Generator g = checkpoint.empty() ? Generator(p.library, arch, job.seed)
                                   : load_checkpoint(checkpoint, &p.library, job.seed).generator;
  Dataset data = sample_problem_dataset(p, Split::Train, job.seed);
  std::mt19937_64 data_rng(job.seed ^ 0x6e6f697365ULL);
  if (sub > 0) data = subsample(data, static_cast<int>(sub), data_rng);
  if (noise > 0) data = add_noise(data, noise, data_rng);

  InferConfig cfg = base;
  cfg.threads = threads;
  const fs::path dir = out_dir / p.name / ("seed-" + std::to_string(job.seed));
  fs::create_directories(dir);
  std::ofstream trace(dir / "trace.jsonl");
  std::mt19937_64 rng(job.seed);
  const auto res = infer(data, g, cfg, rng, p.truth ? &*p.truth : nullptr, &trace);

  RunResult r;
  r.problem = p.name;
  r.seed = job.seed;
  r.prefix = to_text(res.best_tree.tokens());
  r.consts = res.best_consts;
  r.infix = to_infix(res.best_tree, res.best_consts);
  r.best_reward = res.best_reward;
  r.status = res.trace.status;
  r.evaluations = res.trace.evaluations;
  r.recovered_at = res.trace.recovered_at;
  for (const auto& ind : res.queue) r.candidates.emplace_back(to_text(to_tokens(ind.seq, g.library())), ind.rec.consts);
  write_file(dir / "result.json", r.to_json() + "\n");
  Config snap = c;
  snap.set("run.problem", p.name);
  snap.set("run.seeds", std::to_string(job.seed));
  write_file(dir / "config.ini", snap.dump());
}

int cmd_run(const Config& c, int threads) {
  std::vector<const ProblemSpec*> problems;
  {
    std::istringstream in(c.str("run.problem", ""));
    std::string name;
    while (std::getline(in, name, ','))
      if (!name.empty()) problems.push_back(&find_problem(name));
  }
  if (problems.empty()) throw UsageError("run needs --problem");
  const auto seeds = parse_seeds(c.str("run.seeds", "0"));
  const std::string checkpoint = c.str("run.checkpoint", "");
  const double noise = c.real("run.noise", 0.0);
  const long sub = c.integer("run.subsample", 0);
  const fs::path out = c.str("run.out", "runs");
  const long jobs = c.integer("run.jobs", 1);
  InferConfig base;
  apply(c, base);
  ArchConfig arch;
  apply(c, arch);
  check_unused(c, {"run", "train", "gp", "model"});
  if (noise < 0) throw UsageError("run.noise must be >= 0");
  if (sub < 0) throw UsageError("run.subsample must be >= 0");
  if (jobs < 1) throw UsageError("run.jobs must be >= 1");
  if (!checkpoint.empty() && !fs::exists(checkpoint)) throw UsageError("no checkpoint at " + checkpoint);
  for (const auto* p : problems)
    if (!p->truth) throw UsageError("problem " + p->name + " has no ground truth");

  std::vector<RunJob> queue;
  for (const auto* p : problems)
    for (auto s : seeds) queue.push_back({p, s});
  const int total = effective_threads(threads);
  const int workers = static_cast<int>(std::min<long>({jobs, total, static_cast<long>(queue.size())}));
  const int inner = std::max(1, total / workers);

  std::atomic<std::size_t> next{0};
  std::mutex io;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t i = next++; i < queue.size(); i = next++) {
      try {
        run_one(queue[i], c, base, checkpoint, arch, noise, sub, out, inner);
        std::lock_guard lock(io);
        std::cout << queue[i].problem->name << " seed " << queue[i].seed << " done\n";
      } catch (...) {
        std::lock_guard lock(io);
        if (!failure) failure = std::current_exception();
        next = queue.size();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return 0;
}

// ---------------------------------------------------------------- bench / pareto

std::vector<RunResult> collect_runs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw UsageError("run directory " + dir.string() + " does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() == "result.json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw UsageError("no run results (result.json) under " + dir.string());
  std::vector<RunResult> runs;
  for (const auto& f : files) {
    std::ifstream in(f);
    std::ostringstream ss;
    ss << in.rdbuf();
    runs.push_back(RunResult::from_json(ss.str()));
  }
  return runs;
}

int cmd_bench(const Config& c) {
  const fs::path runs_dir = c.str("bench.runs", "runs");
  const double tau = c.real("bench.tau", 0.05);
  const auto test_seed = static_cast<std::uint64_t>(c.integer("bench.test_seed", 0));
  const fs::path out = c.str("bench.out", (runs_dir / "report").string());
  check_unused(c, {"bench"});
  const BenchReport rep = build_report(collect_runs(runs_dir), tau, test_seed);
  std::ostringstream csv;
  rep.write_csv(csv);
  write_file(out.string() + ".csv", csv.str());
  write_file(out.string() + ".json", rep.to_json() + "\n");
  for (const auto& p : rep.problems) {
    std::ostringstream pc;
    write_pareto_csv(p.pareto, pc);
    write_file(out.string() + ".pareto-" + p.name + ".csv", pc.str());
  }
  std::cout << csv.str();
  std::cout << "average recovery " << rep.recovery.rate << "% +/- " << rep.recovery.ci << "\n";
  return 0;
}

int cmd_pareto(const Config& c) {
  const fs::path runs_dir = c.str("bench.runs", "runs");
  const std::string problem = c.str("bench.problem", "");
  const double tau = c.real("bench.tau", 0.05);
  const auto test_seed = static_cast<std::uint64_t>(c.integer("bench.test_seed", 0));
  check_unused(c, {"bench"});
  auto runs = collect_runs(runs_dir);
  if (!problem.empty())
    runs.erase(std::remove_if(runs.begin(), runs.end(), [&](const RunResult& r) { return r.problem != problem; }),
               runs.end());
  if (runs.empty()) throw UsageError("no runs for problem " + problem);
  const auto rep = build_report(runs, tau, test_seed);
  for (const auto& p : rep.problems) {
    if (rep.problems.size() > 1) std::cout << "# " << p.name << "\n";
    write_pareto_csv(p.pareto, std::cout);
  }
  return 0;
}

// ---------------------------------------------------------------- canon

int cmd_canon(const std::string& a, const std::string& b, bool infix) {
  auto tree = [&](const std::string& s) -> Equation {
    if (infix) return parse_infix(s);
    return {parse_prefix(parse_text(s)), {}};
  };
  const Equation f = tree(a), g = tree(b);
  std::cout << equivalence_name(symbolically_equal(f.tree, f.consts, g.tree, g.consts)) << "\n";
  std::cout << "f: " << canonical_key(f.tree, f.consts) << "\n";
  std::cout << "g: " << canonical_key(g.tree, g.consts) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dataset-conditioned symbolic regression: corpus generation, pre-training, search and benchmarking"};
  app.require_subcommand(1);
  Common common;

  std::map<std::string, std::string> flags;
  auto flag = [&](CLI::App* sub, const std::string& name, const std::string& key, const std::string& help) {
    sub->add_option_function<std::string>(name, [&flags, key](const std::string& v) { flags[key] = v; }, help);
  };
  auto toggle = [&](CLI::App* sub, const std::string& name, const std::string& key, const std::string& help) {
    sub->add_flag_callback(name, [&flags, key] { flags[key] = "true"; }, help);
  };

  auto* gen = app.add_subcommand("gen-corpus", "Generate a pre-training corpus");
  add_common(gen, common);
  flag(gen, "--library", "corpus.library", "Token library (koza-d2, koza-const-d1, synth-d12, ...)");
  flag(gen, "--count", "corpus.count", "Number of equations");
  flag(gen, "--seed", "corpus.seed", "Seed");
  flag(gen, "--domain", "corpus.domain", "Sampling domain, e.g. U(1,5,20)");
  flag(gen, "--out", "corpus.out", "Output corpus file");

  auto* pre = app.add_subcommand("pretrain", "Pre-train a generator on a corpus");
  add_common(pre, common);
  flag(pre, "--corpus", "pretrain.corpus", "Corpus file");
  flag(pre, "--out", "pretrain.out", "Output checkpoint");
  flag(pre, "--iterations", "pretrain.iterations", "Maximum mini-batches");
  flag(pre, "--seed", "pretrain.seed", "Seed");
  flag(pre, "--resume", "pretrain.resume", "Resume from a checkpoint with training state");
  flag(pre, "--library", "pretrain.library", "Target library (default: the corpus library)");
  toggle(pre, "--ce-pretrain", "pretrain.ce", "Teacher-forced cross-entropy on corpus equations");
  toggle(pre, "--no-encoder", "model.no_encoder", "Replace the dataset encoder with a learned constant");

  auto* run = app.add_subcommand("run", "Search for equations on benchmark problems");
  add_common(run, common);
  flag(run, "--problem", "run.problem", "Problem name(s), comma separated");
  flag(run, "--seeds", "run.seeds", "Seeds, e.g. 0..9 or 1,4,7");
  flag(run, "--checkpoint", "run.checkpoint", "Pre-trained generator (default: untrained)");
  flag(run, "--budget", "train.budget", "Equation evaluation budget per run");
  flag(run, "--noise", "run.noise", "Relative output noise level");
  flag(run, "--subsample", "run.subsample", "Keep this many training rows");
  flag(run, "--max-iterations", "run.max_iterations", "Stop after this many iterations (0 = no limit)");
  flag(run, "--out", "run.out", "Run directory");
  flag(run, "--jobs", "run.jobs", "Runs executed concurrently");
  toggle(run, "--no-gp", "run.no_gp", "Disable the genetic-programming refinement");

  auto* bench = app.add_subcommand("bench", "Aggregate run directories into a report");
  add_common(bench, common);
  flag(bench, "--runs", "bench.runs", "Run directory");
  flag(bench, "--out", "bench.out", "Report path prefix (writes .csv, .json, .pareto-*.csv)");
  flag(bench, "--tau", "bench.tau", "Relative tolerance for accuracy-to-tolerance");

  auto* par = app.add_subcommand("pareto", "Print the complexity/NMSE Pareto front of finished runs");
  add_common(par, common);
  flag(par, "--runs", "bench.runs", "Run directory");
  flag(par, "--problem", "bench.problem", "Restrict to one problem");

  auto* canon = app.add_subcommand("canon", "Compare two expressions symbolically");
  std::string ea, eb;
  bool infix = false;
  canon->add_option("f", ea, "First expression (prefix tokens)")->required();
  canon->add_option("g", eb, "Second expression (prefix tokens)")->required();
  canon->add_flag("--infix", infix, "Parse the expressions as infix");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*canon) return cmd_canon(ea, eb, infix);
    Config c = common.load();
    for (const auto& [k, v] : flags) c.set(k, v);
    if (*gen) return cmd_gen_corpus(c);
    if (*pre) return cmd_pretrain(c, common.threads);
    if (*run) return cmd_run(c, common.threads);
    if (*bench) return cmd_bench(c);
    if (*par) return cmd_pareto(c);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return is_usage(e.code()) ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
