#include <CLI11.hpp>
#include <Eigen/Core>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "dsa/config.hpp"
#include "dsa/dsa_core.hpp"
#include "dsa/dynsim.hpp"
#include "dsa/field.hpp"
#include "dsa/infostats.hpp"
#include "dsa/io.hpp"
#include "dsa/parallel.hpp"
#include "dsa/predictability.hpp"
#include "dsa/spacetime.hpp"
#include "dsa/synthetic.hpp"

namespace fs = std::filesystem;
using namespace dsa;

namespace {

constexpr const char* kVersion = "1.0.0";

struct Run {
  Config cfg;
  fs::path base;  // directory of the config file
  fs::path out;
  std::uint64_t seed = 1;
  int beta = 5;
  std::vector<std::string> warnings;

  double num(const std::string& s, const std::string& k, double def, double lo, double hi) {
    double v = cfg.number(s, k, def, lo, hi);
    cfg.set(s, k, io::fmt(v));
    cfg.touch(s, k);
    return v;
  }
  long integer(const std::string& s, const std::string& k, long def, long lo, long hi) {
    long v = cfg.integer(s, k, def, lo, hi);
    cfg.set(s, k, std::to_string(v));
    cfg.touch(s, k);
    return v;
  }
  bool flag(const std::string& s, const std::string& k, bool def) {
    bool v = cfg.flag(s, k, def);
    cfg.set(s, k, v ? "true" : "false");
    cfg.touch(s, k);
    return v;
  }
  std::string word(const std::string& s, const std::string& k, const std::string& def) {
    std::string v = cfg.text(s, k, def);
    cfg.set(s, k, v);
    cfg.touch(s, k);
    return v;
  }
  // Input path, resolved against the config directory and echoed absolute.
  fs::path input(const std::string& s, const std::string& k, bool required = true) {
    if (!cfg.has(s, k)) {
      if (required) throw UsageError("missing required config key '" + s + "." + k + "'");
      return {};
    }
    fs::path p = cfg.text(s, k);
    if (p.is_relative()) p = base / p;
    p = fs::weakly_canonical(p);
    if (!fs::exists(p)) throw UsageError("input for '" + s + "." + k + "' not found: " + p.string());
    cfg.set(s, k, p.string());
    return p;
  }
  Field field(const std::string& s, const std::string& k, bool required = true) {
    fs::path p = input(s, k, required);
    if (p.empty()) return Field();
    std::string fk = k + "_format";
    return read_field(p, parse_format(word(s, fk, fs::is_directory(p) ? "csv-grid" : "column-text")));
  }
};

std::string join_warnings(const std::vector<std::string>& w) {
  std::string s;
  for (const auto& x : w) s += "warning " + x + "\n";
  return s;
}

DynamicSourceSet sources_from(const Field& f) {
  if (f.n_cells() != 1) throw UsageError("source file must hold one series per component (single-cell grid)");
  f.require_complete("sources");
  DynamicSourceSet s;
  s.sources = f;
  s.retained.assign(f.n_comp, true);
  return s;
}

// ---- synth

std::string cmd_synth(Run& r) {
  static const std::set<std::string> numeric = {"c1", "c2", "c3", "dt", "f1", "identity", "length", "link_noise", "n",
                                                "n_lat", "n_lon", "n_time", "noise", "omega", "quad", "r", "v"};
  static const std::set<std::string> words = {"link", "noise_kind", "sources"};
  Scenario scn;
  scn.kind = parse_scenario(r.word("synth", "scenario", "linear-mixture"));
  scn.seed = r.seed;
  for (const auto& k : r.cfg.keys("synth")) {
    if (k == "scenario") continue;
    if (numeric.count(k)) {
      double v = 0;
      if (!io::parse_double(r.cfg.text("synth", k), v)) throw UsageError("config key 'synth." + k + "' is not a number");
      scn.params[k] = v;
      r.cfg.set("synth", k, io::fmt(v));
    } else if (words.count(k)) {
      scn.options[k] = r.cfg.text("synth", k);
    } else {
      throw UsageError("unknown config key 'synth." + k + "'");
    }
  }
  auto d = generate(scn);
  write_field(d.observed, r.out / "field.txt");
  std::ostringstream meta;
  meta << "scenario = " << scenario_name(scn.kind) << "\nseed = " << scn.seed << "\n";
  for (const auto& [k, v] : d.metadata) meta << k << " = " << io::fmt(v) << "\n";
  for (Eigen::Index i = 0; i < d.mixing.rows(); ++i) {
    meta << "mixing_" << i << " =";
    for (Eigen::Index j = 0; j < d.mixing.cols(); ++j) meta << " " << io::fmt(d.mixing(i, j));
    meta << "\n";
  }
  io::atomic_write(r.out / "metadata.txt", meta.str());
  if (!d.truth.values.empty()) write_field(d.truth, r.out / "truth.txt");
  if (d.predictand) write_field(*d.predictand, r.out / "predictand.txt");
  return "command synth\nscenario " + scenario_name(scn.kind) + "\n";
}

// ---- extract

std::string cmd_extract(Run& r) {
  Field y = r.field("extract", "input");
  Field truth = r.field("extract", "truth", false);
  ExtractConfig c;
  c.sobolev.beta = r.beta;
  c.orders = static_cast<int>(r.integer("extract", "orders", 3, 1, r.beta));
  c.m_max = static_cast<int>(r.integer("extract", "m_max", 0, 0, 32));
  c.max_pcs = static_cast<int>(r.integer("extract", "max_pcs", 6, 1, 32));
  c.kind = parse_transform_kind(r.word("extract", "kind", "linear"));
  c.poly_degree = static_cast<int>(r.integer("extract", "poly_degree", 2, 2, 3));
  c.restarts = static_cast<int>(r.integer("extract", "restarts", 16, 1, 10000));
  c.shuffles = static_cast<int>(r.integer("extract", "shuffles", 200, 100, 100000));
  c.cutoff = r.flag("extract", "cutoff", true);
  c.trim = static_cast<int>(r.integer("extract", "trim", 16, 0, 100000));
  c.seed = r.seed;

  Field filled = y.has_missing() ? fill(y) : y;
  Field ys = standardize(filled).field;
  auto set = extract_sources(ys, c);

  write_field(set.sources, r.out / "sources.txt");
  Eigen::MatrixXd R = set.retained_matrix();
  Field kept(Grid::make({0.0}, {0.0}), set.sources.time, static_cast<std::size_t>(R.cols()));
  for (Eigen::Index k = 0; k < R.cols(); ++k)
    for (Eigen::Index t = 0; t < R.rows(); ++t) kept.at(k, t, 0) = R(t, k);
  if (R.cols() > 0) write_field(kept, r.out / "retained.txt");
  io::atomic_write(r.out / "transform.txt", set.transform.serialize());

  std::ostringstream o;
  o << "command extract\nm " << set.m() << "\nretained " << set.n_retained() << "\n";
  o << "objective " << io::fmt(set.objective) << "\nobjective_initial " << io::fmt(set.objective_initial) << "\n";
  for (std::size_t k = 0; k < set.nu.size(); ++k)
    o << "nu " << k + 1 << " extracted " << io::fmt(set.nu[k]) << " raw "
      << io::fmt(k < set.nu_raw.size() ? set.nu_raw[k] : std::nan("")) << "\n";
  o << "gamma " << io::fmt(set.physical.gamma) << "\ngamma_unrestricted " << io::fmt(set.physical.gamma_unrestricted)
    << "\nxi " << io::fmt(set.physical.xi) << "\n";
  for (std::size_t s = 0; s < set.cutoff_info.size(); ++s)
    o << "cutoff " << s << " value " << io::fmt(set.cutoff_info[s].value) << " null_q95 "
      << io::fmt(set.cutoff_info[s].null_q95) << " retained " << (set.retained[s] ? 1 : 0) << "\n";
  std::vector<std::string> warn;
  Eigen::MatrixXd X = set.matrix();
  for (Eigen::Index s = 0; s < X.cols(); ++s) {
    InfoOptions io_opt;
    io_opt.shuffles = c.shuffles;
    io_opt.seed = split_seed(r.seed, 100 + s);
    auto J = gaussianity(X.col(s), io_opt);
    o << "negentropy " << s << " value " << io::fmt(J.value) << " null_q95 " << io::fmt(J.null_q95) << "\n";
    if (!J.significant()) warn.push_back("source " + std::to_string(s) + " negentropy not significant; Gaussian-based statistics apply with caution");
  }
  if (set.n_retained() == 0) warn.push_back("no source retained by the cut-off");
  if (!truth.values.empty() && set.n_retained() > 0) {
    Eigen::MatrixXd T(truth.n_time(), truth.n_comp);
    for (std::size_t c2 = 0; c2 < truth.n_comp; ++c2)
      for (std::size_t t = 0; t < truth.n_time(); ++t) T(t, c2) = truth.at(c2, t, 0);
    auto sc = score_recovery(T, R);
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(sc.score.size()); ++i) o << "recovery " << i << " " << io::fmt(sc.score[i]) << "\n";
  }
  o << join_warnings(warn);
  return o.str();
}

// ---- decompose

std::string cmd_decompose(Run& r) {
  Field f = r.field("decompose", "input");
  SpacetimeOptions opt;
  std::string lon = r.word("decompose", "lon", "auto");
  if (lon == "auto")
    opt.lon = Periodicity::automatic;
  else if (lon == "periodic")
    opt.lon = Periodicity::periodic;
  else if (lon == "bounded")
    opt.lon = Periodicity::bounded;
  else
    throw UsageError("config key 'decompose.lon' must be auto, periodic or bounded");
  opt.tau = r.num("decompose", "tau", opt.tau, 1e-12, 1.0);
  opt.rank_tol = r.num("decompose", "rank_tol", opt.rank_tol, 1e-15, 1.0);
  Field ff = f.has_missing() ? fill(f) : f;
  auto m = estimate_coevolution(ff, opt);
  auto p = decompose(ff, m, opt);
  write_structure_pair(p, r.out / "structures");
  std::ostringstream o;
  o << "command decompose\nc " << m.c << "\ncelerity " << io::fmt(m.celerity) << "\nspeed " << io::fmt(m.speed)
    << "\nr_s " << p.r_s << "\nr_t " << p.r_t << "\ndimension " << p.dimension() << "\nresidual " << io::fmt(p.residual) << "\n";
  for (std::size_t k = 0; k < m.couplings.size(); ++k) o << "coupling " << k + 1 << " " << io::fmt(m.couplings[k]) << "\n";
  o << join_warnings(m.warnings);
  return o.str();
}

// ---- predict

std::string cmd_predict(Run& r) {
  auto x = sources_from(r.field("predict", "sources"));
  Field z = r.field("predict", "predictand");
  if (z.has_missing()) z = fill(z);
  int orders = static_cast<int>(r.integer("predict", "orders", 2, 1, 6));
  int NS = static_cast<int>(r.integer("predict", "shuffles", 1000, 100, 1000000));
  TimeWindow w;
  w.start = static_cast<std::size_t>(r.integer("predict", "window_start", 0, 0, 100000000));
  w.length = static_cast<std::size_t>(r.integer("predict", "window_length", 0, 0, 100000000));
  std::vector<PredictabilityMap> maps;
  std::ostringstream o;
  o << "command predict\n";
  std::vector<std::string> warn;
  for (int k = 1; k <= orders; ++k) {
    auto m = effective_map(predictability_map(x, z, k, w), x, z, NS, split_seed(r.seed, k));
    write_map(m, r.out / "maps" / ("order" + std::to_string(k)));
    o << "order " << k << " significant " << m.n_significant() << " of " << m.size() << " mean_raw " << io::fmt(m.raw.mean())
      << " mean_eff " << io::fmt(m.effective.mean()) << " clipped " << m.clipped << "\n";
    if (k == 1) o << "aggregate_correlation " << io::fmt(aggregate_correlation(m)) << "\n";
    for (const auto& s : m.warnings) warn.push_back("order " + std::to_string(k) + ": " + s);
    maps.push_back(std::move(m));
  }
  if (orders >= 2) {
    std::size_t rec = 0;
    for (std::size_t i = 0; i < maps[0].size(); ++i)
      rec += maps[1].raw(i) > maps[1].mc_null_q95(i) && !(maps[0].raw(i) > maps[0].mc_null_q95(i));
    o << "nonlinear_recovered_cells " << rec << "\n";
  }
  o << join_warnings(warn);
  return o.str();
}

// ---- simulate

std::string cmd_simulate(Run& r) {
  auto x = sources_from(r.field("simulate", "sources"));
  Field z = r.field("simulate", "predictand");
  if (z.has_missing()) z = fill(z);
  Field obs = r.field("simulate", "obs", false);
  ModelConfig mc;
  mc.beta = r.beta;
  mc.q = static_cast<int>(r.integer("simulate", "q", std::min(5, r.beta), -1000, 1000));
  mc.ensemble_size = static_cast<int>(r.integer("simulate", "ensemble", 200, 1, 100000));
  mc.horizon = static_cast<int>(r.integer("simulate", "horizon", 100, 1, 10000000));
  mc.perturbation = r.num("simulate", "perturbation", 0.01, 0.0, 1e6);
  mc.anchor_index = r.integer("simulate", "anchor_index", -1, -1, 100000000);
  mc.null_shuffles = static_cast<int>(r.integer("simulate", "null_shuffles", 200, 0, 1000000));
  mc.seed = r.seed;
  bool clip = r.flag("simulate", "clip_at_zero", false);
  mc.validate();

  std::vector<PredictabilityMap> maps;
  for (int k = 1; k <= mc.q; ++k) maps.push_back(predictability_map(x, z, k));
  auto ref = fit_model(x, z, maps, mc);
  auto init = initialize(ref, mc);
  auto ens = simulate(ref, init, mc);
  double clip_frac = 0;
  auto phys = destandardize(ens, ref, clip, &clip_frac);

  const std::size_t nc = ref.n_cells();
  double t0 = mc.anchor_index >= 0 ? z.time.t[mc.anchor_index] : 0.0;
  Eigen::MatrixXd O;
  if (!obs.values.empty()) {
    if (obs.n_time() != static_cast<std::size_t>(mc.horizon + 1) || obs.n_comp * obs.n_cells() != nc)
      throw UsageError("observation field must have horizon + 1 steps and the predictand's cells");
    O = obs.flatten();
  }
  for (std::size_t c = 0; c < nc; ++c) {
    Eigen::VectorXd oc;
    if (O.size()) oc = O.col(c);
    io::atomic_write(r.out / ("summary_cell" + std::to_string(c) + ".csv"), summary_csv(phys, c, t0, O.size() ? &oc : nullptr));
  }
  Field traj(ref.grid, TimeAxis::regular(t0, ref.dt, static_cast<std::size_t>(mc.horizon + 1)), phys.n_members() * ref.n_comp);
  const std::size_t cells = ref.grid.n_cells();
  for (std::size_t i = 0; i < phys.n_members(); ++i)
    for (std::size_t c = 0; c < ref.n_comp; ++c)
      for (int s = 0; s <= mc.horizon; ++s)
        for (std::size_t k = 0; k < cells; ++k) {
          double v = phys.trajectories[i](s, c * cells + k);
          auto idx = traj.index(i * ref.n_comp + c, s, k);
          if (std::isnan(v))
            traj.mask[idx] = 1;
          else
            traj.values[idx] = v;
        }
  write_field(traj, r.out / "ensemble.txt");

  std::ostringstream o;
  o << "command simulate\nq " << mc.q << "\nmembers " << phys.n_members() << "\nflagged " << phys.n_flagged()
    << "\nclip_fraction " << io::fmt(clip_frac) << "\nlyapunov";
  for (Eigen::Index i = 0; i < ref.lyapunov.size(); ++i) o << " " << io::fmt(ref.lyapunov(i));
  o << "\nspectrum_after";
  for (Eigen::Index i = 0; i < init.spectrum_after.size(); ++i) o << " " << io::fmt(init.spectrum_after(i));
  o << "\n";
  std::vector<std::string> warn = ref.warnings;
  warn.insert(warn.end(), init.warnings.begin(), init.warnings.end());
  warn.insert(warn.end(), ens.warnings.begin(), ens.warnings.end());
  o << join_warnings(warn);
  return o.str();
}

// ---- report

std::string cmd_report(Run& r) {
  std::string list = r.word("report", "inputs", "");
  if (list.empty()) throw UsageError("missing required config key 'report.inputs'");
  std::ostringstream o;
  o << "command report\n";
  std::string item;
  std::istringstream in(list);
  std::vector<std::string> resolved;
  while (std::getline(in, item, ',')) {
    auto a = item.find_first_not_of(' '), b = item.find_last_not_of(' ');
    if (a == std::string::npos) continue;
    fs::path p = item.substr(a, b - a + 1);
    if (p.is_relative()) p = r.base / p;
    p = fs::weakly_canonical(p);
    if (!fs::is_regular_file(p / "report.txt")) throw UsageError("no report.txt in " + p.string());
    resolved.push_back(p.string());
    o << "\n== " << p.filename().string() << "\n" << io::read_text(p / "report.txt");
  }
  std::string echo;
  for (std::size_t i = 0; i < resolved.size(); ++i) echo += (i ? "," : "") + resolved[i];
  r.cfg.set("report", "inputs", echo);
  return o.str();
}

std::string manifest(const Run& r, const std::string& command) {
  Config m = r.cfg;
  m.erase("run", "out");
  m.erase("run", "threads");
  for (const auto& k : m.keys("manifest")) m.erase("manifest", k);
  m.set("manifest", "command", command);
  m.set("manifest", "version", kVersion);
  m.set("manifest", "eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION));
  m.set("manifest", "compiler", __VERSION__);
  return m.dump();
}

int run_command(const std::string& command, const std::string& config, const std::string& out_flag,
                const std::optional<std::uint64_t>& seed_flag, int threads) {
  if (threads > 0) set_threads(threads);
  Run r;
  r.cfg = Config::load(config);
  r.base = fs::absolute(fs::path(config)).parent_path();
  if (r.cfg.has("manifest", "command")) {
    for (const auto& k : r.cfg.keys("manifest")) r.cfg.touch("manifest", k);
    if (r.cfg.text("manifest", "command") != command)
      throw UsageError("manifest was written by '" + r.cfg.text("manifest", "command") + "', not '" + command + "'");
  }
  std::string out = out_flag.empty() ? r.cfg.text("run", "out", "") : out_flag;
  if (r.cfg.has("run", "out")) r.cfg.touch("run", "out");
  if (out.empty()) throw UsageError("no output directory: pass --out or set run.out");
  r.out = fs::path(out);
  if (r.out.is_relative() && out_flag.empty()) r.out = r.base / r.out;
  if (r.cfg.has("run", "threads")) {
    long t = r.cfg.integer("run", "threads", 0, 0, 4096);
    if (threads <= 0 && t > 0) set_threads(static_cast<int>(t));
  }
  long s = r.cfg.integer("run", "seed", 1, 0, std::numeric_limits<long>::max());
  r.seed = seed_flag ? *seed_flag : static_cast<std::uint64_t>(s);
  r.cfg.set("run", "seed", std::to_string(r.seed));
  r.cfg.touch("run", "seed");
  r.beta = static_cast<int>(r.integer("run", "beta", 5, 1, 8));

  std::string report;
  if (command == "synth")
    report = cmd_synth(r);
  else if (command == "extract")
    report = cmd_extract(r);
  else if (command == "decompose")
    report = cmd_decompose(r);
  else if (command == "predict")
    report = cmd_predict(r);
  else if (command == "simulate")
    report = cmd_simulate(r);
  else
    report = cmd_report(r);
  r.cfg.reject_unused({"run", "synth", "extract", "decompose", "predict", "simulate", "report"});
  io::atomic_write(r.out / "report.txt", report);
  io::atomic_write(r.out / "manifest.ini", manifest(r, command));
  std::cout << report;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic source analysis batch tool"};
  app.require_subcommand(1);
  std::string config, out;
  std::uint64_t seed = 0;
  int threads = 0;
  std::vector<CLI::App*> subs;
  for (const char* name : {"synth", "extract", "decompose", "predict", "simulate", "report"}) {
    auto* s = app.add_subcommand(name);
    s->add_option("--config", config, "configuration file")->required();
    s->add_option("--out", out, "output directory");
    s->add_option("--seed", seed, "root seed, overrides run.seed");
    s->add_option("--threads", threads, "worker threads (fallback: DSA_THREADS)");
    subs.push_back(s);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    for (auto* s : subs)
      if (s->parsed()) {
        std::optional<std::uint64_t> sf;
        if (s->count("--seed")) sf = seed;
        return run_command(s->get_name(), config, out, sf, threads);
      }
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
