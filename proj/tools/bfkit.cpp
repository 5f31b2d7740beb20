#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bfkit/bfkit.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::uint64_t fnv1a(const std::string &s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << v;
  return ss.str();
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

// Canonical key = value text of the effective options of one run.
class RunConfig {
 public:
  template <typename V>
  RunConfig &set(const std::string &key, const V &value) {
    std::ostringstream ss;
    ss << std::setprecision(17) << value;
    _kv[key] = ss.str();
    return *this;
  }
  [[nodiscard]] std::string text() const {
    std::string out;
    for (const auto &[k, v] : _kv) {
      out += k + " = " + v + "\n";
    }
    return out;
  }

 private:
  std::map<std::string, std::string> _kv;
};

void write_manifest(const fs::path &path, const std::string &command, const std::vector<std::string> &argv,
                    const std::string &config, std::uint64_t seed, double wallclock) {
  json j;
  j["command"] = command;
  j["argv"] = argv;
  j["config"] = config;
  j["config_hash"] = "fnv1a64:" + hex(fnv1a(config));
  j["seed"] = seed;
  j["versions"] = {{"bfkit", std::string(bfkit::version)},
                   {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION)},
                   {"compiler", __VERSION__}};
  j["wallclock_s"] = wallclock;
  std::ofstream os(path);
  if (!os) {
    throw std::runtime_error("cannot write " + path.string());
  }
  os << j.dump(2) << '\n';
}

void write_text(const fs::path &path, const std::string &text) {
  std::ofstream os(path);
  if (!os) {
    throw std::runtime_error("cannot write " + path.string());
  }
  os << text;
}

fs::path ensure_dir(const std::string &dir) {
  fs::path p(dir);
  fs::create_directories(p);
  return p;
}

// Strip plot: one column of points per series with a bar at the median.
std::string render_svg(const std::string &title, const std::string &ylabel,
                       const std::vector<std::pair<std::string, std::vector<double>>> &series) {
  const double w = 120.0 * static_cast<double>(std::max<std::size_t>(series.size(), 1)) + 100.0;
  const double h = 360.0;
  const double top = 40.0;
  const double bottom = h - 60.0;
  double ymax = 0.0;
  for (const auto &s : series) {
    for (const auto v : s.second) {
      if (std::isfinite(v)) {
        ymax = std::max(ymax, v);
      }
    }
  }
  ymax = ymax > 0.0 ? ymax * 1.05 : 1.0;
  auto y = [&](double v) { return bottom - (bottom - top) * std::clamp(v, 0.0, ymax) / ymax; };
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(2);
  ss << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << w / 2 << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
     << title << "</text>\n"
     << "<line x1=\"70\" y1=\"" << top << "\" x2=\"70\" y2=\"" << bottom << "\" stroke=\"black\"/>\n"
     << "<line x1=\"70\" y1=\"" << bottom << "\" x2=\"" << w - 20 << "\" y2=\"" << bottom << "\" stroke=\"black\"/>\n"
     << "<text x=\"16\" y=\"" << (top + bottom) / 2 << "\" transform=\"rotate(-90 16 " << (top + bottom) / 2
     << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << ylabel << "</text>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = ymax * t / 4.0;
    ss << "<text x=\"64\" y=\"" << y(v) + 4 << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">"
       << std::setprecision(3) << v << std::setprecision(2) << "</text>\n";
  }
  for (std::size_t k = 0; k < series.size(); ++k) {
    const double cx = 130.0 + 120.0 * static_cast<double>(k);
    const auto &vals = series[k].second;
    for (std::size_t i = 0; i < vals.size(); ++i) {
      if (!std::isfinite(vals[i])) {
        continue;
      }
      const double jitter = 30.0 * (static_cast<double>((i * 2654435761ULL) % 1000) / 1000.0 - 0.5);
      ss << "<circle cx=\"" << cx + jitter << "\" cy=\"" << y(vals[i])
         << "\" r=\"2\" fill=\"steelblue\" fill-opacity=\"0.6\"/>\n";
    }
    if (!vals.empty()) {
      const auto st = bfkit::error_stats(vals);
      ss << "<line x1=\"" << cx - 25 << "\" y1=\"" << y(st.median) << "\" x2=\"" << cx + 25 << "\" y2=\""
         << y(st.median) << "\" stroke=\"crimson\" stroke-width=\"2\"/>\n";
    }
    ss << "<text x=\"" << cx << "\" y=\"" << bottom + 18
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << series[k].first << "</text>\n";
  }
  ss << "</svg>\n";
  return ss.str();
}

std::vector<std::string> split(const std::string &s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(s);
  while (std::getline(ss, cur, sep)) {
    if (!cur.empty()) {
      out.push_back(cur);
    }
  }
  return out;
}

std::size_t resolve_chrom(const bfkit::Genome &g, const std::string &s) {
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.name(i) == s) {
      return i;
    }
  }
  std::size_t pos = 0;
  std::size_t v = 0;
  try {
    v = std::stoul(s, &pos);
  } catch (const std::exception &) {
    pos = 0;
  }
  if (pos != s.size() || pos == 0 || v >= g.size()) {
    throw std::invalid_argument("unknown chromosome '" + s + "' (genome has " + std::to_string(g.size()) +
                                " chromosomes)");
  }
  return v;
}

fs::path truth_path(const fs::path &map_path) {
  return map_path.parent_path() / (map_path.stem().string() + ".truth.tsv");
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  std::size_t chroms{3};
  std::vector<std::uint64_t> lengths{};
  double min_length{2e5};
  double max_length{2e6};
  std::uint64_t resolution{32'000};
  double noise{0.10};
  std::optional<double> sigma2{};
  std::optional<double> alpha{};
  std::string shape{"gaussian"};
  int traps{0};
  std::optional<double> aux_amplitude{};
  double aux_size{0.5};
  std::size_t count{1};
  std::string format{"bfmap"};
  std::uint64_t seed{0};
  std::string out{};
  bool loop{false};
  long bins{200};
  double loop_amplitude{5.0};
  double loop_sigma2{2.0};
  double loop_noise{0.0};
};

void add_simulate(CLI::App &app, SimulateArgs &a) {
  auto *c = app.add_subcommand("simulate", "Simulate synthetic maps with known positions");
  c->add_option("--chroms", a.chroms, "Chromosome count when lengths are sampled")->check(CLI::Range(2, 1000));
  c->add_option("--lengths", a.lengths, "Explicit chromosome lengths (bp)")->delimiter(',');
  c->add_option("--min-length", a.min_length, "Smallest sampled length (bp)");
  c->add_option("--max-length", a.max_length, "Largest sampled length (bp)");
  c->add_option("--resolution", a.resolution, "Bin size (bp)");
  c->add_option("--noise", a.noise, "Noise level in [0, 1]");
  c->add_option("--sigma2", a.sigma2, "Spot variance (bins^2); sampled when absent");
  c->add_option("--alpha", a.alpha, "Spot intensity; sampled when absent");
  c->add_option("--shape", a.shape, "Spot shape")->check(CLI::IsMember({"gaussian", "square", "ellipse", "ring"}));
  c->add_option("--traps", a.traps, "Random bright pixels per block");
  c->add_option("--aux-amplitude", a.aux_amplitude, "Amplitude of a second spot relative to the main one");
  c->add_option("--aux-size", a.aux_size, "Variance of the second spot relative to sigma2");
  c->add_option("--count", a.count, "Number of maps")->check(CLI::PositiveNumber);
  c->add_option("--format", a.format, "Map file format")->check(CLI::IsMember({"bfmap", "coo"}));
  c->add_option("--seed", a.seed, "Base seed");
  c->add_option("--out", a.out, "Output directory")->required();
  c->add_flag("--loop", a.loop, "Single-chromosome cis map with one loop instead");
  c->add_option("--bins", a.bins, "Loop map size (bins)");
  c->add_option("--loop-amplitude", a.loop_amplitude, "Loop peak over background");
  c->add_option("--loop-sigma2", a.loop_sigma2, "Loop variance (bins^2)");
  c->add_option("--loop-noise", a.loop_noise, "Multiplicative loop-map noise");
}

int run_simulate(const SimulateArgs &a, const std::vector<std::string> &argv) {
  const auto t0 = Clock::now();
  const auto dir = ensure_dir(a.out);
  RunConfig rc;
  rc.set("count", a.count).set("format", a.format).set("resolution", a.resolution).set("seed", a.seed);
  if (a.loop) {
    rc.set("mode", "loop").set("bins", a.bins).set("amplitude", a.loop_amplitude).set("sigma2", a.loop_sigma2)
        .set("noise", a.loop_noise);
  } else {
    std::string lengths;
    for (const auto l : a.lengths) {
      lengths += (lengths.empty() ? "" : ",") + std::to_string(l);
    }
    rc.set("mode", "centromere").set("chroms", a.chroms).set("lengths", lengths).set("min_length", a.min_length)
        .set("max_length", a.max_length).set("noise", a.noise).set("shape", a.shape).set("traps", a.traps)
        .set("sigma2", a.sigma2 ? fmt(*a.sigma2) : "prior").set("alpha", a.alpha ? fmt(*a.alpha) : "prior")
        .set("aux_amplitude", a.aux_amplitude ? fmt(*a.aux_amplitude) : "none").set("aux_size", a.aux_size);
  }
  const std::string ext = a.format == "coo" ? ".coo" : ".bfmap";
  for (std::size_t m = 0; m < a.count; ++m) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "map_%03zu", m);
    const auto map_path = dir / (std::string(stem) + ext);
    if (a.loop) {
      bfkit::LoopMapSpec spec{};
      spec.bins = a.bins;
      spec.amplitude = a.loop_amplitude;
      spec.sigma2 = a.loop_sigma2;
      spec.noise = a.loop_noise;
      const auto lm = bfkit::synthetic_loop_map(spec, bfkit::derive_seed(a.seed, {m}));
      const bfkit::Genome g{{static_cast<std::uint64_t>(a.bins) * a.resolution}, a.resolution};
      bfkit::save_map(bfkit::ContactMap{g, lm.values}, map_path);
      std::ostringstream t;
      t << std::setprecision(17) << "# i_bin\tj_bin\n" << lm.i << '\t' << lm.j << '\n';
      write_text(truth_path(map_path), t.str());
    } else {
      auto rng = bfkit::make_engine(a.seed, {m});
      bfkit::Genome g;
      if (!a.lengths.empty()) {
        g = bfkit::Genome{a.lengths, a.resolution};
      } else {
        bfkit::TrainBatchSpec spec{};
        spec.chrom_counts = {a.chroms};
        spec.min_length = a.min_length;
        spec.max_length = a.max_length;
        spec.resolution = a.resolution;
        spec.validate();
        g = bfkit::sample_genome(spec, rng);
      }
      bfkit::SimConfig cfg{};
      bfkit::sample_spot_priors(cfg, rng);
      if (a.sigma2) cfg.sigma2 = *a.sigma2;
      if (a.alpha) cfg.alpha = *a.alpha;
      cfg.noise_level = a.noise;
      cfg.shape = bfkit::parse_spot_shape(a.shape);
      cfg.trap_pixels = a.traps;
      if (a.aux_amplitude) cfg.auxiliary = bfkit::AuxiliarySpot{*a.aux_amplitude, a.aux_size};
      cfg.seed = bfkit::derive_seed(a.seed, {m, 1});
      const auto theta = bfkit::sample_prior(g, rng);
      bfkit::save_map(bfkit::simulate(g, theta, cfg), map_path);
      bfkit::save_positions(theta, truth_path(map_path));
    }
    std::cout << map_path.string() << '\n';
  }
  write_manifest(dir / "manifest.json", "simulate", argv, rc.text(), a.seed, seconds_since(t0));
  return 0;
}

// ------------------------------------------------------------------- train

struct TrainArgs {
  std::string config{};
  std::string out{};
  std::string log{};
  std::string precision{"f32"};
  std::optional<std::size_t> samples, batch, epochs, min_chroms, max_chroms;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> scheme;
};

void add_train(CLI::App &app, TrainArgs &a) {
  auto *c = app.add_subcommand("train", "Train a model on synthetic maps");
  c->add_option("--config", a.config, "key = value training config")->check(CLI::ExistingFile);
  c->add_option("--out", a.out, "Checkpoint path")->required();
  c->add_option("--log", a.log, "Also write the epoch log (JSON lines) here");
  c->add_option("--precision", a.precision, "Training precision")->check(CLI::IsMember({"f32", "f64"}));
  c->add_option("--samples", a.samples, "Total samples");
  c->add_option("--batch", a.batch, "Batch size");
  c->add_option("--epochs", a.epochs, "Epochs");
  c->add_option("--lr", a.lr, "Learning rate");
  c->add_option("--seed", a.seed, "Seed");
  c->add_option("--scheme", a.scheme, "Positional encoding");
  c->add_option("--min-chroms", a.min_chroms, "Fewest chromosomes per genome");
  c->add_option("--max-chroms", a.max_chroms, "Most chromosomes per genome");
}

template <typename T>
int train_with(const bfkit::TrainConfig &cfg, const TrainArgs &a, const std::vector<std::string> &argv) {
  const auto t0 = Clock::now();
  std::ofstream logf;
  if (!a.log.empty()) {
    if (fs::path(a.log).has_parent_path()) {
      fs::create_directories(fs::path(a.log).parent_path());
    }
    logf.open(a.log);
    if (!logf) {
      throw std::runtime_error("cannot write " + a.log);
    }
  }
  auto res = bfkit::train<T>(cfg, [&](const bfkit::EpochRecord &r) {
    const json j = {{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_loss", r.val_loss},
                    {"wallclock", r.wallclock}};
    std::cout << j.dump() << std::endl;
    if (logf) {
      logf << j.dump() << std::endl;
    }
  });
  const json summary = {{"initial_val_loss", res.log.initial_val_loss},
                        {"best_epoch", res.log.best_epoch},
                        {"best_val_loss", res.log.best_val_loss}};
  std::cout << summary.dump() << std::endl;
  const fs::path out(a.out);
  if (out.has_parent_path()) {
    fs::create_directories(out.parent_path());
  }
  bfkit::save_model(res.model, out);
  write_manifest(fs::path(a.out + ".manifest.json"), "train", argv,
                 bfkit::to_text(cfg) + "precision = " + a.precision + "\n", cfg.seed, seconds_since(t0));
  return 0;
}

int run_train(const TrainArgs &a, const std::vector<std::string> &argv) {
  bfkit::TrainConfig cfg{};
  std::string text = a.config.empty() ? "" : bfkit::read_text_file(a.config);
  if (a.samples) text += "\ntotal_samples = " + std::to_string(*a.samples);
  if (a.batch) text += "\nbatch_size = " + std::to_string(*a.batch);
  if (a.epochs) text += "\nepochs = " + std::to_string(*a.epochs);
  if (a.lr) text += "\nlr = " + fmt(*a.lr);
  if (a.seed) text += "\nseed = " + std::to_string(*a.seed);
  if (a.scheme) text += "\npos_encoding = " + *a.scheme;
  if (a.min_chroms) text += "\nmin_chroms = " + std::to_string(*a.min_chroms);
  if (a.max_chroms) text += "\nmax_chroms = " + std::to_string(*a.max_chroms);
  cfg = bfkit::train_config_from_text(text + "\n");
  return a.precision == "f64" ? train_with<double>(cfg, a, argv) : train_with<float>(cfg, a, argv);
}

// ------------------------------------------------------------------- infer

struct InferArgs {
  std::string map, ckpt, truth, out;
  std::size_t k{0};
  std::size_t repeats{10};
  bool fit{false};
  std::size_t multires{0};
  std::size_t window{60};
  bool no_ice{false};
  std::size_t border{0};
  std::uint64_t seed{0};
};

void add_infer_options(CLI::App *c, InferArgs &a) {
  c->add_option("--ckpt", a.ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  c->add_option("--k", a.k, "Blocks per subset (0 = all)");
  c->add_option("--repeats", a.repeats, "Random subsets per chromosome")->check(CLI::PositiveNumber);
  c->add_flag("--fit", a.fit, "Refine with the Gaussian fit");
  c->add_option("--multires", a.multires, "Coarse factor of the two-stage refinement (0 = off)");
  c->add_option("--window", a.window, "Fine crop side (bins) of the two-stage refinement");
  c->add_flag("--no-ice", a.no_ice, "Skip ICE balancing");
  c->add_option("--border", a.border, "Zero this many bins at every block border");
  c->add_option("--seed", a.seed, "Subset seed");
}

void add_infer(CLI::App &app, InferArgs &a) {
  auto *c = app.add_subcommand("infer", "Estimate positions on a map");
  c->add_option("--map", a.map, "Map file (.bfmap or .coo)")->required()->check(CLI::ExistingFile);
  c->add_option("--truth", a.truth, "Reference positions for error reporting")->check(CLI::ExistingFile);
  c->add_option("--out", a.out, "Output directory");
  add_infer_options(c, a);
}

RunConfig infer_config(const InferArgs &a) {
  RunConfig rc;
  rc.set("k", a.k).set("repeats", a.repeats).set("fit", a.fit).set("multires", a.multires).set("window", a.window)
      .set("ice", !a.no_ice).set("border", a.border).set("seed", a.seed).set("ckpt", a.ckpt);
  return rc;
}

struct Estimates {
  std::vector<std::pair<std::string, bfkit::ParamVector>> methods;
  std::vector<double> seconds;
};

Estimates run_methods(const bfkit::ContactMap &raw, const bfkit::BlockFormer<float> &model, const InferArgs &a) {
  Estimates out;
  auto t0 = Clock::now();
  const auto map = bfkit::preprocess(raw, {!a.no_ice, a.border});
  const bfkit::EstimateOptions eo{a.k, a.repeats, a.seed};
  auto direct = bfkit::estimate(map, model, eo);
  out.methods.emplace_back("blockformer", direct);
  out.seconds.push_back(seconds_since(t0));
  if (a.fit) {
    const auto t1 = Clock::now();
    auto fit = bfkit::gaussian_fit_refine(map, direct, {});
    out.methods.emplace_back("blockformer+fit", fit.theta);
    out.seconds.push_back(out.seconds.front() + seconds_since(t1));
  }
  if (a.multires > 0) {
    const auto t1 = Clock::now();
    bfkit::MultiresOptions mo{};
    mo.coarse_factor = a.multires;
    mo.window = a.window;
    mo.estimate = eo;
    auto mr = bfkit::multires_refine(map, model, mo);
    out.methods.emplace_back("blockformer+multires", mr.refined);
    out.seconds.push_back(seconds_since(t1));
  }
  return out;
}

int run_infer(const InferArgs &a, const std::vector<std::string> &argv) {
  const auto t0 = Clock::now();
  const auto raw = bfkit::load_map(a.map);
  const auto model = bfkit::load_model<float>(a.ckpt);
  std::optional<bfkit::ParamVector> ref;
  if (!a.truth.empty()) {
    ref = bfkit::load_positions(fs::path(a.truth), raw.genome);
  }
  const auto est = run_methods(raw, model, a);
  std::ostringstream report;
  report << std::setprecision(10);
  report << "map = " << a.map << "\nresolution = " << raw.genome.resolution() << "\n";
  std::ostringstream table;
  table << std::setprecision(10) << "method\tchromosome\ttheta_bp" << (ref ? "\tabs_error_bp" : "") << '\n';
  for (std::size_t m = 0; m < est.methods.size(); ++m) {
    const auto rep = bfkit::make_report(est.methods[m].second, ref, est.seconds[m], est.methods[m].first);
    report << "[" << rep.method << "]\ntime_s = " << rep.wallclock << '\n';
    if (rep.normalized_error) {
      report << "normalized_error = " << *rep.normalized_error << '\n';
    }
    for (std::size_t i = 0; i < rep.theta.size(); ++i) {
      table << rep.method << '\t' << rep.names[i] << '\t' << rep.theta[i];
      if (ref) {
        table << '\t' << rep.abs_error[i];
      }
      table << '\n';
    }
  }
  std::cout << report.str() << '\n' << table.str();
  if (!a.out.empty()) {
    const auto dir = ensure_dir(a.out);
    write_text(dir / "report.txt", report.str());
    write_text(dir / "estimates.tsv", table.str());
    write_manifest(dir / "manifest.json", "infer", argv, infer_config(a).set("map", a.map).text(), a.seed,
                   seconds_since(t0));
  }
  return 0;
}

// -------------------------------------------------------------------- eval

struct EvalArgs {
  InferArgs infer{};
  std::string dir;
  bool svg{false};
};

void add_eval(CLI::App &app, EvalArgs &a) {
  auto *c = app.add_subcommand("eval", "Score every map of a directory against its reference");
  c->add_option("--dir", a.dir, "Directory of maps with <stem>.truth.tsv references")
      ->required()
      ->check(CLI::ExistingDirectory);
  c->add_option("--out", a.infer.out, "Output directory");
  c->add_flag("--svg", a.svg, "Also render an SVG strip plot");
  add_infer_options(c, a.infer);
}

int run_eval(const EvalArgs &a, const std::vector<std::string> &argv) {
  const auto t0 = Clock::now();
  const auto model = bfkit::load_model<float>(a.infer.ckpt);
  std::vector<fs::path> maps;
  for (const auto &e : fs::directory_iterator(a.dir)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".bfmap" || ext == ".coo")) {
      maps.push_back(e.path());
    }
  }
  std::sort(maps.begin(), maps.end());
  if (maps.empty()) {
    throw std::runtime_error("no .bfmap or .coo maps in " + a.dir);
  }
  std::ostringstream table;
  table << std::setprecision(10) << "map\tmethod\tnormalized_error\ttime_s\n";
  std::map<std::string, std::vector<double>> by_method;
  std::vector<std::string> order;
  for (const auto &p : maps) {
    const auto tp = truth_path(p);
    if (!fs::exists(tp)) {
      throw std::runtime_error("missing reference " + tp.string() + " for " + p.string());
    }
    const auto raw = bfkit::load_map(p);
    const auto ref = bfkit::load_positions(tp, raw.genome);
    const auto est = run_methods(raw, model, a.infer);
    for (std::size_t m = 0; m < est.methods.size(); ++m) {
      const auto &name = est.methods[m].first;
      const double e = bfkit::normalized_error(est.methods[m].second, ref);
      table << p.filename().string() << '\t' << name << '\t' << e << '\t' << est.seconds[m] << '\n';
      if (!by_method.count(name)) {
        order.push_back(name);
      }
      by_method[name].push_back(e);
    }
  }
  std::cout << table.str();
  std::ostringstream summary;
  summary << std::setprecision(10) << "method\tmaps\tmean\tstd\tmedian\n";
  for (const auto &name : order) {
    const auto st = bfkit::error_stats(by_method[name]);
    summary << name << '\t' << st.n << '\t' << st.mean << '\t' << st.std << '\t' << st.median << '\n';
  }
  std::cerr << summary.str();
  if (!a.infer.out.empty()) {
    const auto dir = ensure_dir(a.infer.out);
    write_text(dir / "results.tsv", table.str());
    write_text(dir / "summary.tsv", summary.str());
    if (a.svg) {
      std::vector<std::pair<std::string, std::vector<double>>> series;
      for (const auto &name : order) {
        series.emplace_back(name, by_method[name]);
      }
      write_text(dir / "errors.svg", render_svg("Normalized error per map", "normalized error", series));
    }
    write_manifest(dir / "manifest.json", "eval", argv, infer_config(a.infer).set("dir", a.dir).text(),
                   a.infer.seed, seconds_since(t0));
  }
  return 0;
}

// --------------------------------------------------------------------- abc

struct AbcArgs {
  std::string map, chrom{"0"}, criterion{"pearson"}, ckpt, out;
  std::size_t rounds{3};
  std::size_t pop{2000};
  double noise{0.10};
  std::uint64_t seed{0};
};

void add_abc(CLI::App &app, AbcArgs &a) {
  auto *c = app.add_subcommand("abc", "Sample the posterior of one position with SMC-ABC");
  c->add_option("--map", a.map, "Reference map")->required()->check(CLI::ExistingFile);
  c->add_option("--chrom", a.chrom, "Chromosome index or name");
  c->add_option("--criterion", a.criterion, "pearson or summary")->check(CLI::IsMember({"pearson", "summary"}));
  c->add_option("--rounds", a.rounds, "Rounds T")->check(CLI::PositiveNumber);
  c->add_option("--pop", a.pop, "Population N")->check(CLI::PositiveNumber);
  c->add_option("--ckpt", a.ckpt, "Model checkpoint (summary criterion)")->check(CLI::ExistingFile);
  c->add_option("--noise", a.noise, "Noise level of the simulations");
  c->add_option("--seed", a.seed, "Seed");
  c->add_option("--out", a.out, "Output directory");
}

int run_abc(const AbcArgs &a, const std::vector<std::string> &argv) {
  const auto t0 = Clock::now();
  const auto map = bfkit::load_map(a.map);
  const auto target = resolve_chrom(map.genome, a.chrom);
  bfkit::AbcConfig cfg{};
  cfg.rounds = a.rounds;
  cfg.population = a.pop;
  cfg.criterion = bfkit::parse_abc_criterion(a.criterion);
  cfg.noise_level = a.noise;
  cfg.seed = a.seed;
  std::optional<bfkit::BlockFormer<float>> model;
  if (cfg.criterion == bfkit::AbcCriterion::summary_l2) {
    if (a.ckpt.empty()) {
      throw std::invalid_argument("--criterion summary needs --ckpt");
    }
    model = bfkit::load_model<float>(a.ckpt);
  }
  const auto res = bfkit::run_abc(map, target, cfg, model ? &*model : nullptr);
  std::ostringstream pop;
  pop << std::setprecision(17) << "theta_bp\tweight\tround\n";
  for (const auto &r : res.rounds) {
    for (std::size_t m = 0; m < r.particles.size(); ++m) {
      pop << r.particles[m] << '\t' << r.weights[m] << '\t' << r.round << '\n';
    }
  }
  const auto &last = res.final();
  std::ostringstream summary;
  summary << std::setprecision(17) << "chromosome\tcriterion\trounds\tpopulation\taccepted\taccepted_mean_bp"
          << "\tweighted_mean_bp\tweighted_std_bp\n"
          << map.genome.name(target) << '\t' << bfkit::to_string(cfg.criterion) << '\t' << cfg.rounds << '\t'
          << cfg.population << '\t' << cfg.survivors() << '\t' << last.mean() << '\t' << last.weighted_mean() << '\t'
          << last.weighted_std() << '\n';
  std::cout << summary.str();
  if (!a.out.empty()) {
    const auto dir = ensure_dir(a.out);
    write_text(dir / "population.tsv", pop.str());
    write_text(dir / "summary.tsv", summary.str());
    RunConfig rc;
    rc.set("map", a.map).set("chrom", target).set("criterion", a.criterion).set("rounds", a.rounds)
        .set("pop", a.pop).set("noise", a.noise).set("ckpt", a.ckpt).set("seed", a.seed);
    write_manifest(dir / "manifest.json", "abc", argv, rc.text(), a.seed, seconds_since(t0));
  }
  return 0;
}

// ------------------------------------------------------------------- loops

struct LoopsArgs {
  std::string map, ckpt, truth, out, chrom{"0"};
  double percentile{92.0};
  long min_diag{3};
  double blur{1.0};
  long neighborhood{5};
  long window{30};
  double max_match{5.0};
};

void add_loops(CLI::App &app, LoopsArgs &a) {
  auto *c = app.add_subcommand("loops", "Pre-localize and localize loops in a cis-block");
  c->add_option("--map", a.map, "Map file")->required()->check(CLI::ExistingFile);
  c->add_option("--ckpt", a.ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  c->add_option("--chrom", a.chrom, "Chromosome whose cis-block is scanned");
  c->add_option("--percentile", a.percentile, "Threshold percentile of blurred O/E values");
  c->add_option("--min-diag", a.min_diag, "Minimal distance to the diagonal (bins)");
  c->add_option("--blur", a.blur, "Gaussian blur sigma (bins)");
  c->add_option("--neighborhood", a.neighborhood, "Local-maximum window side (bins)");
  c->add_option("--window", a.window, "Localization window side (bins)");
  c->add_option("--truth", a.truth, "Reference loops (i_bin j_bin per line)")->check(CLI::ExistingFile);
  c->add_option("--max-match", a.max_match, "Largest candidate-to-reference distance (bins) counted as a match");
  c->add_option("--out", a.out, "Output directory");
}

int run_loops(const LoopsArgs &a, const std::vector<std::string> &argv) {
  const auto t0 = Clock::now();
  const auto map = bfkit::load_map(a.map);
  const auto i = resolve_chrom(map.genome, a.chrom);
  const auto model = bfkit::load_model<float>(a.ckpt);
  const bfkit::Matrix cis = map.block(i, i);
  bfkit::PrelocOptions po{a.blur, a.percentile, a.neighborhood, a.min_diag};
  const auto r = map.genome.resolution();
  const auto calls = bfkit::find_loops(cis, model, r, po, a.window);
  std::vector<std::pair<double, double>> refs;
  if (!a.truth.empty()) {
    std::ifstream is(a.truth);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty() || line.front() == '#') continue;
      std::istringstream ls(line);
      double x = 0.0;
      double y = 0.0;
      if (!(ls >> x >> y)) {
        throw std::runtime_error("bad reference line '" + line + "' in " + a.truth);
      }
      refs.emplace_back(x, y);
    }
  }
  std::ostringstream table;
  table << std::setprecision(10) << "i_bin\tj_bin\tintensity\tx_bp\ty_bp";
  if (!refs.empty()) table << "\tmatched\tnormalized_error";
  table << '\n';
  for (const auto &c : calls) {
    table << c.candidate.i << '\t' << c.candidate.j << '\t' << c.candidate.intensity << '\t' << c.estimate.x << '\t'
          << c.estimate.y;
    if (!refs.empty()) {
      double best = std::numeric_limits<double>::infinity();
      std::pair<double, double> match{};
      for (const auto &ref : refs) {
        const double d = std::hypot(static_cast<double>(c.candidate.i) - ref.first,
                                    static_cast<double>(c.candidate.j) - ref.second);
        if (d < best) {
          best = d;
          match = ref;
        }
      }
      if (best <= a.max_match) {
        const double rr = static_cast<double>(r);
        const double e = 0.5 * (std::abs(c.estimate.x / rr - match.first) + std::abs(c.estimate.y / rr - match.second));
        table << "\tyes\t" << e;
      } else {
        table << "\tno\tnan";
      }
    }
    table << '\n';
  }
  std::cout << table.str();
  if (!a.out.empty()) {
    const auto dir = ensure_dir(a.out);
    write_text(dir / "candidates.tsv", table.str());
    RunConfig rc;
    rc.set("map", a.map).set("chrom", i).set("ckpt", a.ckpt).set("percentile", a.percentile)
        .set("min_diag", a.min_diag).set("blur", a.blur).set("neighborhood", a.neighborhood)
        .set("window", a.window).set("max_match", a.max_match);
    write_manifest(dir / "manifest.json", "loops", argv, rc.text(), 0, seconds_since(t0));
  }
  return 0;
}

// ------------------------------------------------------------------ ablate

struct AblateArgs {
  std::string config, out, ckpt_dir;
  std::vector<std::string> schemes{"pos3d_per_block", "none"};
  std::vector<std::size_t> blocks{1, 4};
  std::vector<std::string> curricula{};
  std::size_t maps{100};
  std::uint64_t seed{0};
  bool svg{false};
};

void add_ablate(CLI::App &app, AblateArgs &a) {
  auto *c = app.add_subcommand("ablate", "Positional-encoding and curriculum sweeps");
  c->add_option("--config", a.config, "Base training config")->check(CLI::ExistingFile);
  c->add_option("--schemes", a.schemes, "Positional encodings")->delimiter(',');
  c->add_option("--blocks", a.blocks, "Held-out block counts")->delimiter(',');
  c->add_option("--curricula", a.curricula, "Training chromosome ranges such as 2-5")->delimiter(',');
  c->add_option("--maps", a.maps, "Held-out maps per block count")->check(CLI::PositiveNumber);
  c->add_option("--ckpt-dir", a.ckpt_dir, "Reuse or store checkpoints here");
  c->add_option("--seed", a.seed, "Held-out map seed");
  c->add_option("--out", a.out, "Output directory")->required();
  c->add_flag("--svg", a.svg, "Also render an SVG strip plot");
}

int run_ablate(const AblateArgs &a, const std::vector<std::string> &argv) {
  const auto t0 = Clock::now();
  const auto dir = ensure_dir(a.out);
  const std::string base = a.config.empty() ? "" : bfkit::read_text_file(a.config);
  auto curricula = a.curricula;
  if (curricula.empty()) {
    const auto cfg = bfkit::train_config_from_text(base);
    curricula.push_back(std::to_string(cfg.data.min_chroms) + "-" + std::to_string(cfg.data.max_chroms));
  }
  std::ostringstream table;
  std::ostringstream raw;
  table << std::setprecision(10) << "scheme\tcurriculum\tblocks\tmaps\tmean\tstd\tmedian\tci_lo\tci_hi\n";
  raw << std::setprecision(17) << "scheme\tcurriculum\tblocks\tmap\tnormalized_error\n";
  std::vector<std::pair<std::string, std::vector<double>>> series;
  for (const auto &cur : curricula) {
    const auto parts = split(cur, '-');
    if (parts.size() != 2) {
      throw std::invalid_argument("curriculum '" + cur + "' is not of the form min-max");
    }
    for (const auto &scheme : a.schemes) {
      auto cfg = bfkit::train_config_from_text(base + "\npos_encoding = " + scheme + "\nmin_chroms = " + parts[0] +
                                               "\nmax_chroms = " + parts[1] + "\n");
      const auto tag = bfkit::to_string(cfg.model.pos_encoding) + "_" + cur;
      std::optional<bfkit::BlockFormer<float>> model;
      fs::path ck;
      if (!a.ckpt_dir.empty()) {
        fs::create_directories(a.ckpt_dir);
        ck = fs::path(a.ckpt_dir) / (tag + ".bfwt");
        if (fs::exists(ck)) {
          model = bfkit::load_model<float>(ck);
          if (!(model->config() == cfg.model)) {
            throw std::runtime_error(ck.string() + " was trained with a different model config");
          }
          std::cerr << "reusing " << ck.string() << '\n';
        }
      }
      if (!model) {
        std::cerr << "training " << tag << '\n';
        model = bfkit::train<float>(cfg, [&](const bfkit::EpochRecord &r) {
                  std::cerr << tag << " epoch " << r.epoch << " val " << r.val_loss << '\n';
                }).model;
        if (!ck.empty()) {
          bfkit::save_model(*model, ck);
        }
      }
      for (const auto b : a.blocks) {
        bfkit::HeldoutSpec hs{};
        hs.blocks = b;
        hs.maps = a.maps;
        hs.noise_level = cfg.data.noise_level;
        hs.resolution = cfg.data.resolution;
        hs.min_length = cfg.data.min_length;
        hs.max_length = cfg.data.max_length;
        hs.seed = a.seed;
        const auto errs = bfkit::heldout_errors(*model, hs);
        const auto st = bfkit::error_stats(errs);
        const auto name = bfkit::to_string(cfg.model.pos_encoding);
        table << name << '\t' << cur << '\t' << b << '\t' << st.n << '\t' << st.mean << '\t' << st.std << '\t'
              << st.median << '\t' << st.ci_lo << '\t' << st.ci_hi << '\n';
        for (std::size_t m = 0; m < errs.size(); ++m) {
          raw << name << '\t' << cur << '\t' << b << '\t' << m << '\t' << errs[m] << '\n';
        }
        series.emplace_back(name + " " + cur + " b" + std::to_string(b), errs);
      }
    }
  }
  std::cout << table.str();
  write_text(dir / "ablation.tsv", table.str());
  write_text(dir / "raw_errors.tsv", raw.str());
  if (a.svg) {
    write_text(dir / "ablation.svg", render_svg("Held-out normalized error", "normalized error", series));
  }
  RunConfig rc;
  std::string schemes;
  for (const auto &s : a.schemes) schemes += (schemes.empty() ? "" : ",") + s;
  std::string blocks;
  for (const auto b : a.blocks) blocks += (blocks.empty() ? "" : ",") + std::to_string(b);
  std::string curs;
  for (const auto &c : curricula) curs += (curs.empty() ? "" : ",") + c;
  rc.set("base_config", base).set("schemes", schemes).set("blocks", blocks).set("curricula", curs)
      .set("maps", a.maps).set("seed", a.seed);
  write_manifest(dir / "manifest.json", "ablate", argv, rc.text(), a.seed, seconds_since(t0));
  return 0;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"Block-structured interaction map toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(bfkit::version));
  SimulateArgs sim;
  TrainArgs tr;
  InferArgs inf;
  EvalArgs ev;
  AbcArgs ab;
  LoopsArgs lp;
  AblateArgs abl;
  add_simulate(app, sim);
  add_train(app, tr);
  add_infer(app, inf);
  add_eval(app, ev);
  add_abc(app, ab);
  add_loops(app, lp);
  add_ablate(app, abl);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    if (e.get_exit_code() == 0) {
      return app.exit(e);
    }
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }
  const std::vector<std::string> args(argv, argv + argc);
  try {
    const auto *sub = app.get_subcommands().front();
    const auto name = sub->get_name();
    if (name == "simulate") return run_simulate(sim, args);
    if (name == "train") return run_train(tr, args);
    if (name == "infer") return run_infer(inf, args);
    if (name == "eval") return run_eval(ev, args);
    if (name == "abc") return run_abc(ab, args);
    if (name == "loops") return run_loops(lp, args);
    if (name == "ablate") return run_ablate(abl, args);
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
