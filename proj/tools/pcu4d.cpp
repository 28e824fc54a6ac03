// pcu4d: synthesize data, train, upsample, evaluate, benchmark and inspect
// layer features. Exit codes: 0 success, 1 runtime error, 2 usage error.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pcu4d/pcu4d.hpp"

namespace fs = std::filesystem;
using namespace pcu4d;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Flags shared by every command that builds a model.
struct ModelFlags {
  std::size_t L = 256;
  std::size_t n = 3;
  std::size_t S = 2;
  int fps = 60;
  bool no_attention = false;

  void add(CLI::App* app) {
    app->add_option("--L", L, "Points per low-resolution input frame")->check(CLI::PositiveNumber);
    app->add_option("--n", n, "Frames fused per window")->check(CLI::PositiveNumber);
    app->add_option("--S", S, "Upscaling factor")->check(CLI::PositiveNumber);
    app->add_option("--fps", fps, "Frame rate of the model (window stride over 60 fps data)")
        ->check(CLI::IsMember({30, 60}));
    app->add_flag("--no-attention", no_attention, "Use mean aggregation instead of attention");
  }

  TrainConfig config() const {
    TrainConfig c;
    c.L = L;
    c.n = n;
    c.S = S;
    c.fps = fps;
    c.use_attention = !no_attention;
    return c;
  }
};

std::vector<Sequence> load_all(const std::vector<std::string>& manifests) {
  std::vector<Sequence> out;
  for (const auto& m : manifests) out.push_back(load_sequence_from(m));
  return out;
}

GeneratorParams load_generator(const std::string& ckpt, const GeneratorConfig& gcfg, std::uint64_t seed) {
  GeneratorParams g = init_generator(gcfg, seed);
  if (!ckpt.empty()) load_checkpoint(ckpt, g);
  return g;
}

/// Low-resolution input frames: subsampled to L points when larger.
std::vector<Frame> inputs_of(const std::vector<Frame>& frames, std::size_t L, std::uint64_t seed) {
  std::vector<Frame> out;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].points.size() < L)
      throw std::runtime_error("frame " + std::to_string(i) + " has " + std::to_string(frames[i].points.size()) +
                               " points, fewer than L = " + std::to_string(L));
    out.push_back(frames[i].points.size() == L
                      ? frames[i]
                      : subsample_frame(frames[i], L, SubsampleStrategy::uniform_random, seed + i));
  }
  return out;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string shape = "sphere";
  std::size_t points = 4096;
  std::size_t frames = 60;
  double amplitude = SyntheticSpec{}.amplitude;
  double angular_velocity = SyntheticSpec{}.angular_velocity;
  double pulsation = SyntheticSpec{}.pulsation_rate;
  std::uint64_t seed = 7;
  std::string out;
  std::string format = "ply";
  std::string subject, motion, protocol;
};

void add_synth(CLI::App& root, SynthArgs& a) {
  auto* c = root.add_subcommand("synth", "Write a synthetic deforming sequence and its manifest");
  c->add_option("--shape", a.shape, "sphere | ellipsoid | two-lobe")
      ->check(CLI::IsMember({"sphere", "ellipsoid", "two-lobe"}));
  c->add_option("--points", a.points, "Points per frame")->check(CLI::PositiveNumber);
  c->add_option("--frames", a.frames, "Frame count")->check(CLI::PositiveNumber);
  c->add_option("--amplitude", a.amplitude, "Relative radial pulsation amplitude")->check(CLI::NonNegativeNumber);
  c->add_option("--angular-velocity", a.angular_velocity, "Rotation about z per frame (rad)");
  c->add_option("--pulsation", a.pulsation, "Pulsation phase advance per frame (rad)");
  c->add_option("--seed", a.seed, "Random seed");
  c->add_option("--out", a.out, "Output directory")->required();
  c->add_option("--format", a.format, "Frame file format")->check(CLI::IsMember({"ply", "xyz"}));
  c->add_option("--subject", a.subject, "Subject label stored in the manifest");
  c->add_option("--motion", a.motion, "Motion label stored in the manifest");
  c->add_option("--protocol", a.protocol, "Evaluation protocol label stored in the manifest");
}

int run_synth(const SynthArgs& a) {
  SyntheticSpec spec;
  spec.kind = parse_shape(a.shape);
  spec.points = a.points;
  spec.frames = a.frames;
  spec.amplitude = a.amplitude;
  spec.angular_velocity = a.angular_velocity;
  spec.pulsation_rate = a.pulsation;
  spec.seed = a.seed;
  auto frames = gen_synthetic_sequence(spec);
  const fs::path dir = a.out;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  SequenceManifest m;
  m.fps = 60;
  m.subject = a.subject;
  m.motion = a.motion;
  m.protocol = a.protocol;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%03zu.%s", f, a.format.c_str());
    save_frame(frames[f], dir / name);
    m.frames.push_back(dir / name);
  }
  save_manifest(m, dir / "manifest.json");
  std::cout << "wrote " << frames.size() << " frames and " << (dir / "manifest.json").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  ModelFlags model;
  std::vector<std::string> manifests;
  std::vector<std::string> eval_manifests;
  std::size_t epochs = 10;
  std::size_t batch = 2;
  std::size_t windows_per_epoch = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double lr_factor = 0.1;
  std::size_t lr_period = 10;
  double r_small = 0.06;
  double r_large = 0.1;
  std::size_t k = 9;
  double lambda_cd = 1.0;
  double lambda_density = 0.5;
  double lambda_adv = 0.1;
  double noise = 0.005;
  bool no_density = false;
  bool no_adversarial = false;
  bool static_sequence = false;
  bool no_augment = false;
  std::uint64_t seed = 1;
  std::string out = "run";
};

void add_train(CLI::App& root, TrainArgs& a) {
  auto* c = root.add_subcommand("train", "Train the upsampler adversarially");
  a.model.add(c);
  c->add_option("--manifest", a.manifests, "Training sequence manifest (repeatable)")->required();
  c->add_option("--eval-manifest", a.eval_manifests, "Held-out manifest scored after each epoch (repeatable)");
  c->add_option("--epochs", a.epochs, "Training epochs");
  c->add_option("--batch", a.batch, "Windows per optimizer step")->check(CLI::Range(1, 64));
  c->add_option("--windows-per-epoch", a.windows_per_epoch, "Windows drawn per epoch (0 = every window once)");
  c->add_option("--lr", a.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  c->add_option("--beta1", a.beta1, "Adam beta1")->check(CLI::Range(0.0, 1.0));
  c->add_option("--beta2", a.beta2, "Adam beta2")->check(CLI::Range(0.0, 1.0));
  c->add_option("--lr-decay", a.lr_factor, "Learning rate factor applied every period")->check(CLI::Range(0.0, 1.0));
  c->add_option("--lr-period", a.lr_period, "Epochs between learning rate decays")->check(CLI::PositiveNumber);
  c->add_option("--r-small", a.r_small, "PDS sampling radius")->check(CLI::PositiveNumber);
  c->add_option("--r-large", a.r_large, "Density loss radius")->check(CLI::PositiveNumber);
  c->add_option("--k", a.k, "Neighbors per point in the k-NN graphs")->check(CLI::PositiveNumber);
  c->add_option("--lambda-cd", a.lambda_cd, "Chamfer loss weight")->check(CLI::NonNegativeNumber);
  auto* ld = c->add_option("--lambda-density", a.lambda_density, "Density loss weight")->check(CLI::NonNegativeNumber);
  auto* la = c->add_option("--lambda-adv", a.lambda_adv, "Adversarial loss weight")->check(CLI::NonNegativeNumber);
  c->add_option("--noise", a.noise, "Std of per-point input noise (normalized units)")->check(CLI::NonNegativeNumber);
  c->add_flag("--no-density", a.no_density, "Drop the density loss")->excludes(ld);
  c->add_flag("--no-adversarial", a.no_adversarial, "Drop the discriminator and adversarial loss")->excludes(la);
  c->add_flag("--static", a.static_sequence, "Feed the newest frame repeated n times");
  c->add_flag("--no-augment", a.no_augment, "Disable flips, noise, scaling, slicing and time inversion");
  c->add_option("--seed", a.seed, "Random seed");
  c->add_option("--out", a.out, "Directory for checkpoints and log.csv");
}

TrainConfig train_config(const TrainArgs& a) {
  TrainConfig c = a.model.config();
  c.epochs = a.epochs;
  c.batch_size = a.batch;
  c.windows_per_epoch = a.windows_per_epoch;
  c.opt_g = {a.lr, a.beta1, a.beta2, 1e-8};
  c.opt_d = c.opt_g;
  c.schedule.base = a.lr;
  c.schedule.factor = a.lr_factor;
  c.schedule.period = a.lr_period;
  c.generator_base.pds.r_small = a.r_small;
  c.generator_base.pds.r_large = a.r_large;
  c.generator_base.pds.k = a.k;
  c.generator_base.layer_k = a.k;
  c.weights = {a.lambda_cd, a.lambda_density, a.lambda_adv};
  c.use_density_loss = !a.no_density;
  c.use_adversarial = !a.no_adversarial;
  c.static_sequence = a.static_sequence;
  if (!a.no_augment) c.augment = AugmentSwitches::all();
  c.augment.noise_sigma = a.noise;
  c.seed = a.seed;
  return c;
}

int run_train(const TrainArgs& a) {
  const TrainConfig cfg = train_config(a);
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  auto data = load_all(a.manifests);
  auto eval_data = load_all(a.eval_manifests);
  RunOptions opt;
  opt.out_dir = fs::path(a.out);
  if (!eval_data.empty()) opt.eval_data = &eval_data;
  auto run = run_training(data, cfg, opt);
  std::cout << "trained " << run.log.size() << " steps; checkpoints in " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct UpsampleArgs {
  ModelFlags model;
  std::string ckpt;
  std::string manifest;
  std::string out = "upsampled";
  std::string format = "ply";
  std::uint64_t seed = 1;
};

void add_upsample(CLI::App& root, UpsampleArgs& a) {
  auto* c = root.add_subcommand("upsample", "Upscale every n-frame window of a sequence");
  a.model.add(c);
  c->add_option("--ckpt", a.ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  c->add_option("--manifest", a.manifest, "Input sequence manifest")->required()->check(CLI::ExistingFile);
  c->add_option("--out", a.out, "Output directory");
  c->add_option("--format", a.format, "Output frame format")->check(CLI::IsMember({"ply", "xyz"}));
  c->add_option("--seed", a.seed, "Seed for subsampling frames larger than L");
}

int run_upsample(const UpsampleArgs& a) {
  const TrainConfig cfg = a.model.config();
  const GeneratorConfig gcfg = cfg.generator();
  const GeneratorParams g = load_generator(a.ckpt, gcfg, 0);
  const auto m = load_manifest(a.manifest);
  const auto frames = inputs_of(load_sequence(m), cfg.L, a.seed);
  const std::size_t windows = window_count(frames.size(), cfg.n, 1);
  if (windows == 0)
    throw std::runtime_error("manifest has " + std::to_string(frames.size()) + " frames, fewer than n = " +
                             std::to_string(cfg.n));
  const fs::path dir = a.out;
  fs::create_directories(dir);
  SequenceManifest out_m;
  out_m.fps = m.fps;
  for (std::size_t w = 0; w < windows; ++w) {
    std::vector<Frame> win(frames.begin() + static_cast<std::ptrdiff_t>(w),
                           frames.begin() + static_cast<std::ptrdiff_t>(w + cfg.n));
    auto [cloud, tf] = prepare_input(win);
    Frame out;
    out.points = upsample(cloud, g, gcfg);
    out = tf.invert(out);
    char name[32];
    std::snprintf(name, sizeof name, "frame_%03zu.%s", w + cfg.n - 1, a.format.c_str());
    save_frame(out, dir / name);
    out_m.frames.push_back(dir / name);
  }
  save_manifest(out_m, dir / "manifest.json");
  std::cout << "wrote " << windows << " frames of " << cfg.H() << " points to " << dir.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  ModelFlags model;
  std::string ckpt;
  std::vector<std::string> manifests;
  std::string out;
  bool include_static = false;
  bool ground_truth = false;
  std::size_t start_step = 1;
  std::size_t max_windows = 0;
  std::uint64_t seed = 12345;
};

void add_eval(CLI::App& root, EvalArgs& a) {
  auto* c = root.add_subcommand("eval", "Score a checkpoint on held-out sequences (JSON report)");
  a.model.add(c);
  auto* ck = c->add_option("--ckpt", a.ckpt, "Checkpoint file")->check(CLI::ExistingFile);
  c->add_option("--manifest", a.manifests, "Held-out sequence manifest (repeatable)")->required();
  c->add_option("--out", a.out, "Report path (stdout when omitted)");
  c->add_flag("--static", a.include_static, "Also score static (repeated newest frame) inputs");
  c->add_flag("--ground-truth", a.ground_truth, "Score the targets against themselves")->excludes(ck);
  c->add_option("--start-step", a.start_step, "Frames between evaluated window starts")->check(CLI::PositiveNumber);
  c->add_option("--max-windows", a.max_windows, "Cap on evaluated windows (0 = all)");
  c->add_option("--seed", a.seed, "Seed for input and target subsampling");
}

int run_eval(const EvalArgs& a) {
  if (a.ckpt.empty() && !a.ground_truth) throw UsageError("eval needs --ckpt or --ground-truth");
  const TrainConfig cfg = a.model.config();
  const GeneratorParams g = load_generator(a.ckpt, cfg.generator(), 0);
  EvalOptions opt;
  opt.include_static = a.include_static;
  opt.ground_truth = a.ground_truth;
  opt.start_step = a.start_step;
  opt.max_windows = a.max_windows;
  opt.seed = a.seed;
  auto report = evaluate(load_all(a.manifests), g, cfg, opt);
  const std::string text = report.to_json().dump(2) + "\n";
  if (a.out.empty()) {
    std::cout << text;
  } else {
    std::ofstream f(a.out);
    if (!(f << text)) throw std::runtime_error("cannot write " + a.out);
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  std::size_t runs = 20;
  std::size_t warmup = 3;
  std::size_t frames = 3;
  std::vector<std::string> grid;
  std::string out;
  std::uint64_t seed = 7;
};

void add_bench(CLI::App& root, BenchArgs& a) {
  auto* c = root.add_subcommand("bench", "Time the generator forward pass (CSV)");
  c->add_option("--runs", a.runs, "Timed runs per configuration")->check(CLI::Range(20, 100000));
  c->add_option("--warmup", a.warmup, "Untimed runs per configuration")->check(CLI::Range(3, 1000));
  c->add_option("--frames", a.frames, "Frames per window")->check(CLI::PositiveNumber);
  c->add_option("--grid", a.grid, "Override cases as INPUT/SCALE (repeatable)");
  c->add_option("--out", a.out, "CSV path (stdout when omitted)");
  c->add_option("--seed", a.seed, "Random seed");
}

int run_bench(const BenchArgs& a) {
  setenv("PCU4D_THREADS", "1", 1);
  std::vector<BenchCase> grid;
  for (const auto& g : a.grid) {
    auto slash = g.find('/');
    try {
      if (slash == std::string::npos) throw std::invalid_argument(g);
      grid.push_back({std::stoul(g.substr(0, slash)), std::stoul(g.substr(slash + 1))});
    } catch (const std::exception&) {
      throw UsageError("--grid expects INPUT/SCALE, got '" + g + "'");
    }
    if (grid.back().input_size == 0 || grid.back().scale == 0) throw UsageError("--grid values must be positive");
  }
  if (grid.empty()) grid = default_bench_grid();
  auto rows = run_bench(grid, {a.frames, a.warmup, a.runs, a.seed});
  const std::string csv = bench_csv(rows);
  if (a.out.empty()) {
    std::cout << csv;
  } else {
    std::ofstream f(a.out);
    if (!(f << csv)) throw std::runtime_error("cannot write " + a.out);
  }
  // Reported, not asserted: does time grow with input size at each scale?
  std::map<std::size_t, std::vector<const BenchRow*>> by_scale;
  for (const auto& r : rows) by_scale[r.c.scale].push_back(&r);
  std::cerr << "monotone in input size:";
  for (auto& [scale, rs] : by_scale) {
    if (rs.size() < 2) continue;
    std::sort(rs.begin(), rs.end(), [](auto* a, auto* b) { return a->c.input_size < b->c.input_size; });
    bool mono = true;
    for (std::size_t i = 1; i < rs.size(); ++i) mono = mono && rs[i]->median_s >= rs[i - 1]->median_s;
    std::cerr << " S=" << scale << (mono ? " yes" : " no");
  }
  std::cerr << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct FeaturesArgs {
  ModelFlags model;
  std::string ckpt;
  std::string manifest;
  std::size_t start = 0;
  std::string out = "features";
  std::uint64_t seed = 1;
};

void add_features(CLI::App& root, FeaturesArgs& a) {
  auto* c = root.add_subcommand("features", "Write per-layer feature-norm colored clouds for one window");
  a.model.add(c);
  c->add_option("--ckpt", a.ckpt, "Checkpoint file (random weights from --seed when omitted)")
      ->check(CLI::ExistingFile);
  c->add_option("--manifest", a.manifest, "Sequence manifest")->required()->check(CLI::ExistingFile);
  c->add_option("--start", a.start, "First frame of the window");
  c->add_option("--out", a.out, "Output directory");
  c->add_option("--seed", a.seed, "Seed for weights and subsampling");
}

int run_features(const FeaturesArgs& a) {
  const TrainConfig cfg = a.model.config();
  const GeneratorConfig gcfg = cfg.generator();
  const GeneratorParams g = load_generator(a.ckpt, gcfg, a.seed);
  const auto frames = inputs_of(load_sequence(load_manifest(a.manifest)), cfg.L, a.seed);
  if (a.start + cfg.n > frames.size()) throw std::runtime_error("window exceeds the sequence");
  std::vector<Frame> win(frames.begin() + static_cast<std::ptrdiff_t>(a.start),
                         frames.begin() + static_cast<std::ptrdiff_t>(a.start + cfg.n));
  auto [cloud, tf] = prepare_input(win);
  Tape tape;
  auto trace = generator_forward(tape, cloud, g, gcfg, false);
  std::vector<Point3> pts;
  for (const auto& p : cloud.points) pts.push_back(tf.invert(Point3{p[0], p[1], p[2]}));
  const fs::path dir = a.out;
  fs::create_directories(dir);
  for (std::size_t l = 0; l < trace.layer_features.size(); ++l) {
    const Tensor& f = tape.value(trace.layer_features[l]);
    std::vector<double> norms(f.rows);
    for (std::size_t i = 0; i < f.rows; ++i) {
      double s = 0.0;
      for (double v : f.row(i)) s += v * v;
      norms[i] = std::sqrt(s);
    }
    save_colored_cloud(pts, norms, dir / ("layer" + std::to_string(l) + ".ply"));
  }
  std::cout << "wrote " << trace.layer_features.size() << " layer clouds to " << dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"4D point cloud upsampling"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  SynthArgs synth;
  TrainArgs train;
  UpsampleArgs up;
  EvalArgs ev;
  BenchArgs bench;
  FeaturesArgs feat;
  add_synth(app, synth);
  add_train(app, train);
  add_upsample(app, up);
  add_eval(app, ev);
  add_bench(app, bench);
  add_features(app, feat);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "synth") return run_synth(synth);
    if (cmd == "train") return run_train(train);
    if (cmd == "upsample") return run_upsample(up);
    if (cmd == "eval") return run_eval(ev);
    if (cmd == "bench") return run_bench(bench);
    if (cmd == "features") return run_features(feat);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
