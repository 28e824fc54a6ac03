#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "pcu4d/autodiff.hpp"
#include "pcu4d/checkpoint.hpp"
#include "pcu4d/data.hpp"
#include "pcu4d/discriminator.hpp"
#include "pcu4d/geometry.hpp"
#include "pcu4d/losses.hpp"
#include "pcu4d/upsampler.hpp"

namespace pcu4d {

/// A ground-truth sequence at its native 60 fps plus free-text labels. The
/// protocol label groups evaluation results (e.g. "unseen_subject").
struct Sequence {
  std::vector<Frame> frames;
  std::string subject;
  std::string motion;
  std::string protocol;
};

inline Sequence load_sequence_from(const fs::path& manifest_path) {
  auto m = load_manifest(manifest_path);
  return {load_sequence(m), m.subject, m.motion, m.protocol};
}

struct AugmentSwitches {
  bool flip = false;
  bool noise = false;
  bool scale = false;
  bool slice = false;
  bool time_inversion = false;
  double noise_sigma = 0.005;

  static AugmentSwitches all() { return {true, true, true, true, true, 0.005}; }
};

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 2;
  std::size_t L = 256;
  std::size_t n = 3;
  std::size_t S = 2;
  int fps = 60;
  /// Windows drawn per epoch; 0 uses every valid window once.
  std::size_t windows_per_epoch = 0;

  LossWeights weights;
  LsganConstants lsgan;
  AdamConfig opt_g;
  AdamConfig opt_d;
  LrSchedule schedule;

  bool use_attention = true;
  bool use_density_loss = true;
  bool use_adversarial = true;
  bool static_sequence = false;
  AugmentSwitches augment;

  GeneratorConfig generator_base;
  DiscriminatorConfig discriminator;
  std::uint64_t seed = 1;

  /// Frames skipped between window members over 60 fps source data.
  std::size_t stride() const { return fps == 30 ? 2 : 1; }
  std::size_t H() const { return S * L * n; }

  GeneratorConfig generator() const {
    GeneratorConfig g = generator_base;
    g.pds.scale = S;
    g.use_attention = use_attention;
    return g;
  }

  DensityConfig density() const { return {generator_base.pds.r_large, generator_base.pds.ball_cap}; }

  LossWeights effective_weights() const {
    LossWeights w = weights;
    if (!use_density_loss) w.density = 0.0;
    if (!use_adversarial) w.adversarial = 0.0;
    return w;
  }

  void validate() const {
    if (L == 0 || n == 0 || S == 0) throw std::invalid_argument("train: L, n and S must be >= 1");
    if (batch_size == 0) throw std::invalid_argument("train: batch size must be >= 1");
    if (fps != 30 && fps != 60) throw std::invalid_argument("train: fps must be 30 or 60");
    if (use_adversarial && lsgan.a == lsgan.b) throw std::invalid_argument("train: lsgan a and b must differ");
    generator().validate();
    discriminator.validate();
  }
};

/// One training example: n low-resolution frames and, aligned with each, a
/// ground-truth frame of H points. The newest truth frame is the target.
struct Window {
  std::vector<Frame> inputs;
  std::vector<Frame> truth;
  Transform transform;  // normalized -> original coordinates (inverted)
  std::size_t sequence = 0;
  std::size_t start = 0;

  FusedCloud fused() const { return fuse(inputs); }
  Tensor target() const { return to_tensor(truth.back().points); }
};

/// Valid window start indices of a sequence for n members at `stride`.
inline std::size_t window_count(std::size_t frames, std::size_t n, std::size_t stride) {
  const std::size_t span = (n - 1) * stride + 1;
  return frames >= span ? frames - span + 1 : 0;
}

/// Builds a window from frames start, start + stride, ... Inputs are uniform
/// random subsamples of L points (independent per frame); the truth is a
/// subsample of H points. Inputs and truth share the normalization computed
/// from the inputs. Static mode repeats the newest frame n times.
inline Window make_window(const Sequence& seq, std::size_t start, const TrainConfig& cfg, std::uint64_t seed,
                          bool static_mode) {
  const std::size_t n = cfg.n, stride = cfg.stride();
  if (start + (n - 1) * stride >= seq.frames.size()) throw std::out_of_range("make_window: window exceeds sequence");
  Window w;
  w.start = start;
  std::mt19937_64 rng(seed);
  const std::size_t newest = start + (n - 1) * stride;
  Frame newest_in, newest_truth;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t idx = static_mode ? newest : start + i * stride;
    const Frame& src = seq.frames[idx];
    if (src.points.size() < cfg.H())
      throw std::invalid_argument("make_window: frame " + std::to_string(idx) + " has " +
                                  std::to_string(src.points.size()) + " points, fewer than H = " +
                                  std::to_string(cfg.H()));
    if (static_mode && i > 0) {
      w.inputs.push_back(newest_in);
      w.truth.push_back(newest_truth);
      continue;
    }
    w.inputs.push_back(subsample_frame(src, cfg.L, SubsampleStrategy::uniform_random, rng()));
    w.truth.push_back(subsample_frame(src, cfg.H(), SubsampleStrategy::uniform_random, rng()));
    newest_in = w.inputs.back();
    newest_truth = w.truth.back();
  }
  auto norm = normalize(w.inputs);
  w.inputs = std::move(norm.frames);
  for (auto& f : w.truth) f = norm.transform.apply(f);
  w.transform = norm.transform;
  return w;
}

/// Inference-side preparation of n low-resolution frames (oldest first).
inline std::pair<FusedCloud, Transform> prepare_input(const std::vector<Frame>& frames) {
  auto norm = normalize(frames);
  return {fuse(norm.frames), norm.transform};
}

/// The single frame repeated n times and fused: n distinct t levels with
/// identical xyz.
inline FusedCloud make_static_sequence(const Frame& frame, std::size_t n) {
  if (n == 0) throw std::invalid_argument("make_static_sequence: n must be >= 1");
  validate_frame(frame);
  return fuse(std::vector<Frame>(n, frame));
}

/// Multiplies every coordinate of inputs and truth by k per axis (a sign
/// vector flips axes).
inline void scale_axes(Window& w, const Point3& k) {
  for (auto* frames : {&w.inputs, &w.truth})
    for (auto& f : *frames)
      for (auto& p : f.points)
        for (std::size_t c = 0; c < 3; ++c) p[c] *= k[c];
}

/// Reverses frame order; fusion then assigns t <- 1 - t.
inline void invert_time(Window& w) {
  std::reverse(w.inputs.begin(), w.inputs.end());
  std::reverse(w.truth.begin(), w.truth.end());
}

/// Applies the enabled augmentations jointly to inputs and truth. Noise is
/// added to inputs only.
inline void augment(Window& w, const AugmentSwitches& sw, std::mt19937_64& rng) {
  if (sw.flip) {
    std::bernoulli_distribution coin(0.5);
    Point3 sign{1.0, 1.0, 1.0};
    for (auto& s : sign) s = coin(rng) ? -1.0 : 1.0;
    scale_axes(w, sign);
  }
  if (sw.scale) {
    std::uniform_real_distribution<double> u(0.9, 1.1);
    const double kx = u(rng), ky = u(rng), kz = u(rng);
    scale_axes(w, {kx, ky, kz});
  }
  if (sw.slice) {
    Point3 lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
    for (const auto& f : w.inputs)
      for (const auto& p : f.points)
        for (std::size_t c = 0; c < 3; ++c) lo[c] = std::min(lo[c], p[c]), hi[c] = std::max(hi[c], p[c]);
    Point3 blo{}, bhi{};
    for (std::size_t c = 0; c < 3; ++c) {
      const double half = 0.5 * (hi[c] - lo[c]);
      blo[c] = lo[c] + std::uniform_real_distribution<double>(0.0, 1.0)(rng) * half;
      bhi[c] = blo[c] + half;
    }
    auto inside = [&](const Point3& p) {
      for (std::size_t c = 0; c < 3; ++c)
        if (p[c] < blo[c] || p[c] > bhi[c]) return false;
      return true;
    };
    auto survivors = [&](const Frame& f) {
      std::vector<std::size_t> keep;
      for (std::size_t i = 0; i < f.points.size(); ++i)
        if (inside(f.points[i])) keep.push_back(i);
      return keep;
    };
    bool ok = true;
    std::vector<std::vector<std::size_t>> in_keep, tr_keep;
    std::size_t in_min = SIZE_MAX, tr_min = SIZE_MAX;
    for (const auto& f : w.inputs) {
      in_keep.push_back(survivors(f));
      in_min = std::min(in_min, in_keep.back().size());
      ok = ok && 4 * in_keep.back().size() >= f.points.size();
    }
    for (const auto& f : w.truth) {
      tr_keep.push_back(survivors(f));
      tr_min = std::min(tr_min, tr_keep.back().size());
      ok = ok && 4 * tr_keep.back().size() >= f.points.size();
    }
    if (ok && in_min > 0 && tr_min > 0) {
      // Equalize counts so frames can still be fused.
      auto apply = [&](std::vector<Frame>& frames, std::vector<std::vector<std::size_t>>& keep, std::size_t m) {
        for (std::size_t f = 0; f < frames.size(); ++f) {
          auto& k = keep[f];
          std::shuffle(k.begin(), k.end(), rng);
          k.resize(m);
          std::sort(k.begin(), k.end());
          std::vector<Point3> pts;
          pts.reserve(m);
          for (std::size_t i : k) pts.push_back(frames[f].points[i]);
          frames[f].points = std::move(pts);
        }
      };
      apply(w.inputs, in_keep, in_min);
      apply(w.truth, tr_keep, tr_min);
    }
  }
  if (sw.noise) {
    std::normal_distribution<double> g(0.0, sw.noise_sigma);
    for (auto& f : w.inputs)
      for (auto& p : f.points)
        for (auto& c : p) c += g(rng);
  }
  if (sw.time_inversion) invert_time(w);
}

// ---------------------------------------------------------------------------
// Model and optimization

struct Model {
  GeneratorConfig gcfg;
  GeneratorParams gen;
  DiscriminatorParams disc;
  AdamState opt_g;
  AdamState opt_d;
};

inline Model make_model(const TrainConfig& cfg) {
  cfg.validate();
  Model m;
  m.gcfg = cfg.generator();
  m.gen = init_generator(m.gcfg, cfg.seed);
  m.disc = init_discriminator(cfg.discriminator, cfg.seed + 1);
  m.opt_g.config = cfg.opt_g;
  m.opt_d.config = cfg.opt_d;
  return m;
}

template <typename P>
std::vector<Tensor*> tensor_list(P& params) {
  std::vector<Tensor*> out;
  for_each_tensor(params, "", [&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

/// Parameters are kept exactly representable in float32 so that checkpoints
/// (stored as f32) reload bit-identically.
inline void round_to_float(std::span<Tensor* const> params) {
  for (auto* t : params)
    for (auto& v : t->data) v = static_cast<double>(static_cast<float>(v));
}

struct StepMetrics {
  double l_cd = 0.0;
  double l_density = 0.0;
  double l_adv_g = 0.0;
  double l_d = 0.0;
  double total = 0.0;
};

namespace detail {

inline void check_finite(double v, const char* what, std::size_t window) {
  if (!std::isfinite(v))
    throw std::runtime_error(std::string("training diverged: ") + what + " is " + std::to_string(v) +
                             " on batch window " + std::to_string(window));
}

}  // namespace detail

/// One adversarial step over a batch. Windows are processed in order and
/// their gradients averaged. The discriminator (when enabled) is updated
/// first on real targets and detached generator outputs; the generator loss
/// then scores its outputs with the updated discriminator held fixed.
inline StepMetrics train_step(const std::vector<Window>& batch, Model& model, const TrainConfig& cfg, double lr) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const double inv = 1.0 / static_cast<double>(batch.size());
  const LossWeights w = cfg.effective_weights();
  const DensityConfig dc = cfg.density();

  std::vector<std::unique_ptr<Tape>> tapes;
  std::vector<GeneratorTrace> traces;
  std::vector<Tensor> targets;
  for (const auto& win : batch) {
    tapes.push_back(std::make_unique<Tape>());
    traces.push_back(generator_forward(*tapes.back(), win.fused(), model.gen, model.gcfg, true));
    targets.push_back(win.target());
  }

  StepMetrics out;
  if (cfg.use_adversarial) {
    auto dparams = tensor_list(model.disc);
    std::vector<Tensor> grads;
    for (auto* p : dparams) grads.emplace_back(p->rows, p->cols);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      Tape td;
      Var real = discriminator_forward(td, td.constant(targets[b]), model.disc, true);
      Var fake = discriminator_forward(td, td.constant(tapes[b]->value(traces[b].output)), model.disc, true);
      Var loss = td.weighted_sum({{1.0, td.lsgan(real, cfg.lsgan.b)}, {1.0, td.lsgan(fake, cfg.lsgan.a)}});
      const double l = td.value(loss)(0, 0);
      detail::check_finite(l, "discriminator loss", b);
      out.l_d += inv * l;
      td.backward(loss);
      for (std::size_t i = 0; i < dparams.size(); ++i) {
        Tensor g = td.param_grad(*dparams[i]);
        for (std::size_t j = 0; j < g.size(); ++j) grads[i].data[j] += inv * g.data[j];
      }
    }
    adam_step(dparams, grads, model.opt_d, lr);
    round_to_float(dparams);
  }

  auto gparams = tensor_list(model.gen);
  std::vector<Tensor> grads;
  for (auto* p : gparams) grads.emplace_back(p->rows, p->cols);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    Tape& tg = *tapes[b];
    std::optional<Var> scores;
    if (cfg.use_adversarial) scores = discriminator_forward(tg, traces[b].output, model.disc, false);
    TapeLoss loss = total_generator_loss(tg, traces[b].output, targets[b], scores, w, cfg.lsgan, dc);
    detail::check_finite(loss.parts.total, "generator loss", b);
    out.l_cd += inv * loss.parts.chamfer;
    out.l_density += inv * loss.parts.density;
    out.l_adv_g += inv * loss.parts.adversarial;
    out.total += inv * loss.parts.total;
    tg.backward(loss.total);
    for (std::size_t i = 0; i < gparams.size(); ++i) {
      Tensor g = tg.param_grad(*gparams[i]);
      for (std::size_t j = 0; j < g.size(); ++j) grads[i].data[j] += inv * g.data[j];
    }
  }
  adam_step(gparams, grads, model.opt_g, lr);
  round_to_float(gparams);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalOptions {
  /// Window starts advance by this many frames.
  std::size_t start_step = 1;
  /// 0 means no limit.
  std::size_t max_windows = 0;
  bool include_static = false;
  /// Scores the ground truth against itself (sanity mode).
  bool ground_truth = false;
  std::uint64_t seed = 12345;
};

struct WindowScore {
  std::size_t sequence = 0;
  std::size_t start = 0;
  std::string protocol;
  double cd_x1e3 = 0.0;
};

struct EvalReport {
  double mean_cd_x1e3 = 0.0;
  std::vector<WindowScore> per_window;
  std::map<std::string, double> by_protocol;
  std::optional<double> static_mean_cd_x1e3;
  std::vector<WindowScore> static_per_window;

  nlohmann::json to_json() const {
    auto windows = [](const std::vector<WindowScore>& ws) {
      auto arr = nlohmann::json::array();
      for (const auto& s : ws)
        arr.push_back({{"sequence", s.sequence}, {"start", s.start}, {"protocol", s.protocol}, {"cd_x1e3", s.cd_x1e3}});
      return arr;
    };
    nlohmann::json j;
    j["mean_cd_x1e3"] = mean_cd_x1e3;
    j["per_window"] = windows(per_window);
    j["protocol"] = by_protocol;
    if (static_mean_cd_x1e3) j["static"] = {{"mean_cd_x1e3", *static_mean_cd_x1e3}, {"per_window", windows(static_per_window)}};
    return j;
  }
};

namespace detail {

inline std::vector<WindowScore> score_windows(const std::vector<Sequence>& data, const GeneratorParams& gen,
                                              const TrainConfig& cfg, const EvalOptions& opt, bool static_mode) {
  const GeneratorConfig gcfg = cfg.generator();
  std::vector<WindowScore> out;
  for (std::size_t s = 0; s < data.size(); ++s) {
    const std::size_t count = window_count(data[s].frames.size(), cfg.n, cfg.stride());
    for (std::size_t start = 0; start < count; start += std::max<std::size_t>(1, opt.start_step)) {
      if (opt.max_windows && out.size() >= opt.max_windows) return out;
      // The same seed per window position keeps static and dynamic targets identical.
      Window w = make_window(data[s], start, cfg, opt.seed + 7919 * s + start, static_mode);
      const Tensor target = w.target();
      Tensor pred;
      if (opt.ground_truth) {
        pred = target;
      } else {
        Tape tape;
        auto trace = generator_forward(tape, w.fused(), gen, gcfg, false);
        pred = tape.value(trace.output);
      }
      out.push_back({s, start, data[s].protocol, 1e3 * chamfer(pred, target, true)});
    }
  }
  return out;
}

inline double mean_cd(const std::vector<WindowScore>& ws) {
  double m = 0.0;
  for (const auto& w : ws) m += w.cd_x1e3;
  return m / static_cast<double>(ws.size());
}

}  // namespace detail

/// Mean size-normalized Chamfer (x 1e3, normalized units) over held-out
/// windows, grouped by protocol label. Static windows use the same targets
/// as their dynamic counterparts.
inline EvalReport evaluate(const std::vector<Sequence>& data, const GeneratorParams& gen, const TrainConfig& cfg,
                           const EvalOptions& opt = {}) {
  EvalReport r;
  r.per_window = detail::score_windows(data, gen, cfg, opt, cfg.static_sequence);
  if (r.per_window.empty()) throw std::invalid_argument("evaluate: no evaluation windows");
  r.mean_cd_x1e3 = detail::mean_cd(r.per_window);
  std::map<std::string, std::vector<WindowScore>> groups;
  for (const auto& w : r.per_window)
    if (!w.protocol.empty()) groups[w.protocol].push_back(w);
  for (const auto& [k, v] : groups) r.by_protocol[k] = detail::mean_cd(v);
  if (opt.include_static) {
    r.static_per_window = detail::score_windows(data, gen, cfg, opt, true);
    r.static_mean_cd_x1e3 = detail::mean_cd(r.static_per_window);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Training loop

struct LogRow {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double lr = 0.0;
  StepMetrics m;
  std::optional<double> cd_eval;
};

inline std::string csv_header() { return "epoch,step,lr,l_cd,l_density,l_adv_g,l_d,cd_eval"; }

inline std::string csv_line(const LogRow& r) {
  auto g = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  return std::to_string(r.epoch) + "," + std::to_string(r.step) + "," + g(r.lr) + "," + g(r.m.l_cd) + "," +
         g(r.m.l_density) + "," + g(r.m.l_adv_g) + "," + g(r.m.l_d) + "," + (r.cd_eval ? g(*r.cd_eval) : "");
}

struct TrainRun {
  Model model;
  std::vector<LogRow> log;
};

struct RunOptions {
  /// Writes epoch_NNN.ckpt, latest.ckpt and log.csv here when set.
  std::optional<fs::path> out_dir;
  /// Held-out data scored after every epoch into cd_eval.
  const std::vector<Sequence>* eval_data = nullptr;
  EvalOptions eval;
};

/// Epochs of shuffled windows (random start indices at the fps stride) with
/// the scheduled learning rate of each epoch. Epoch numbers in the log are
/// zero based; checkpoint epoch_000 holds the initial weights and epoch_NNN
/// the weights after NNN epochs.
inline TrainRun run_training(const std::vector<Sequence>& data, const TrainConfig& cfg, const RunOptions& opt = {}) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("run_training: empty dataset");
  std::vector<std::pair<std::size_t, std::size_t>> windows;
  for (std::size_t s = 0; s < data.size(); ++s)
    for (std::size_t start = 0; start < window_count(data[s].frames.size(), cfg.n, cfg.stride()); ++start)
      windows.emplace_back(s, start);
  if (windows.empty()) throw std::invalid_argument("run_training: every sequence is shorter than one window");

  TrainRun run{make_model(cfg), {}};
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::ofstream csv;
  auto save = [&](const std::string& stem) {
    if (!opt.out_dir) return;
    save_checkpoint(*opt.out_dir / (stem + ".ckpt"), run.model.gen, &run.model.disc);
  };
  if (opt.out_dir) {
    fs::create_directories(*opt.out_dir);
    csv.open(*opt.out_dir / "log.csv");
    if (!csv) throw std::runtime_error("cannot write " + (*opt.out_dir / "log.csv").string());
    csv << csv_header() << '\n';
  }
  save("epoch_000");
  save("latest");

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = schedule_step(cfg.schedule, epoch);
    std::vector<std::pair<std::size_t, std::size_t>> order;
    if (cfg.windows_per_epoch == 0) {
      order = windows;
      std::shuffle(order.begin(), order.end(), rng);
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, windows.size() - 1);
      for (std::size_t i = 0; i < cfg.windows_per_epoch; ++i) order.push_back(windows[pick(rng)]);
    }
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      std::vector<Window> batch;
      for (std::size_t i = b; i < std::min(order.size(), b + cfg.batch_size); ++i) {
        auto [s, start] = order[i];
        Window w = make_window(data[s], start, cfg, rng(), cfg.static_sequence);
        w.sequence = s;
        augment(w, cfg.augment, rng);
        batch.push_back(std::move(w));
      }
      LogRow row{epoch, step++, lr, train_step(batch, run.model, cfg, lr), std::nullopt};
      if (b + cfg.batch_size >= order.size() && opt.eval_data)
        row.cd_eval = evaluate(*opt.eval_data, run.model.gen, cfg, opt.eval).mean_cd_x1e3;
      if (csv.is_open()) csv << csv_line(row) << '\n' << std::flush;
      run.log.push_back(row);
    }
    char stem[32];
    std::snprintf(stem, sizeof stem, "epoch_%03zu", epoch + 1);
    save(stem);
    save("latest");
  }
  return run;
}

}  // namespace pcu4d
