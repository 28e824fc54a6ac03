// Upscales one window of a synthetic deforming sphere and writes the input,
// prediction and target clouds as PLY files.
//
//   upsample_window [checkpoint] [out_dir]
//
// Without a checkpoint the generator keeps its initial weights, which
// already produce S jittered copies of every input point.

#include <filesystem>
#include <iostream>

#include "pcu4d/pcu4d.hpp"

using namespace pcu4d;

int main(int argc, char** argv) {
  try {
    const std::filesystem::path out = argc > 2 ? argv[2] : "upsample_window_out";
    std::filesystem::create_directories(out);

    TrainConfig cfg;
    cfg.L = 256;
    cfg.n = 3;
    cfg.S = 2;

    SyntheticSpec spec;
    spec.points = 4096;
    spec.frames = 8;
    Sequence seq{gen_synthetic_sequence(spec), "synthetic", "pulse", ""};

    Window w = make_window(seq, 4, cfg, 1, false);
    const GeneratorConfig gcfg = cfg.generator();
    GeneratorParams gen = init_generator(gcfg, 1);
    if (argc > 1) load_checkpoint(argv[1], gen);

    Frame pred;
    pred.points = upsample(w.fused(), gen, gcfg);
    Frame target;
    target.points = to_points(w.target());

    std::cout << "input " << w.fused().size() << " points, output " << pred.points.size() << " points\n"
              << "chamfer x1e3 (normalized) " << 1e3 * chamfer(to_tensor(pred.points), w.target(), true) << "\n";

    save_frame(w.transform.invert(w.inputs.back()), out / "input_newest.ply");
    save_frame(w.transform.invert(pred), out / "prediction.ply");
    save_frame(w.transform.invert(target), out / "target.ply");
    std::cout << "wrote clouds to " << out.string() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
