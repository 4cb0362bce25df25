// Command-line front end: train, eval, decode, synth, augment-preview.
#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "gfcn/config.hpp"
#include "gfcn/image_io.hpp"
#include "gfcn/synth.hpp"
#include "gfcn/train.hpp"

using namespace gfcn;
namespace fs = std::filesystem;

namespace {

std::vector<Sample> load_split(const fs::path& dir, const AlphabetCodec& codec, Index height, const std::string& split) {
  LoadReport report;
  auto samples = load_dataset(read_manifest(dir, split), codec, height, &report);
  for (const auto& issue : report.issues) std::cerr << "warning: " << split << " '" << issue.id << "': " << issue.message << "\n";
  std::cerr << split << ": loaded " << report.loaded << " of " << report.requested << " lines from " << dir << "\n";
  if (samples.empty()) throw std::runtime_error("no usable lines in " + dir.string());
  return samples;
}

/// Session restored from a checkpoint, with the config it was trained under.
struct Restored {
  RunConfig config;
  TrainSession<float> session;
};

Restored restore(const fs::path& ckpt_path) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  Restored r;
  r.config = parse_config(ckpt.text("config"));
  r.session = TrainSession<float>::create(r.config.resolved_model(), r.config.train, r.config.augment, AlphabetCodec(ckpt.text("alphabet")));
  restore_session(ckpt, r.session);
  return r;
}

int run_train(const std::string& config_path, const fs::path& data, const fs::path& val, const fs::path& out,
              const std::string& resume) {
  RunConfig cfg = load_config(config_path);
  const AlphabetCodec codec(cfg.alphabet);
  const auto train = load_split(data, codec, cfg.model.input_height, "train");
  const auto valid = load_split(val, codec, cfg.model.input_height, "val");
  fs::create_directories(out);

  TrainSession<float> session;
  if (!resume.empty()) {
    auto r = restore(resume);
    if (serialize_config(r.config) != serialize_config(cfg)) {
      std::cerr << "warning: --config differs from the checkpoint's config; continuing with the checkpoint's\n";
    }
    cfg = r.config;
    session = std::move(r.session);
    std::cerr << "resumed at epoch " << session.epoch << ", step " << session.step << "\n";
  } else {
    session = TrainSession<float>::create(cfg.resolved_model(), cfg.train, cfg.augment, codec);
  }
  const std::string config_text = serialize_config(cfg);
  {
    std::ofstream f(out / "config.txt");
    f << config_text;
  }
  std::ofstream log(out / "metrics.log", std::ios::app);
  double best = 1e300;
  const auto result = fit(
      session, train, valid,
      [&](const ValidationEvent& e) {
        const std::string record = metrics_record(e);
        log << record << std::endl;
        std::cout << record << std::endl;
        const Checkpoint ckpt = to_checkpoint(session, config_text);
        save_checkpoint(out / "last.ckpt", ckpt);
        if (e.val_cer < best) {
          best = e.val_cer;
          save_checkpoint(out / "best.ckpt", ckpt);
        }
      },
      [](const std::string& w) { std::cerr << "warning: " << w << "\n"; });
  std::cout << "finished after " << session.epoch << " epochs in " << std::fixed << std::setprecision(1) << result.seconds
            << " s; best val_cer=" << std::setprecision(4) << result.best_cer() << (result.reached_target ? " (target reached)" : "")
            << "\n";
  return 0;
}

int run_eval(const fs::path& ckpt, const fs::path& data, int beam_width, int top_n) {
  if (beam_width < 1) throw CLI::ValidationError("--beam-width", "must be >= 1");
  if (top_n < 1 || top_n > beam_width) throw CLI::ValidationError("--top-n", "must lie in [1, beam width]");
  auto r = restore(ckpt);
  const auto samples = load_split(data, r.session.codec, r.config.model.input_height, "test");
  auto model = r.session.averaged_model();
  const auto m = evaluate(model, samples, r.session.codec, beam_width, top_n);

  std::cout << std::fixed << std::setprecision(4);
  std::cout << "  lines          " << m.sequences << "\n"
            << "  characters     " << m.characters << "\n"
            << "  CER            " << 100 * m.cer << " %\n"
            << "  mean line CER  " << 100 * m.mean_line_cer << " %\n"
            << "  SER            " << 100 * m.ser << " %\n"
            << "  greedy CER     " << 100 * m.greedy_cer << " %\n";
  for (std::size_t n = 0; n < m.cer_at_top_n.size(); ++n) std::cout << "  CER@Top" << n + 1 << "      " << 100 * m.cer_at_top_n[n] << " %\n";
  std::cout << "\n" << std::defaultfloat << std::setprecision(6) << m.to_key_values();
  return 0;
}

int run_decode(const fs::path& ckpt, const fs::path& image, int beam_width) {
  if (beam_width < 1) throw CLI::ValidationError("--beam-width", "must be >= 1");
  auto r = restore(ckpt);
  auto model = r.session.averaged_model();
  const TensorF img = load_and_preprocess(image, r.config.model.input_height);
  const auto lp = frame_log_probs(infer(model, as_batch<float>(img)));
  for (const auto& h : beam_search(lp, beam_width, beam_width)) {
    std::cout << r.session.codec.decode(h.labels) << "\t" << h.score << "\n";
  }
  return 0;
}

int run_synth(const std::string& config_path, const fs::path& out) {
  const RunConfig cfg = load_config(config_path);
  const auto manifest = synth_generate(cfg.synth, out);
  std::cout << "wrote " << manifest.entries.size() << " lines to " << out << "\n";
  return 0;
}

int run_augment_preview(const fs::path& image, const fs::path& out, std::uint64_t seed, const std::string& config_path) {
  AugmentConfig cfg;
  Index height = 0;
  if (!config_path.empty()) {
    const RunConfig rc = load_config(config_path);
    cfg = rc.augment;
    height = rc.model.input_height;
  }
  cfg.validate();
  TensorF img = height > 0 ? load_and_preprocess(image, height) : to_grayscale(read_image(image));
  fs::create_directories(out);
  const Index H = img.dim(0), W = img.dim(1);
  auto rng = batch_rng(seed, 0);

  AugmentConfig all = cfg;
  all.p_projective = all.p_elastic = 1;
  all.p_signflip = 0;
  const AugmentDraw draw = draw_augmentation(H, W, all, rng);
  const AugmentDraw projective{draw.projective, std::nullopt, false};
  const AugmentDraw elastic{std::nullopt, draw.elastic, false};
  const AugmentDraw combined{draw.projective, draw.elastic, false};

  write_image(out / "original.png", to_image8(img));
  write_image(out / "projective.png", to_image8(apply_augmentation(img, projective)));
  write_image(out / "elastic.png", to_image8(apply_augmentation(img, elastic)));
  write_image(out / "combined.png", to_image8(apply_augmentation(img, combined)));
  // Flipped intensities live in [-1, 0].
  write_image(out / "signflip.png", to_image8(sign_flip(img), -1.0f, 0.0f));
  std::cout << "wrote original, projective, elastic, combined and signflip previews to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gated fully convolutional line recognizer"};
  app.require_subcommand(1);

  std::string config, resume, ckpt, aug_config;
  fs::path data, val, out, image;
  int beam_width = 10, top_n = 6;
  std::uint64_t seed = 0;

  auto* train = app.add_subcommand("train", "Train a model and write checkpoints plus a metrics log");
  train->add_option("--config", config, "Config file (key = value)")->required()->check(CLI::ExistingFile);
  train->add_option("--data", data, "Training set directory (lines.tsv + images/)")->required()->check(CLI::ExistingDirectory);
  train->add_option("--val", val, "Validation set directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", out, "Output directory")->required();
  train->add_option("--resume", resume, "Checkpoint to resume from")->check(CLI::ExistingFile);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--beam-width", beam_width, "Beam width")->capture_default_str();
  eval->add_option("--top-n", top_n, "Candidates for CER@TopN")->capture_default_str();

  auto* decode = app.add_subcommand("decode", "Transcribe one line image");
  decode->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  decode->add_option("--image", image, "Line image (png, pgm, ppm)")->required()->check(CLI::ExistingFile);
  decode->add_option("--beam-width", beam_width, "Beam width; one line per hypothesis")->capture_default_str();

  auto* synth = app.add_subcommand("synth", "Render a synthetic corpus");
  synth->add_option("--config", config, "Config file; synth.* keys are used")->required()->check(CLI::ExistingFile);
  synth->add_option("--out", out, "Output directory")->required();

  auto* preview = app.add_subcommand("augment-preview", "Write an image with each augmentation applied");
  preview->add_option("--image", image, "Input image")->required()->check(CLI::ExistingFile);
  preview->add_option("--out", out, "Output directory")->required();
  preview->add_option("--seed", seed, "Random seed")->required();
  preview->add_option("--config", aug_config, "Config file; augment.* keys are used")->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return run_train(config, data, val, out, resume);
    if (*eval) return run_eval(ckpt, data, beam_width, top_n);
    if (*decode) return run_decode(ckpt, image, beam_width);
    if (*synth) return run_synth(config, out);
    if (*preview) return run_augment_preview(image, out, seed, aug_config);
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
