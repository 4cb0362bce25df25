#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gfcn/dataset.hpp"

namespace gfcn {

/// Synthetic text-line corpus rendered from built-in 5x7 bitmap glyphs
/// (digits and uppercase Latin).
struct SyntheticConfig {
  std::string alphabet = "0123456789";
  int min_length = 3;
  int max_length = 6;
  int count = 2000;
  int height = 32;
  int glyph_scale = 3;    // each glyph cell becomes scale x scale pixels
  int spacing = 3;        // base gap between glyphs, pixels
  int max_jitter = 3;     // extra gap drawn uniformly from [0, max_jitter]
  double noise = 0.05;    // std-dev of additive gaussian noise on [0, 1] intensities
  std::uint64_t seed = 1;
  std::string id_prefix = "line";

  std::vector<std::string> violations() const;
  void validate() const;
};

/// True when `c` has a built-in glyph.
bool has_glyph(char32_t c);

struct SyntheticLine {
  std::string text;
  Image8 image;
};

/// Renders `text` at config.height rows: light background, dark glyphs.
Image8 render_line(const std::string& text, const SyntheticConfig& config, std::uint64_t line_seed);
/// `config.count` random lines; deterministic for a given config.
std::vector<SyntheticLine> synth_lines(const SyntheticConfig& config);
/// Writes images/<id>.png and lines.tsv under `out_dir`.
DatasetManifest synth_generate(const SyntheticConfig& config, const std::filesystem::path& out_dir);
/// The same corpus as synth_generate, kept in memory.
std::vector<Sample> synth_samples(const SyntheticConfig& config, const AlphabetCodec& codec);

}  // namespace gfcn
