#include "gfcn/synth.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

namespace gfcn {

namespace {

using Glyph = std::array<const char*, 7>;

const Glyph* glyph_for(char32_t c) {
  static const Glyph digits[10] = {
      {" ### ", "#   #", "#  ##", "# # #", "##  #", "#   #", " ### "},
      {"  #  ", " ##  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "},
      {" ### ", "#   #", "    #", "   # ", "  #  ", " #   ", "#####"},
      {"#####", "   # ", "  #  ", "   # ", "    #", "#   #", " ### "},
      {"   # ", "  ## ", " # # ", "#  # ", "#####", "   # ", "   # "},
      {"#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "},
      {"  ## ", " #   ", "#    ", "#### ", "#   #", "#   #", " ### "},
      {"#####", "    #", "   # ", "  #  ", " #   ", " #   ", " #   "},
      {" ### ", "#   #", "#   #", " ### ", "#   #", "#   #", " ### "},
      {" ### ", "#   #", "#   #", " ####", "    #", "   # ", " ##  "},
  };
  static const Glyph letters[26] = {
      {" ### ", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"},
      {"#### ", "#   #", "#   #", "#### ", "#   #", "#   #", "#### "},
      {" ### ", "#   #", "#    ", "#    ", "#    ", "#   #", " ### "},
      {"###  ", "#  # ", "#   #", "#   #", "#   #", "#  # ", "###  "},
      {"#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#####"},
      {"#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#    "},
      {" ### ", "#   #", "#    ", "# ###", "#   #", "#   #", " ####"},
      {"#   #", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"},
      {" ### ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "},
      {"  ###", "   # ", "   # ", "   # ", "   # ", "#  # ", " ##  "},
      {"#   #", "#  # ", "# #  ", "##   ", "# #  ", "#  # ", "#   #"},
      {"#    ", "#    ", "#    ", "#    ", "#    ", "#    ", "#####"},
      {"#   #", "## ##", "# # #", "# # #", "#   #", "#   #", "#   #"},
      {"#   #", "#   #", "##  #", "# # #", "#  ##", "#   #", "#   #"},
      {" ### ", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "},
      {"#### ", "#   #", "#   #", "#### ", "#    ", "#    ", "#    "},
      {" ### ", "#   #", "#   #", "#   #", "# # #", "#  # ", " ## #"},
      {"#### ", "#   #", "#   #", "#### ", "# #  ", "#  # ", "#   #"},
      {" ####", "#    ", "#    ", " ### ", "    #", "    #", "#### "},
      {"#####", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  "},
      {"#   #", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "},
      {"#   #", "#   #", "#   #", "#   #", "#   #", " # # ", "  #  "},
      {"#   #", "#   #", "#   #", "# # #", "# # #", "# # #", " # # "},
      {"#   #", "#   #", " # # ", "  #  ", " # # ", "#   #", "#   #"},
      {"#   #", "#   #", " # # ", "  #  ", "  #  ", "  #  ", "  #  "},
      {"#####", "    #", "   # ", "  #  ", " #   ", "#    ", "#####"},
  };
  if (c >= U'0' && c <= U'9') return &digits[c - U'0'];
  if (c >= U'A' && c <= U'Z') return &letters[c - U'A'];
  return nullptr;
}

constexpr int kGlyphW = 5, kGlyphH = 7, kMargin = 4;
constexpr double kBackground = 0.9, kInk = 0.15;

}  // namespace

bool has_glyph(char32_t c) { return glyph_for(c) != nullptr; }

std::vector<std::string> SyntheticConfig::violations() const {
  std::vector<std::string> v;
  std::u32string symbols;
  try {
    symbols = utf8_decode(alphabet);
  } catch (const std::exception& e) {
    v.push_back(std::string("synth alphabet: ") + e.what());
  }
  if (symbols.empty()) v.push_back("synth alphabet must not be empty");
  for (char32_t c : symbols)
    if (!has_glyph(c)) v.push_back("synth alphabet symbol '" + utf8_encode(std::u32string(1, c)) + "' has no built-in glyph");
  if (min_length < 1 || max_length < min_length) v.push_back("synth lengths need 1 <= min_length <= max_length");
  if (count < 1) v.push_back("synth count must be >= 1");
  if (glyph_scale < 1) v.push_back("synth glyph_scale must be >= 1");
  if (height < kGlyphH * glyph_scale) {
    v.push_back("synth height " + std::to_string(height) + " is below the glyph height " + std::to_string(kGlyphH * glyph_scale));
  }
  if (spacing < 0 || max_jitter < 0) v.push_back("synth spacing and max_jitter must be >= 0");
  if (!(noise >= 0.0)) v.push_back("synth noise must be >= 0");
  return v;
}

void SyntheticConfig::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::ostringstream msg;
  msg << "invalid synthetic config:";
  for (const auto& s : v) msg << "\n  - " << s;
  throw ConfigError(msg.str());
}

Image8 render_line(const std::string& text, const SyntheticConfig& config, std::uint64_t line_seed) {
  const std::u32string symbols = utf8_decode(text);
  std::mt19937_64 rng(line_seed);
  std::uniform_int_distribution<int> jitter(0, config.max_jitter);
  const int s = config.glyph_scale;

  std::vector<int> lefts;
  int x = kMargin;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i > 0) x += config.spacing + jitter(rng);
    lefts.push_back(x);
    x += kGlyphW * s;
  }
  const int width = x + kMargin;
  const int top = (config.height - kGlyphH * s) / 2;

  std::vector<double> canvas(static_cast<std::size_t>(width * config.height), kBackground);
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    const Glyph* g = glyph_for(symbols[i]);
    if (!g) throw ConfigError("render_line: no glyph for '" + utf8_encode(std::u32string(1, symbols[i])) + "'");
    for (int gy = 0; gy < kGlyphH; ++gy)
      for (int gx = 0; gx < kGlyphW; ++gx) {
        if ((*g)[gy][gx] != '#') continue;
        for (int dy = 0; dy < s; ++dy)
          for (int dx = 0; dx < s; ++dx) canvas[static_cast<std::size_t>((top + gy * s + dy) * width + lefts[i] + gx * s + dx)] = kInk;
      }
  }
  Image8 img(width, config.height, 1);
  std::normal_distribution<double> noise(0.0, config.noise > 0 ? config.noise : 1.0);
  for (std::size_t i = 0; i < canvas.size(); ++i) {
    const double v = canvas[i] + (config.noise > 0 ? noise(rng) : 0.0);
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  }
  return img;
}

std::vector<SyntheticLine> synth_lines(const SyntheticConfig& config) {
  config.validate();
  const std::u32string symbols = utf8_decode(config.alphabet);
  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<int> length(config.min_length, config.max_length);
  std::uniform_int_distribution<std::size_t> pick(0, symbols.size() - 1);
  std::vector<SyntheticLine> out;
  out.reserve(static_cast<std::size_t>(config.count));
  for (int i = 0; i < config.count; ++i) {
    std::u32string text;
    const int n = length(rng);
    for (int k = 0; k < n; ++k) text.push_back(symbols[pick(rng)]);
    const std::uint64_t line_seed = rng();
    const std::string utf8 = utf8_encode(text);
    out.push_back({utf8, render_line(utf8, config, line_seed)});
  }
  return out;
}

namespace {
std::string line_id(const SyntheticConfig& config, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06d", i);
  return config.id_prefix + "_" + buf;
}
}  // namespace

DatasetManifest synth_generate(const SyntheticConfig& config, const std::filesystem::path& out_dir) {
  const auto lines = synth_lines(config);
  DatasetManifest m;
  m.root = out_dir;
  std::filesystem::create_directories(out_dir / "images");
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string id = line_id(config, static_cast<int>(i));
    write_image(out_dir / "images" / (id + ".png"), lines[i].image);
    m.entries.push_back({id, lines[i].text});
  }
  write_manifest(m);
  return m;
}

std::vector<Sample> synth_samples(const SyntheticConfig& config, const AlphabetCodec& codec) {
  std::vector<Sample> out;
  const auto lines = synth_lines(config);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    out.push_back({line_id(config, static_cast<int>(i)), lines[i].text, codec.encode(lines[i].text),
                   to_grayscale(lines[i].image)});
  }
  return out;
}

}  // namespace gfcn
