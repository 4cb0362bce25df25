#include "gfcn/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace gfcn {

namespace {

Image8 read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw std::runtime_error(path.string() + ": " + img.message);
  }
  const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
  img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image8 out(img.width, img.height, color ? 3 : 1);
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw std::runtime_error(path.string() + ": " + msg);
  }
  return out;
}

/// Next whitespace-delimited header token, skipping '#' comments.
std::string netpbm_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

Image8 read_netpbm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path.string() + ": cannot open");
  const std::string magic = netpbm_token(in);
  if (magic != "P2" && magic != "P3" && magic != "P5" && magic != "P6") {
    throw std::runtime_error(path.string() + ": unsupported image format");
  }
  const bool ascii = magic == "P2" || magic == "P3";
  const Index channels = (magic == "P3" || magic == "P6") ? 3 : 1;
  Index w = 0, h = 0, maxval = 0;
  try {
    w = std::stol(netpbm_token(in));
    h = std::stol(netpbm_token(in));
    maxval = std::stol(netpbm_token(in));
  } catch (const std::exception&) {
    throw std::runtime_error(path.string() + ": malformed netpbm header");
  }
  if (w < 1 || h < 1 || maxval < 1 || maxval > 255) throw std::runtime_error(path.string() + ": unsupported netpbm header values");
  Image8 out(w, h, channels);
  if (ascii) {
    for (auto& p : out.pixels) {
      const std::string tok = netpbm_token(in);
      if (tok.empty()) throw std::runtime_error(path.string() + ": truncated pixel data");
      p = static_cast<std::uint8_t>(std::clamp<long>(std::stol(tok) * 255 / maxval, 0, 255));
    }
  } else {
    in.read(reinterpret_cast<char*>(out.pixels.data()), static_cast<std::streamsize>(out.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(out.pixels.size())) throw std::runtime_error(path.string() + ": truncated pixel data");
    if (maxval != 255)
      for (auto& p : out.pixels) p = static_cast<std::uint8_t>(std::min<long>(p * 255L / maxval, 255));
  }
  return out;
}

std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

}  // namespace

Image8 read_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw std::runtime_error(path.string() + ": no such file");
  std::ifstream probe(path, std::ios::binary);
  char sig[8] = {};
  probe.read(sig, 8);
  if (probe.gcount() == 8 && png_sig_cmp(reinterpret_cast<png_const_bytep>(sig), 0, 8) == 0) return read_png(path);
  return read_netpbm(path);
}

void write_image(const std::filesystem::path& path, const Image8& image) {
  if (image.channels != 1 && image.channels != 3) throw ContractViolation("write_image: 1 or 3 channels expected");
  const std::string ext = lower_extension(path);
  if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") {
    std::ofstream out(path, std::ios::binary);
    out << (image.channels == 1 ? "P5" : "P6") << "\n" << image.width << " " << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
    if (!out) throw std::runtime_error(path.string() + ": write failed");
    return;
  }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw std::runtime_error(path.string() + ": " + img.message);
  }
}

TensorF to_grayscale(const Image8& image) {
  TensorF out(Shape{image.height, image.width, 1});
  for (Index y = 0; y < image.height; ++y)
    for (Index x = 0; x < image.width; ++x) {
      if (image.channels == 1) {
        out(y, x, 0) = static_cast<float>(image.at(y, x)) / 255.0f;
      } else {
        const double v = 0.299 * image.at(y, x, 0) + 0.587 * image.at(y, x, 1) + 0.114 * image.at(y, x, 2);
        out(y, x, 0) = static_cast<float>(v / 255.0);
      }
    }
  return out;
}

TensorF resize_to_height(const TensorF& image, Index target_height) {
  require_rank("resize_to_height", image.shape(), 3);
  if (target_height < 1) throw ContractViolation("resize_to_height: target height must be positive");
  const Index H = image.dim(0), W = image.dim(1), C = image.dim(2);
  if (H == target_height) return image;
  const double scale = static_cast<double>(target_height) / static_cast<double>(H);
  const Index Wo = std::max<Index>(1, static_cast<Index>(std::lround(static_cast<double>(W) * scale)));
  const double sy = static_cast<double>(H) / static_cast<double>(target_height);
  const double sx = static_cast<double>(W) / static_cast<double>(Wo);
  TensorF out(Shape{target_height, Wo, C});
  for (Index y = 0; y < target_height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(H - 1));
    const Index y0 = static_cast<Index>(fy), y1 = std::min(y0 + 1, H - 1);
    const double wy = fy - static_cast<double>(y0);
    for (Index x = 0; x < Wo; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(W - 1));
      const Index x0 = static_cast<Index>(fx), x1 = std::min(x0 + 1, W - 1);
      const double wx = fx - static_cast<double>(x0);
      for (Index c = 0; c < C; ++c) {
        const double top = (1 - wx) * image(y0, x0, c) + wx * image(y0, x1, c);
        const double bottom = (1 - wx) * image(y1, x0, c) + wx * image(y1, x1, c);
        out(y, x, c) = static_cast<float>((1 - wy) * top + wy * bottom);
      }
    }
  }
  return out;
}

TensorF load_and_preprocess(const std::filesystem::path& path, Index target_height) {
  return resize_to_height(to_grayscale(read_image(path)), target_height);
}

Image8 to_image8(const TensorF& image, float lo, float hi) {
  require_rank("to_image8", image.shape(), 3);
  Image8 out(image.dim(1), image.dim(0), 1);
  const float span = hi > lo ? hi - lo : 1.0f;
  for (Index y = 0; y < out.height; ++y)
    for (Index x = 0; x < out.width; ++x) {
      const float v = (image(y, x, 0) - lo) / span;
      out.at(y, x) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
    }
  return out;
}

}  // namespace gfcn
