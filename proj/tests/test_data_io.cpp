#include <doctest.h>

#include <unistd.h>

#include <cstdio>
#include <cstring>
#include <functional>
#include <fstream>
#include <set>

#include "gfcn/checkpoint.hpp"
#include "gfcn/config.hpp"
#include "gfcn/dataset.hpp"
#include "gfcn/gatenet.hpp"
#include "gfcn/image_io.hpp"
#include "gfcn/synth.hpp"

using namespace gfcn;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() / ("gfcn_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream f(p, std::ios::binary);
  f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

std::string corruption_field(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const CorruptionError& e) {
    return e.field();
  }
  return "<none>";
}

}  // namespace

TEST_CASE("alphabet codec round trip and blank index") {
  const AlphabetCodec c("0123456789");
  CHECK(c.size() == 10);
  CHECK(c.blank() == 10);
  const auto labels = c.encode("3157");
  CHECK(labels == LabelSeq{3, 1, 5, 7});
  CHECK(c.decode(labels) == "3157");
  CHECK_THROWS_AS(c.encode("31a"), ContractViolation);
  CHECK_THROWS_AS(c.decode({10}), ContractViolation);
  CHECK_THROWS_AS(AlphabetCodec(""), ConfigError);
  CHECK_THROWS_AS(AlphabetCodec("aba"), ConfigError);

  const AlphabetCodec u("aé ж");
  CHECK(u.size() == 4);
  CHECK(u.decode(u.encode("ж éa")) == "ж éa");
  CHECK(utf8_encode(u.unknown_symbols("abcé")) == "bc");
}

TEST_CASE("utf8 decoding rejects malformed input") {
  CHECK(utf8_decode("\xE2\x82\xAC") == U"€");
  CHECK_THROWS_AS(utf8_decode("\xE2\x82"), ContractViolation);
  CHECK_THROWS_AS(utf8_decode("\xFF"), ContractViolation);
  CHECK_THROWS_AS(utf8_decode("\xC3\x28"), ContractViolation);
}

TEST_CASE("height resize preserves aspect ratio") {
  TensorF big(Shape{64, 200, 1});
  for (Index i = 0; i < big.size(); ++i) big.data()[i] = static_cast<float>(i % 7) / 7.0f;
  const auto r = resize_to_height(big, 32);
  CHECK(r.dim(0) == 32);
  CHECK(r.dim(1) == 100);

  TensorF same(Shape{32, 57, 1});
  for (Index i = 0; i < same.size(); ++i) same.data()[i] = static_cast<float>(i % 5) / 5.0f;
  const auto s = resize_to_height(same, 32);
  CHECK(s.shape() == same.shape());
  CHECK((s.array() == same.array()).all());

  TensorF flat = TensorF::constant(Shape{64, 30, 1}, 0.25f);
  CHECK((resize_to_height(flat, 32).array() == 0.25f).all());
}

TEST_CASE("grayscale conversion uses luma weights") {
  Image8 gray(5, 3, 3);
  for (Index y = 0; y < 3; ++y)
    for (Index x = 0; x < 5; ++x)
      for (Index c = 0; c < 3; ++c) gray.at(y, x, c) = static_cast<std::uint8_t>(40 * y + 10 * x);
  const auto g = to_grayscale(gray);
  for (Index y = 0; y < 3; ++y)
    for (Index x = 0; x < 5; ++x) CHECK(g(y, x, 0) == doctest::Approx((40 * y + 10 * x) / 255.0).epsilon(1e-6));

  Image8 red(1, 1, 3);
  red.at(0, 0, 0) = 255;
  CHECK(to_grayscale(red)(0, 0, 0) == doctest::Approx(0.299).epsilon(1e-6));
}

TEST_CASE("image files round trip through png and netpbm") {
  TempDir dir;
  Image8 img(7, 4, 1);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(i * 9);
  for (const char* name : {"a.png", "a.pgm"}) {
    write_image(dir.path / name, img);
    const auto back = read_image(dir.path / name);
    CHECK(back.width == 7);
    CHECK(back.height == 4);
    CHECK(back.channels == 1);
    CHECK(back.pixels == img.pixels);
  }
  Image8 rgb(3, 2, 3);
  for (std::size_t i = 0; i < rgb.pixels.size(); ++i) rgb.pixels[i] = static_cast<std::uint8_t>(i * 13);
  write_image(dir.path / "c.png", rgb);
  CHECK(read_image(dir.path / "c.png").pixels == rgb.pixels);
  write_bytes(dir.path / "junk.png", {1, 2, 3});
  CHECK_THROWS(read_image(dir.path / "junk.png"));
}

TEST_CASE("dataset loading collects per-entry problems") {
  TempDir dir;
  fs::create_directories(dir.path / "images");
  Image8 line(40, 64, 1);
  std::fill(line.pixels.begin(), line.pixels.end(), 200);
  write_image(dir.path / "images" / "ok.png", line);
  write_bytes(dir.path / "images" / "broken.png", {0, 1, 2});
  write_image(dir.path / "images" / "bad_text.png", line);
  {
    std::ofstream f(dir.path / "lines.tsv");
    f << "ok\t123\nbroken\t45\nmissing\t6\nbad_text\t7x\n";
  }
  const auto manifest = read_manifest(dir.path, "val");
  CHECK(manifest.entries.size() == 4);
  CHECK(manifest.split == "val");

  LoadReport report;
  const auto samples = load_dataset(manifest, AlphabetCodec::digits(), 32, &report);
  REQUIRE(samples.size() == 1);
  CHECK(samples[0].id == "ok");
  CHECK(samples[0].labels == LabelSeq{1, 2, 3});
  CHECK(samples[0].image.shape() == Shape{32, 20, 1});
  CHECK(report.requested == 4);
  CHECK(report.loaded == 1);
  std::set<std::string> failed;
  for (const auto& i : report.issues) failed.insert(i.id);
  CHECK(failed == std::set<std::string>{"broken", "missing", "bad_text"});

  {
    std::ofstream f(dir.path / "lines.tsv");
    f << "no tab here\n";
  }
  CHECK_THROWS_AS(read_manifest(dir.path), CorruptionError);
}

TEST_CASE("synthetic corpus is deterministic and bounded") {
  SyntheticConfig cfg;
  cfg.count = 2000;
  const auto a = synth_lines(cfg);
  const auto b = synth_lines(cfg);
  REQUIRE(a.size() == 2000);
  bool identical = true;
  for (std::size_t i = 0; i < a.size(); ++i) {
    identical = identical && a[i].text == b[i].text && a[i].image.pixels == b[i].image.pixels;
    const auto n = a[i].text.size();
    CHECK((n >= 3 && n <= 6));
    CHECK(a[i].image.height == 32);
  }
  CHECK(identical);

  cfg.seed = 2;
  CHECK(synth_lines(cfg)[0].image.pixels != a[0].image.pixels);
}

TEST_CASE("noise-free rendering of a repeated glyph gives identical regions") {
  SyntheticConfig cfg;
  cfg.noise = 0;
  cfg.max_jitter = 0;
  const Image8 img = render_line("00", cfg, 7);
  // Column ranges holding ink, split into connected runs.
  std::vector<std::pair<Index, Index>> runs;
  Index start = -1;
  for (Index x = 0; x <= img.width; ++x) {
    bool ink = false;
    for (Index y = 0; x < img.width && y < img.height; ++y) ink = ink || img.at(y, x) < 128;
    if (ink && start < 0) start = x;
    if (!ink && start >= 0) {
      runs.emplace_back(start, x);
      start = -1;
    }
  }
  REQUIRE(runs.size() == 2);
  REQUIRE(runs[0].second - runs[0].first == runs[1].second - runs[1].first);
  for (Index y = 0; y < img.height; ++y)
    for (Index dx = 0; dx < runs[0].second - runs[0].first; ++dx) CHECK(img.at(y, runs[0].first + dx) == img.at(y, runs[1].first + dx));
}

TEST_CASE("synth rejects unsupported symbols and writes a loadable corpus") {
  SyntheticConfig bad;
  bad.alphabet = "01a";
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  TempDir dir;
  SyntheticConfig cfg;
  cfg.count = 12;
  const auto manifest = synth_generate(cfg, dir.path);
  CHECK(manifest.entries.size() == 12);
  LoadReport report;
  const auto samples = load_dataset(read_manifest(dir.path), AlphabetCodec::digits(), 32, &report);
  CHECK(report.issues.empty());
  const auto mem = synth_samples(cfg, AlphabetCodec::digits());
  REQUIRE(samples.size() == mem.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(samples[i].transcript == mem[i].transcript);
    CHECK((samples[i].image.array() == mem[i].image.array()).all());
    CHECK(AlphabetCodec::digits().decode(samples[i].labels) == samples[i].transcript);
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  TempDir dir;
  auto model = build_model<float>(ModelConfig::from_notation(2, 8, 8, 3), 5);
  Checkpoint c;
  model.visit([&](const std::string& name, TensorF& t, TensorRole) { c.put_tensor(name, t); });
  TensorD d(Shape{2, 3});
  d.data()[0] = std::numeric_limits<double>::denorm_min();
  d.data()[1] = -0.0;
  d.data()[2] = std::numeric_limits<double>::infinity();
  c.put_tensor("extra.double", d);
  c.put_tensor("extra.scalar", TensorF::scalar(3.5f));
  c.put_i64("counter", -1234567890123);
  c.put_text("alphabet", "0123456789");
  save_checkpoint(dir.path / "m.ckpt", c);
  const auto back = load_checkpoint(dir.path / "m.ckpt");

  model.visit([&](const std::string& name, TensorF& t, TensorRole) {
    const auto l = back.tensor<float>(name);
    CHECK(l.shape() == t.shape());
    CHECK(std::memcmp(l.data(), t.data(), static_cast<std::size_t>(t.size()) * sizeof(float)) == 0);
  });
  const auto dd = back.tensor<double>("extra.double");
  CHECK(std::memcmp(dd.data(), d.data(), sizeof(double) * 6) == 0);
  CHECK(back.tensor<float>("extra.scalar").shape().rank() == 0);
  CHECK(back.i64("counter") == -1234567890123);
  CHECK(back.text("alphabet") == "0123456789");
  CHECK(back.serialize() == c.serialize());
  CHECK_THROWS_AS(back.tensor<double>("counter"), CorruptionError);
  CHECK_THROWS_AS(back.tensor<float>("nope"), CorruptionError);
}

TEST_CASE("checkpoint corruption names the failing field") {
  TempDir dir;
  Checkpoint c;
  c.put_tensor("w", TensorF::constant(Shape{4, 4}, 0.5f));
  save_checkpoint(dir.path / "m.ckpt", c);
  const auto good = read_bytes(dir.path / "m.ckpt");
  CHECK(good[0] == 'G');
  CHECK(good[3] == 'N');

  auto bad = good;
  bad[1] = 'X';
  write_bytes(dir.path / "x.ckpt", bad);
  CHECK(corruption_field([&] { load_checkpoint(dir.path / "x.ckpt"); }) == "magic");

  bad = good;
  bad[4] = 9;
  write_bytes(dir.path / "x.ckpt", bad);
  CHECK(corruption_field([&] { load_checkpoint(dir.path / "x.ckpt"); }) == "version");

  bad = good;
  bad[bad.size() - 10] ^= 0x01;  // inside the float payload
  write_bytes(dir.path / "x.ckpt", bad);
  CHECK(corruption_field([&] { load_checkpoint(dir.path / "x.ckpt"); }) == "crc");

  for (std::size_t keep : {std::size_t(0), std::size_t(3), std::size_t(10), good.size() / 2, good.size() - 1}) {
    bad.assign(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(keep));
    write_bytes(dir.path / "x.ckpt", bad);
    CHECK_THROWS_AS(load_checkpoint(dir.path / "x.ckpt"), CorruptionError);
  }
  CHECK_THROWS(load_checkpoint(dir.path / "absent.ckpt"));
}

TEST_CASE("checkpoint save replaces the file atomically") {
  TempDir dir;
  Checkpoint a, b;
  a.put_i64("v", 1);
  b.put_i64("v", 2);
  save_checkpoint(dir.path / "m.ckpt", a);
  save_checkpoint(dir.path / "m.ckpt", b);
  CHECK(load_checkpoint(dir.path / "m.ckpt").i64("v") == 2);
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir.path)) ++files;
  CHECK(files == 1);
}
