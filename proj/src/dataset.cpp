#include "gfcn/dataset.hpp"

#include <fstream>

namespace gfcn {

std::filesystem::path DatasetManifest::image_path(const Entry& e) const {
  const auto dir = root / "images";
  if (std::filesystem::path(e.id).has_extension()) return dir / e.id;
  for (const char* ext : {".png", ".pgm", ".ppm", ".pnm"}) {
    auto p = dir / (e.id + ext);
    if (std::filesystem::exists(p)) return p;
  }
  return dir / (e.id + ".png");
}

DatasetManifest read_manifest(const std::filesystem::path& root, const std::string& split) {
  DatasetManifest m;
  m.root = root;
  m.split = split;
  std::ifstream in(root / "lines.tsv");
  if (!in) throw std::runtime_error((root / "lines.tsv").string() + ": cannot open");
  std::string line;
  Index n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw CorruptionError("lines.tsv:" + std::to_string(n), "expected <id><TAB><transcript>");
    }
    m.entries.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  return m;
}

void write_manifest(const DatasetManifest& manifest) {
  std::filesystem::create_directories(manifest.root);
  std::ofstream out(manifest.root / "lines.tsv", std::ios::binary);
  for (const auto& e : manifest.entries) out << e.id << '\t' << e.transcript << '\n';
  if (!out) throw std::runtime_error((manifest.root / "lines.tsv").string() + ": write failed");
}

std::vector<Sample> load_dataset(const DatasetManifest& manifest, const AlphabetCodec& codec, Index target_height,
                                 LoadReport* report) {
  LoadReport local;
  LoadReport& r = report ? *report : local;
  r.requested += static_cast<Index>(manifest.entries.size());
  std::vector<Sample> out;
  for (const auto& e : manifest.entries) {
    const std::u32string unknown = codec.unknown_symbols(e.transcript);
    if (!unknown.empty()) {
      r.issues.push_back({e.id, "transcript has symbols outside the alphabet: " + utf8_encode(unknown)});
      continue;
    }
    try {
      out.push_back({e.id, e.transcript, codec.encode(e.transcript), load_and_preprocess(manifest.image_path(e), target_height)});
      ++r.loaded;
    } catch (const std::exception& ex) {
      r.issues.push_back({e.id, ex.what()});
    }
  }
  return out;
}

}  // namespace gfcn
