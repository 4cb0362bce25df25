#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gfcn/alphabet.hpp"
#include "gfcn/image_io.hpp"

namespace gfcn {

/// One text line: preprocessed image [H, W, 1] in [0, 1] and its encoded transcript.
struct Sample {
  std::string id;
  std::string transcript;
  LabelSeq labels;
  TensorF image;
};

/// A dataset directory: images/ plus lines.tsv with "id<TAB>transcript" per line.
/// An id names images/<id> directly when it carries an extension, otherwise the
/// first of images/<id>.png, .pgm, .ppm, .pnm that exists.
struct DatasetManifest {
  struct Entry {
    std::string id;
    std::string transcript;
  };
  std::filesystem::path root;
  std::vector<Entry> entries;
  std::string split;

  std::filesystem::path image_path(const Entry& e) const;
};

/// Reads root/lines.tsv. Malformed lines throw CorruptionError with field "lines.tsv:<n>".
DatasetManifest read_manifest(const std::filesystem::path& root, const std::string& split = "");
void write_manifest(const DatasetManifest& manifest);

struct LoadIssue {
  std::string id;
  std::string message;
};

struct LoadReport {
  Index requested = 0;
  Index loaded = 0;
  std::vector<LoadIssue> issues;
};

/// Loads and preprocesses every entry. Unreadable images and transcripts with
/// symbols outside the alphabet are recorded in `report` and skipped.
std::vector<Sample> load_dataset(const DatasetManifest& manifest, const AlphabetCodec& codec, Index target_height,
                                 LoadReport* report = nullptr);

}  // namespace gfcn
