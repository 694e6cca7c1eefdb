#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "refeednet/pnm.hpp"
#include "refeednet/rng.hpp"
#include "refeednet/types.hpp"

namespace refeednet {

struct SplitSpec {
  double train_fraction = 0.75;
  std::uint64_t seed = 0;
};

/// Per-class stratified shuffle split. Each class contributes
/// round(train_fraction * count) items to the training side. Both sides keep
/// the input order of their members.
inline std::pair<Dataset, Dataset> split(const Dataset& d, const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
    throw Error(ErrorKind::InvalidConfig, "train_fraction must lie in (0,1)");
  if (d.size() < 2) throw Error(ErrorKind::DegenerateSplit, "need at least two items to split");

  std::vector<bool> to_train(d.size(), false);
  Rng rng(mix_seed(spec.seed, 0x5b11));
  for (TrafficClass cls : kAllClasses) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (d[i].label == cls) members.push_back(i);
    rng.shuffle(std::span(members));
    const auto take = static_cast<std::size_t>(std::lround(spec.train_fraction * static_cast<double>(members.size())));
    for (std::size_t k = 0; k < take; ++k) to_train[members[k]] = true;
  }

  Dataset train, holdout;
  for (std::size_t i = 0; i < d.size(); ++i) (to_train[i] ? train : holdout).add(d[i]);
  if (train.empty() || holdout.empty())
    throw Error(ErrorKind::DegenerateSplit, "fraction " + std::to_string(spec.train_fraction) + " of " +
                                                std::to_string(d.size()) + " items leaves one side empty");
  return {std::move(train), std::move(holdout)};
}

/// Keeps items at indices 0, stride, 2*stride, ...
template <typename T>
std::vector<T> subsample_stride(std::span<const T> frames, std::size_t stride) {
  if (stride == 0) throw Error(ErrorKind::InvalidConfig, "stride must be >= 1");
  std::vector<T> out;
  out.reserve((frames.size() + stride - 1) / stride);
  for (std::size_t i = 0; i < frames.size(); i += stride) out.push_back(frames[i]);
  return out;
}

template <typename T>
std::vector<T> subsample_stride(const std::vector<T>& frames, std::size_t stride) {
  return subsample_stride(std::span<const T>(frames), stride);
}

inline bool is_pixmap_file(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  return ext.size() == 4 && ext[0] == '.' && (ext[1] == 'p' || ext[1] == 'P') &&
         (ext[3] == 'm' || ext[3] == 'M');
}

struct LoadReport {
  std::size_t loaded = 0;
  std::size_t skipped = 0;
  std::vector<std::string> warnings;
};

/// Reads `root/<ClassName>/*.p?m`. Files are visited in lexicographic order
/// and resized to `shape` with nearest-neighbour sampling. Unreadable files
/// are skipped, counted and reported.
inline Dataset load_dir(const std::filesystem::path& root, const Shape& shape, LoadReport* report = nullptr) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw Error(ErrorKind::CorpusLayout, root.string() + " is not a directory");
  for (TrafficClass cls : kAllClasses)
    if (!fs::is_directory(root / to_string(cls), ec))
      throw Error(ErrorKind::CorpusLayout, "missing class directory " + (root / to_string(cls)).string());

  LoadReport local;
  LoadReport& rep = report ? *report : local;
  Dataset d;
  for (TrafficClass cls : kAllClasses) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(root / to_string(cls)))
      if (entry.is_regular_file() && is_pixmap_file(entry.path())) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      try {
        d.add({resize_nearest(read_pnm(f), shape), cls, f.string()});
        ++rep.loaded;
      } catch (const Error& e) {
        ++rep.skipped;
        rep.warnings.push_back(f.string() + ": " + e.what());
        std::fprintf(stderr, "warning: skipping %s: %s\n", f.string().c_str(), e.what());
      }
    }
  }
  return d;
}

/// Writes `d` as `root/<ClassName>/NNNNNN.pgm` (or .ppm), numbering items by
/// their position in `d`.
inline void save_dir(const Dataset& d, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  std::error_code ec;
  for (TrafficClass cls : kAllClasses) {
    fs::create_directories(root / to_string(cls), ec);
    if (ec) throw Error(ErrorKind::Io, "cannot create " + (root / to_string(cls)).string() + ": " + ec.message());
  }
  for (std::size_t i = 0; i < d.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%06zu.%s", i, d[i].channels() == 1 ? "pgm" : "ppm");
    write_pnm(root / to_string(d[i].label) / name, d[i].pixels);
  }
}

}  // namespace refeednet
