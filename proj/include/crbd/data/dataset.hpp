// Copyright 2026 The crbd Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

/// \file
/// Labeled image sets: the CIFAR-10 binary distribution, class-per-folder
/// image trees, and a procedural 10-class fixture for offline runs.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include <opencv2/imgproc.hpp>

#include "crbd/codec/image_io.hpp"
#include "crbd/core/error.hpp"
#include "crbd/core/hash.hpp"
#include "crbd/core/image.hpp"
#include "crbd/core/rng.hpp"

namespace crbd::data {

namespace fs = std::filesystem;

struct LabeledImages {
  std::string name;
  ImageDims dims{};
  int num_classes = 0;
  std::vector<std::string> class_names;
  std::vector<Image> images;
  std::vector<int> labels;

  [[nodiscard]] std::size_t size() const { return images.size(); }
  [[nodiscard]] bool empty() const { return images.empty(); }

  void push(Image img, int label) {
    images.push_back(std::move(img));
    labels.push_back(label);
  }

  [[nodiscard]] LabeledImages subset(const std::vector<int>& ids) const {
    LabeledImages out{name, dims, num_classes, class_names, {}, {}};
    out.images.reserve(ids.size());
    out.labels.reserve(ids.size());
    for (int id : ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= images.size())
        throw ParameterError("subset id " + std::to_string(id) + " out of range");
      out.push(images[static_cast<std::size_t>(id)], labels[static_cast<std::size_t>(id)]);
    }
    return out;
  }

  void validate() const {
    if (images.size() != labels.size()) throw ContractError(name + ": images/labels size mismatch");
    for (std::size_t i = 0; i < images.size(); ++i) {
      if (images[i].dims() != dims) throw ContractError(name + ": image " + std::to_string(i) + " has wrong dims");
      if (labels[i] < 0 || labels[i] >= num_classes)
        throw ContractError(name + ": label out of range at " + std::to_string(i));
    }
  }

  /// Content hash over pixels (8-bit grid) and labels.
  [[nodiscard]] std::string hash() const {
    Fnv1a h;
    h.update(name);
    std::vector<std::uint8_t> px;
    for (std::size_t i = 0; i < images.size(); ++i) {
      px.resize(images[i].size());
      std::transform(images[i].pixels().begin(), images[i].pixels().end(), px.begin(), to_u8);
      h.update_values(std::span<const std::uint8_t>(px));
      h.update_values(std::span<const int>(&labels[i], 1));
    }
    return h.hex();
  }
};

struct DatasetSplits {
  LabeledImages train;
  LabeledImages test;
};

/// Dataset cache root: $CRBD_DATA_ROOT, else ~/.cache/crbd.
inline fs::path data_root() {
  if (const char* env = std::getenv("CRBD_DATA_ROOT"); env && *env) return fs::path(env);
  if (const char* home = std::getenv("HOME"); home && *home) return fs::path(home) / ".cache" / "crbd";
  return fs::path(".crbd-data");
}

inline const std::vector<std::string>& cifar10_class_names() {
  static const std::vector<std::string> names = {"airplane", "automobile", "bird", "cat", "deer",
                                                 "dog", "frog", "horse", "ship", "truck"};
  return names;
}

inline constexpr const char* kCifar10Url = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz";
inline constexpr const char* kCifar10Md5 = "c32a1d4ab5d03f1284b67883e8d87530";

inline fs::path cifar10_dir(const fs::path& root) { return root / "cifar-10-batches-bin"; }

inline bool cifar10_available(const fs::path& root = data_root()) {
  const auto d = cifar10_dir(root);
  for (int i = 1; i <= 5; ++i)
    if (!fs::exists(d / ("data_batch_" + std::to_string(i) + ".bin"))) return false;
  return fs::exists(d / "test_batch.bin");
}

/// Appends one CIFAR-10 binary batch (records of 1 label byte + 3072 pixel bytes).
inline void read_cifar10_batch(const fs::path& file, LabeledImages& out) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DatasetUnavailable("cannot open " + file.string());
  constexpr std::size_t kRecord = 1 + 3 * 32 * 32;
  std::vector<std::uint8_t> rec(kRecord);
  while (in.read(reinterpret_cast<char*>(rec.data()), static_cast<std::streamsize>(kRecord))) {
    if (rec[0] > 9) throw IoError(file.string() + ": corrupt label byte");
    std::vector<float> px(kRecord - 1);
    std::transform(rec.begin() + 1, rec.end(), px.begin(), from_u8);
    out.push(Image(ImageDims{3, 32, 32}, std::move(px)), rec[0]);
  }
  if (in.gcount() != 0) throw IoError(file.string() + ": truncated record");
}

/// Downloads and unpacks the binary distribution into `root`, verifying its
/// MD5 checksum. Requires curl, md5sum and tar on PATH.
inline void fetch_cifar10(const fs::path& root) {
  fs::create_directories(root);
  const fs::path tarball = root / "cifar-10-binary.tar.gz";
  const std::string q = "'" + tarball.string() + "'";
  if (!fs::exists(tarball)) {
    const std::string cmd = "curl -fsSL --retry 2 -o " + q + " " + kCifar10Url;
    if (std::system(cmd.c_str()) != 0) {
      fs::remove(tarball);
      throw DatasetUnavailable("CIFAR-10 download failed (" + std::string(kCifar10Url) + ")");
    }
  }
  const std::string check = "echo '" + std::string(kCifar10Md5) + "  " + tarball.string() + "' | md5sum -c --status";
  if (std::system(check.c_str()) != 0) {
    fs::remove(tarball);
    throw DatasetUnavailable("CIFAR-10 archive checksum mismatch");
  }
  const std::string untar = "tar -xzf " + q + " -C '" + root.string() + "'";
  if (std::system(untar.c_str()) != 0) throw DatasetUnavailable("cannot unpack CIFAR-10 archive");
}

/// Loads the 50,000/10,000 split from `root`, optionally fetching it first.
inline DatasetSplits load_cifar10(const fs::path& root = data_root(), bool allow_fetch = false) {
  if (!cifar10_available(root)) {
    if (!allow_fetch)
      throw DatasetUnavailable("CIFAR-10 not found under " + cifar10_dir(root).string() +
                               " (set CRBD_DATA_ROOT or enable fetching)");
    fetch_cifar10(root);
  }
  DatasetSplits s;
  for (auto* part : {&s.train, &s.test}) {
    part->dims = ImageDims{3, 32, 32};
    part->num_classes = 10;
    part->class_names = cifar10_class_names();
  }
  s.train.name = "cifar10-train";
  s.test.name = "cifar10-test";
  const auto d = cifar10_dir(root);
  for (int i = 1; i <= 5; ++i) read_cifar10_batch(d / ("data_batch_" + std::to_string(i) + ".bin"), s.train);
  read_cifar10_batch(d / "test_batch.bin", s.test);
  return s;
}

/// Loads `root/{train,test}/<class>/<image>` trees (classes sorted by name),
/// resizing every image to `dims`.
inline DatasetSplits load_image_folder(const fs::path& root, const ImageDims& dims,
                                       const std::vector<std::string>& class_subset = {}) {
  if (!fs::is_directory(root / "train") || !fs::is_directory(root / "test"))
    throw DatasetUnavailable("image folder dataset needs " + (root / "train").string() + " and " +
                             (root / "test").string());
  std::vector<std::string> classes = class_subset;
  if (classes.empty()) {
    for (const auto& e : fs::directory_iterator(root / "train"))
      if (e.is_directory()) classes.push_back(e.path().filename().string());
    std::sort(classes.begin(), classes.end());
  }
  if (classes.size() < 2) throw DatasetUnavailable("image folder dataset needs at least 2 classes");
  DatasetSplits s;
  for (auto [part, split] : {std::pair{&s.train, "train"}, std::pair{&s.test, "test"}}) {
    part->name = root.filename().string() + "-" + split;
    part->dims = dims;
    part->num_classes = static_cast<int>(classes.size());
    part->class_names = classes;
    for (std::size_t c = 0; c < classes.size(); ++c) {
      const fs::path dir = root / split / classes[c];
      if (!fs::is_directory(dir)) throw DatasetUnavailable("missing class directory " + dir.string());
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        Image img = codec::read_image(f);
        if (img.channels() != dims.channels) throw IoError(f.string() + ": unexpected channel count");
        if (img.dims() != dims) {
          cv::Mat m = codec::to_mat_u16(img);
          cv::Mat r;
          cv::resize(m, r, cv::Size(dims.width, dims.height), 0, 0, cv::INTER_AREA);
          img = codec::from_mat(r);
        }
        part->push(std::move(img), static_cast<int>(c));
      }
    }
  }
  return s;
}

/// Class-balanced deterministic subset of `n` images (n / num_classes per
/// class; the remainder goes to the lowest class ids).
inline std::vector<int> stratified_ids(const LabeledImages& ds, std::size_t n, std::uint64_t seed) {
  if (n > ds.size()) throw CapacityError("requested " + std::to_string(n) + " images from a set of " + std::to_string(ds.size()));
  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(ds.num_classes));
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(static_cast<int>(i));
  Rng rng(derive_seed(seed, "stratified:" + ds.name));
  std::vector<int> out;
  const std::size_t k = by_class.size();
  for (std::size_t c = 0; c < k; ++c) {
    auto& ids = by_class[c];
    rng.shuffle(std::span<int>(ids));
    const std::size_t want = n / k + (c < n % k ? 1 : 0);
    if (want > ids.size()) throw CapacityError("class " + std::to_string(c) + " has too few images for the subset");
    out.insert(out.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(want));
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline LabeledImages stratified_subset(const LabeledImages& ds, std::size_t n, std::uint64_t seed) {
  auto out = ds.subset(stratified_ids(ds, n, seed));
  out.name = ds.name + "-" + std::to_string(n);
  return out;
}

/// One procedural image of class `label`: a smooth two-color background with
/// a tinted sinusoidal grating under a soft window. Class identity lives in
/// the tint hue and the grating frequency (both invariant to crops and
/// flips, with per-image jitter so neighboring classes overlap); orientation,
/// phase, position and background are nuisance.
inline Image synthetic_image(int label, int num_classes, Rng& rng, const ImageDims& dims) {
  Image img(dims);
  const double pi = std::numbers::pi;
  const double theta = rng.uniform(0.0, pi);
  const double freq = 0.07 + 0.16 * label / std::max(1, num_classes - 1) + rng.uniform(-0.008, 0.008);
  const double phase = rng.uniform(0.0, 2.0 * pi);
  const double hue = 2.0 * pi * label / num_classes + rng.normal(0.0, 0.25);
  const double cx = rng.uniform(0.3, 0.7) * dims.width;
  const double cy = rng.uniform(0.3, 0.7) * dims.height;
  const double sigma = rng.uniform(0.25, 0.45) * dims.width;
  const double bg_dir = rng.uniform(0.0, 2.0 * pi);
  std::vector<double> c0(static_cast<std::size_t>(dims.channels)), c1(c0.size()), tint(c0.size());
  for (std::size_t c = 0; c < c0.size(); ++c) {
    c0[c] = rng.uniform(0.2, 0.8);
    c1[c] = rng.uniform(0.2, 0.8);
    tint[c] = 0.5 + 0.3 * std::cos(hue + 2.0 * pi * static_cast<double>(c) / 3.0);
  }
  const double amp = rng.uniform(0.15, 0.30);
  const double ct = std::cos(theta), st = std::sin(theta);
  const double cb = std::cos(bg_dir), sb = std::sin(bg_dir);
  for (int y = 0; y < dims.height; ++y)
    for (int x = 0; x < dims.width; ++x) {
      const double u = (x * cb + y * sb) / (dims.width + dims.height) + 0.5;
      const double dx = x - cx, dy = y - cy;
      const double win = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      const double g = std::sin(2.0 * pi * freq * (x * ct + y * st) + phase);
      for (int c = 0; c < dims.channels; ++c) {
        const double bg = c0[static_cast<std::size_t>(c)] * (1.0 - u) + c1[static_cast<std::size_t>(c)] * u;
        const double fg = tint[static_cast<std::size_t>(c)] + amp * g;
        const double v = bg * (1.0 - 0.8 * win) + fg * 0.8 * win + rng.normal(0.0, 0.02);
        img.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  return quantize_u8(img);
}

/// Deterministic 10-class fixture used when real data is unavailable.
/// Image i of a split depends only on (seed, split, i).
inline DatasetSplits make_synthetic(std::size_t n_train, std::size_t n_test, std::uint64_t seed,
                                    const ImageDims& dims = {}, int num_classes = 10) {
  if (num_classes < 2) throw ParameterError("synthetic dataset needs >= 2 classes");
  DatasetSplits s;
  for (auto [part, split, n] : {std::tuple{&s.train, "train", n_train}, std::tuple{&s.test, "test", n_test}}) {
    part->name = std::string("synthetic-") + split;
    part->dims = dims;
    part->num_classes = num_classes;
    for (int c = 0; c < num_classes; ++c) part->class_names.push_back("class" + std::to_string(c));
    part->images.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      Rng rng(derive_seed(seed, std::string(split) + ":" + std::to_string(i)));
      const int label = static_cast<int>(i % static_cast<std::size_t>(num_classes));
      part->push(synthetic_image(label, num_classes, rng, dims), label);
    }
  }
  return s;
}

}  // namespace crbd::data
