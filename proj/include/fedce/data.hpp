#pragma once

#include <zlib.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "fedce/errors.hpp"
#include "fedce/learn.hpp"
#include "fedce/rng.hpp"

namespace fedce {

// Per-client label-noise rates k/n for k = 0..n-1.
struct NoisePlan {
  int num_clients = 0;
  std::vector<double> rates;

  static NoisePlan linear(int n) {
    if (n < 1) throw InvalidArgument("noise plan needs at least one client");
    NoisePlan p{n, {}};
    for (int k = 0; k < n; ++k) p.rates.push_back(static_cast<double>(k) / n);
    return p;
  }
};

namespace detail {

// gzopen reads plain files transparently too.
class GzFile {
 public:
  explicit GzFile(const std::string& path) : f_(gzopen(path.c_str(), "rb")), path_(path) {
    if (f_ == nullptr) throw IoError("cannot open " + path);
  }
  ~GzFile() { gzclose(f_); }
  GzFile(const GzFile&) = delete;
  GzFile& operator=(const GzFile&) = delete;

  void read(void* buf, std::size_t len) {
    auto* out = static_cast<unsigned char*>(buf);
    while (len > 0) {
      const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(len, 1u << 30));
      const int got = gzread(f_, out, chunk);
      if (got <= 0) throw TruncatedFile(path_ + " is truncated");
      out += got;
      len -= static_cast<std::size_t>(got);
    }
  }

  std::uint32_t be32() {
    std::array<unsigned char, 4> b{};
    read(b.data(), 4);
    return std::uint32_t{b[0]} << 24 | std::uint32_t{b[1]} << 16 | std::uint32_t{b[2]} << 8 | std::uint32_t{b[3]};
  }

 private:
  gzFile f_;
  std::string path_;
};

inline constexpr std::uint32_t kIdxImages = 0x00000803;
inline constexpr std::uint32_t kIdxLabels = 0x00000801;

}  // namespace detail

// Reads an IDX image/label pair (optionally gzip-compressed). limit > 0 keeps
// only the first limit samples.
inline EvalSet load_idx(const std::string& images_path, const std::string& labels_path, std::size_t limit = 0) {
  detail::GzFile img(images_path), lab(labels_path);
  if (img.be32() != detail::kIdxImages) throw BadMagic(images_path + ": not an IDX image file");
  if (lab.be32() != detail::kIdxLabels) throw BadMagic(labels_path + ": not an IDX label file");
  const std::size_t count = img.be32();
  const std::size_t rows = img.be32(), cols = img.be32();
  const std::size_t label_count = lab.be32();
  if (count != label_count) throw CountMismatch("image and label counts differ");
  const std::size_t n = limit > 0 ? std::min(limit, count) : count;

  EvalSet out;
  out.dim = rows * cols;
  out.num_classes = 10;
  std::vector<unsigned char> pixels(n * out.dim);
  img.read(pixels.data(), pixels.size());
  std::vector<unsigned char> labels(n);
  lab.read(labels.data(), labels.size());
  out.features.resize(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) out.features[i] = static_cast<float>(pixels[i]) / 255.0f;
  out.labels.assign(labels.begin(), labels.end());
  for (int y : out.labels) {
    if (y > 9) throw InvalidArgument(labels_path + ": label out of range");
  }
  return out;
}

// Finds <dir>/<prefix>-images-idx3-ubyte[.gz] and the matching labels file.
inline EvalSet load_mnist(const std::filesystem::path& dir, bool train, std::size_t limit = 0) {
  const std::string prefix = train ? "train" : "t10k";
  auto pick = [&](const std::string& stem) {
    for (const auto& name : {stem + ".gz", stem}) {
      if (std::filesystem::exists(dir / name)) return (dir / name).string();
    }
    throw IoError("missing " + (dir / stem).string() + "[.gz]");
  };
  return load_idx(pick(prefix + "-images-idx3-ubyte"), pick(prefix + "-labels-idx1-ubyte"), limit);
}

// Gaussian blobs with unit variance around random-direction centers of norm
// sqrt(2) * separation, so two centers sit about 2 * separation apart.
inline EvalSet synth_dataset(std::size_t num_classes, std::size_t dim, std::size_t per_class, double separation,
                             std::uint64_t seed) {
  if (num_classes < 2 || dim == 0 || per_class == 0) throw InvalidArgument("synth_dataset sizes must be positive");
  if (!(separation >= 0.0)) throw InvalidArgument("separation must be non-negative");
  Rng rng(seed);
  std::vector<double> centers(num_classes * dim);
  for (std::size_t c = 0; c < num_classes; ++c) {
    double norm = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
      centers[c * dim + k] = rng.normal();
      norm += centers[c * dim + k] * centers[c * dim + k];
    }
    norm = std::sqrt(norm);
    for (std::size_t k = 0; k < dim; ++k) centers[c * dim + k] *= std::sqrt(2.0) * separation / norm;
  }
  EvalSet out{dim, num_classes, {}, {}};
  out.features.reserve(num_classes * per_class * dim);
  for (std::size_t i = 0; i < per_class; ++i) {
    for (std::size_t c = 0; c < num_classes; ++c) {
      for (std::size_t k = 0; k < dim; ++k) out.features.push_back(static_cast<float>(centers[c * dim + k] + rng.normal()));
      out.labels.push_back(static_cast<int>(c));
    }
  }
  return out;
}

// First `count` rows and the remaining rows, order preserved.
inline std::pair<EvalSet, EvalSet> split_at(const EvalSet& data, std::size_t count) {
  if (count > data.size()) throw TooFewSamples("split point beyond dataset size");
  std::vector<std::size_t> head(count), tail(data.size() - count);
  std::iota(head.begin(), head.end(), std::size_t{0});
  std::iota(tail.begin(), tail.end(), count);
  return {data.subset(head), data.subset(tail)};
}

// Shuffle then cut into n contiguous shards; the last shard takes the remainder.
inline std::vector<EvalSet> partition_iid(const EvalSet& data, int n, std::uint64_t seed) {
  if (n < 1) throw InvalidArgument("partition needs at least one client");
  if (data.size() < static_cast<std::size_t>(n)) throw TooFewSamples("fewer samples than clients");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  const std::size_t shard = data.size() / static_cast<std::size_t>(n);
  std::vector<EvalSet> out;
  for (int k = 0; k < n; ++k) {
    const std::size_t begin = static_cast<std::size_t>(k) * shard;
    const std::size_t end = k + 1 == n ? data.size() : begin + shard;
    out.push_back(data.subset(std::span<const std::size_t>(order).subspan(begin, end - begin)));
  }
  return out;
}

// Flips exactly round(rate * |data|) labels, chosen uniformly, to a uniform
// draw over the other classes.
inline EvalSet inject_noise(const EvalSet& data, double rate, std::size_t num_classes, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw InvalidArgument("noise rate must be in [0, 1]");
  if (num_classes < 2) throw InvalidArgument("noise needs at least two classes");
  EvalSet out = data;
  const auto flips = static_cast<std::size_t>(std::llround(rate * static_cast<double>(data.size())));
  if (flips == 0) return out;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t k = 0; k < flips; ++k) {
    const std::size_t j = k + static_cast<std::size_t>(rng.below(order.size() - k));
    std::swap(order[k], order[j]);
    int& y = out.labels[order[k]];
    y = static_cast<int>((static_cast<std::size_t>(y) + 1 + rng.below(num_classes - 1)) % num_classes);
  }
  return out;
}

}  // namespace fedce
