#pragma once

// Seismic image / salt mask pairs: loading, input preparation, splitting,
// k-fold partitioning and mini-batching.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "saltseg/image_io.hpp"
#include "saltseg/kernels.hpp"
#include "saltseg/tensor.hpp"

namespace saltseg {

inline constexpr std::size_t kNativeSize = 101;
inline constexpr std::size_t kInputSize = 128;
inline constexpr std::uint8_t kMaskThreshold = 128;

struct Sample {
  Tensor image;  // (1, 101, 101), values in [0, 1]
  Tensor mask;   // (1, 101, 101), values in {0, 1}
  std::string id;

  friend bool operator==(const Sample&, const Sample&) = default;
};

enum class Provenance { disk, synthetic };

/// Ordered samples. Subsets share sample storage with their parent.
class Dataset {
 public:
  explicit Dataset(Provenance provenance = Provenance::disk) : provenance_(provenance) {}

  Provenance provenance() const noexcept { return provenance_; }
  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }

  const Sample& operator[](std::size_t i) const { return *samples_[i]; }
  const Sample& at(std::size_t i) const { return *samples_.at(i); }

  void add(Sample sample) { samples_.push_back(std::make_shared<const Sample>(std::move(sample))); }

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    out.reserve(samples_.size());
    for (const auto& s : samples_) out.push_back(s->id);
    return out;
  }

  Dataset subset(std::span<const std::size_t> indices) const {
    Dataset out(provenance_);
    out.samples_.reserve(indices.size());
    for (auto i : indices) out.samples_.push_back(samples_.at(i));
    return out;
  }

 private:
  Provenance provenance_;
  std::vector<std::shared_ptr<const Sample>> samples_;
};

struct SplitConfig {
  double train_fraction = 0.8;
  std::uint64_t shuffle_seed = 0;
};

struct Fold {
  Dataset train;
  Dataset validation;
};

// ---------------------------------------------------------------------------
// Seeded permutations

inline std::mt19937_64 seeded_engine(std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  return std::mt19937_64(seq);
}

/// Unbiased integer in [0, bound) by rejection.
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return v % bound;
}

/// Fisher-Yates permutation of [0, n). std::shuffle is not reproducible
/// across standard libraries, so the walk is spelled out.
inline std::vector<std::size_t> permutation(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[uniform_below(rng, i)]);
  return idx;
}

// ---------------------------------------------------------------------------
// Tensor <-> image conversion

inline Tensor image_to_tensor(const GrayImage& img) {
  Tensor t({1, img.height, img.width});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) t[i] = img.pixels[i] / 255.0;
  return t;
}

inline Tensor mask_to_tensor(const GrayImage& img) {
  Tensor t({1, img.height, img.width});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) t[i] = img.pixels[i] >= kMaskThreshold ? 1.0 : 0.0;
  return t;
}

/// Last two axes become the image; values are clamped to [0, 1] and rounded
/// to the nearest of 256 levels.
inline GrayImage tensor_to_image(const Tensor& t) {
  GrayImage img;
  img.height = t.dim(t.rank() - 2);
  img.width = t.dim(t.rank() - 1);
  img.pixels.resize(img.width * img.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(t[i], 0.0, 1.0) * 255.0));
  return img;
}

// ---------------------------------------------------------------------------
// Disk layout: <root>/images/<id>.(png|pgm), <root>/masks/<id>.(png|pgm)

namespace detail {

inline bool is_image_file(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return ext == ".png" || ext == ".pgm";
}

inline std::map<std::string, std::filesystem::path> index_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw LoadError("not a directory: " + dir.string());
  std::map<std::string, std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file() || !is_image_file(entry.path())) continue;
    const std::string id = entry.path().stem().string();
    if (!out.emplace(id, entry.path()).second)
      throw LoadError("duplicate id '" + id + "' in " + dir.string());
  }
  return out;
}

inline GrayImage read_native(const std::filesystem::path& path) {
  GrayImage img = read_image(path);
  if (img.width != kNativeSize || img.height != kNativeSize)
    throw DimensionError(path.string() + " is " + std::to_string(img.width) + "x" +
                         std::to_string(img.height) + ", expected 101x101");
  return img;
}

}  // namespace detail

inline Dataset load_dataset(const std::filesystem::path& images_dir,
                            const std::filesystem::path& masks_dir) {
  const auto images = detail::index_dir(images_dir);
  const auto masks = detail::index_dir(masks_dir);
  Dataset ds(Provenance::disk);
  for (const auto& [id, image_path] : images) {  // std::map iterates ids in sorted order
    auto it = masks.find(id);
    if (it == masks.end()) throw LoadError("no mask for image id '" + id + "'");
    ds.add({image_to_tensor(detail::read_native(image_path)), mask_to_tensor(detail::read_native(it->second)), id});
  }
  return ds;
}

inline Dataset load_dataset(const std::filesystem::path& root) {
  return load_dataset(root / "images", root / "masks");
}

/// Masks are written as 0/255.
inline void save_dataset(const Dataset& ds, const std::filesystem::path& root,
                         ImageFormat format = ImageFormat::pgm) {
  std::filesystem::create_directories(root / "images");
  std::filesystem::create_directories(root / "masks");
  const std::string ext = format == ImageFormat::png ? ".png" : ".pgm";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Sample& s = ds[i];
    write_image(root / "images" / (s.id + ext), tensor_to_image(s.image));
    write_image(root / "masks" / (s.id + ext), tensor_to_image(s.mask));
  }
}

// ---------------------------------------------------------------------------

/// Nearest-neighbour resize of the 101x101 image to the 128x128 network
/// input. The mask is left at native resolution.
inline Tensor prepare_input(const Sample& sample) {
  const Tensor img = sample.image.reshaped({1, 1, sample.image.dim(1), sample.image.dim(2)});
  return resize_nearest_forward(img, kInputSize, kInputSize);
}

/// Index form of split(): seeded shuffle of [0, n), then prefix / suffix.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n,
                                                                                   const SplitConfig& cfg) {
  if (!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0))
    throw ValidationError("split: train_fraction must lie in (0, 1)");
  if (n < 2) throw ValidationError("split: need at least two samples");
  auto n_train = static_cast<std::size_t>(std::llround(cfg.train_fraction * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  auto rng = seeded_engine(cfg.shuffle_seed, 0);
  auto order = permutation(n, rng);
  std::vector<std::size_t> test(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  order.resize(n_train);
  return {std::move(order), std::move(test)};
}

inline std::pair<Dataset, Dataset> split(const Dataset& ds, const SplitConfig& cfg) {
  const auto [train, test] = split_indices(ds.size(), cfg);
  return {ds.subset(train), ds.subset(test)};
}

/// Index form of kfold(): validation index sets, one per fold.
inline std::vector<std::vector<std::size_t>> kfold_indices(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ValidationError("kfold: k must be at least 2");
  if (k > n) throw ValidationError("kfold: k exceeds dataset size");
  auto rng = seeded_engine(seed, 1);
  const auto order = permutation(n, rng);
  std::vector<std::vector<std::size_t>> folds;
  folds.reserve(k);
  std::size_t begin = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t len = n / k + (f < n % k ? 1 : 0);
    folds.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(begin),
                       order.begin() + static_cast<std::ptrdiff_t>(begin + len));
    begin += len;
  }
  return folds;
}

/// k contiguous folds over a seeded shuffle; the first N mod k folds carry
/// one extra sample. Fold i is the validation part of pair i.
inline std::vector<Fold> kfold(const Dataset& ds, std::size_t k, std::uint64_t seed) {
  const auto folds = kfold_indices(ds.size(), k, seed);
  std::vector<Fold> out;
  out.reserve(k);
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<std::size_t> train;
    for (std::size_t g = 0; g < k; ++g)
      if (g != f) train.insert(train.end(), folds[g].begin(), folds[g].end());
    out.push_back({ds.subset(train), ds.subset(folds[f])});
  }
  return out;
}

struct Batch {
  Tensor input;   // (N, 1, 128, 128)
  Tensor target;  // (N, 1, 101, 101)
  std::vector<std::string> ids;
};

/// Stacks samples into network-ready input and target tensors.
inline Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices) {
  const std::size_t n = indices.size();
  if (n == 0) throw ValidationError("make_batch: empty batch");
  const std::size_t mh = ds.at(indices[0]).mask.dim(1), mw = ds.at(indices[0]).mask.dim(2);
  Batch b{Tensor({n, 1, kInputSize, kInputSize}), Tensor({n, 1, mh, mw}), {}};
  const std::size_t in_plane = kInputSize * kInputSize, mask_plane = mh * mw;
  for (std::size_t i = 0; i < n; ++i) {
    const Sample& s = ds.at(indices[i]);
    require_same_dims(s.mask.dims(), Dims{1, mh, mw}, "make_batch mask");
    const Tensor in = prepare_input(s);
    std::copy(in.values().begin(), in.values().end(), b.input.data() + i * in_plane);
    std::copy(s.mask.values().begin(), s.mask.values().end(), b.target.data() + i * mask_plane);
    b.ids.push_back(s.id);
  }
  return b;
}

/// Sequential cursor over one epoch's mini-batches. The order is a shuffle
/// seeded by (shuffle_seed, epoch); a short final batch is kept.
class BatchStream {
 public:
  BatchStream(const Dataset& ds, std::size_t batch_size, std::uint64_t shuffle_seed,
              std::uint64_t epoch)
      : ds_(&ds), batch_size_(batch_size) {
    if (batch_size == 0) throw ValidationError("batches: batch_size must be at least 1");
    auto rng = seeded_engine(shuffle_seed, epoch);
    order_ = permutation(ds.size(), rng);
  }

  std::optional<Batch> next() {
    if (pos_ >= order_.size()) return std::nullopt;
    const std::size_t len = std::min(batch_size_, order_.size() - pos_);
    Batch b = make_batch(*ds_, std::span<const std::size_t>(order_).subspan(pos_, len));
    pos_ += len;
    return b;
  }

  const std::vector<std::size_t>& order() const noexcept { return order_; }

 private:
  const Dataset* ds_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

inline BatchStream batches(const Dataset& ds, std::size_t batch_size, std::uint64_t shuffle_seed,
                           std::uint64_t epoch) {
  return BatchStream(ds, batch_size, shuffle_seed, epoch);
}

}  // namespace saltseg
