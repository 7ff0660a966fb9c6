#pragma once

// Training loop, evaluation, cross-validation and prediction.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "saltseg/adadelta.hpp"
#include "saltseg/checkpoint.hpp"
#include "saltseg/config.hpp"
#include "saltseg/dataset.hpp"
#include "saltseg/loss.hpp"
#include "saltseg/model.hpp"

namespace saltseg {

struct Metrics {
  double mean_loss = 0.0;
  double pixel_accuracy = 0.0;
  double iou = 0.0;
};

struct LossLogRow {
  std::uint64_t epoch = 0;  // 1-based count of completed epochs
  double train_loss = 0.0;
  std::optional<double> test_loss;
  double wall_seconds = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossLogRow> log;
};

/// probability < 0.5 is background, everything else (0.5 included) is salt.
inline std::uint8_t threshold(double probability) { return probability < 0.5 ? 0 : 1; }

/// Running tallies behind Metrics; samples must be added in a fixed order
/// for the loss sum to be bit-stable.
class MetricsAccumulator {
 public:
  explicit MetricsAccumulator(Reduction reduction = Reduction::all_elements) : reduction_(reduction) {}

  /// logits and targets hold one or more samples along axis 0.
  void add(const Tensor& logits, const Tensor& targets) {
    const auto per_pixel = sigmoid_cross_entropy(logits, targets);
    const std::size_t batch = logits.dim(0);
    const std::size_t plane = logits.size() / batch;
    for (std::size_t n = 0; n < batch; ++n) {
      double s = 0.0;
      for (std::size_t i = n * plane; i < (n + 1) * plane; ++i) {
        s += per_pixel[i];
        const bool pred = threshold(sigmoid(logits[i])) == 1;
        const bool truth = targets[i] == 1.0;
        correct_ += pred == truth;
        inter_ += pred && truth;
        union_ += pred || truth;
      }
      loss_sum_ += s;
    }
    samples_ += batch;
    pixels_ += logits.size();
  }

  Metrics result() const {
    if (samples_ == 0) throw ValidationError("metrics over an empty set");
    Metrics m;
    m.mean_loss = loss_sum_ / static_cast<double>(reduction_ == Reduction::all_elements ? pixels_ : samples_);
    m.pixel_accuracy = static_cast<double>(correct_) / static_cast<double>(pixels_);
    m.iou = union_ == 0 ? 1.0 : static_cast<double>(inter_) / static_cast<double>(union_);
    return m;
  }

 private:
  Reduction reduction_;
  double loss_sum_ = 0.0;
  std::size_t samples_ = 0, pixels_ = 0, correct_ = 0, inter_ = 0, union_ = 0;
};

inline Metrics metrics_from_logits(const Tensor& logits, const Tensor& targets,
                                   Reduction reduction = Reduction::all_elements) {
  MetricsAccumulator acc(reduction);
  acc.add(logits, targets);
  return acc.result();
}

/// Inference over a dataset, reduced in id order.
inline Metrics evaluate(const Model& model, const Dataset& ds,
                        Reduction reduction = Reduction::all_elements, std::size_t chunk = 16) {
  if (ds.empty()) throw ValidationError("evaluate: empty dataset");
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&ds](std::size_t a, std::size_t b) { return ds[a].id < ds[b].id; });
  MetricsAccumulator acc(reduction);
  for (std::size_t pos = 0; pos < order.size(); pos += chunk) {
    const std::size_t len = std::min(chunk, order.size() - pos);
    const Batch b = make_batch(ds, std::span<const std::size_t>(order).subspan(pos, len));
    acc.add(model.infer(b.input), b.target);
  }
  return acc.result();
}

inline Metrics evaluate(const Checkpoint& ckpt, const Dataset& ds) {
  return evaluate(model_from_checkpoint(ckpt), ds, ckpt.config.reduction);
}

/// Model, optimizer accumulators and shuffle engine: everything needed to
/// continue a run bit-exactly.
class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg)
      : cfg_(cfg), model_(canonical_spec(cfg.faithful_table1), cfg.seed), rng_(seeded_engine(cfg.seed, 2)) {
    validate(cfg_);
    optimizer_ = OptimizerState::zeros_like(std::as_const(model_).param_tensors(), cfg_.optimizer());
  }

  Trainer(const TrainConfig& cfg, const Checkpoint& from) : Trainer(cfg) {
    model_ = model_from_checkpoint(from);
    if (from.optimizer.slots.size() != optimizer_.slots.size())
      throw IncompatibleError("checkpoint optimizer state does not match the model");
    optimizer_.slots = from.optimizer.slots;
    epochs_completed_ = from.epochs_completed;
    std::istringstream is(from.rng_state);
    is >> rng_;
    if (!is) throw IntegrityError("checkpoint RNG state is unreadable");
  }

  /// One pass over `train`; returns the sample-weighted mean batch loss.
  double run_epoch(const Dataset& train) {
    if (train.empty()) throw ValidationError("train: empty training set");
    const std::uint64_t epoch = epochs_completed_;
    auto stream = batches(train, cfg_.batch_size, rng_(), epoch);
    auto params = model_.param_tensors();
    double weighted = 0.0;
    std::size_t seen = 0, batch_no = 0;
    while (auto b = stream.next()) {
      const Tensor logits = model_.forward(b->input, Mode::train);
      const auto lg = loss_and_grad(logits, b->target, cfg_.reduction);
      if (!std::isfinite(lg.loss.mean_loss))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                           std::to_string(batch_no + 1));
      const auto grads = model_.backward(lg.grad_logits);
      try {
        for (std::size_t k = 0; k < grads.size(); ++k) {
          adadelta_step(*params[2 * k], grads[k].weights, optimizer_.slots[2 * k], optimizer_.config);
          adadelta_step(*params[2 * k + 1], grads[k].bias, optimizer_.slots[2 * k + 1], optimizer_.config);
        }
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch + 1) +
                           ", batch " + std::to_string(batch_no + 1));
      }
      const std::size_t n = b->input.dim(0);
      weighted += lg.loss.mean_loss * static_cast<double>(n);
      seen += n;
      ++batch_no;
    }
    ++epochs_completed_;
    return weighted / static_cast<double>(seen);
  }

  Checkpoint checkpoint() const {
    Checkpoint c;
    c.spec_hash = model_.hash();
    c.epochs_completed = epochs_completed_;
    c.config = cfg_;
    std::ostringstream os;
    os << rng_;
    c.rng_state = os.str();
    c.params = model_.params();
    c.optimizer = optimizer_;
    return c;
  }

  const Model& model() const noexcept { return model_; }
  const TrainConfig& config() const noexcept { return cfg_; }
  std::uint64_t epochs_completed() const noexcept { return epochs_completed_; }

 private:
  TrainConfig cfg_;
  Model model_;
  OptimizerState optimizer_;
  std::mt19937_64 rng_;
  std::uint64_t epochs_completed_ = 0;
};

/// Splits `ds` into the training and held-out parts a TrainConfig implies.
inline std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, const TrainConfig& cfg) {
  if (cfg.train_fraction >= 1.0) return {ds, Dataset(ds.provenance())};
  return split(ds, {cfg.train_fraction, cfg.seed});
}

struct TrainOptions {
  // Continue from this state; the run stops once cfg.epochs are completed.
  std::optional<Checkpoint> resume;
  // Written every cfg.checkpoint_every epochs and at the end.
  std::optional<std::filesystem::path> checkpoint_path;
  std::function<void(const LossLogRow&)> on_log;
};

namespace detail {

// Fields that decide the trajectory; a resumed run must agree on all of them.
inline bool same_trajectory(const TrainConfig& a, const TrainConfig& b) {
  return a.batch_size == b.batch_size && a.lr_scale == b.lr_scale && a.rho == b.rho &&
         a.eps == b.eps && a.seed == b.seed && a.train_fraction == b.train_fraction &&
         a.faithful_table1 == b.faithful_table1 && a.reduction == b.reduction;
}

}  // namespace detail

inline TrainResult train(const Dataset& ds, const TrainConfig& cfg, const TrainOptions& opts = {}) {
  validate(cfg);
  if (ds.empty()) throw ValidationError("train: empty dataset");
  const auto [train_set, test_set] = train_test_split(ds, cfg);

  std::optional<Trainer> trainer;
  if (opts.resume) {
    if (!detail::same_trajectory(opts.resume->config, cfg))
      throw IncompatibleError("resume checkpoint was trained with a different configuration");
    trainer.emplace(cfg, *opts.resume);
  } else {
    trainer.emplace(cfg);
  }

  TrainResult result;
  const auto start = std::chrono::steady_clock::now();
  while (trainer->epochs_completed() < cfg.epochs) {
    const double train_loss = trainer->run_epoch(train_set);
    const std::uint64_t epoch = trainer->epochs_completed();
    if (epoch % cfg.log_every == 0 || epoch == cfg.epochs) {
      LossLogRow row{epoch, train_loss, std::nullopt,
                     std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()};
      if (!test_set.empty()) row.test_loss = evaluate(trainer->model(), test_set, cfg.reduction).mean_loss;
      result.log.push_back(row);
      if (opts.on_log) opts.on_log(row);
    }
    if (opts.checkpoint_path && cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0)
      save_checkpoint(*opts.checkpoint_path, trainer->checkpoint());
  }
  result.checkpoint = trainer->checkpoint();
  if (opts.checkpoint_path) save_checkpoint(*opts.checkpoint_path, result.checkpoint);
  return result;
}

inline void write_loss_log_header(std::ostream& os) { os << "epoch,train_loss,test_loss,wall_seconds\n"; }

inline void write_loss_log_row(std::ostream& os, const LossLogRow& row) {
  os << row.epoch << ',' << std::setprecision(17) << row.train_loss << ',';
  if (row.test_loss) os << *row.test_loss;
  os << ',' << std::setprecision(6) << row.wall_seconds << '\n';
}

struct CrossValidation {
  std::vector<double> fold_losses;
  std::vector<std::vector<std::string>> validation_ids;
  double mean = 0.0;
};

/// k-fold cross-validation. Each fold starts from `warm` (or a fresh model
/// from cfg.seed), trains epochs_per_fold epochs on the fold's training part
/// and reports the mean loss on its validation part.
inline CrossValidation cross_validate(const Dataset& ds, std::size_t k,
                                      const std::optional<Checkpoint>& warm,
                                      std::uint64_t epochs_per_fold, const TrainConfig& cfg) {
  validate(cfg);
  const auto folds = kfold(ds, k, cfg.seed);
  CrossValidation cv;
  for (const auto& fold : folds) {
    Trainer trainer = warm ? Trainer(cfg, *warm) : Trainer(cfg);
    for (std::uint64_t e = 0; e < epochs_per_fold; ++e) trainer.run_epoch(fold.train);
    cv.fold_losses.push_back(evaluate(trainer.model(), fold.validation, cfg.reduction).mean_loss);
    cv.validation_ids.push_back(fold.validation.ids());
  }
  double sum = 0.0;
  for (double l : cv.fold_losses) sum += l;
  cv.mean = sum / static_cast<double>(cv.fold_losses.size());
  return cv;
}

struct Prediction {
  Tensor probability;  // (1, 1, 101, 101)
  GrayImage mask;      // 0 / 255
};

inline Prediction predict(const Model& model, const GrayImage& image) {
  if (image.width != kNativeSize || image.height != kNativeSize)
    throw DimensionError("input image is " + std::to_string(image.width) + "x" +
                         std::to_string(image.height) + ", expected 101x101");
  const Sample sample{image_to_tensor(image), Tensor({1, kNativeSize, kNativeSize}), "input"};
  Prediction p{sigmoid(model.infer(prepare_input(sample))), {}};
  p.mask.width = p.mask.height = kNativeSize;
  p.mask.pixels.resize(p.probability.size());
  for (std::size_t i = 0; i < p.probability.size(); ++i)
    p.mask.pixels[i] = threshold(p.probability[i]) ? 255 : 0;
  return p;
}

/// Writes the probability map: CSV rows at full precision for a .csv path,
/// otherwise an 8-bit image.
inline void write_probability_map(const std::filesystem::path& path, const Tensor& probability) {
  std::string ext = path.extension().string();
  if (ext == ".csv") {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    const std::size_t h = probability.dim(probability.rank() - 2), w = probability.dim(probability.rank() - 1);
    out << std::setprecision(17);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out << probability[y * w + x] << (x + 1 == w ? '\n' : ',');
    return;
  }
  write_image(path, tensor_to_image(probability));
}

inline Prediction predict(const Checkpoint& ckpt, const std::filesystem::path& image_file,
                          const std::filesystem::path& out_mask_file,
                          const std::optional<std::filesystem::path>& out_prob_file = std::nullopt) {
  const Model model = model_from_checkpoint(ckpt);
  Prediction p = predict(model, read_image(image_file));
  write_image(out_mask_file, p.mask);
  if (out_prob_file) write_probability_map(*out_prob_file, p.probability);
  return p;
}

}  // namespace saltseg
