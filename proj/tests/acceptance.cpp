// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
//
//   acceptance            all criteria
//   acceptance 4 9        only the listed criteria

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "saltseg.hpp"

using namespace saltseg;
using namespace saltseg::testing::oracles;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Collects the failed checks of one criterion.
class Verdict {
 public:
  void check(bool ok, const std::string& what) {
    if (!ok) failures_.push_back(what);
  }
  void note(const std::string& s) { notes_.push_back(s); }
  bool passed() const { return failures_.empty(); }
  std::string summary() const {
    std::string out;
    for (const auto& n : notes_) out += (out.empty() ? "" : "; ") + n;
    for (const auto& f : failures_) out += (out.empty() ? "" : "; ") + ("FAILED " + f);
    return out;
  }

 private:
  std::vector<std::string> failures_, notes_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::vector<std::uint8_t> bytes_of(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class ScratchDir {
 public:
  ScratchDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("saltseg_acceptance_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

// ---------------------------------------------------------------------------

void gradient_suite(Verdict& v) {
  const auto t0 = Clock::now();
  const auto reports = run_gradient_suite(2024, 20);
  const double secs = seconds_since(t0);
  for (const auto& r : reports) {
    v.check(r.cases >= 20 || r.name.find("model") != std::string::npos, r.name + " ran too few cases");
    v.check(r.passed(), r.name + " max_rel_error " + fmt("%.2e", r.max_rel_error));
    if (r.name.find("model") == std::string::npos) v.check(r.tolerance <= 1e-4, r.name + " tolerance too loose");
    v.note(r.name + " " + fmt("%.1e", r.max_rel_error));
  }
  v.check(secs < 60.0, "wall time " + fmt("%.1f s", secs));
  v.note(fmt("%.1f s", secs));
}

void convolution_oracle(Verdict& v) {
  std::mt19937_64 rng(100);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 2, c = 1 + rng() % 3, o = 1 + rng() % 3;
    const std::size_t h = 1 + rng() % 8, w = 1 + rng() % 8;
    const std::size_t k = trial % 4 == 0 ? 1 : 3;
    const Tensor x = random_tensor({n, c, h, w}, rng);
    const ConvKernel kernel{random_tensor({o, c, k, k}, rng), random_tensor({o}, rng)};
    worst = std::max(worst, flip_equivalence_error(x, kernel));
    // The reference itself against the brute-force sum.
    const Tensor f = random_tensor({h, w}, rng), g = random_tensor({3, 3}, rng);
    const Tensor a = conv2d_ref(f, g), b = full_convolution_oracle(f, g);
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  v.check(worst < 1e-12, "max abs error " + fmt("%.2e", worst));
  v.note("100 pairs, max abs error " + fmt("%.1e", worst));
}

void shape_ledger(Verdict& v) {
  Model m = build_model(0);
  std::vector<Dims> trace;
  const Tensor out = m.forward(Tensor({2, 1, 128, 128}), Mode::infer, &trace);
  const std::size_t sizes[] = {128, 64, 64, 32, 32, 16, 16, 8, 8, 4, 8, 8, 16, 16, 32, 32, 64, 64, 128, 128, 101, 101, 101};
  v.check(trace.size() == 23, "trace has " + std::to_string(trace.size()) + " layers");
  for (std::size_t i = 0; i < std::min<std::size_t>(trace.size(), 23); ++i)
    v.check(trace[i].size() == 4 && trace[i][0] == 2 && trace[i][2] == sizes[i] && trace[i][3] == sizes[i],
            "layer " + std::to_string(i + 1) + " is " + dims_to_string(trace[i]));
  v.check(out.dims() == Dims{2, 1, 101, 101}, "output " + dims_to_string(out.dims()));
  v.note("output " + dims_to_string(out.dims()));
}

void overfit(Verdict& v) {
  const auto ds = synth_generate(8, 7);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.lr_scale = 0.01;
  cfg.train_fraction = 1.0;
  cfg.seed = 0;
  Trainer trainer(cfg);
  const auto t0 = Clock::now();
  double loss = 0.0;
  std::uint64_t epoch = 0;
  while (epoch < 2000) {
    loss = trainer.run_epoch(ds);
    ++epoch;
    if (loss < 0.1) break;
  }
  const double secs = seconds_since(t0);
  v.check(loss < 0.1, "training loss " + fmt("%.4f", loss) + " after 2000 epochs");
  v.check(secs < 300.0, "wall time " + fmt("%.1f s", secs));
  v.note("loss " + fmt("%.5f", loss) + " at epoch " + std::to_string(epoch) + ", " + fmt("%.1f s", secs));
}

void trend(Verdict& v) {
  const auto ds = synth_generate(200, 11);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.batch_size = 8;
  cfg.seed = 1;
  const auto t0 = Clock::now();
  const auto [train_set, test_set] = train_test_split(ds, cfg);
  Trainer trainer(cfg);
  std::vector<double> losses;
  for (std::uint64_t e = 0; e < cfg.epochs; ++e) losses.push_back(trainer.run_epoch(train_set));

  std::vector<double> avg;
  for (std::size_t i = 0; i + 20 <= losses.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = i; j < i + 20; ++j) s += losses[j];
    avg.push_back(s / 20.0);
  }
  std::size_t rises = 0;
  double tightest = -INFINITY;
  for (std::size_t i = 1; i < avg.size(); ++i) {
    rises += avg[i] >= avg[i - 1];
    tightest = std::max(tightest, avg[i] - avg[i - 1]);
  }
  v.check(rises == 0, std::to_string(rises) + " non-decreasing steps in the moving average");

  const Metrics m = evaluate(trainer.model(), test_set);
  double salt = 0.0, pixels = 0.0;
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    salt += test_set[i].mask.sum();
    pixels += static_cast<double>(test_set[i].mask.size());
  }
  const double baseline = std::max(salt, pixels - salt) / pixels;
  v.check(m.pixel_accuracy > baseline,
          "test accuracy " + fmt("%.4f", m.pixel_accuracy) + " vs baseline " + fmt("%.4f", baseline));
  const double secs = seconds_since(t0);
  v.check(secs < 1800.0, "wall time " + fmt("%.0f s", secs));
  v.note("loss " + fmt("%.4f", losses.front()) + " -> " + fmt("%.4f", losses.back()) + ", largest average step " +
         fmt("%.2e", tightest) + ", accuracy " +
         fmt("%.4f", m.pixel_accuracy) + " vs " + fmt("%.4f", baseline) + ", iou " + fmt("%.3f", m.iou) + ", " +
         fmt("%.0f s", secs));
}

void loss_identities(Verdict& v) {
  const double at_zero = sigmoid_cross_entropy(0.0, 1.0);
  v.check(std::abs(at_zero - std::numbers::ln2) <= 1e-15, "loss(0,1) = " + fmt("%.17g", at_zero));

  std::mt19937_64 rng(6);
  double worst = 0.0;
  for (int i = 0; i <= 4000; ++i) {
    const double x = i < 2001 ? -30.0 + 60.0 * i / 2000.0 : -30.0 + 60.0 * uniform01(rng);
    for (double z : {0.0, 1.0}) worst = std::max(worst, std::abs(sigmoid_cross_entropy(x, z) - naive_cross_entropy(x, z)));
  }
  v.check(worst < 1e-12, "stable vs naive " + fmt("%.2e", worst));

  double fd = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = random_tensor({2, 1, 4, 4}, rng, -5.0, 5.0);
    Tensor z(x.dims());
    for (auto& t : z.values()) t = static_cast<double>(rng() & 1U);
    auto loss = [&] { return loss_and_grad(x, z).loss.mean_loss; };
    fd = std::max(fd, relative_error(loss_and_grad(x, z).grad_logits, numeric_gradient(loss, x)));
  }
  v.check(fd < 1e-6, "gradient vs finite differences " + fmt("%.2e", fd));
  v.note("naive gap " + fmt("%.1e", worst) + ", gradient " + fmt("%.1e", fd));
}

void protocol(Verdict& v) {
  const auto ds = synth_generate(4000, 5);
  const auto [train, test] = split(ds, {0.8, 0});
  v.check(train.size() == 3200 && test.size() == 800,
          "split " + std::to_string(train.size()) + "/" + std::to_string(test.size()));
  std::set<std::string> ids;
  for (const auto& id : train.ids()) ids.insert(id);
  for (const auto& id : test.ids()) ids.insert(id);
  v.check(ids.size() == 4000, "split is not a partition");

  const auto folds = kfold(ds, 10, 0);
  std::set<std::string> seen;
  bool sizes_ok = folds.size() == 10;
  for (const auto& f : folds) {
    sizes_ok = sizes_ok && f.validation.size() == 400 && f.train.size() == 3600;
    for (const auto& id : f.validation.ids()) seen.insert(id);
  }
  v.check(sizes_ok, "fold sizes");
  v.check(seen.size() == 4000, "folds do not cover the set");

  // Fold losses of a warm checkpoint over all 4000 samples.
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.seed = 2;
  const auto warm = Trainer(cfg).checkpoint();
  const auto cv = cross_validate(ds, 10, warm, 0, cfg);
  double sum = 0.0;
  for (double l : cv.fold_losses) sum += l;
  v.check(cv.fold_losses.size() == 10 && cv.mean == sum / 10.0, "cv mean " + fmt("%.17g", cv.mean));

  // And with training inside each fold.
  const auto small = synth_generate(8, 6);
  const auto cv2 = cross_validate(small, 2, std::nullopt, 10, cfg);
  v.check(cv2.mean == (cv2.fold_losses[0] + cv2.fold_losses[1]) / 2.0, "trained cv mean");
  v.note("3200/800, 10 x 400, cv mean " + fmt("%.6f", cv.mean));
}

void threshold_rule(Verdict& v) {
  v.check(threshold(0.499) == 0, "0.499");
  v.check(threshold(0.5) == 1, "0.5");
  v.check(threshold(0.501) == 1, "0.501");

  TrainConfig cfg;
  cfg.faithful_table1 = true;
  cfg.batch_size = 4;
  cfg.epochs = 3;
  cfg.train_fraction = 1.0;
  std::size_t pixels = 0, salt = 0;
  std::vector<Checkpoint> ckpts;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    cfg.seed = seed;
    ckpts.push_back(Trainer(cfg).checkpoint());
  }
  ckpts.push_back(train(synth_generate(4, 3), cfg).checkpoint);
  for (const auto& ckpt : ckpts) {
    const Model model = model_from_checkpoint(ckpt);
    for (std::size_t i = 0; i < 4; ++i) {
      const auto p = predict(model, tensor_to_image(synth_sample(9, i).sample.image));
      for (auto px : p.mask.pixels) {
        ++pixels;
        salt += px == 255;
      }
    }
  }
  v.check(pixels == salt, std::to_string(pixels - salt) + " background pixels in faithful mode");
  v.note(std::to_string(salt) + "/" + std::to_string(pixels) + " faithful pixels are salt");
}

void determinism(Verdict& v) {
  ScratchDir dir;
  const auto ds = synth_generate(8, 4);
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.seed = 9;
  cfg.epochs = 100;
  cfg.log_every = 50;

  train(ds, cfg, {std::nullopt, dir / "a.ckpt", {}});
  train(ds, cfg, {std::nullopt, dir / "b.ckpt", {}});
  const auto a = bytes_of(dir / "a.ckpt");
  v.check(!a.empty() && a == bytes_of(dir / "b.ckpt"), "identical runs differ");

  auto half = cfg;
  half.epochs = 50;
  train(ds, half, {std::nullopt, dir / "half.ckpt", {}});
  train(ds, cfg, {load_checkpoint(dir / "half.ckpt"), dir / "resumed.ckpt", {}});
  v.check(bytes_of(dir / "resumed.ckpt") == a, "resumed run differs from the uninterrupted run");

  const auto loaded = load_checkpoint(dir / "a.ckpt");
  save_checkpoint(dir / "c.ckpt", loaded);
  v.check(bytes_of(dir / "c.ckpt") == a, "save-load-save changed bytes");

  std::size_t missed = 0, flips = 0;
  for (std::size_t pos = 0; pos < a.size(); pos += 1 + pos % 53) {
    auto bad = a;
    bad[pos] ^= 0x01;
    ++flips;
    try {
      deserialize(bad);
      ++missed;
    } catch (const CheckpointError&) {
    }
  }
  v.check(missed == 0, std::to_string(missed) + " undetected corruptions");
  v.note(std::to_string(a.size()) + " byte checkpoint, " + std::to_string(flips) + " corruptions caught");
}

void adadelta_regression(Verdict& v) {
  const double rho = 0.95, eps = 1e-6, g = 1.0;
  const double closed = -std::sqrt(eps) * g / std::sqrt((1.0 - rho) * g * g + eps);
  Tensor p({1});
  AdadeltaSlot slot{Tensor({1}), Tensor({1})};
  adadelta_step(p, Tensor({1}, {g}), slot, {rho, eps, 1.0});
  v.check(std::abs(p[0] - closed) <= 1e-12, "first step " + fmt("%.17g", p[0]) + " vs " + fmt("%.17g", closed));

  // The default 0.01 scale shrinks the same step a hundredfold.
  Tensor q({1});
  AdadeltaSlot slot2{Tensor({1}), Tensor({1})};
  adadelta_step(q, Tensor({1}, {g}), slot2, AdadeltaConfig{});
  v.check(std::abs(q[0] - 0.01 * closed) <= 1e-14, "scaled first step");

  std::mt19937_64 rng(10);
  std::size_t wrong = 0;
  Tensor params({100000});
  Tensor grads({100000});
  for (auto& x : grads.values()) {
    do x = (uniform01(rng) - 0.5) * std::pow(10.0, -8.0 + 16.0 * uniform01(rng));
    while (x == 0.0);
  }
  AdadeltaSlot state{random_tensor({100000}, rng, 0.0, 1.0), random_tensor({100000}, rng, 0.0, 1e-3)};
  adadelta_step(params, grads, state, AdadeltaConfig{});
  for (std::size_t i = 0; i < params.size(); ++i) wrong += std::signbit(params[i]) == std::signbit(grads[i]);
  v.check(wrong == 0, std::to_string(wrong) + " updates share the gradient's sign");
  v.note("step " + fmt("%.16f", p[0]) + ", 1e5 signs opposed");
}

struct Criterion {
  int id;
  const char* name;
  std::function<void(Verdict&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "gradient suite", gradient_suite},
      {2, "convolution oracle", convolution_oracle},
      {3, "shape ledger", shape_ledger},
      {4, "overfit tiny set", overfit},
      {5, "loss trend", trend},
      {6, "loss identities", loss_identities},
      {7, "split and cross-validation protocol", protocol},
      {8, "threshold boundary", threshold_rule},
      {9, "determinism and persistence", determinism},
      {10, "adadelta regression", adadelta_regression},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    Verdict v;
    try {
      c.run(v);
    } catch (const std::exception& e) {
      v.check(false, std::string("exception: ") + e.what());
    }
    failed += !v.passed();
    std::printf("%s %2d %s: %s\n", v.passed() ? "PASS" : "FAIL", c.id, c.name, v.summary().c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
