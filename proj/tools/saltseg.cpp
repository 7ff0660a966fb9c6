// saltseg: train, evaluate and apply the seismic salt segmentation network.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric error,
// 4 checkpoint incompatibility.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "saltseg.hpp"

namespace fs = std::filesystem;
using namespace saltseg;

namespace {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3, kCheckpoint = 4 };

void add_train_flags(CLI::App* cmd, TrainConfig& cfg) {
  cmd->add_option("--batch", cfg.batch_size, "Mini-batch size")->capture_default_str();
  cmd->add_option("--lr", cfg.lr_scale, "Scale applied to each ADADELTA update")->capture_default_str();
  cmd->add_option("--rho", cfg.rho, "ADADELTA decay")->capture_default_str();
  cmd->add_option("--eps", cfg.eps, "ADADELTA epsilon")->capture_default_str();
  cmd->add_option("--seed", cfg.seed, "Seed for initialisation, splits and shuffling")->capture_default_str();
  cmd->add_flag("--faithful-table1", cfg.faithful_table1,
                "Keep the ReLU on the last convolution (all outputs become >= 0.5)");
  cmd->add_option("--reduction", cfg.reduction, "Loss normalisation")
      ->transform(CLI::CheckedTransformer(
          std::map<std::string, Reduction>{{"mean", Reduction::all_elements}, {"sample", Reduction::per_sample}}))
      ->default_str("mean");
}

int cmd_train(const fs::path& data, TrainConfig cfg, const fs::path& out, const std::optional<fs::path>& log,
              const std::optional<fs::path>& resume) {
  const Dataset ds = load_dataset(data);
  TrainOptions opts;
  opts.checkpoint_path = out;
  if (resume) opts.resume = load_checkpoint(*resume, spec_hash(canonical_spec(cfg.faithful_table1)));
  std::ofstream log_file;
  if (log) {
    const bool append = resume && fs::exists(*log);
    log_file.open(*log, append ? std::ios::app : std::ios::trunc);
    if (!log_file) throw DataError("cannot write " + log->string());
    if (!append) write_loss_log_header(log_file);
  }
  opts.on_log = [&](const LossLogRow& row) {
    if (log_file.is_open()) {
      write_loss_log_row(log_file, row);
      log_file.flush();
    }
    std::cerr << "epoch " << row.epoch << " train_loss " << row.train_loss;
    if (row.test_loss) std::cerr << " test_loss " << *row.test_loss;
    std::cerr << '\n';
  };
  train(ds, cfg, opts);
  return kOk;
}

int cmd_predict(const fs::path& ckpt_path, const fs::path& image, const fs::path& out,
                const std::optional<fs::path>& prob) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  predict(ckpt, image, out, prob);
  return kOk;
}

int cmd_eval(const fs::path& ckpt_path, const fs::path& data) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const Metrics m = evaluate(ckpt, load_dataset(data));
  std::printf("mean_loss %.17g\npixel_accuracy %.17g\niou %.17g\n", m.mean_loss, m.pixel_accuracy, m.iou);
  return kOk;
}

int cmd_cv(const fs::path& data, std::size_t k, const std::optional<fs::path>& warm_path,
           std::uint64_t epochs_per_fold, const TrainConfig& cfg) {
  const Dataset ds = load_dataset(data);
  std::optional<Checkpoint> warm;
  if (warm_path) warm = load_checkpoint(*warm_path);
  const auto cv = cross_validate(ds, k, warm, epochs_per_fold, cfg);
  for (std::size_t i = 0; i < cv.fold_losses.size(); ++i)
    std::printf("fold %zu loss %.17g\n", i + 1, cv.fold_losses[i]);
  std::printf("mean %.17g\n", cv.mean);
  return kOk;
}

int cmd_synth(std::size_t n, std::uint64_t seed, const fs::path& out, ImageFormat format) {
  save_dataset(synth_generate(n, seed), out, format);
  return kOk;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t cases) {
  bool ok = true;
  for (const auto& r : run_gradient_suite(seed, cases)) {
    std::printf("%-24s cases %3zu  max_rel_error %.3e  %s\n", r.name.c_str(), r.cases, r.max_rel_error,
                r.passed() ? "PASS" : "FAIL");
    ok = ok && r.passed();
  }
  return ok ? kOk : kNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Convolutional auto-encoder for seismic salt segmentation"};
  app.require_subcommand(1);

  TrainConfig train_cfg;
  train_cfg.epochs = 0;
  fs::path train_data, train_out;
  std::optional<fs::path> train_log, train_resume;
  auto* train_cmd = app.add_subcommand("train", "Train from <DIR>/images and <DIR>/masks");
  train_cmd->add_option("--data", train_data, "Dataset root")->required();
  train_cmd->add_option("--epochs", train_cfg.epochs, "Total epochs to complete")->required();
  train_cmd->add_option("--out", train_out, "Checkpoint path")->required();
  train_cmd->add_option("--log", train_log, "Loss log CSV");
  train_cmd->add_option("--resume", train_resume, "Continue from this checkpoint");
  train_cmd->add_option("--train-fraction", train_cfg.train_fraction, "Training share; 1 disables the held-out split")
      ->capture_default_str();
  train_cmd->add_option("--log-every", train_cfg.log_every, "Epochs between log rows")->capture_default_str();
  train_cmd->add_option("--checkpoint-every", train_cfg.checkpoint_every, "Epochs between saves (0: final only)")
      ->capture_default_str();
  add_train_flags(train_cmd, train_cfg);

  fs::path pred_ckpt, pred_image, pred_out;
  std::optional<fs::path> pred_prob;
  auto* pred_cmd = app.add_subcommand("predict", "Write a 0/255 salt mask for one 101x101 image");
  pred_cmd->add_option("--ckpt", pred_ckpt)->required();
  pred_cmd->add_option("--image", pred_image)->required();
  pred_cmd->add_option("--out", pred_out, "Mask file (.pgm or .png)")->required();
  pred_cmd->add_option("--prob", pred_prob, "Probability map (.csv, .pgm or .png)");

  fs::path eval_ckpt, eval_data;
  auto* eval_cmd = app.add_subcommand("eval", "Loss, pixel accuracy and IoU over a dataset");
  eval_cmd->add_option("--ckpt", eval_ckpt)->required();
  eval_cmd->add_option("--data", eval_data)->required();

  TrainConfig cv_cfg;
  fs::path cv_data;
  std::size_t cv_k = 10;
  std::optional<fs::path> cv_warm;
  std::uint64_t cv_epochs = 0;
  auto* cv_cmd = app.add_subcommand("cv", "k-fold cross-validation");
  cv_cmd->add_option("--data", cv_data)->required();
  cv_cmd->add_option("--k", cv_k)->capture_default_str();
  cv_cmd->add_option("--warm", cv_warm, "Start every fold from this checkpoint");
  cv_cmd->add_option("--epochs-per-fold", cv_epochs)->required();
  add_train_flags(cv_cmd, cv_cfg);

  std::size_t synth_n = 0;
  std::uint64_t synth_seed = 0;
  fs::path synth_out;
  ImageFormat synth_format = ImageFormat::pgm;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth_cmd->add_option("--n", synth_n)->required()->check(CLI::PositiveNumber);
  synth_cmd->add_option("--seed", synth_seed)->capture_default_str();
  synth_cmd->add_option("--out", synth_out)->required();
  synth_cmd->add_option("--format", synth_format)
      ->transform(CLI::CheckedTransformer(
          std::map<std::string, ImageFormat>{{"pgm", ImageFormat::pgm}, {"png", ImageFormat::png}}))
      ->default_str("pgm");

  std::uint64_t gc_seed = 2024;
  std::size_t gc_cases = 20;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every backward pass");
  gc_cmd->add_option("--seed", gc_seed)->capture_default_str();
  gc_cmd->add_option("--cases", gc_cases, "Random shapes per kernel")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*train_cmd) return cmd_train(train_data, train_cfg, train_out, train_log, train_resume);
    if (*pred_cmd) return cmd_predict(pred_ckpt, pred_image, pred_out, pred_prob);
    if (*eval_cmd) return cmd_eval(eval_ckpt, eval_data);
    if (*cv_cmd) return cmd_cv(cv_data, cv_k, cv_warm, cv_epochs, cv_cfg);
    if (*synth_cmd) return cmd_synth(synth_n, synth_seed, synth_out, synth_format);
    if (*gc_cmd) return cmd_gradcheck(gc_seed, gc_cases);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << '\n';
    return kCheckpoint;
  } catch (const Error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
