#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stpatch/dataset.hpp"
#include "stpatch/model.hpp"

namespace stpatch {

struct TrainConfig {
  // data source: a dataset directory, or the synthetic generator when empty
  std::string dataset_dir;
  SynthSpec synth;

  // patch geometry
  int capacity = 2;
  int leaves_per_patch = 1;

  // model dimensions
  int input_dim = 32;
  int week_dim = 16;
  int day_dim = 16;
  int spatial_dim = 16;
  int heads = 4;
  int layers = 5;
  int history_len = 12;
  int horizon = 12;

  // optimizer protocol
  double lr = 0.002;
  double weight_decay = 0.0001;
  int epochs = 50;
  int batch_size = 8;
  std::vector<int> lr_milestones = {2, 35, 40};
  std::uint64_t seed = 1;
  bool grad_clip = false;
  double clip_norm = 5.0;

  // toggles
  bool residual = true;
  bool layernorm = true;
  bool normalize = true;
  EncoderMode encoder_mode = EncoderMode::kDual;
  PadMode pad_mode = PadMode::kSimilarity;
  bool use_tree = true;

  int threads = 1;          // >1 parallelizes batch samples; reduction stays ordered
  bool log_timing = true;   // when off, the seconds column logs as 0
  std::string out_dir = "out";

  ModelConfig model_config() const;
};

// key=value per line; '#' comments. Unknown keys are an error.
TrainConfig parse_train_config(const std::string& path);
void apply_config_line(TrainConfig& cfg, const std::string& key, const std::string& value);

// base_lr halved cumulatively at the start of each 1-based milestone epoch.
double lr_schedule(int epoch, double base_lr, const std::vector<int>& milestones);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_mae = 0.0;
  double val_rmse = 0.0;
  std::optional<double> val_mape;
  double seconds = 0.0;
  double lr = 0.0;
};

struct TrainLog {
  std::vector<EpochLog> rows;
  void write_csv(const std::string& path) const;
};

struct TrainResult {
  TrainLog log;
  std::string checkpoint_path;
  int best_epoch = 0;       // 0 when epochs == 0
  double best_val_mae = 0.0;
};

RawDataset open_dataset(const TrainConfig& cfg);

// Full protocol: build layout from the training split, iterate shuffled
// batches with AdamW on the L1 loss, log per-epoch validation metrics, and
// keep the checkpoint with the best validation average MAE (earlier epoch on
// ties).
TrainResult train(const TrainConfig& cfg);

MetricReport evaluate_model(const ForecastModel& model, const RawDataset& ds,
                            const SliceRange& range, int threads = 1);
MetricReport evaluate_checkpoint(const std::string& checkpoint_path, const RawDataset& ds,
                                 const SliceRange& range, int threads = 1);

}  // namespace stpatch
