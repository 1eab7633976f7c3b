#include "stpatch/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace stpatch {

ModelConfig TrainConfig::model_config() const {
  ModelConfig m;
  m.embedding.history_len = history_len;
  m.embedding.input_dim = input_dim;
  m.embedding.week_dim = week_dim;
  m.embedding.day_dim = day_dim;
  m.embedding.spatial_dim = spatial_dim;
  m.encoder.layers = layers;
  m.encoder.heads = heads;
  m.encoder.residual = residual;
  m.encoder.layernorm = layernorm;
  m.encoder.mode = encoder_mode;
  m.horizon = horizon;
  m.capacity = capacity;
  m.leaves_per_patch = leaves_per_patch;
  m.pad_mode = pad_mode;
  m.use_tree = use_tree;
  m.normalize = normalize;
  return m;
}

namespace {

std::vector<int> parse_int_list(const std::string& value) {
  std::vector<int> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw std::invalid_argument("expected boolean, got '" + v + "'");
}

}  // namespace

void apply_config_line(TrainConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "dataset_dir") cfg.dataset_dir = value;
  else if (key == "synth_seed") cfg.synth.seed = std::stoull(value);
  else if (key == "synth_points") cfg.synth.point_count = std::stoi(value);
  else if (key == "synth_days") cfg.synth.days = std::stoi(value);
  else if (key == "synth_slice_minutes") cfg.synth.slice_minutes = std::stoi(value);
  else if (key == "synth_k_neighbors") cfg.synth.k_neighbors = std::stoi(value);
  else if (key == "synth_diffusion") cfg.synth.diffusion = std::stod(value);
  else if (key == "synth_noise") cfg.synth.noise = std::stod(value);
  else if (key == "capacity") cfg.capacity = std::stoi(value);
  else if (key == "leaves_per_patch") cfg.leaves_per_patch = std::stoi(value);
  else if (key == "input_dim") cfg.input_dim = std::stoi(value);
  else if (key == "week_dim") cfg.week_dim = std::stoi(value);
  else if (key == "day_dim") cfg.day_dim = std::stoi(value);
  else if (key == "spatial_dim") cfg.spatial_dim = std::stoi(value);
  else if (key == "heads") cfg.heads = std::stoi(value);
  else if (key == "layers") cfg.layers = std::stoi(value);
  else if (key == "history_len") cfg.history_len = std::stoi(value);
  else if (key == "horizon") cfg.horizon = std::stoi(value);
  else if (key == "lr") cfg.lr = std::stod(value);
  else if (key == "weight_decay") cfg.weight_decay = std::stod(value);
  else if (key == "epochs") cfg.epochs = std::stoi(value);
  else if (key == "batch_size") cfg.batch_size = std::stoi(value);
  else if (key == "lr_milestones") cfg.lr_milestones = parse_int_list(value);
  else if (key == "seed") cfg.seed = std::stoull(value);
  else if (key == "grad_clip") cfg.grad_clip = parse_bool(value);
  else if (key == "clip_norm") cfg.clip_norm = std::stod(value);
  else if (key == "residual") cfg.residual = parse_bool(value);
  else if (key == "layernorm") cfg.layernorm = parse_bool(value);
  else if (key == "normalize") cfg.normalize = parse_bool(value);
  else if (key == "encoder") {
    if (value == "dual") cfg.encoder_mode = EncoderMode::kDual;
    else if (value == "depth_only") cfg.encoder_mode = EncoderMode::kDepthOnly;
    else if (value == "breadth_only") cfg.encoder_mode = EncoderMode::kBreadthOnly;
    else if (value == "none") cfg.encoder_mode = EncoderMode::kNone;
    else throw std::invalid_argument("unknown encoder mode '" + value + "'");
  } else if (key == "padding") {
    if (value == "similarity") cfg.pad_mode = PadMode::kSimilarity;
    else if (value == "distance") cfg.pad_mode = PadMode::kDistance;
    else if (value == "zero") cfg.pad_mode = PadMode::kZero;
    else throw std::invalid_argument("unknown padding mode '" + value + "'");
  } else if (key == "use_tree") cfg.use_tree = parse_bool(value);
  else if (key == "threads") cfg.threads = std::stoi(value);
  else if (key == "log_timing") cfg.log_timing = parse_bool(value);
  else if (key == "out_dir") cfg.out_dir = value;
  else throw std::invalid_argument("unknown config key '" + key + "'");
}

TrainConfig parse_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  TrainConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\r')) line.pop_back();
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  " is not key=value: '" + line + "'");
    }
    apply_config_line(cfg, line.substr(0, eq), line.substr(eq + 1));
  }
  return cfg;
}

double lr_schedule(int epoch, double base_lr, const std::vector<int>& milestones) {
  if (epoch < 1) throw std::invalid_argument("epochs are 1-based");
  double lr = base_lr;
  for (int m : milestones) {
    if (m <= epoch) lr *= 0.5;
  }
  return lr;
}

void TrainLog::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out.precision(17);
  out << "epoch,train_loss,val_mae,val_rmse,val_mape,seconds,lr\n";
  for (const auto& r : rows) {
    out << r.epoch << "," << r.train_loss << "," << r.val_mae << "," << r.val_rmse << ",";
    if (r.val_mape) out << *r.val_mape;
    out << "," << r.seconds << "," << r.lr << "\n";
  }
}

RawDataset open_dataset(const TrainConfig& cfg) {
  if (!cfg.dataset_dir.empty()) return load_dataset(cfg.dataset_dir);
  return synth_generate(cfg.synth);
}

namespace {

struct SampleGrads {
  double loss = 0.0;
  std::vector<std::pair<std::string, Tensor>> grads;
};

SampleGrads run_sample(const ForecastModel& model, const RawDataset& ds, const WindowRef& w) {
  Tape tape;
  std::vector<std::pair<std::string, NodePtr>> leaves;
  auto pred = model.forward(tape, window_history(ds, w), window_last_timestamp(ds, w), &leaves);
  auto loss = tape.l1_loss(pred, model.normalized_target(window_future(ds, w)));
  tape.backward(loss);
  SampleGrads out;
  out.loss = loss->value(0);
  out.grads.reserve(leaves.size());
  for (auto& [name, node] : leaves) {
    if (node->has_grad()) out.grads.emplace_back(name, std::move(node->grad));
  }
  return out;
}

// Runs fn(i) for i in [0, count) over the requested threads.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunks = std::size_t(threads);
  for (std::size_t t = 0; t < chunks; ++t) {
    const std::size_t lo = count * t / chunks;
    const std::size_t hi = count * (t + 1) / chunks;
    if (lo == hi) continue;
    pool.emplace_back([lo, hi, &fn] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace

MetricReport evaluate_model(const ForecastModel& model, const RawDataset& ds,
                            const SliceRange& range, int threads) {
  const auto refs = windows(range, model.config().embedding.history_len, model.config().horizon);
  if (refs.empty()) throw std::invalid_argument("split too short to evaluate");
  std::vector<Tensor> preds(refs.size());
  parallel_for(refs.size(), threads, [&](std::size_t i) {
    preds[i] = model.predict(window_history(ds, refs[i]), window_last_timestamp(ds, refs[i]));
  });
  MetricAccumulator acc(model.config().horizon);
  for (std::size_t i = 0; i < refs.size(); ++i) acc.add(preds[i], window_future(ds, refs[i]));
  return make_report(acc);
}

MetricReport evaluate_checkpoint(const std::string& checkpoint_path, const RawDataset& ds,
                                 const SliceRange& range, int threads) {
  const ForecastModel model = ForecastModel::from_checkpoint(checkpoint_path, ds);
  return evaluate_model(model, ds, range, threads);
}

TrainResult train(const TrainConfig& cfg) {
  namespace fs = std::filesystem;
  tune_allocator_for_tensors();
  const RawDataset ds = open_dataset(cfg);
  const SplitRanges splits = chronological_split(ds);

  ForecastModel model(cfg.model_config(), ds, cfg.seed);

  fs::create_directories(cfg.out_dir);
  const std::string checkpoint_path = (fs::path(cfg.out_dir) / "checkpoint.pstg").string();

  TrainResult result;
  result.checkpoint_path = checkpoint_path;

  const auto train_windows = windows(splits.train, cfg.history_len, cfg.horizon);
  if (train_windows.empty() && cfg.epochs > 0) {
    throw std::invalid_argument("training split yields no windows");
  }

  if (cfg.epochs == 0) {
    model.save_checkpoint(checkpoint_path);
    TrainLog empty;
    empty.write_csv((fs::path(cfg.out_dir) / "trainlog.csv").string());
    result.log = empty;
    return result;
  }

  std::mt19937_64 shuffle_rng(cfg.seed + 1);
  AdamWConfig opt;
  opt.weight_decay = cfg.weight_decay;

  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_schedule(epoch, cfg.lr, cfg.lr_milestones);
    opt.lr = lr;

    // seeded permutation of the training windows
    std::vector<std::size_t> order(train_windows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = std::size_t(uniform01(shuffle_rng) * double(i));
      std::swap(order[i - 1], order[j]);
    }

    double epoch_loss = 0.0;
    std::size_t batch_count = 0;
    for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + std::size_t(cfg.batch_size));
      const std::size_t batch_n = end - start;

      std::vector<SampleGrads> samples(batch_n);
      parallel_for(batch_n, cfg.threads, [&](std::size_t i) {
        samples[i] = run_sample(model, ds, train_windows[order[start + i]]);
      });

      // ordered reduction keeps parallel runs bit-identical to serial ones
      std::map<std::string, Tensor> grads;
      double batch_loss = 0.0;
      for (std::size_t i = 0; i < batch_n; ++i) {
        batch_loss += samples[i].loss;
        for (auto& [name, g] : samples[i].grads) {
          auto it = grads.find(name);
          if (it == grads.end()) {
            grads.emplace(name, std::move(g));
          } else {
            for (std::size_t v = 0; v < g.numel(); ++v) it->second(v) += g(v);
          }
        }
      }
      batch_loss /= double(batch_n);
      if (!std::isfinite(batch_loss)) {
        throw std::runtime_error("training diverged: non-finite loss at epoch " +
                                 std::to_string(epoch) + ", batch " +
                                 std::to_string(batch_count));
      }
      const double inv_n = 1.0 / double(batch_n);
      for (auto& [name, g] : grads) {
        (void)name;
        for (std::size_t v = 0; v < g.numel(); ++v) g(v) *= inv_n;
      }
      if (cfg.grad_clip) {
        double sq = 0.0;
        for (const auto& [name, g] : grads) {
          (void)name;
          for (std::size_t v = 0; v < g.numel(); ++v) sq += g(v) * g(v);
        }
        const double norm = std::sqrt(sq);
        if (norm > cfg.clip_norm) {
          const double s = cfg.clip_norm / norm;
          for (auto& [name, g] : grads) {
            (void)name;
            for (std::size_t v = 0; v < g.numel(); ++v) g(v) *= s;
          }
        }
      }
      model.params().adamw_step(grads, opt);
      epoch_loss += batch_loss;
      ++batch_count;
    }

    // a validation split too short for a single window degenerates to
    // keeping the latest checkpoint
    const bool have_val = !windows(splits.val, cfg.history_len, cfg.horizon).empty();
    MetricReport val{};
    if (have_val) val = evaluate_model(model, ds, splits.val, cfg.threads);
    const auto t1 = std::chrono::steady_clock::now();

    EpochLog row;
    row.epoch = epoch;
    row.train_loss = epoch_loss / double(batch_count);
    row.val_mae = have_val ? val.average.mae : std::numeric_limits<double>::quiet_NaN();
    row.val_rmse = have_val ? val.average.rmse : std::numeric_limits<double>::quiet_NaN();
    row.val_mape = have_val ? val.average.mape : std::nullopt;
    row.seconds = cfg.log_timing ? std::chrono::duration<double>(t1 - t0).count() : 0.0;
    row.lr = lr;
    result.log.rows.push_back(row);

    if (!have_val || val.average.mae < best_val) {
      best_val = have_val ? val.average.mae : best_val;
      best_epoch = epoch;
      model.save_checkpoint(checkpoint_path);
    }
  }

  result.best_epoch = best_epoch;
  result.best_val_mae = best_val;
  result.log.write_csv((fs::path(cfg.out_dir) / "trainlog.csv").string());
  return result;
}

}  // namespace stpatch
