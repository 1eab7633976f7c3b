#include "stpatch/cli.hpp"

#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "stpatch/bench.hpp"
#include "stpatch/dataset.hpp"
#include "stpatch/partition_export.hpp"
#include "stpatch/train.hpp"

namespace stpatch {

namespace {

namespace fs = std::filesystem;

int run_partition(const std::string& dataset_dir, int capacity, int leaves_per_patch,
                  int patch_target, const std::string& pad_mode_name, const std::string& out_dir) {
  const RawDataset ds = load_dataset(dataset_dir);
  const std::size_t n = ds.point_count();
  std::vector<GeoPoint> points(n);
  for (std::size_t i = 0; i < n; ++i) points[i] = {int(i), ds.lat[i], ds.lng[i]};

  const LeafKdTree tree = LeafKdTree::build(points, capacity);
  int lpp = leaves_per_patch;
  if (patch_target > 0) {
    if (lpp > 0) throw std::invalid_argument("give either --leaves-per-patch or --patches, not both");
    const std::size_t leaves = tree.leaf_count();
    if (std::size_t(patch_target) > leaves || leaves % std::size_t(patch_target) != 0) {
      throw std::invalid_argument("cannot form " + std::to_string(patch_target) +
                                  " patches from " + std::to_string(leaves) + " leaves");
    }
    lpp = int(leaves) / patch_target;
  }
  if (lpp <= 0) lpp = 1;

  const SplitRanges splits = chronological_split(ds);
  PadAssignments pads;
  if (pad_mode_name == "similarity") {
    pads = pad_assignments(tree, slice_values(ds, splits.train), lpp);
  } else if (pad_mode_name == "distance") {
    pads = pad_assignments_distance(tree, points, lpp);
  } else if (pad_mode_name == "zero") {
    pads = pad_assignments_zero(tree, lpp);
  } else {
    throw std::invalid_argument("unknown padding mode '" + pad_mode_name + "'");
  }
  const PatchLayout layout = assemble_patches(tree, pads, lpp);
  const PartitionReport report = build_partition_report(tree, layout, points);

  fs::create_directories(out_dir);
  write_partition_geojson(report, (fs::path(out_dir) / "partition.geojson").string());
  write_partition_csv(report, (fs::path(out_dir) / "partition.csv").string());

  std::cout << "points " << n << "  leaves " << tree.leaf_count() << "  patches "
            << layout.patch_count << "  patch_size " << layout.patch_size << "  slots "
            << layout.total_slots << "  pads " << report.pad_count << "\n";
  return 0;
}

void print_report(const MetricReport& report) {
  std::cout << "horizon,MAE,RMSE,MAPE(%)\n";
  auto line = [](const char* name, const MetricAccumulator::Row& row) {
    std::cout << name << "," << row.mae << "," << row.rmse << ",";
    if (row.mape) std::cout << *row.mape;
    else std::cout << "n/a";
    std::cout << "\n";
  };
  line("3", report.horizon3);
  line("6", report.horizon6);
  line("12", report.horizon12);
  line("average", report.average);
}

SliceRange pick_split(const SplitRanges& splits, const std::string& name) {
  if (name == "train") return splits.train;
  if (name == "val") return splits.val;
  if (name == "test") return splits.test;
  throw std::invalid_argument("unknown split '" + name + "' (expected train|val|test)");
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  tune_allocator_for_tensors();
  CLI::App app{"patched spatio-temporal traffic forecasting"};
  app.require_subcommand(1);

  // partition
  auto* partition = app.add_subcommand("partition", "build the spatial partition and export it");
  std::string p_dataset, p_out = "out", p_pad = "similarity";
  int p_capacity = 2, p_lpp = 0, p_patches = 0;
  partition->add_option("--dataset", p_dataset, "dataset directory")->required();
  partition->add_option("--capacity", p_capacity, "leaf capacity C");
  partition->add_option("--leaves-per-patch", p_lpp, "leaves merged per patch (power of 2)");
  partition->add_option("--patches", p_patches, "target patch count (alternative)");
  partition->add_option("--padding", p_pad, "similarity|distance|zero");
  partition->add_option("--out", p_out, "output directory");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model");
  std::string t_config, t_out;
  std::vector<std::string> t_sets;
  std::uint64_t t_seed = 0;
  bool t_has_seed = false, t_serial = false;
  int t_threads = 0;
  train_cmd->add_option("--config", t_config, "key=value config file");
  train_cmd->add_option("--seed", t_seed, "seed override")->each([&](const std::string&) {
    t_has_seed = true;
  });
  train_cmd->add_option("--set", t_sets, "extra key=value overrides")->take_all();
  train_cmd->add_option("--out", t_out, "output directory override");
  train_cmd->add_option("--threads", t_threads, "parallel batch samples");
  train_cmd->add_flag("--serial", t_serial, "force serial execution");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string e_checkpoint, e_dataset, e_config, e_split = "test", e_out = "out", e_dump;
  bool e_serial = false;
  int e_threads = 0;
  eval_cmd->add_option("--checkpoint", e_checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--dataset", e_dataset, "dataset directory");
  eval_cmd->add_option("--config", e_config, "config file naming the data source");
  eval_cmd->add_option("--split", e_split, "train|val|test");
  eval_cmd->add_option("--out", e_out, "output directory");
  eval_cmd->add_option("--dump-attention", e_dump, "binary sidecar for attention matrices");
  eval_cmd->add_option("--threads", e_threads, "parallel evaluation");
  eval_cmd->add_flag("--serial", e_serial, "force serial execution");

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "attention complexity benchmark");
  std::vector<int> b_sizes{1024, 2048, 4096};
  int b_dim = 64, b_capacity = 2, b_lpp = 16, b_heads = 1, b_repeats = 3;
  bool b_no_backward = false, b_f32 = false;
  std::uint64_t b_seed = 1;
  std::string b_out = "out";
  bench_cmd->add_option("--sizes", b_sizes, "ascending point counts")->take_all();
  bench_cmd->add_option("--dim", b_dim, "model width d");
  bench_cmd->add_option("--capacity", b_capacity, "leaf capacity C");
  bench_cmd->add_option("--leaves-per-patch", b_lpp, "fixed patch grouping");
  bench_cmd->add_option("--heads", b_heads, "attention heads");
  bench_cmd->add_option("--repeats", b_repeats, "timed repeats (median)");
  bench_cmd->add_flag("--no-backward", b_no_backward, "skip backward timing");
  bench_cmd->add_flag("--f32", b_f32, "single precision");
  bench_cmd->add_option("--seed", b_seed, "rng seed");
  bench_cmd->add_option("--out", b_out, "output directory");

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
  SynthSpec s_spec;
  std::string s_out = "out/synth";
  synth_cmd->add_option("--seed", s_spec.seed, "rng seed");
  synth_cmd->add_option("--points", s_spec.point_count, "sensor count");
  synth_cmd->add_option("--days", s_spec.days, "days of data");
  synth_cmd->add_option("--slice-minutes", s_spec.slice_minutes, "slice length");
  synth_cmd->add_option("--k-neighbors", s_spec.k_neighbors, "diffusion neighborhood");
  synth_cmd->add_option("--diffusion", s_spec.diffusion, "neighbor coupling");
  synth_cmd->add_option("--noise", s_spec.noise, "gaussian noise sigma");
  synth_cmd->add_option("--out", s_out, "dataset directory to write");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (partition->parsed()) {
      return run_partition(p_dataset, p_capacity, p_lpp, p_patches, p_pad, p_out);
    }
    if (train_cmd->parsed()) {
      TrainConfig cfg = t_config.empty() ? TrainConfig{} : parse_train_config(t_config);
      if (t_has_seed) cfg.seed = t_seed;
      for (const auto& kv : t_sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
          throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
        }
        apply_config_line(cfg, kv.substr(0, eq), kv.substr(eq + 1));
      }
      if (!t_out.empty()) cfg.out_dir = t_out;
      if (t_threads > 0) cfg.threads = t_threads;
      if (t_serial) cfg.threads = 1;
      const TrainResult result = train(cfg);
      std::cout << "checkpoint " << result.checkpoint_path;
      if (result.best_epoch > 0) {
        std::cout << "  best_epoch " << result.best_epoch << "  best_val_mae "
                  << result.best_val_mae;
      }
      std::cout << "\n";
      return 0;
    }
    if (eval_cmd->parsed()) {
      RawDataset ds;
      if (!e_dataset.empty()) {
        ds = load_dataset(e_dataset);
      } else if (!e_config.empty()) {
        ds = open_dataset(parse_train_config(e_config));
      } else {
        throw std::invalid_argument("eval needs --dataset or --config");
      }
      const int threads = e_serial ? 1 : std::max(1, e_threads);
      ForecastModel model = ForecastModel::from_checkpoint(e_checkpoint, ds);
      const SplitRanges splits = chronological_split(ds);
      const SliceRange range = pick_split(splits, e_split);

      if (!e_dump.empty()) {
        const auto refs = windows(range, model.config().embedding.history_len,
                                  model.config().horizon);
        if (refs.empty()) throw std::invalid_argument("split too short for attention dump");
        model.set_capture_attention(true);
        (void)model.predict(window_history(ds, refs[0]), window_last_timestamp(ds, refs[0]));
        model.set_capture_attention(false);
        save_tensor_map(e_dump, model.captured_attention());
      }

      const MetricReport report = evaluate_model(model, ds, range, threads);
      print_report(report);
      fs::create_directories(e_out);
      write_metric_csv(report, (fs::path(e_out) / "metrics.csv").string());
      return 0;
    }
    if (bench_cmd->parsed()) {
      BenchConfig cfg;
      cfg.sizes = b_sizes;
      cfg.model_dim = b_dim;
      cfg.capacity = b_capacity;
      cfg.leaves_per_patch = b_lpp;
      cfg.heads = b_heads;
      cfg.repeats = b_repeats;
      cfg.with_backward = !b_no_backward;
      cfg.use_float = b_f32;
      cfg.seed = b_seed;
      const auto rows = run_bench(cfg);
      fs::create_directories(b_out);
      const std::string path = (fs::path(b_out) / "bench.csv").string();
      write_bench_csv(rows, path);
      std::cout << "wrote " << path << "\n";
      for (const auto& r : rows) {
        std::cout << r.variant << " n=" << r.n << " R=" << r.patch_count << " P=" << r.patch_size
                  << " fwd_ms=" << r.forward_ms << " bwd_ms=" << r.backward_ms
                  << " flops=" << r.flops_counted << (r.failed ? " FAILED" : "") << "\n";
      }
      return 0;
    }
    if (synth_cmd->parsed()) {
      const RawDataset ds = synth_generate(s_spec);
      save_dataset(ds, s_out);
      std::cout << "wrote dataset to " << s_out << " (" << ds.total_slices() << " slices x "
                << ds.point_count() << " points)\n";
      return 0;
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace stpatch
