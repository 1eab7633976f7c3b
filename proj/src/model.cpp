#include "stpatch/model.hpp"

#include <cmath>
#include <stdexcept>

#include "stpatch/timeutil.hpp"

namespace stpatch {

Normalization fit_normalization(const Tensor& train_values, bool enabled) {
  Normalization norm;
  norm.enabled = enabled;
  if (!enabled) return norm;
  double sum = 0.0;
  for (std::size_t i = 0; i < train_values.numel(); ++i) sum += train_values(i);
  norm.mean = sum / double(train_values.numel());
  double sq = 0.0;
  for (std::size_t i = 0; i < train_values.numel(); ++i) {
    const double d = train_values(i) - norm.mean;
    sq += d * d;
  }
  norm.std = std::sqrt(sq / double(train_values.numel()));
  if (norm.std < 1e-12) norm.std = 1.0;
  return norm;
}

ForecastModel::ForecastModel(const ModelConfig& cfg, const RawDataset& ds, std::uint64_t seed) {
  cfg_ = cfg;
  cfg_.embedding.point_count = int(ds.point_count());
  cfg_.embedding.day_size = ds.slices_per_day();
  slice_minutes_ = ds.slice_minutes;
  cfg_.encoder.model_dim = cfg_.embedding.model_dim();
  cfg_.encoder.head_dim();  // validates divisibility
  build_layout(ds);
  cfg_.encoder.patch_count = layout_.patch_count;
  cfg_.encoder.patch_size = layout_.patch_size;

  const SplitRanges splits = chronological_split(ds);
  norm_ = fit_normalization(slice_values(ds, splits.train), cfg_.normalize);
  init_params(seed);
}

void ForecastModel::build_layout(const RawDataset& ds) {
  const std::size_t n = ds.point_count();
  if (!cfg_.use_tree) {
    layout_ = sequential_layout(int(n), cfg_.capacity, cfg_.leaves_per_patch);
    return;
  }
  std::vector<GeoPoint> points(n);
  for (std::size_t i = 0; i < n; ++i) {
    points[i] = {int(i), ds.lat[i], ds.lng[i]};
  }
  const LeafKdTree tree = LeafKdTree::build(points, cfg_.capacity);
  const SplitRanges splits = chronological_split(ds);
  PadAssignments pads;
  switch (cfg_.pad_mode) {
    case PadMode::kSimilarity:
      pads = pad_assignments(tree, slice_values(ds, splits.train), cfg_.leaves_per_patch);
      break;
    case PadMode::kDistance:
      pads = pad_assignments_distance(tree, points, cfg_.leaves_per_patch);
      break;
    case PadMode::kZero:
      pads = pad_assignments_zero(tree, cfg_.leaves_per_patch);
      break;
  }
  layout_ = assemble_patches(tree, pads, cfg_.leaves_per_patch);
}

void ForecastModel::init_params(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto& e = cfg_.embedding;
  const int d = cfg_.encoder.model_dim;
  const int dh = cfg_.encoder.head_dim();
  const double attn_bound = std::sqrt(1.0 / double(d));

  auto uniform_param = [&](const std::string& name, std::vector<std::size_t> shape, double bound) {
    params_.add(name, random_uniform<double>(rng, std::move(shape), -bound, bound));
  };

  uniform_param("embed.input_w", {std::size_t(e.input_dim), std::size_t(e.history_len)},
                std::sqrt(1.0 / double(e.history_len)));
  params_.add("embed.input_b", Tensor({std::size_t(e.input_dim)}));
  uniform_param("embed.week", {std::size_t(e.week_size), std::size_t(e.week_dim)},
                std::sqrt(1.0 / double(e.week_dim)));
  uniform_param("embed.day", {std::size_t(e.day_size), std::size_t(e.day_dim)},
                std::sqrt(1.0 / double(e.day_dim)));
  uniform_param("embed.spatial", {std::size_t(e.point_count), std::size_t(e.spatial_dim)},
                std::sqrt(1.0 / double(e.spatial_dim)));

  for (int l = 0; l < cfg_.encoder.layers; ++l) {
    for (const char* block : {"depth", "breadth"}) {
      const std::string prefix = "enc.l" + std::to_string(l) + "." + block + ".";
      for (int h = 0; h < cfg_.encoder.heads; ++h) {
        const std::string hp = prefix + "h" + std::to_string(h) + ".";
        uniform_param(hp + "q", {std::size_t(d), std::size_t(dh)}, attn_bound);
        uniform_param(hp + "k", {std::size_t(d), std::size_t(dh)}, attn_bound);
        uniform_param(hp + "v", {std::size_t(d), std::size_t(dh)}, attn_bound);
      }
      uniform_param(prefix + "out", {std::size_t(d), std::size_t(d)}, attn_bound);
    }
  }

  uniform_param("dec.w", {std::size_t(cfg_.horizon), std::size_t(d)}, attn_bound);
  params_.add("dec.b", Tensor({std::size_t(cfg_.horizon)}));
}

NodePtr ForecastModel::forward(Tape& tape, const Tensor& history, std::int64_t last_timestamp,
                               std::vector<std::pair<std::string, NodePtr>>* leaves) const {
  const auto& e = cfg_.embedding;
  if (history.rank() != 2 || history.dim(0) != std::size_t(e.history_len) ||
      history.dim(1) != std::size_t(e.point_count)) {
    throw std::invalid_argument("history must be [" + std::to_string(e.history_len) + " x " +
                                std::to_string(e.point_count) + "], got " + history.shape_str());
  }

  auto bind = [&](const std::string& name) {
    auto node = tape.leaf(params_.value(name));
    if (leaves) leaves->emplace_back(name, node);
    return node;
  };

  Tensor normalized(history.shape());
  for (std::size_t i = 0; i < history.numel(); ++i) normalized(i) = norm_.fwd(history(i));

  const auto [dow, tod] = temporal_indices(last_timestamp, slice_minutes_, e);
  EmbeddingRefs refs;
  refs.input_w = bind("embed.input_w");
  refs.input_b = bind("embed.input_b");
  refs.week = bind("embed.week");
  refs.day = bind("embed.day");
  refs.spatial = bind("embed.spatial");
  auto embedded = embed(tape, normalized, dow, tod, refs, e);

  auto patched_flat = tape.gather_rows(embedded, layout_.new_order);
  auto patched = tape.reshape(patched_flat, {std::size_t(layout_.patch_count),
                                             std::size_t(layout_.patch_size),
                                             std::size_t(cfg_.encoder.model_dim)});

  std::vector<LayerWeightRefs<double>> layer_refs(std::size_t(cfg_.encoder.layers));
  for (int l = 0; l < cfg_.encoder.layers; ++l) {
    for (const char* block : {"depth", "breadth"}) {
      const std::string prefix = "enc.l" + std::to_string(l) + "." + block + ".";
      AttentionWeightRefs<double>& refs = std::string(block) == "depth"
                                              ? layer_refs[std::size_t(l)].depth
                                              : layer_refs[std::size_t(l)].breadth;
      for (int h = 0; h < cfg_.encoder.heads; ++h) {
        const std::string hp = prefix + "h" + std::to_string(h) + ".";
        refs.query.push_back(bind(hp + "q"));
        refs.key.push_back(bind(hp + "k"));
        refs.value.push_back(bind(hp + "v"));
      }
      refs.output = bind(prefix + "out");
    }
  }

  AttentionCapture<double>* capture = capture_attention_ ? &captured_attention_ : nullptr;
  auto encoded = encode(tape, patched, layer_refs, cfg_.encoder, capture);

  DecoderRefs dec;
  dec.weight = bind("dec.w");
  dec.bias = bind("dec.b");
  return decode(tape, encoded, layout_, dec);  // [N x F], normalized scale
}

Tensor ForecastModel::predict(const Tensor& history, std::int64_t last_timestamp) const {
  Tape tape;
  captured_attention_.clear();
  auto out = forward(tape, history, last_timestamp);
  const auto& e = cfg_.embedding;
  Tensor result({std::size_t(cfg_.horizon), std::size_t(e.point_count)});
  for (int f = 0; f < cfg_.horizon; ++f)
    for (int n = 0; n < e.point_count; ++n)
      result(std::size_t(f), std::size_t(n)) =
          norm_.inv(out->value(std::size_t(n), std::size_t(f)));
  return result;
}

Tensor ForecastModel::normalized_target(const Tensor& future) const {
  const auto& e = cfg_.embedding;
  if (future.rank() != 2 || future.dim(0) != std::size_t(cfg_.horizon) ||
      future.dim(1) != std::size_t(e.point_count)) {
    throw std::invalid_argument("future must be [" + std::to_string(cfg_.horizon) + " x " +
                                std::to_string(e.point_count) + "], got " + future.shape_str());
  }
  Tensor target({std::size_t(e.point_count), std::size_t(cfg_.horizon)});
  for (int f = 0; f < cfg_.horizon; ++f)
    for (int n = 0; n < e.point_count; ++n)
      target(std::size_t(n), std::size_t(f)) = norm_.fwd(future(std::size_t(f), std::size_t(n)));
  return target;
}

std::map<std::string, Tensor> ForecastModel::make_extras() const {
  std::map<std::string, Tensor> extras;
  const auto& e = cfg_.embedding;
  const auto& enc = cfg_.encoder;
  std::vector<double> cfg_vals = {
      double(e.history_len), double(e.input_dim),  double(e.week_dim),
      double(e.day_dim),     double(e.spatial_dim), double(e.week_size),
      double(e.day_size),    double(e.point_count), double(cfg_.horizon),
      double(cfg_.capacity), double(cfg_.leaves_per_patch), double(enc.layers),
      double(enc.heads),     double(enc.residual), double(enc.layernorm),
      double(int(enc.mode)), double(int(cfg_.pad_mode)), double(cfg_.use_tree),
      double(cfg_.normalize), double(slice_minutes_)};
  extras.emplace("cfg", Tensor::from_data({cfg_vals.size()}, cfg_vals));
  extras.emplace("norm", Tensor::from_data({3}, {double(norm_.enabled), norm_.mean, norm_.std}));

  auto int_tensor = [](const std::vector<int>& v) {
    std::vector<double> d(v.begin(), v.end());
    const std::size_t len = d.size();
    return Tensor::from_data({len}, std::move(d));
  };
  extras.emplace("layout.new_order", int_tensor(layout_.new_order));
  extras.emplace("layout.pad_source", int_tensor(layout_.pad_source));
  extras.emplace("layout.slot_of_point", int_tensor(layout_.slot_of_point));
  std::vector<double> padded(layout_.padded.size());
  for (std::size_t i = 0; i < padded.size(); ++i) padded[i] = layout_.padded[i] ? 1.0 : 0.0;
  const std::size_t pad_len = padded.size();
  extras.emplace("layout.padded", Tensor::from_data({pad_len}, std::move(padded)));
  extras.emplace("layout.geometry",
                 Tensor::from_data({4}, {double(layout_.patch_count), double(layout_.patch_size),
                                         double(layout_.capacity), double(layout_.point_count)}));
  return extras;
}

void ForecastModel::save_checkpoint(const std::string& path) const {
  CheckpointIO::save(path, params_, make_extras());
}

ForecastModel ForecastModel::from_checkpoint(const std::string& path, const RawDataset& ds) {
  ForecastModel model;
  std::map<std::string, Tensor> extras;
  CheckpointIO::load(path, model.params_, extras);

  const Tensor& c = extras.at("cfg");
  auto& e = model.cfg_.embedding;
  e.history_len = int(c(0));
  e.input_dim = int(c(1));
  e.week_dim = int(c(2));
  e.day_dim = int(c(3));
  e.spatial_dim = int(c(4));
  e.week_size = int(c(5));
  e.day_size = int(c(6));
  e.point_count = int(c(7));
  model.cfg_.horizon = int(c(8));
  model.cfg_.capacity = int(c(9));
  model.cfg_.leaves_per_patch = int(c(10));
  model.cfg_.encoder.layers = int(c(11));
  model.cfg_.encoder.heads = int(c(12));
  model.cfg_.encoder.residual = c(13) != 0.0;
  model.cfg_.encoder.layernorm = c(14) != 0.0;
  model.cfg_.encoder.mode = EncoderMode(int(c(15)));
  model.cfg_.pad_mode = PadMode(int(c(16)));
  model.cfg_.use_tree = c(17) != 0.0;
  model.cfg_.normalize = c(18) != 0.0;
  model.slice_minutes_ = int(c(19));
  model.cfg_.encoder.model_dim = e.model_dim();

  const Tensor& nrm = extras.at("norm");
  model.norm_.enabled = nrm(0) != 0.0;
  model.norm_.mean = nrm(1);
  model.norm_.std = nrm(2);

  const Tensor& geo = extras.at("layout.geometry");
  auto& layout = model.layout_;
  layout.patch_count = int(geo(0));
  layout.patch_size = int(geo(1));
  layout.capacity = int(geo(2));
  layout.point_count = int(geo(3));
  layout.leaves_per_patch = model.cfg_.leaves_per_patch;
  layout.total_slots = std::size_t(layout.patch_count) * std::size_t(layout.patch_size);
  auto to_ints = [&](const char* key) {
    const Tensor& t = extras.at(key);
    std::vector<int> v(t.numel());
    for (std::size_t i = 0; i < t.numel(); ++i) v[i] = int(t(i));
    return v;
  };
  layout.new_order = to_ints("layout.new_order");
  layout.pad_source = to_ints("layout.pad_source");
  layout.slot_of_point = to_ints("layout.slot_of_point");
  const Tensor& padded = extras.at("layout.padded");
  layout.padded.resize(padded.numel());
  for (std::size_t i = 0; i < padded.numel(); ++i) layout.padded[i] = padded(i) != 0.0;
  layout.validate();

  model.cfg_.encoder.patch_count = layout.patch_count;
  model.cfg_.encoder.patch_size = layout.patch_size;
  model.check_geometry(ds);
  return model;
}

void ForecastModel::check_geometry(const RawDataset& ds) const {
  if (int(ds.point_count()) != cfg_.embedding.point_count) {
    throw std::runtime_error("checkpoint was built for " +
                             std::to_string(cfg_.embedding.point_count) + " points, dataset has " +
                             std::to_string(ds.point_count()));
  }
  if (ds.slice_minutes != slice_minutes_) {
    throw std::runtime_error("checkpoint slice_minutes " + std::to_string(slice_minutes_) +
                             " does not match dataset " + std::to_string(ds.slice_minutes));
  }
}

}  // namespace stpatch
