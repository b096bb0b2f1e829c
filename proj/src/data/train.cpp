#include "gsal/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "gsal/errors.hpp"
#include "json.hpp"

namespace gsal {

void TrainConfig::validate() const {
  if (epochs == 0 || batch_size == 0 || !(learning_rate > 0.0) || !(momentum > 0.0)) {
    throw ArgumentError("train config needs positive epochs, batch size, learning rate and momentum");
  }
}

namespace {

Tensor gather_batch(const Dataset& ds, std::span<const std::size_t> order, std::size_t begin, std::size_t end,
                    std::vector<std::size_t>& labels) {
  const Shape in = ds.input_shape();
  const std::size_t d = shape_size(in);
  Shape shape{end - begin};
  shape.insert(shape.end(), in.begin(), in.end());
  std::vector<double> data(shape_size(shape));
  labels.clear();
  for (std::size_t i = begin; i < end; ++i) {
    const Image& img = ds.images[order[i]];
    std::copy(img.pixels.begin(), img.pixels.end(), data.begin() + static_cast<std::ptrdiff_t>((i - begin) * d));
    labels.push_back(ds.labels[order[i]]);
  }
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace

Model train(const Dataset& ds, const TrainConfig& cfg, std::optional<std::vector<LayerSpec>> layers) {
  cfg.validate();
  if (ds.size() == 0) throw ArgumentError("cannot train on an empty dataset");
  ds.validate();
  const Shape in = ds.input_shape();
  Model model = Model::initialize(in, ds.class_count, layers ? *layers : default_cnn(in, ds.class_count), cfg.seed);

  std::vector<Tensor> params = model.parameters();
  std::vector<Tensor> velocity;
  for (const auto& p : params) velocity.emplace_back(p.shape(), 0.0);

  // Separate stream from initialization so batch order and weights are independent.
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::size_t> labels;
  double epoch_loss = 0.0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      Tensor batch = gather_batch(ds, order, begin, end, labels);
      const Model current = model.with_parameters(params, model.metadata());
      ParamGrads grads = parameter_gradients(current, batch, labels);
      if (!std::isfinite(grads.loss)) throw TrainingFailure("training loss diverged", epoch);
      total += grads.loss * static_cast<double>(end - begin);
      for (std::size_t p = 0; p < params.size(); ++p) {
        auto v = velocity[p].data();
        auto g = grads.grads[p].data();
        auto w = params[p].data();
        for (std::size_t i = 0; i < w.size(); ++i) {
          v[i] = cfg.momentum * v[i] + g[i];
          w[i] -= cfg.learning_rate * v[i];
        }
      }
    }
    epoch_loss = total / static_cast<double>(order.size());
    if (!std::isfinite(epoch_loss)) throw TrainingFailure("training loss diverged", epoch);
  }

  TrainingMetadata meta;
  meta.seed = cfg.seed;
  meta.epochs = cfg.epochs;
  meta.dataset_fingerprint = ds.fingerprint();
  meta.final_loss = epoch_loss;
  return model.with_parameters(std::move(params), meta);
}

std::vector<std::size_t> predictions(const Model& model, std::span<const Image> images) {
  constexpr std::size_t kChunk = 128;
  std::vector<std::size_t> out;
  out.reserve(images.size());
  for (std::size_t begin = 0; begin < images.size(); begin += kChunk) {
    const std::size_t end = std::min(images.size(), begin + kChunk);
    std::vector<Tensor> xs;
    for (std::size_t i = begin; i < end; ++i) xs.push_back(images[i].to_tensor());
    Tensor probs = forward_batch(model, batch_of(model, xs));
    const std::size_t c = model.class_count();
    for (std::size_t r = 0; r < end - begin; ++r) {
      const double* row = probs.data().data() + r * c;
      out.push_back(static_cast<std::size_t>(std::max_element(row, row + c) - row));
    }
  }
  return out;
}

double accuracy(const Model& model, const Dataset& ds) {
  if (ds.size() == 0) return 0.0;
  const auto pred = predictions(model, ds.images);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == ds.labels[i];
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

void save_model(const Model& model, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = "gsal-model";
  j["version"] = 1;
  j["input_shape"] = model.input_shape();
  j["class_count"] = model.class_count();
  for (const auto& l : model.layers()) {
    j["layers"].push_back({{"kind", to_string(l.kind)}, {"in", l.in}, {"out", l.out}, {"kernel", l.kernel}});
  }
  for (const auto& p : model.parameters()) j["parameters"].push_back({{"shape", p.shape()}, {"data", p.values()}});
  const auto& m = model.metadata();
  j["metadata"] = {{"seed", m.seed},
                   {"epochs", m.epochs},
                   {"dataset_fingerprint", hex64(m.dataset_fingerprint)},
                   {"final_loss", std::isfinite(m.final_loss) ? nlohmann::json(m.final_loss) : nlohmann::json()}};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write model file " + path.string());
  out << j.dump() << '\n';
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open model file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    if (j.at("format") != "gsal-model") throw FormatError("not a model file: " + path.string());
    std::vector<LayerSpec> layers;
    for (const auto& l : j.at("layers")) {
      layers.push_back({layer_kind_from_string(l.at("kind")), l.at("in"), l.at("out"), l.at("kernel")});
    }
    std::vector<Tensor> params;
    for (const auto& p : j.at("parameters")) {
      params.emplace_back(p.at("shape").get<Shape>(), p.at("data").get<std::vector<double>>());
    }
    TrainingMetadata meta;
    const auto& m = j.at("metadata");
    meta.seed = m.at("seed");
    meta.epochs = m.at("epochs");
    meta.dataset_fingerprint = std::stoull(m.at("dataset_fingerprint").get<std::string>(), nullptr, 16);
    if (!m.at("final_loss").is_null()) meta.final_loss = m.at("final_loss");
    return Model(j.at("input_shape").get<Shape>(), j.at("class_count"), std::move(layers), std::move(params), meta);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed model file " + path.string() + ": " + e.what());
  }
}

}  // namespace gsal
