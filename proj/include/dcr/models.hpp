#ifndef DCR_MODELS_HPP
#define DCR_MODELS_HPP

// Embedding net, regression head and annotator classifier as plain MLPs.
//
//   embedder   : x (N x D) -> z (N x d)
//   head       : z         -> y (N x 1), linear output
//   classifier : z         -> p (N x K), softmax over annotators

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dcr/autodiff.hpp"
#include "dcr/random.hpp"
#include "dcr/tensor.hpp"
#include "json.hpp"

namespace dcr {

enum class Activation { kLinear, kRelu, kTanh };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::kLinear: return "linear";
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
  }
  return "linear";
}

inline Activation parse_activation(const std::string& tag) {
  if (tag == "linear") return Activation::kLinear;
  if (tag == "relu") return Activation::kRelu;
  if (tag == "tanh") return Activation::kTanh;
  throw std::invalid_argument("unknown activation '" + tag + "'");
}

/// Layer widths (input first) and one activation per layer.
struct MlpSpec {
  std::vector<std::size_t> widths;
  std::vector<Activation> activations;

  std::size_t input_width() const { return widths.front(); }
  std::size_t output_width() const { return widths.back(); }
  std::size_t layer_count() const { return widths.size() - 1; }

  void validate(const std::string& name) const {
    if (widths.size() < 2) throw std::invalid_argument(name + ": needs at least one layer");
    for (std::size_t w : widths) {
      if (w == 0) throw std::invalid_argument(name + ": layer widths must be >= 1");
    }
    if (activations.size() != layer_count()) {
      throw std::invalid_argument(name + ": expected " + std::to_string(layer_count()) +
                                  " activations, got " + std::to_string(activations.size()));
    }
  }

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

struct DenseLayer {
  Tensor weight;  // fan_in x fan_out
  Tensor bias;    // 1 x fan_out

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct Mlp {
  MlpSpec spec;
  std::vector<DenseLayer> layers;

  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> out;
    for (auto& l : layers) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    return out;
  }

  std::vector<const Tensor*> parameters() const {
    std::vector<const Tensor*> out;
    for (const auto& l : layers) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    return out;
  }

  friend bool operator==(const Mlp&, const Mlp&) = default;
};

/// f_theta (embedder), g_phi (head) and h_psi (classifier).
struct DcrModel {
  Mlp embedder;
  Mlp head;
  Mlp classifier;

  std::size_t input_width() const { return embedder.spec.input_width(); }
  std::size_t embedding_dim() const { return embedder.spec.output_width(); }
  std::size_t annotator_count() const { return classifier.spec.output_width(); }

  bool all_finite() const {
    for (const Mlp* m : {&embedder, &head, &classifier}) {
      for (const Tensor* t : m->parameters()) {
        if (!t->all_finite()) return false;
      }
    }
    return true;
  }

  friend bool operator==(const DcrModel&, const DcrModel&) = default;
};

struct ModelSpecs {
  MlpSpec embedder;
  MlpSpec head;
  MlpSpec classifier;
};

/// Default desk-scale architecture: 16->64->32 embedder, 32->1 head,
/// 32->K classifier, relu hidden units and linear outputs.
inline ModelSpecs default_specs(std::size_t input_width, std::size_t annotators,
                                std::size_t hidden = 64, std::size_t embedding = 32) {
  return ModelSpecs{
      MlpSpec{{input_width, hidden, embedding}, {Activation::kRelu, Activation::kLinear}},
      MlpSpec{{embedding, 1}, {Activation::kLinear}},
      MlpSpec{{embedding, annotators}, {Activation::kLinear}},
  };
}

namespace detail {

inline Mlp init_mlp(const MlpSpec& spec, Rng& rng) {
  Mlp mlp{spec, {}};
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const std::size_t fan_in = spec.widths[l];
    const std::size_t fan_out = spec.widths[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    DenseLayer layer{Tensor(fan_in, fan_out), Tensor(1, fan_out)};
    for (double& w : layer.weight.values()) w = rng.uniform(-bound, bound);
    mlp.layers.push_back(std::move(layer));
  }
  return mlp;
}

}  // namespace detail

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases.
inline DcrModel init_model(const ModelSpecs& specs, std::uint64_t seed) {
  specs.embedder.validate("embedder");
  specs.head.validate("head");
  specs.classifier.validate("classifier");
  const std::size_t d = specs.embedder.output_width();
  if (specs.head.input_width() != d || specs.classifier.input_width() != d) {
    throw std::invalid_argument("init_model: embedder output width " + std::to_string(d) +
                                " must equal head input " +
                                std::to_string(specs.head.input_width()) +
                                " and classifier input " +
                                std::to_string(specs.classifier.input_width()));
  }
  if (specs.head.output_width() != 1) {
    throw std::invalid_argument("init_model: regression head must have output width 1");
  }
  Rng rng(seed);
  DcrModel model;
  model.embedder = detail::init_mlp(specs.embedder, rng);
  model.head = detail::init_mlp(specs.head, rng);
  model.classifier = detail::init_mlp(specs.classifier, rng);
  return model;
}

// ---------------------------------------------------------------------------
// Graph binding and forward passes

/// An Mlp whose parameters live on a graph, either as trainable parameters
/// or as frozen constants.
struct BoundMlp {
  const MlpSpec* spec = nullptr;
  std::vector<ad::Var> params;  // weight0, bias0, weight1, bias1, ...
  bool trainable = false;
};

inline BoundMlp bind(ad::Graph& graph, const Mlp& mlp, bool trainable) {
  BoundMlp bound{&mlp.spec, {}, trainable};
  for (const Tensor* t : mlp.parameters()) {
    bound.params.push_back(trainable ? graph.parameter(*t) : graph.constant(*t));
  }
  return bound;
}

inline ad::Var forward(const BoundMlp& mlp, ad::Var input, const std::string& name) {
  if (input.shape().cols != mlp.spec->input_width()) {
    throw ShapeError(name + ": input width " + std::to_string(input.shape().cols) +
                     " does not match expected " + std::to_string(mlp.spec->input_width()));
  }
  ad::Var h = input;
  for (std::size_t l = 0; l < mlp.spec->layer_count(); ++l) {
    h = ad::add(ad::matmul(h, mlp.params[2 * l]), mlp.params[2 * l + 1]);
    switch (mlp.spec->activations[l]) {
      case Activation::kRelu: h = ad::relu(h); break;
      case Activation::kTanh: h = ad::tanh(h); break;
      case Activation::kLinear: break;
    }
  }
  return h;
}

/// Gradients of a bound MLP after backward(), in parameter order; empty
/// when the MLP was bound frozen.
inline std::vector<Tensor> gradients(const ad::Graph& graph, const BoundMlp& mlp) {
  std::vector<Tensor> out;
  if (!mlp.trainable) return out;
  out.reserve(mlp.params.size());
  for (ad::Var p : mlp.params) out.push_back(graph.grad(p));
  return out;
}

/// Which of the three sub-networks receive gradients.
struct Trainable {
  bool embedder = true;
  bool head = true;
  bool classifier = true;
};

struct BoundModel {
  BoundMlp embedder;
  BoundMlp head;
  BoundMlp classifier;
};

inline BoundModel bind(ad::Graph& graph, const DcrModel& model, Trainable trainable = {}) {
  return BoundModel{bind(graph, model.embedder, trainable.embedder),
                    bind(graph, model.head, trainable.head),
                    bind(graph, model.classifier, trainable.classifier)};
}

/// z = f_theta(x), N x d.
inline ad::Var embed(const BoundModel& model, ad::Var batch) {
  return forward(model.embedder, batch, "embed");
}

/// y = g_phi(z), N x 1.
inline ad::Var predict_score(const BoundModel& model, ad::Var z) {
  return forward(model.head, z, "predict_score");
}

/// p = softmax(h_psi(z)), N x K; rows sum to one.
inline ad::Var classify_annotator(const BoundModel& model, ad::Var z) {
  return ad::softmax_rows(forward(model.classifier, z, "classify_annotator"));
}

/// Inference-only prediction for a feature matrix.
inline std::vector<double> predict(const DcrModel& model, const Tensor& features) {
  ad::Graph graph;
  const BoundModel bound = bind(graph, model, Trainable{false, false, false});
  const ad::Var y = predict_score(bound, embed(bound, graph.constant(features)));
  const auto v = y.value().values();
  return {v.begin(), v.end()};
}

// ---------------------------------------------------------------------------
// Checkpoints (JSON, format version 1)

inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline nlohmann::json tensor_to_json(const Tensor& t) {
  const auto v = t.values();
  return {{"rows", t.rows()}, {"cols", t.cols()}, {"data", std::vector<double>(v.begin(), v.end())}};
}

inline Tensor tensor_from_json(const nlohmann::json& j) {
  return Tensor(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                j.at("data").get<std::vector<double>>());
}

inline nlohmann::json mlp_to_json(const Mlp& mlp) {
  nlohmann::json acts = nlohmann::json::array();
  for (Activation a : mlp.spec.activations) acts.push_back(to_string(a));
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : mlp.layers) {
    layers.push_back({{"weight", tensor_to_json(l.weight)}, {"bias", tensor_to_json(l.bias)}});
  }
  return {{"widths", mlp.spec.widths}, {"activations", acts}, {"layers", layers}};
}

inline Mlp mlp_from_json(const nlohmann::json& j, const std::string& name) {
  Mlp mlp;
  mlp.spec.widths = j.at("widths").get<std::vector<std::size_t>>();
  for (const auto& a : j.at("activations")) mlp.spec.activations.push_back(parse_activation(a));
  mlp.spec.validate(name);
  const auto& layers = j.at("layers");
  if (layers.size() != mlp.spec.layer_count()) {
    throw std::invalid_argument(name + ": layer count does not match widths");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    DenseLayer layer{tensor_from_json(layers[l].at("weight")), tensor_from_json(layers[l].at("bias"))};
    if (layer.weight.shape() != Shape{mlp.spec.widths[l], mlp.spec.widths[l + 1]} ||
        layer.bias.shape() != Shape{1, mlp.spec.widths[l + 1]}) {
      throw ShapeError(name + ": layer " + std::to_string(l) + " parameter shape mismatch");
    }
    mlp.layers.push_back(std::move(layer));
  }
  return mlp;
}

}  // namespace detail

inline nlohmann::json model_to_json(const DcrModel& model) {
  return {{"format", "dcr-checkpoint"},
          {"version", kCheckpointVersion},
          {"embedder", detail::mlp_to_json(model.embedder)},
          {"head", detail::mlp_to_json(model.head)},
          {"classifier", detail::mlp_to_json(model.classifier)}};
}

inline DcrModel model_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "dcr-checkpoint") {
    throw std::invalid_argument("checkpoint: not a dcr-checkpoint document");
  }
  if (j.at("version").get<int>() != kCheckpointVersion) {
    throw std::invalid_argument("checkpoint: unsupported version " + j.at("version").dump());
  }
  DcrModel model{detail::mlp_from_json(j.at("embedder"), "embedder"),
                 detail::mlp_from_json(j.at("head"), "head"),
                 detail::mlp_from_json(j.at("classifier"), "classifier")};
  if (!model.all_finite()) throw DomainError("checkpoint: non-finite parameter");
  return model;
}

inline void save_checkpoint(const DcrModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << model_to_json(model).dump() << '\n';
}

inline DcrModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  return model_from_json(nlohmann::json::parse(in));
}

}  // namespace dcr

#endif  // DCR_MODELS_HPP
