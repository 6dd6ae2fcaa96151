// Copyright 2026 The crbd Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

/// \file
/// Sequential model built from a declarative architecture spec.
///
/// The layer registry f_1..f_m is ordered exactly as the forward composition,
/// and the output of registry entry i is the feature E_i(x). Features can be
/// captured at any entry and gradients can be injected at any entry during
/// backward, which is what the feature-consistency objective needs.

#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "crbd/core/error.hpp"
#include "crbd/core/hash.hpp"
#include "crbd/core/rng.hpp"
#include "crbd/nn/layers.hpp"
#include "crbd/nn/tensor.hpp"

namespace crbd::nn {

/// Bumped whenever layer naming or parameter layout changes; checkpoints
/// written under another version are refused.
inline constexpr std::uint32_t kLayerRegistryVersion = 1;

struct SelectorEntry {
  std::string layer;
  double weight = 1.0;
  friend bool operator==(const SelectorEntry&, const SelectorEntry&) = default;
};

/// Feature layers and their consistency weights (lambda_1, lambda_2, ...).
struct LayerSelector {
  std::vector<SelectorEntry> entries;

  [[nodiscard]] std::vector<std::string> active_layers() const {
    std::vector<std::string> out;
    for (const auto& e : entries)
      if (e.weight > 0.0) out.push_back(e.layer);
    return out;
  }

  void validate() const {
    if (entries.empty()) throw ConfigError("layer selector is empty");
    bool any = false;
    std::set<std::string> seen;
    for (const auto& e : entries) {
      if (!(e.weight >= 0.0)) throw ConfigError("selector weight for '" + e.layer + "' must be >= 0");
      if (!seen.insert(e.layer).second) throw ConfigError("selector lists '" + e.layer + "' twice");
      any = any || e.weight > 0.0;
    }
    if (!any) throw ConfigError("layer selector needs at least one positive weight");
  }

  friend bool operator==(const LayerSelector&, const LayerSelector&) = default;
};

inline void to_json(nlohmann::json& j, const LayerSelector& s) {
  j = nlohmann::json::array();
  for (const auto& e : s.entries) j.push_back({{"layer", e.layer}, {"weight", e.weight}});
}

inline void from_json(const nlohmann::json& j, LayerSelector& s) {
  s.entries.clear();
  for (const auto& e : j) s.entries.push_back({e.at("layer").get<std::string>(), e.at("weight").get<double>()});
}

struct LayerDescriptor {
  int position = 0;  // 1-based index i of f_i
  std::string name;
  std::string type;
  Shape output_shape;
  std::size_t feature_dim = 0;
  std::size_t param_count = 0;
};

template <class T>
class Model {
 public:
  Model() = default;
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  /// Builds a model from an architecture spec. `num_classes` replaces any
  /// `"out": "classes"` placeholder. Parameters are drawn from `seed`.
  static Model from_spec(const nlohmann::json& spec, int num_classes, std::uint64_t seed) {
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    Model m;
    m.spec_ = spec;
    m.num_classes_ = num_classes;
    m.seed_ = seed;
    try {
      m.arch_id_ = spec.at("id").get<std::string>();
      m.input_shape_ = spec.at("input").get<Shape>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("architecture spec: ") + e.what());
    }
    if (m.input_shape_.size() != 3) throw ConfigError("architecture input must be [C,H,W]");
    Shape shape = m.input_shape_;
    std::set<std::string> names;
    for (const auto& lj : spec.at("layers")) {
      auto layer = make_layer(lj, shape, num_classes);
      const std::string name = lj.at("name").get<std::string>();
      if (!names.insert(name).second) throw ConfigError("duplicate layer name '" + name + "'");
      shape = layer->output_shape(shape);
      m.layers_.push_back(Entry{name, std::move(layer), shape});
    }
    if (m.layers_.empty()) throw ConfigError("architecture has no layers");
    if (shape != Shape{num_classes})
      throw ConfigError("final layer produces " + shape_string(shape) + ", expected [" + std::to_string(num_classes) + "]");
    if (spec.contains("default_selector")) m.default_selector_ = spec.at("default_selector").get<LayerSelector>();
    Rng rng(seed);
    for (auto& e : m.layers_) e.layer->init(rng);
    m.acts_.resize(m.layers_.size() + 1);
    return m;
  }

  [[nodiscard]] const std::string& arch_id() const { return arch_id_; }
  [[nodiscard]] int num_classes() const { return num_classes_; }
  [[nodiscard]] const Shape& input_shape() const { return input_shape_; }
  [[nodiscard]] const nlohmann::json& spec() const { return spec_; }
  [[nodiscard]] std::uint64_t init_seed() const { return seed_; }
  [[nodiscard]] const LayerSelector& default_selector() const { return default_selector_; }
  [[nodiscard]] std::size_t layer_count() const { return layers_.size(); }

  [[nodiscard]] int layer_index(const std::string& name) const {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      if (layers_[i].name == name) return static_cast<int>(i);
    throw ConfigError("model '" + arch_id_ + "' has no layer named '" + name + "'");
  }

  [[nodiscard]] Layer<T>& layer(const std::string& name) { return *layers_[layer_index(name)].layer; }

  /// Checks that every selector entry names a registry layer.
  void check_selector(const LayerSelector& sel) const {
    sel.validate();
    for (const auto& e : sel.entries) (void)layer_index(e.layer);
  }

  [[nodiscard]] std::vector<LayerDescriptor> list_feature_layers() {
    std::vector<LayerDescriptor> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      std::size_t count = 0;
      for (auto& [n, p] : layers_[i].layer->named_params()) count += p->value.size();
      out.push_back(LayerDescriptor{static_cast<int>(i + 1), layers_[i].name, layers_[i].layer->type(),
                                    layers_[i].out_shape, shape_size(layers_[i].out_shape), count});
    }
    return out;
  }

  /// Runs f_m o ... o f_1 and keeps every intermediate output for backward().
  const Tensor<T>& forward(const Tensor<T>& x, bool training) {
    if (x.sample_shape() != input_shape_)
      throw ParameterError("model '" + arch_id_ + "' expects input " + shape_string(input_shape_) + ", got " +
                           shape_string(x.sample_shape()));
    acts_.resize(layers_.size() + 1);
    acts_[0] = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].layer->forward(acts_[i], acts_[i + 1], training);
    return acts_.back();
  }

  /// Output of a registry entry from the last forward(), flattened to [N, D].
  [[nodiscard]] Tensor<T> feature(const std::string& name) const {
    Tensor<T> f = acts_.at(static_cast<std::size_t>(layer_index(name)) + 1);
    f.reshape({static_cast<int>(f.sample_size())});
    return f;
  }

  /// Inference-mode features at every selector layer from a single pass.
  std::map<std::string, Tensor<T>> extract_features(const Tensor<T>& x, const LayerSelector& sel) {
    for (const auto& e : sel.entries) (void)layer_index(e.layer);
    forward(x, false);
    std::map<std::string, Tensor<T>> out;
    for (const auto& e : sel.entries) out.emplace(e.layer, feature(e.layer));
    return out;
  }

  /// Backpropagates `grad_logits` plus any gradients injected at feature layers
  /// (keyed by layer name, shaped [N, D]). Parameter gradients accumulate.
  void backward(const Tensor<T>& grad_logits, const std::map<std::string, Tensor<T>>& feature_grads = {},
                Tensor<T>* grad_input = nullptr) {
    if (acts_.size() != layers_.size() + 1 || acts_.back().batch() != grad_logits.batch())
      throw ContractError("backward() without a matching forward()");
    for (const auto& [name, g] : feature_grads) {
      const auto& a = acts_.at(static_cast<std::size_t>(layer_index(name)) + 1);
      if (g.size() != a.size()) throw ContractError("feature gradient for '" + name + "' has wrong size");
    }
    Tensor<T> g = grad_logits;
    Tensor<T> next;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      if (auto it = feature_grads.find(layers_[i].name); it != feature_grads.end()) {
        auto gv = g.values();
        const auto add = it->second.values();
        for (std::size_t k = 0; k < gv.size(); ++k) gv[k] += add[k];
      }
      const bool need_input = i > 0 || grad_input != nullptr;
      layers_[i].layer->backward(acts_[i], acts_[i + 1], g, need_input ? &next : nullptr);
      if (need_input) std::swap(g, next);
    }
    if (grad_input) *grad_input = std::move(g);
  }

  void zero_grad() {
    for (auto& [n, p] : named_params()) p->grad.fill(T(0));
  }

  /// All parameters with model-qualified names ("layer.param").
  std::vector<std::pair<std::string, Param<T>*>> named_params() {
    std::vector<std::pair<std::string, Param<T>*>> out;
    for (auto& e : layers_)
      for (auto& [n, p] : e.layer->named_params()) out.emplace_back(e.name + "." + n, p);
    return out;
  }

  std::vector<NamedBuffer<T>> named_buffers() {
    std::vector<NamedBuffer<T>> out;
    for (auto& e : layers_)
      for (auto& [n, b] : e.layer->buffers()) out.emplace_back(e.name + "." + n, b);
    return out;
  }

  [[nodiscard]] std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto& [name, p] : named_params()) n += p->value.size();
    return n;
  }

  /// Hash over every parameter and buffer value.
  [[nodiscard]] std::string checksum() {
    Fnv1a h;
    for (auto& [n, p] : named_params()) {
      h.update(n);
      h.update_values(p->value.values());
    }
    for (auto& [n, b] : named_buffers()) {
      h.update(n);
      h.update_values(b->values());
    }
    return h.hex();
  }

  /// Same architecture and state in another scalar type.
  template <class U>
  [[nodiscard]] Model<U> cast() {
    Model<U> out = Model<U>::from_spec(spec_, num_classes_, seed_);
    auto src = named_params();
    auto dst = out.named_params();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i].second->value = src[i].second->value.template cast<U>();
    auto sb = named_buffers();
    auto db = out.named_buffers();
    for (std::size_t i = 0; i < sb.size(); ++i) *db[i].second = sb[i].second->template cast<U>();
    return out;
  }

  [[nodiscard]] Model clone() { return cast<T>(); }

 private:
  struct Entry {
    std::string name;
    std::unique_ptr<Layer<T>> layer;
    Shape out_shape;
  };

  static int int_field(const nlohmann::json& j, const char* key, int fallback, int num_classes) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (v.is_string()) {
      if (v.get<std::string>() == "classes") return num_classes;
      throw ConfigError(std::string("field '") + key + "' must be an integer or \"classes\"");
    }
    return v.get<int>();
  }

  static std::unique_ptr<Layer<T>> make_layer(const nlohmann::json& lj, const Shape& in, int num_classes) {
    static const std::set<std::string> known = {"name", "type", "out", "kernel", "stride", "pad", "bias", "mean", "std"};
    for (const auto& [k, v] : lj.items())
      if (!known.contains(k)) throw ConfigError("unknown layer field '" + k + "'");
    const std::string type = lj.at("type").get<std::string>();
    const int in_c = in.empty() ? 0 : in[0];
    if (type == "normalize")
      return std::make_unique<Normalize<T>>(lj.at("mean").get<std::vector<double>>(),
                                            lj.at("std").get<std::vector<double>>());
    if (type == "conv")
      return std::make_unique<Conv2d<T>>(in_c, int_field(lj, "out", 0, num_classes), int_field(lj, "kernel", 3, 0),
                                         int_field(lj, "stride", 1, 0), int_field(lj, "pad", 0, 0),
                                         lj.value("bias", true));
    if (type == "bn") return std::make_unique<BatchNorm2d<T>>(in_c);
    if (type == "relu") return std::make_unique<ReLU<T>>();
    if (type == "maxpool")
      return std::make_unique<MaxPool2d<T>>(int_field(lj, "kernel", 2, 0), int_field(lj, "stride", 2, 0));
    if (type == "avgpool") return std::make_unique<GlobalAvgPool<T>>();
    if (type == "flatten") return std::make_unique<Flatten<T>>();
    if (type == "linear")
      return std::make_unique<Linear<T>>(static_cast<int>(shape_size(in)), int_field(lj, "out", 0, num_classes));
    if (type == "basicblock")
      return std::make_unique<BasicBlock<T>>(in_c, int_field(lj, "out", 0, num_classes), int_field(lj, "stride", 1, 0));
    throw ConfigError("unknown layer type '" + type + "'");
  }

  std::string arch_id_;
  nlohmann::json spec_;
  int num_classes_ = 0;
  std::uint64_t seed_ = 0;
  Shape input_shape_;
  LayerSelector default_selector_;
  std::vector<Entry> layers_;
  std::vector<Tensor<T>> acts_;
};

// Checkpoint layout: "CRBDCKPT" | u32 registry version | u64 header size |
// JSON header | raw little-endian tensor data in header order.

template <class T>
void save_checkpoint(Model<T>& model, const std::filesystem::path& path, const nlohmann::json& meta = {}) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  nlohmann::json header;
  header["arch_id"] = model.arch_id();
  header["arch_spec"] = model.spec();
  header["num_classes"] = model.num_classes();
  header["init_seed"] = model.init_seed();
  header["registry_version"] = kLayerRegistryVersion;
  header["scalar_bytes"] = sizeof(T);
  header["checksum"] = model.checksum();
  header["meta"] = meta;
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& d : model.list_feature_layers()) layers.push_back(d.name);
  header["layers"] = layers;
  nlohmann::json tensors = nlohmann::json::array();
  std::vector<const Tensor<T>*> order;
  for (auto& [n, p] : model.named_params()) {
    tensors.push_back({{"name", n}, {"size", p->value.size()}});
    order.push_back(&p->value);
  }
  for (auto& [n, b] : model.named_buffers()) {
    tensors.push_back({{"name", n}, {"size", b->size()}});
    order.push_back(b);
  }
  header["tensors"] = tensors;
  const std::string hs = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write("CRBDCKPT", 8);
  const std::uint32_t version = kLayerRegistryVersion;
  const std::uint64_t hlen = hs.size();
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto* t : order)
    out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(T)));
  if (!out) throw IoError("short write on checkpoint " + path.string());
}

/// Reads only the JSON header of a checkpoint.
inline nlohmann::json read_checkpoint_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "CRBDCKPT", 8) != 0) throw IoError(path.string() + " is not a crbd checkpoint");
  std::uint32_t version = 0;
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
  if (!in || hlen > (1u << 26)) throw IoError("corrupt checkpoint header in " + path.string());
  if (version != kLayerRegistryVersion)
    throw ConfigError("checkpoint " + path.string() + " uses layer registry v" + std::to_string(version) +
                      ", this build expects v" + std::to_string(kLayerRegistryVersion));
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw IoError("truncated checkpoint " + path.string());
  auto header = nlohmann::json::parse(hs);
  header["_data_offset"] = 8 + sizeof version + sizeof hlen + hlen;
  return header;
}

template <class T>
Model<T> load_checkpoint(const std::filesystem::path& path) {
  const auto header = read_checkpoint_header(path);
  if (header.at("registry_version").get<std::uint32_t>() != kLayerRegistryVersion)
    throw ConfigError("checkpoint registry version mismatch");
  auto model = Model<T>::from_spec(header.at("arch_spec"), header.at("num_classes").get<int>(),
                                   header.at("init_seed").get<std::uint64_t>());
  std::vector<std::string> names;
  for (const auto& d : model.list_feature_layers()) names.push_back(d.name);
  if (names != header.at("layers").get<std::vector<std::string>>())
    throw ConfigError("checkpoint layer registry does not match architecture '" + model.arch_id() + "'");

  std::ifstream in(path, std::ios::binary);
  in.seekg(static_cast<std::streamoff>(header.at("_data_offset").get<std::uint64_t>()));
  const auto scalar_bytes = header.at("scalar_bytes").get<std::size_t>();
  std::vector<Tensor<T>*> order;
  for (auto& [n, p] : model.named_params()) order.push_back(&p->value);
  for (auto& [n, b] : model.named_buffers()) order.push_back(b);
  const auto& tensors = header.at("tensors");
  if (tensors.size() != order.size()) throw ConfigError("checkpoint tensor count mismatch");
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (tensors[i].at("size").get<std::size_t>() != order[i]->size())
      throw ConfigError("checkpoint tensor '" + tensors[i].at("name").get<std::string>() + "' has wrong size");
    auto vals = order[i]->values();
    if (scalar_bytes == sizeof(float)) {
      std::vector<float> buf(vals.size());
      in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
      std::transform(buf.begin(), buf.end(), vals.begin(), [](float v) { return static_cast<T>(v); });
    } else if (scalar_bytes == sizeof(double)) {
      std::vector<double> buf(vals.size());
      in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(double)));
      std::transform(buf.begin(), buf.end(), vals.begin(), [](double v) { return static_cast<T>(v); });
    } else {
      throw IoError("unsupported checkpoint scalar size");
    }
  }
  if (!in) throw IoError("truncated checkpoint data in " + path.string());
  return model;
}

}  // namespace crbd::nn
