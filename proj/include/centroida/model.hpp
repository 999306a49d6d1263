#pragma once

// Reference network: input -> [ReLU hidden] -> linear bottleneck (features) -> linear
// classifier (logits), with exact backward pass, momentum SGD and checkpoints.

#include "centroida/core.hpp"

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace centroida {

struct MlpShape {
  int input = 2;
  int hidden = 64;  // 0 drops the hidden layer: features = bottleneck(input)
  int bottleneck = 32;
  int classes = 2;
};

struct NamedTensor {
  std::string name;
  Matrix value;
};

using ParamList = std::vector<NamedTensor>;
using GradList = std::vector<Matrix>;

class ReferenceMLP {
 public:
  struct Forward {
    Matrix input;
    Matrix hidden_pre;  // empty without a hidden layer
    Matrix hidden;
    Matrix features;
    Matrix logits;
  };

  /// All parameters zero.
  explicit ReferenceMLP(const MlpShape& shape) : shape_(shape) {
    if (shape.input < 1 || shape.hidden < 0 || shape.bottleneck < 1 || shape.classes < 1)
      throw InvalidSpec("invalid network shape");
    auto add = [&](std::string name, int rows, int cols) { params_.push_back({std::move(name), Matrix::Zero(rows, cols)}); };
    if (has_hidden()) {
      add("hidden.weight", shape.hidden, shape.input);
      add("hidden.bias", 1, shape.hidden);
    }
    add("bottleneck.weight", shape.bottleneck, has_hidden() ? shape.hidden : shape.input);
    add("bottleneck.bias", 1, shape.bottleneck);
    add("classifier.weight", shape.classes, shape.bottleneck);
    add("classifier.bias", 1, shape.classes);
  }

  /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases alike.
  ReferenceMLP(const MlpShape& shape, std::uint64_t seed) : ReferenceMLP(shape) {
    std::mt19937_64 rng(seed);
    for (std::size_t t = 0; t < params_.size(); t += 2) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(params_[t].value.cols()));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (auto* m : {&params_[t].value, &params_[t + 1].value})
        for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = u(rng);
    }
  }

  const MlpShape& shape() const { return shape_; }
  bool has_hidden() const { return shape_.hidden > 0; }
  ParamList& parameters() { return params_; }
  const ParamList& parameters() const { return params_; }

  Matrix& param(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return p.value;
    throw InvalidInput("no parameter named " + name);
  }

  Forward forward(const Matrix& x) const {
    if (x.cols() != shape_.input)
      throw InvalidInput("input width " + std::to_string(x.cols()) + " != model input " + std::to_string(shape_.input));
    for (const auto& p : params_)
      if (!p.value.allFinite()) throw NumericError("non-finite values in parameter " + p.name);
    Forward f;
    f.input = x;
    std::size_t t = 0;
    const Matrix* in = &f.input;
    if (has_hidden()) {
      f.hidden_pre = affine(*in, params_[0].value, params_[1].value);
      f.hidden = f.hidden_pre.cwiseMax(0.0);
      in = &f.hidden;
      t = 2;
    }
    f.features = affine(*in, params_[t].value, params_[t + 1].value);
    f.logits = affine(f.features, params_[t + 2].value, params_[t + 3].value);
    return f;
  }

  Matrix features(const Matrix& x) const { return forward(x).features; }
  Matrix logits(const Matrix& x) const { return forward(x).logits; }

  /// Parameter gradients given upstream dL/dfeatures (gradient that bypasses the
  /// classifier) and dL/dlogits. Either may be empty.
  GradList backward(const Forward& f, const Matrix& d_features, const Matrix& d_logits) const {
    GradList g;
    for (const auto& p : params_) g.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    const std::size_t t = has_hidden() ? 2 : 0;
    Matrix d_feat = d_features.size() ? d_features : Matrix::Zero(f.features.rows(), f.features.cols());
    if (d_logits.size()) {
      g[t + 2] = d_logits.transpose() * f.features;
      g[t + 3] = d_logits.colwise().sum();
      d_feat += d_logits * params_[t + 2].value;
    }
    const Matrix& bottleneck_in = has_hidden() ? f.hidden : f.input;
    g[t] = d_feat.transpose() * bottleneck_in;
    g[t + 1] = d_feat.colwise().sum();
    if (has_hidden()) {
      Matrix d_hidden = d_feat * params_[t].value;
      d_hidden.array() *= (f.hidden_pre.array() > 0.0).cast<double>();
      g[0] = d_hidden.transpose() * f.input;
      g[1] = d_hidden.colwise().sum();
    }
    return g;
  }

 private:
  static Matrix affine(const Matrix& x, const Matrix& w, const Matrix& b) {
    Matrix y = x * w.transpose();
    y.rowwise() += b.row(0);
    return y;
  }

  MlpShape shape_;
  ParamList params_;
};

inline void accumulate(GradList& into, const GradList& add) {
  if (into.empty()) {
    into = add;
    return;
  }
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += add[i];
}

/// v <- momentum * v + g;  theta <- theta - lr * v
class SgdMomentum {
 public:
  explicit SgdMomentum(double momentum = 0.9) : momentum_(momentum) {}

  double momentum() const { return momentum_; }
  const std::vector<Matrix>& velocity() const { return velocity_; }

  void step(ParamList& params, const GradList& grads, double lr) {
    if (!(lr > 0.0)) throw InvalidSpec("learning rate must be positive");
    if (grads.size() != params.size()) throw InvalidInput("gradient list does not match parameters");
    for (std::size_t i = 0; i < grads.size(); ++i) {
      if (!grads[i].allFinite()) throw TrainingAbort("non-finite gradient in parameter " + params[i].name);
    }
    if (velocity_.empty())
      for (const auto& p : params) velocity_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    for (std::size_t i = 0; i < grads.size(); ++i) {
      velocity_[i] = momentum_ * velocity_[i] + grads[i];
      params[i].value -= lr * velocity_[i];
    }
  }

 private:
  double momentum_;
  std::vector<Matrix> velocity_;
};

/// lr0 / (1 + 10 alpha)^0.75, alpha the fraction of training completed.
inline double lr_schedule(double alpha, double lr0) { return lr0 / std::pow(1.0 + 10.0 * alpha, 0.75); }

// ---------------------------------------------------------------------------
// Checkpoints: {"shape": {...}, "tensors": [{"name", "rows", "cols", "data": [...]}]}.
// Doubles are written in shortest round-trip form, so reload is bit-exact.

inline nlohmann::json model_to_json(const ReferenceMLP& m) {
  nlohmann::json j;
  const auto& s = m.shape();
  j["shape"] = {{"input", s.input}, {"hidden", s.hidden}, {"bottleneck", s.bottleneck}, {"classes", s.classes}};
  j["tensors"] = nlohmann::json::array();
  for (const auto& p : m.parameters()) {
    std::vector<double> data(p.value.data(), p.value.data() + p.value.size());
    j["tensors"].push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}, {"data", data}});
  }
  return j;
}

inline ReferenceMLP model_from_json(const nlohmann::json& j) {
  try {
    const auto& s = j.at("shape");
    ReferenceMLP m(MlpShape{s.at("input").get<int>(), s.at("hidden").get<int>(), s.at("bottleneck").get<int>(),
                            s.at("classes").get<int>()});
    const auto& tensors = j.at("tensors");
    if (tensors.size() != m.parameters().size()) throw InvalidInput("checkpoint tensor count mismatch");
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      auto& p = m.parameters()[i];
      const auto& t = tensors[i];
      if (t.at("name").get<std::string>() != p.name || t.at("rows").get<Eigen::Index>() != p.value.rows() ||
          t.at("cols").get<Eigen::Index>() != p.value.cols())
        throw InvalidInput("checkpoint tensor " + std::to_string(i) + " does not match " + p.name);
      const auto data = t.at("data").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(data.size()) != p.value.size())
        throw InvalidInput("checkpoint tensor " + p.name + " has wrong element count");
      std::copy(data.begin(), data.end(), p.value.data());
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const std::string& path, const ReferenceMLP& m) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write checkpoint: " + path);
  out << model_to_json(m).dump() << '\n';
}

inline ReferenceMLP load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open checkpoint: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed checkpoint: ") + e.what());
  }
  return model_from_json(j);
}

}  // namespace centroida
