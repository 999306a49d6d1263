#pragma once

// The training objective (source cross-entropy + lambda * centroid alignment +
// gamma * class-wise alignment) with exact gradients, and the epoch loop around it.

#include "centroida/alignment.hpp"
#include "centroida/calibration.hpp"
#include "centroida/centroids.hpp"
#include "centroida/data.hpp"
#include "centroida/model.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace centroida {

enum class GammaForm { sigmoid_ramp, literal };
enum class Variant { full, rm_resample, rm_loss_c, rm_loss_d, source_only };
enum class CentroidLabelSource { classifier, ground_truth };

inline const char* to_string(GammaForm g) { return g == GammaForm::sigmoid_ramp ? "sigmoid_ramp" : "literal"; }

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::rm_resample: return "rm_resample";
    case Variant::rm_loss_c: return "rm_loss_c";
    case Variant::rm_loss_d: return "rm_loss_d";
    case Variant::source_only: return "source_only";
  }
  return "?";
}

inline const char* to_string(CentroidLabelSource s) {
  return s == CentroidLabelSource::classifier ? "classifier" : "ground_truth";
}

inline Variant parse_variant(std::string_view name) {
  for (auto v : {Variant::full, Variant::rm_resample, Variant::rm_loss_c, Variant::rm_loss_d, Variant::source_only})
    if (name == to_string(v)) return v;
  throw InvalidSpec("unknown variant '" + std::string(name) +
                    "' (expected full, rm_resample, rm_loss_c, rm_loss_d or source_only)");
}

inline GammaForm parse_gamma_form(std::string_view name) {
  if (name == "sigmoid_ramp") return GammaForm::sigmoid_ramp;
  if (name == "literal") return GammaForm::literal;
  throw InvalidSpec("unknown gamma_form '" + std::string(name) + "' (expected sigmoid_ramp or literal)");
}

inline CentroidLabelSource parse_label_source(std::string_view name) {
  if (name == "classifier") return CentroidLabelSource::classifier;
  if (name == "ground_truth") return CentroidLabelSource::ground_truth;
  throw InvalidSpec("unknown source_centroid_labels '" + std::string(name) + "'");
}

/// Weight of the class-wise loss as training progresses, alpha in [0, 1].
/// sigmoid_ramp: 2 / (1 + e^{-10 alpha}) - 1, rising from 0 to ~1.
/// literal:      2 / e^{-10 alpha} - 1 = 2 e^{10 alpha} - 1.
inline double gamma_schedule(double alpha, GammaForm form = GammaForm::sigmoid_ramp) {
  if (form == GammaForm::literal) return 2.0 / std::exp(-10.0 * alpha) - 1.0;
  return 2.0 / (1.0 + std::exp(-10.0 * alpha)) - 1.0;
}

// ---------------------------------------------------------------------------
// Objective

struct ObjectiveOptions {
  double temperature = kDefaultTemperature;
  double ce_weight = 1.0;
  double lambda = 5.0;
  double gamma = 0.0;
  bool centroid_loss = true;
  bool class_wise_loss = true;
  bool use_target = true;
  CentroidLabelSource source_centroid_labels = CentroidLabelSource::classifier;
  bool gradients = true;
};

struct ObjectiveTerms {
  double ce = 0.0;
  double loss_c = 0.0;  // 0 when inactive or disabled
  double loss_d = 0.0;
  double total = 0.0;
  bool centroid_active = false;
  bool class_wise_active = false;
  bool corrected_labels = false;  // false: fell back to classifier argmax for the target
};

struct ObjectiveResult {
  ObjectiveTerms terms;
  CentroidStore source_store;  // stores after this batch's update
  CentroidStore target_store;
  GradList grads;
};

/// Mean cross-entropy of raw logits against labels, and its gradient.
inline double cross_entropy(const Matrix& logits, std::span<const int> labels, Matrix* d_logits) {
  const Eigen::Index b = logits.rows();
  double loss = 0.0;
  if (d_logits) d_logits->resize(b, logits.cols());
  for (Eigen::Index i = 0; i < b; ++i) {
    const double top = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(i).array() - top).exp();
    const double z = e.sum();
    const int y = labels[static_cast<std::size_t>(i)];
    loss += std::log(z) - (logits(i, y) - top);
    if (d_logits) {
      d_logits->row(i) = e / z;
      (*d_logits)(i, y) -= 1.0;
    }
  }
  if (d_logits) *d_logits /= static_cast<double>(b);
  return loss / static_cast<double>(b);
}

/// Evaluates the full objective for one source batch and (optionally) one target batch.
/// The incoming stores are the accumulated state and are treated as constants; the
/// returned stores include this batch. Gradients flow through features and through
/// the P^max / W confidence terms of both domains.
inline ObjectiveResult evaluate_objective(const ReferenceMLP& model, const Matrix& xs, std::span<const int> ys,
                                          const Matrix& xt, const CentroidStore& src_before,
                                          const CentroidStore& tgt_before, const ObjectiveOptions& opt) {
  if (static_cast<Eigen::Index>(ys.size()) != xs.rows()) throw InvalidInput("source batch labels do not match rows");
  ObjectiveResult out;
  auto& t = out.terms;

  const auto fs = model.forward(xs);
  Matrix d_logits_s;
  t.ce = cross_entropy(fs.logits, ys, opt.gradients ? &d_logits_s : nullptr);
  if (opt.gradients) d_logits_s *= opt.ce_weight;
  t.total = opt.ce_weight * t.ce;

  out.source_store = src_before;
  out.target_store = tgt_before;
  if (!opt.use_target || xt.rows() == 0) {
    if (!std::isfinite(t.total)) throw TrainingAbort("non-finite cross-entropy loss");
    if (opt.gradients) out.grads = model.backward(fs, Matrix(), d_logits_s);
    return out;
  }

  const auto ft = model.forward(xt);
  const auto ps = ProbBatch::from_logits(fs.logits, opt.temperature);
  const auto pt = ProbBatch::from_logits(ft.logits, opt.temperature);
  const Labels src_pred = argmax_rows(fs.logits);
  const Labels tgt_pred = argmax_rows(ft.logits);
  const Labels src_centroid_labels =
      opt.source_centroid_labels == CentroidLabelSource::classifier ? src_pred : Labels(ys.begin(), ys.end());

  out.source_store.update(fs.features, ps.max_prob, src_centroid_labels);
  out.target_store.update(ft.features, pt.max_prob, tgt_pred);

  const Eigen::Index bs = xs.rows(), bt = xt.rows(), df = fs.features.cols();
  Matrix d_feat_s = Matrix::Zero(bs, df), d_feat_t = Matrix::Zero(bt, df);
  Vector d_pmax_s = Vector::Zero(bs), d_pmax_t = Vector::Zero(bt);
  Vector d_w_s = Vector::Zero(bs), d_w_t = Vector::Zero(bt);
  bool target_grad = false;

  if (opt.centroid_loss) {
    const auto lc = centroid_alignment_loss(out.source_store, out.target_store);
    t.centroid_active = lc.active;
    t.loss_c = lc.value;
    if (lc.active && opt.gradients && opt.lambda != 0.0) {
      Matrix df_tmp;
      Vector dw_tmp;
      centroid_update_backward(out.source_store, fs.features, ps.max_prob, src_centroid_labels,
                               opt.lambda * lc.d_source, df_tmp, dw_tmp);
      d_feat_s += df_tmp;
      d_pmax_s += dw_tmp;
      centroid_update_backward(out.target_store, ft.features, pt.max_prob, tgt_pred, opt.lambda * lc.d_target,
                               df_tmp, dw_tmp);
      d_feat_t += df_tmp;
      d_pmax_t += dw_tmp;
      target_grad = true;
    }
  }

  if (opt.class_wise_loss) {
    Labels tgt_labels;
    if (out.target_store.any_eligible()) {
      tgt_labels = nearest_centroid_labels(out.target_store, ft.features);
      t.corrected_labels = true;
    } else {
      tgt_labels = tgt_pred;
    }
    const auto assign = make_pair_assignment(fs.features, ft.features, src_pred, tgt_labels, ps.weight, pt.weight);
    const bool grads = opt.gradients && opt.gamma != 0.0;
    const auto ld = grads ? class_wise_loss(fs.features, ft.features, assign) : class_wise_loss(assign);
    t.class_wise_active = ld.active;
    t.loss_d = ld.value;
    if (ld.active && grads) {
      d_feat_s += opt.gamma * ld.d_source_feats;
      d_feat_t += opt.gamma * ld.d_target_feats;
      d_w_s += opt.gamma * ld.d_source_weights;
      d_w_t += opt.gamma * ld.d_target_weights;
      target_grad = true;
    }
  }

  t.total = opt.ce_weight * t.ce + opt.lambda * t.loss_c + opt.gamma * t.loss_d;
  if (!std::isfinite(t.ce)) throw TrainingAbort("non-finite cross-entropy loss");
  if (!std::isfinite(t.loss_c)) throw TrainingAbort("non-finite centroid alignment loss (loss_c)");
  if (!std::isfinite(t.loss_d)) throw TrainingAbort("non-finite class-wise alignment loss (loss_d)");
  if (!std::isfinite(t.total)) throw TrainingAbort("non-finite total loss");

  if (!opt.gradients) return out;
  if (target_grad) {
    d_logits_s += prob_batch_backward(ps, d_pmax_s, d_w_s);
    out.grads = model.backward(fs, d_feat_s, d_logits_s);
    accumulate(out.grads, model.backward(ft, d_feat_t, prob_batch_backward(pt, d_pmax_t, d_w_t)));
  } else {
    out.grads = model.backward(fs, Matrix(), d_logits_s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
  double lambda = 5.0;
  double temperature = kDefaultTemperature;
  GammaForm gamma_form = GammaForm::sigmoid_ramp;
  std::optional<double> fixed_gamma;  // overrides the schedule when set
  std::size_t batch_size = 50;
  int epochs = 50;
  double lr0 = 0.005;
  bool lr_decay = true;
  double momentum = 0.9;
  Variant variant = Variant::full;
  CentroidLabelSource source_centroid_labels = CentroidLabelSource::classifier;
  std::uint64_t seed = 0;
  std::string centroid_dump_dir;  // per-epoch centroid CSVs when non-empty
};

struct LossRecord {
  std::size_t iter = 0;
  double ce = 0.0;
  double loss_c = 0.0;
  double loss_d = 0.0;
  double total = 0.0;
  double lambda = 0.0;  // weights actually applied at this iteration
  double gamma = 0.0;
};

struct TrainState {
  int epoch = 0;  // completed epochs
  std::size_t iteration = 0;  // completed iterations
  std::size_t iterations_per_epoch = 0;
  std::size_t total_iterations = 0;
  double alpha = 0.0;
  ReferenceMLP model;
  SgdMomentum optimizer;
  CentroidStore source_store;
  CentroidStore target_store;
  std::vector<LossRecord> loss_trace;
};

/// splitmix64 over (seed, stream, index) so every sampler gets an independent stream.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1) + 0xBF58476D1CE4E5B9ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline TrainState init_train_state(ReferenceMLP model, const LabeledDataset& src, const TrainConfig& cfg) {
  if (cfg.batch_size < 1) throw InvalidSpec("batch_size must be >= 1");
  if (cfg.epochs < 1) throw InvalidSpec("epochs must be >= 1");
  if (!(cfg.lambda >= 0.0)) throw InvalidSpec("lambda must be >= 0");
  if (!(cfg.temperature > 0.0)) throw InvalidSpec("temperature must be > 0");
  if (model.shape().input != src.dim()) throw InvalidInput("model input width does not match the data");
  if (model.shape().classes != src.num_classes()) throw InvalidInput("model class count does not match the data");
  TrainState s{.model = std::move(model), .optimizer = SgdMomentum(cfg.momentum)};
  s.iterations_per_epoch = (src.size() + cfg.batch_size - 1) / cfg.batch_size;
  s.total_iterations = s.iterations_per_epoch * static_cast<std::size_t>(cfg.epochs);
  const int k = src.num_classes(), df = s.model.shape().bottleneck;
  s.source_store = CentroidStore(k, df, Domain::source);
  s.target_store = CentroidStore(k, df, Domain::target);
  return s;
}

/// Objective switches for one iteration of the configured variant.
inline ObjectiveOptions objective_options(const TrainConfig& cfg, double alpha) {
  ObjectiveOptions o;
  o.temperature = cfg.temperature;
  o.lambda = cfg.lambda;
  o.gamma = cfg.fixed_gamma ? *cfg.fixed_gamma : gamma_schedule(alpha, cfg.gamma_form);
  o.source_centroid_labels = cfg.source_centroid_labels;
  switch (cfg.variant) {
    case Variant::full:
    case Variant::rm_resample: break;
    case Variant::rm_loss_c: o.centroid_loss = false; o.lambda = 0.0; break;
    case Variant::rm_loss_d: o.class_wise_loss = false; o.gamma = 0.0; break;
    case Variant::source_only:
      o.centroid_loss = o.class_wise_loss = o.use_target = false;
      o.lambda = o.gamma = 0.0;
      break;
  }
  return o;
}

/// One epoch: reset both centroid stores, then ceil(N_s / B) iterations of
/// draw -> forward -> update centroids -> losses -> backprop -> SGD step.
/// Only target features are read; target labels never are.
inline void train_epoch(TrainState& s, const LabeledDataset& src, const LabeledDataset& tgt, const TrainConfig& cfg) {
  if (src.domain() != Domain::source || tgt.domain() != Domain::target)
    throw InvalidInput("train_epoch expects a source and a target dataset");
  if (tgt.dim() != src.dim()) throw InvalidInput("source and target feature widths differ");

  s.source_store.reset();
  s.target_store.reset();

  const auto epoch = static_cast<std::uint64_t>(s.epoch);
  std::optional<ClassBalancedSampler> balanced;
  std::optional<UniformSampler> uniform_src;
  if (cfg.variant == Variant::rm_resample)
    uniform_src.emplace(src.size(), cfg.batch_size, derive_seed(cfg.seed, 1, epoch));
  else
    balanced.emplace(src, cfg.batch_size, derive_seed(cfg.seed, 1, epoch));
  UniformSampler tgt_sampler(tgt.size(), cfg.batch_size, derive_seed(cfg.seed, 2, epoch));
  const bool use_target = cfg.variant != Variant::source_only;
  const Labels& src_labels = src.labels();

  for (std::size_t it = 0; it < s.iterations_per_epoch; ++it) {
    s.alpha = s.total_iterations ? static_cast<double>(s.iteration) / static_cast<double>(s.total_iterations) : 0.0;
    const auto src_rows = balanced ? balanced->next_batch() : uniform_src->next_batch();
    const Matrix xs = src.gather(src_rows);
    Labels ys(src_rows.size());
    for (std::size_t i = 0; i < src_rows.size(); ++i) ys[i] = src_labels[src_rows[i]];
    Matrix xt;
    if (use_target) xt = tgt.gather(tgt_sampler.next_batch());

    const auto opt = objective_options(cfg, s.alpha);
    auto res = evaluate_objective(s.model, xs, ys, xt, s.source_store, s.target_store, opt);
    s.source_store = std::move(res.source_store);
    s.target_store = std::move(res.target_store);
    s.loss_trace.push_back({s.iteration, res.terms.ce, res.terms.loss_c, res.terms.loss_d, res.terms.total,
                            opt.lambda, opt.gamma});

    const double lr = cfg.lr_decay ? lr_schedule(s.alpha, cfg.lr0) : cfg.lr0;
    try {
      s.optimizer.step(s.model.parameters(), res.grads, lr);
    } catch (const TrainingAbort& e) {
      throw TrainingAbort(std::string(e.what()) + " at iteration " + std::to_string(s.iteration));
    }
    ++s.iteration;
  }
  s.alpha = s.total_iterations ? static_cast<double>(s.iteration) / static_cast<double>(s.total_iterations) : 0.0;

  if (!cfg.centroid_dump_dir.empty()) {
    std::filesystem::create_directories(cfg.centroid_dump_dir);
    const auto stem = cfg.centroid_dump_dir + "/centroids_epoch" + std::to_string(s.epoch);
    s.source_store.dump_csv(stem + "_source.csv");
    s.target_store.dump_csv(stem + "_target.csv");
  }
  ++s.epoch;
}

inline TrainState train(ReferenceMLP model, const LabeledDataset& src, const LabeledDataset& tgt,
                        const TrainConfig& cfg) {
  auto s = init_train_state(std::move(model), src, cfg);
  for (int e = 0; e < cfg.epochs; ++e) train_epoch(s, src, tgt, cfg);
  return s;
}

inline void write_loss_trace_csv(const std::string& path, std::span<const LossRecord> trace) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write loss trace: " + path);
  out.precision(17);
  out << "iter,ce,loss_c,loss_d,total\n";
  for (const auto& r : trace) out << r.iter << ',' << r.ce << ',' << r.loss_c << ',' << r.loss_d << ',' << r.total << '\n';
}

}  // namespace centroida
