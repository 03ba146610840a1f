#include "ecgdk/train.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <mutex>
#include <set>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "ecgdk/common.h"
#include "ecgdk/nn/checkpoint.h"
#include "ecgdk/nn/ops.h"

namespace ecgdk {

using nn::Tensor;

namespace {

// Activations of one step are a few hundred MB of same-sized buffers. Keep them in the heap
// between steps instead of unmapping and faulting them back in.
void retain_heap() {
#if defined(__GLIBC__)
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 32 << 20);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
  });
#endif
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size == 0 || max_epochs == 0 || warmup_steps == 0 || early_stop_patience == 0)
    throw ContractError("TrainConfig: batch_size, max_epochs, warmup_steps and patience must be positive");
  if (!(base_lr >= 0.0) || !(weight_decay >= 0.0)) throw ContractError("TrainConfig: negative learning rate or decay");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0) || !(adam_eps > 0.0))
    throw ContractError("TrainConfig: Adam betas must lie in [0, 1) and eps be positive");
  mmd.validate();
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"base_lr", c.base_lr},
          {"weight_decay", c.weight_decay},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps},
          {"warmup_steps", c.warmup_steps},
          {"early_stop_patience", c.early_stop_patience},
          {"seed", c.seed},
          {"mmd_lambda", c.mmd.lambda_mmd},
          {"mmd_beta", c.mmd.beta ? nlohmann::json(*c.mmd.beta) : nlohmann::json("median")}};
}

double noam_lr(std::size_t step, std::size_t d_model, std::size_t warmup, double base_lr) {
  if (step == 0 || warmup == 0 || d_model == 0) throw ContractError("noam_lr: step, warmup and d_model must be >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  // The d_model^-0.5 factor cancels against the peak normalization.
  return base_lr * std::min(std::sqrt(w / s), s / w);
}

void adam_step(std::span<nn::NamedParam> params, AdamState& state, double lr, double weight_decay, double beta1,
               double beta2, double eps) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.numel(), 0.0);
      state.v.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ContractError("adam_step: state does not match parameters");
  ++state.t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    nn::Tensor& t = params[k].tensor;
    auto theta = t.mutable_values();
    const auto g = t.grad();
    const bool has_grad = !g.empty();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      theta[i] -= lr * weight_decay * theta[i];
      const double gi = has_grad ? g[i] : 0.0;
      m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
      v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      theta[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

Batch make_batch(std::span<const Example* const> examples, bool with_features) {
  const std::size_t b = examples.size();
  std::vector<double> ecg(b * kSegmentLength);
  std::vector<double> feats;
  Batch batch;
  batch.labels.reserve(b);
  for (std::size_t i = 0; i < b; ++i) {
    const Example& e = *examples[i];
    if (e.segment.samples.size() != kSegmentLength) throw ContractError("make_batch: segment length is not 1000");
    std::copy(e.segment.samples.begin(), e.segment.samples.end(), ecg.begin() + static_cast<std::ptrdiff_t>(i * kSegmentLength));
    batch.labels.push_back(e.segment.label ? class_index(*e.segment.label) : -1);
    if (with_features) {
      if (!e.features) throw ContractError("make_batch: segment " + e.segment.source_record + " has no features");
      const auto a = e.features->to_array();
      feats.insert(feats.end(), a.begin(), a.end());
    }
  }
  batch.ecg = Tensor({b, 1, kSegmentLength}, std::move(ecg));
  if (with_features) batch.feats = Tensor({b, 1, kHrvFeatureCount}, std::move(feats));
  return batch;
}

std::vector<double> predict_proba(const Model& model, std::span<const Example> examples, std::size_t jobs) {
  constexpr std::size_t kChunk = 32;
  const std::size_t classes = model.config().classes;
  const bool rr = model.config().use_rr_path;
  std::vector<double> out(examples.size() * classes);
  const std::size_t chunks = (examples.size() + kChunk - 1) / kChunk;
  parallel_for(chunks, jobs, [&](std::size_t c) {
    nn::NoGradGuard no_grad;
    const std::size_t lo = c * kChunk, hi = std::min(examples.size(), lo + kChunk);
    std::vector<const Example*> ptrs;
    for (std::size_t i = lo; i < hi; ++i) ptrs.push_back(&examples[i]);
    const Batch batch = make_batch(ptrs, rr);
    const ModelOutput o = model.forward(batch.ecg, rr ? &batch.feats : nullptr, false, nullptr);
    const Tensor p = nn::softmax(o.logits);
    std::copy(p.values().begin(), p.values().end(), out.begin() + static_cast<std::ptrdiff_t>(lo * classes));
  });
  return out;
}

MetricsReport evaluate(const Model& model, std::span<const Example> test_set, std::size_t jobs) {
  std::vector<Example> usable;
  std::vector<std::size_t> unusable_per_class(kNumClasses, 0);
  std::size_t unusable = 0;
  for (const auto& e : test_set) {
    if (!e.segment.label) throw ContractError("evaluate: test segment without a label");
    if (e.usable()) {
      usable.push_back(e);
    } else {
      ++unusable;
      ++unusable_per_class[static_cast<std::size_t>(class_index(*e.segment.label))];
    }
  }
  if (usable.empty()) throw ContractError("evaluate: no usable test segments");
  const std::vector<double> proba = predict_proba(model, usable, jobs);
  std::vector<int> truth;
  for (const auto& e : usable) truth.push_back(class_index(*e.segment.label));
  MetricsReport r = compute_metrics(truth, argmax_rows(proba, model.config().classes));
  r.unusable = unusable;
  r.unusable_per_class = unusable_per_class;
  try {
    r.auc_macro = macro_auc_ovr(truth, proba);
  } catch (const ContractError&) {
    r.auc_macro.reset();
  }
  return r;
}

void write_train_log_csv(const std::filesystem::path& path, std::span<const TrainLogRow> rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ContractError("cannot open " + path.string() + " for writing");
  out.precision(17);
  out << "epoch,step,lr,task_loss,mmd,total_loss,val_f1_macro\n";
  for (const auto& r : rows) {
    out << r.epoch << ',' << r.step << ',' << r.lr << ',' << r.task_loss << ',';
    if (r.mmd) out << *r.mmd;
    out << ',' << r.total_loss << ',';
    if (r.val_f1_macro) out << *r.val_f1_macro;
    out << '\n';
  }
}

namespace {

std::vector<const Example*> usable_labeled(std::span<const Example> set, std::size_t& unusable) {
  std::vector<const Example*> out;
  unusable = 0;
  for (const auto& e : set) {
    if (!e.segment.label) throw ContractError("train: labeled set contains an unlabeled segment");
    if (e.usable())
      out.push_back(&e);
    else
      ++unusable;
  }
  return out;
}

double val_f1(const Model& model, std::span<const Example* const> val, std::size_t jobs) {
  std::vector<Example> copy;
  copy.reserve(val.size());
  for (const Example* e : val) copy.push_back(*e);
  const std::vector<double> proba = predict_proba(model, copy, jobs);
  std::vector<int> truth;
  for (const Example* e : val) truth.push_back(class_index(*e->segment.label));
  return compute_metrics(truth, argmax_rows(proba, model.config().classes)).f1_macro;
}

std::vector<std::vector<double>> snapshot(const Model& model) {
  std::vector<std::vector<double>> out;
  for (const auto& p : model.params()) out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

void restore(Model& model, const std::vector<std::vector<double>>& values) {
  auto& params = model.params();
  for (std::size_t k = 0; k < params.size(); ++k) std::copy(values[k].begin(), values[k].end(), params[k].tensor.mutable_values().begin());
}

}  // namespace

TrainResult train(std::span<const Example> train_set, std::span<const Example> val_set,
                  std::span<const Example> target_unlabeled, const TrainConfig& cfg, const ModelConfig& model_cfg,
                  const std::function<void(const EpochSummary&)>& on_epoch) {
  cfg.validate();
  model_cfg.validate();
  retain_heap();
  std::size_t unusable_train = 0, unusable_val = 0;
  const std::vector<const Example*> tr = usable_labeled(train_set, unusable_train);
  const std::vector<const Example*> va = usable_labeled(val_set, unusable_val);
  if (tr.empty()) throw ContractError("train: empty training set");
  if (va.empty()) throw ContractError("train: empty validation set");
  std::set<int> classes;
  for (const Example* e : tr) classes.insert(class_index(*e->segment.label));
  if (classes.size() < 2) throw ContractError("train: training set holds a single class");

  std::vector<const Example*> target;
  for (const auto& e : target_unlabeled)
    if (e.usable() || !model_cfg.use_rr_path) target.push_back(&e);
  if (!target_unlabeled.empty() && target.empty()) throw ContractError("train: no usable target segments");

  const bool rr = model_cfg.use_rr_path;
  const bool use_mmd = cfg.mmd.lambda_mmd > 0.0;

  TrainResult result{Model(model_cfg, cfg.seed), {}, {}, 0, -1.0, 0, false, unusable_train, unusable_val};
  Model& model = result.model;
  Rng shuffle_rng(cfg.seed, 0x5F1E);
  Rng dropout_rng(cfg.seed, 0xD209);
  Rng target_rng(cfg.seed, 0x7A26);
  AdamState adam;
  std::vector<std::vector<double>> best = snapshot(model);
  std::vector<const Example*> order = tr;
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(std::span<const Example*>(order));
    double loss_sum = 0.0;
    std::size_t steps_in_epoch = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size) {
      const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
      const std::span<const Example* const> members(order.data() + lo, hi - lo);
      const Batch batch = make_batch(members, rr);
      ++step;
      const double lr = noam_lr(step, model_cfg.d_model, cfg.warmup_steps, cfg.base_lr);

      for (auto& p : model.params()) p.tensor.zero_grad();
      const ModelOutput out = model.forward(batch.ecg, rr ? &batch.feats : nullptr, true, &dropout_rng);
      const Tensor task = nn::cross_entropy(out.logits, batch.labels);

      TrainLogRow row;
      row.epoch = epoch;
      row.step = step;
      row.lr = lr;
      row.task_loss = task.item();
      Tensor total = task;
      if (use_mmd) {
        Tensor xs, xt;
        if (!target.empty()) {
          std::vector<const Example*> tb;
          for (std::size_t i = 0; i < members.size(); ++i) tb.push_back(target[target_rng.index(target.size())]);
          const Batch tbatch = make_batch(tb, rr);
          xs = out.embedding;
          xt = model.forward(tbatch.ecg, rr ? &tbatch.feats : nullptr, true, &dropout_rng).embedding;
        } else {
          std::vector<std::size_t> first, rest;
          for (std::size_t i = 0; i < members.size(); ++i)
            (members[i]->segment.domain_id == members[0]->segment.domain_id ? first : rest).push_back(i);
          const std::size_t n = std::min(first.size(), rest.size());
          if (n > 0) {
            first.resize(n);
            rest.resize(n);
            xs = nn::select_rows(out.embedding, first);
            xt = nn::select_rows(out.embedding, rest);
          }
        }
        if (xs.defined()) {
          const Tensor m = mmd2(xs, xt, cfg.mmd);
          row.mmd = m.item();
          total = nn::add(task, nn::scale(m, cfg.mmd.lambda_mmd));
        }
      }
      row.total_loss = total.item();
      total.backward();
      adam_step(model.params(), adam, lr, cfg.weight_decay, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
      for (auto& p : model.params()) nn::round_to_float32(p.tensor.mutable_values());
      loss_sum += row.task_loss;
      ++steps_in_epoch;
      result.log.push_back(row);
    }

    const double f1 = val_f1(model, va, cfg.jobs);
    result.log.back().val_f1_macro = f1;
    result.val_f1_per_epoch.push_back(f1);
    result.epochs_run = epoch;
    const bool improved = f1 > result.best_val_f1;
    if (improved) {
      result.best_val_f1 = f1;
      result.best_epoch = epoch;
      best = snapshot(model);
    }
    if (on_epoch) on_epoch({epoch, loss_sum / static_cast<double>(steps_in_epoch), f1, improved});
    if (epoch - result.best_epoch >= cfg.early_stop_patience) {
      result.early_stopped = epoch < cfg.max_epochs;
      break;
    }
  }
  restore(model, best);
  return result;
}

}  // namespace ecgdk
