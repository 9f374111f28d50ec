#pragma once

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "lenlab/model.hpp"
#include "lenlab/tensor.hpp"

// Adam with linear warmup into cosine decay, epoch-shuffled batches keyed by
// (seed, epoch), best-checkpoint selection on validation loss, and a CSV
// history. Moments are kept in double so resumed runs replay bit-exactly.

namespace lenlab {

using TokenExample = std::pair<std::vector<int>, std::vector<int>>;
using TokenBatch = std::vector<TokenExample>;

struct TrainConfig {
  double lr_peak = 1e-4;
  int batch_size = 256;
  int warmup_steps = 2000;
  int max_epochs = 5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // 0 disables clipping
  std::uint64_t seed = 0;
  long long total_steps = 0;  // derived from the training set when 0
};

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"lr_peak", c.lr_peak},       {"batch_size", c.batch_size},
          {"warmup_steps", c.warmup_steps}, {"max_epochs", c.max_epochs},
          {"beta1", c.beta1},           {"beta2", c.beta2},
          {"eps", c.eps},               {"clip_norm", c.clip_norm},
          {"seed", c.seed},             {"total_steps", c.total_steps}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.lr_peak = j.value("lr_peak", c.lr_peak);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.seed = j.value("seed", c.seed);
  c.total_steps = j.value("total_steps", c.total_steps);
  return c;
}

inline long long derive_total_steps(const TrainConfig& cfg, std::size_t n_train) {
  if (cfg.batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
  long long per_epoch =
      (static_cast<long long>(n_train) + cfg.batch_size - 1) / cfg.batch_size;
  return per_epoch * cfg.max_epochs;
}

inline double lr_at_step(long long step, const TrainConfig& cfg) {
  if (step < 0) throw ContractError("lr_at_step: negative step");
  if (cfg.total_steps <= cfg.warmup_steps)
    throw ConfigError("lr_at_step: total_steps " +
                      std::to_string(cfg.total_steps) +
                      " must exceed warmup_steps " +
                      std::to_string(cfg.warmup_steps));
  if (step < cfg.warmup_steps)
    return cfg.lr_peak * double(step) / double(cfg.warmup_steps);
  if (step >= cfg.total_steps) return 0.0;
  double frac = double(step - cfg.warmup_steps) /
                double(cfg.total_steps - cfg.warmup_steps);
  return cfg.lr_peak * 0.5 * (1.0 + std::cos(frac * M_PI));
}

// ---------------------------------------------------------------------------
// Adam (bias-corrected, double moments).
// ---------------------------------------------------------------------------

template <typename S>
class AdamT {
 public:
  AdamT(std::vector<TensorT<S>> params, const TrainConfig& cfg)
      : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  // One update from the gradients currently stored on the parameters;
  // gradients are zeroed afterwards.
  void apply(double lr) {
    ++t_;
    double clip_scale = 1.0;
    if (cfg_.clip_norm > 0.0) {
      double sq = 0.0;
      for (const auto& p : params_)
        for (S g : p.grad()) sq += double(g) * double(g);
      double norm = std::sqrt(sq);
      if (norm > cfg_.clip_norm) clip_scale = cfg_.clip_norm / norm;
    }
    double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& value = params_[i].data();
      auto& grad = params_[i].grad();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < value.size(); ++j) {
        double g = double(grad[j]) * clip_scale;
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
        double mhat = m[j] / bc1;
        double vhat = v[j] / bc2;
        value[j] = S(double(value[j]) - lr * mhat / (std::sqrt(vhat) + cfg_.eps));
        grad[j] = S(0);
      }
    }
  }

  long long updates() const { return t_; }

  void save(const std::string& path) const {
    std::string out = "LLOS0001";
    auto put_u64 = [&](std::uint64_t x) {
      for (int i = 0; i < 8; ++i) out += char((x >> (8 * i)) & 0xff);
    };
    put_u64(std::uint64_t(t_));
    put_u64(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      put_u64(m_[i].size());
      out.append(reinterpret_cast<const char*>(m_[i].data()),
                 m_[i].size() * sizeof(double));
      out.append(reinterpret_cast<const char*>(v_[i].data()),
                 v_[i].size() * sizeof(double));
    }
    write_file(path, out);
  }

  void load(const std::string& path) {
    std::string s = read_file(path);
    std::size_t at = 0;
    auto take_u64 = [&]() {
      if (at + 8 > s.size()) throw ParseError("optimizer state: truncated");
      std::uint64_t x = 0;
      for (int i = 0; i < 8; ++i)
        x |= std::uint64_t(static_cast<unsigned char>(s[at + i])) << (8 * i);
      at += 8;
      return x;
    };
    if (s.size() < 8 || s.compare(0, 8, "LLOS0001") != 0)
      throw ParseError("optimizer state: bad magic in " + path);
    at = 8;
    t_ = (long long)take_u64();
    if (take_u64() != params_.size())
      throw ParseError("optimizer state: parameter count mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (take_u64() != m_[i].size())
        throw ParseError("optimizer state: size mismatch at tensor " +
                         std::to_string(i));
      std::size_t bytes = m_[i].size() * sizeof(double);
      if (at + 2 * bytes > s.size()) throw ParseError("optimizer state: truncated");
      std::memcpy(m_[i].data(), s.data() + at, bytes);
      at += bytes;
      std::memcpy(v_[i].data(), s.data() + at, bytes);
      at += bytes;
    }
    if (at != s.size()) throw ParseError("optimizer state: trailing bytes");
  }

 private:
  std::vector<TensorT<S>> params_;
  std::vector<std::vector<double>> m_, v_;
  long long t_ = 0;
  TrainConfig cfg_;
};

// ---------------------------------------------------------------------------
// Trainer: schedule + Adam + diagnostics.
// ---------------------------------------------------------------------------

template <typename S>
class TrainerT {
 public:
  TrainerT(ModelT<S>& model, const TrainConfig& cfg)
      : model_(&model), cfg_(cfg), adam_(model.parameters(), cfg) {
    if (cfg_.total_steps <= cfg_.warmup_steps)
      throw ConfigError("TrainerT: total_steps must exceed warmup_steps");
  }

  // One optimization step; returns the batch loss.
  double step(const TokenBatch& batch, const std::string& batch_label = "") {
    if (batch.empty()) throw ContractError("train_step: empty batch");
    double lr = lr_at_step(step_, cfg_);
    double loss_value = 0.0;
    try {
      TapeT<S> tape;
      TapeScopeT<S> scope(tape);
      TensorT<S> loss = model_->loss(batch, drop_rng_ptr());
      loss_value = double(loss.value());
      if (!std::isfinite(loss_value))
        throw NumericError("non-finite loss value");
      tape.backward(loss);
    } catch (const NumericError& e) {
      throw NumericError("train_step: aborted at step " +
                         std::to_string(step_) + " (lr=" + std::to_string(lr) +
                         (batch_label.empty() ? "" : ", batch " + batch_label) +
                         "): " + e.what());
    }
    adam_.apply(lr);
    ++step_;
    return loss_value;
  }

  long long steps_done() const { return step_; }
  void set_steps_done(long long s) { step_ = s; }
  double current_lr() const { return lr_at_step(step_, cfg_); }
  AdamT<S>& opt() { return adam_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  Rng* drop_rng_ptr() {
    if (model_->cfg.dropout <= 0.0) return nullptr;
    if (!drop_rng_init_) {
      drop_rng_ = Rng(derive_seed(cfg_.seed, "dropout"));
      drop_rng_init_ = true;
    }
    return &drop_rng_;
  }

  ModelT<S>* model_;
  TrainConfig cfg_;
  AdamT<S> adam_;
  long long step_ = 0;
  Rng drop_rng_{0};
  bool drop_rng_init_ = false;
};

using Trainer = TrainerT<float>;
using Adam = AdamT<float>;

// ---------------------------------------------------------------------------
// Fit loop.
// ---------------------------------------------------------------------------

struct HistoryRow {
  long long step = 0;
  int epoch = 0;
  double lr = 0.0;
  double train_loss = std::numeric_limits<double>::quiet_NaN();
  double valid_loss = std::numeric_limits<double>::quiet_NaN();
};

inline std::string history_to_csv(const std::vector<HistoryRow>& rows) {
  std::string out = "step,epoch,lr,train_loss,valid_loss\n";
  auto cell = [](double v) {
    return std::isnan(v) ? std::string() : std::to_string(v);
  };
  for (const auto& r : rows)
    out += std::to_string(r.step) + "," + std::to_string(r.epoch) + "," +
           std::to_string(r.lr) + "," + cell(r.train_loss) + "," +
           cell(r.valid_loss) + "\n";
  return out;
}

template <typename S>
double evaluate_loss(const ModelT<S>& model, const TokenBatch& data,
                     int batch_size) {
  if (data.empty()) throw ContractError("evaluate_loss: empty dataset");
  double total_ce = 0.0;
  std::size_t total_tokens = 0;
  for (std::size_t at = 0; at < data.size(); at += std::size_t(batch_size)) {
    std::size_t end = std::min(data.size(), at + std::size_t(batch_size));
    TokenBatch chunk(data.begin() + at, data.begin() + end);
    std::size_t tokens = 0;
    for (const auto& ex : chunk) tokens += ex.second.size();
    total_ce += double(model.loss(chunk).value()) * double(tokens);
    total_tokens += tokens;
  }
  return total_ce / double(total_tokens);
}

struct FitResult {
  std::string best_path;
  double best_valid_loss = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  std::vector<HistoryRow> history;
};

template <typename S>
FitResult fit(ModelT<S>& model, const TokenBatch& train_set,
              const TokenBatch& valid_set, TrainConfig cfg,
              const std::string& out_dir,
              const std::string& tokenizer_hash = "") {
  if (train_set.empty()) throw ContractError("fit: empty training set");
  if (valid_set.empty()) throw ConfigError("fit: empty validation set");
  if (cfg.total_steps == 0) cfg.total_steps = derive_total_steps(cfg, train_set.size());
  std::filesystem::create_directories(out_dir);

  TrainerT<S> trainer(model, cfg);
  FitResult result;
  result.best_path = out_dir + "/best.ckpt";
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(derive_seed(cfg.seed, "epoch:" + std::to_string(epoch)));
    shuffle_rng.shuffle(order);

    for (std::size_t at = 0; at < order.size(); at += std::size_t(cfg.batch_size)) {
      std::size_t end = std::min(order.size(), at + std::size_t(cfg.batch_size));
      TokenBatch batch;
      std::string label = "epoch " + std::to_string(epoch) + " ids";
      for (std::size_t k = at; k < end; ++k) {
        batch.push_back(train_set[order[k]]);
        label += " " + std::to_string(order[k]);
      }
      HistoryRow row;
      row.step = trainer.steps_done();
      row.epoch = epoch;
      row.lr = trainer.current_lr();
      row.train_loss = trainer.step(batch, label);
      result.history.push_back(row);
    }

    HistoryRow vrow;
    vrow.step = trainer.steps_done();
    vrow.epoch = epoch;
    vrow.lr = trainer.current_lr();
    vrow.valid_loss = evaluate_loss(model, valid_set, cfg.batch_size);
    result.history.push_back(vrow);
    if (vrow.valid_loss < result.best_valid_loss) {
      result.best_valid_loss = vrow.valid_loss;
      result.best_epoch = epoch;
      CheckpointMeta meta;
      meta.step = int(trainer.steps_done());
      meta.valid_loss = vrow.valid_loss;
      meta.tokenizer_hash = tokenizer_hash;
      save_checkpoint(model, meta, result.best_path);
    }
  }
  write_file(out_dir + "/history.csv", history_to_csv(result.history));
  return result;
}

}  // namespace lenlab
