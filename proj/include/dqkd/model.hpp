#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dqkd/common.hpp"
#include "dqkd/kdcore.hpp"
#include "dqkd/logit_record.hpp"
#include "dqkd/vocab.hpp"

namespace dqkd::model {

struct ModelConfig {
  std::uint32_t vocab_size = 512;
  std::uint32_t context_length = 64;
  std::uint32_t d_model = 64;
  std::uint32_t n_layers = 2;
  std::uint32_t n_heads = 2;
  std::uint64_t seed = 42;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct TrainingExample {
  std::uint64_t sample_id = 0;
  std::vector<std::uint32_t> x;  // prompt tokens, non-empty
  std::vector<std::uint32_t> y;  // target tokens, length L >= 1

  std::size_t target_len() const { return y.size(); }
  void validate(const ModelConfig& cfg) const;
};

struct TensorInfo {
  std::string name;
  std::size_t offset = 0;
  std::vector<std::uint32_t> dims;

  std::size_t numel() const;
};

// Decoder-only causal LM: pre-norm blocks (attention + ReLU MLP, residuals),
// RMS norms without learnable gain, tied nothing, final norm before the head.
// Math runs in double; the checkpoint stores f32 per the file format.
class Model {
 public:
  static Model init(const ModelConfig& cfg);

  const ModelConfig& config() const { return config_; }
  const std::vector<TensorInfo>& tensors() const { return tensors_; }
  std::span<const double> params() const { return params_; }
  std::span<double> params_mut() { return params_; }
  std::size_t num_params() const { return params_.size(); }
  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t s) { step_ = s; }

  std::span<const double> tensor(const std::string& name) const;

  // One logit vector over V per target position n, conditioned on x and
  // y_{<n} only.
  std::vector<std::vector<double>> forward_logits(const TrainingExample& ex) const;

  void save(const std::string& path) const;
  static Model load(const std::string& path);

 private:
  Model() = default;
  ModelConfig config_;
  std::vector<double> params_;
  std::vector<TensorInfo> tensors_;
  std::uint64_t step_ = 0;

  friend struct Engine;
};

struct LossResult {
  double loss = 0.0;
  std::vector<double> grads;  // flat, aligned with Model::params()
  std::size_t token_count = 0;
};

LossResult ce_loss_and_grads(const Model& m, std::span<const TrainingExample> batch);

// Per-sample teacher records, one TopKLogitRecord per target position.
using TeacherRecords = std::map<std::uint64_t, std::vector<logitstore::TopKLogitRecord>>;

// loss = alpha * dataset KD loss + (1 - alpha) * token cross-entropy.
// `alignment` projects teacher records into student id space; required iff
// the vocabularies differ. With alpha == 0 the KD path is skipped entirely
// and the result equals ce_loss_and_grads.
LossResult kd_loss_and_grads(const Model& m, std::span<const TrainingExample> batch,
                             const TeacherRecords& teacher,
                             std::uint64_t teacher_vocab_hash,
                             const vocab::AlignmentMap* alignment,
                             const kdcore::DivergenceConfig& config, double alpha);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;

  static AdamState for_model(const Model& m);
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

// Rejects non-finite gradients without touching the parameters.
void optimizer_step(Model& m, std::span<const double> grads, double lr, AdamState& state);

// Greedy continuation, for smoke tests.
std::vector<std::uint32_t> greedy_decode(const Model& m, std::vector<std::uint32_t> prompt,
                                         std::size_t max_new_tokens);

}  // namespace dqkd::model
