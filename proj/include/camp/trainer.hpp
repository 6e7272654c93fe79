#pragma once

// AdamW, learning-rate schedule, the training loop and checkpoints.
//
// Checkpoint layout (little-endian):
//   "CAMP" | u32 version=1 | u32 tensor count
//   per tensor: u32 name length | name | u32 rank | u64 dims[rank] | f32 payload
//   u32 config length | config text (`key = value` lines, plus optimizer_step)
// Optimizer moments are stored as tensors named opt.m.<param> and opt.v.<param>.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "camp/model.hpp"

namespace camp {

/// peak_lr * min(1, step / warmup_steps); after warmup constant, or cosine
/// decay to zero at total_steps.
double lr_at(std::size_t step, const TrainConfig& cfg);

template <typename T>
struct OptimizerState {
  std::size_t step = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.01;
  std::map<std::string, Tensor<T>> m, v;

  static OptimizerState from_config(const TrainConfig& cfg);
};

/// Decoupled weight decay applies to every trainable parameter except the
/// temperature.
bool decays(const std::string& param_name);

/// One AdamW update of every parameter with requires_grad set. Moment
/// buffers are created on first use; parameters with no gradient buffer see
/// a zero gradient.
template <typename T>
void adamw_step(const ParamList<T>& params, OptimizerState<T>& state, double lr);

/// Global L2 norm of all gradients; scales them to `max_norm` if above it.
template <typename T>
double clip_gradients(const ParamList<T>& params, double max_norm);

/// Sample indices of the batch for `step`: each epoch is a SplitMix64
/// permutation of 0..n-1 seeded from (seed, epoch); the batch is the next
/// batch_size entries of the concatenated permutations.
std::vector<std::size_t> batch_indices(std::uint64_t seed, std::size_t step, std::size_t batch_size, std::size_t n);

struct StepMetrics {
  std::size_t step = 0;
  LossBreakdown loss;
  double lr = 0;
};

/// step, l_total, l_con, l_div, l_neg, tau, lr separated by tabs.
std::string metrics_line(const StepMetrics& m);

class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg);

  /// One optimizer step on the next batch.
  StepMetrics step();
  /// Steps until `until` (default: cfg.total_steps), writing one metrics line per step.
  void run(std::ostream* metrics, std::size_t until = 0);

  void save(const std::filesystem::path& path) const;
  static Trainer load(const std::filesystem::path& path);

  Model<float>& model() { return model_; }
  const Model<float>& model() const { return model_; }
  const OptimizerState<float>& optimizer() const { return opt_; }
  std::size_t steps_done() const { return opt_.step; }
  const std::vector<Sample>& train_set() const { return train_; }
  const std::vector<Sample>& eval_set() const { return eval_; }

 private:
  Trainer(Model<float> model, OptimizerState<float> opt);
  void load_data();

  Model<float> model_;
  OptimizerState<float> opt_;
  std::vector<Sample> train_, eval_;
};

void save_checkpoint(const Model<float>& model, const OptimizerState<float>& opt, std::ostream& out);
void save_checkpoint(const Model<float>& model, const OptimizerState<float>& opt, const std::filesystem::path& path);

struct Checkpoint {
  Model<float> model;
  OptimizerState<float> opt;
};

/// Throws FormatError (with the byte offset) on bad magic, version,
/// truncation, unknown names or shape mismatches.
Checkpoint load_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Train/eval samples for a config: the synthetic split, or the external
/// corpus split in file order.
std::pair<std::vector<Sample>, std::vector<Sample>> dataset_for(const TrainConfig& cfg);

}  // namespace camp
