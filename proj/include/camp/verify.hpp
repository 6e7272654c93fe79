#pragma once

// Checks shared by the CLI, the unit tests and the acceptance runner:
// single-pass vs multi-pass equivalence, finite-difference gradient checks,
// the pass-count benchmark and end-to-end training runs.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "camp/eval.hpp"
#include "camp/trainer.hpp"

namespace camp {

struct EquivCase {
  std::size_t k = 0;
  bool negation = false;
  std::uint64_t seed = 0;
  double max_abs_diff = 0;  // pooled hidden states, single vs multi pass
  bool pass = false;
};

struct EquivOptions {
  std::vector<std::size_t> ks{1, 3, 6};
  std::size_t seeds = 20;
  std::vector<bool> negation_modes{false, true};
  double tolerance = 1e-5;
  bool position_reset = true;
  std::size_t batch = 4;
  TrainConfig base;  // architecture; k, seed and negation are overwritten
};

/// One case per (k, negation, seed): fresh random parameters and random
/// captions from the seed, compared over every pooled row.
std::vector<EquivCase> equivalence_check(const EquivOptions& opt);

struct GradcheckRow {
  std::string component;  // con, div, neg, total
  std::string parameter;
  double max_rel_error = 0;
  double max_abs_error = 0;
  std::size_t count = 0;
};

struct GradcheckOptions {
  std::vector<std::string> components{"con", "div", "neg", "total"};
  /// Empty = the default sweep (temperature, APT table, text projection, last
  /// text block, vision pooling and temporal table).
  std::vector<std::string> parameters;
  std::uint64_t seed = 0;
  std::size_t batch = 4;
  double step = 1e-4;  // five-point stencil step
  double floor = 1e-8;  // denominator floor of the relative error
};

/// Small double-precision model on a batch of B two-frame videos (so the
/// temporal table is exercised). Analytic gradients from the tape vs
/// central differences.
std::vector<GradcheckRow> gradient_check(const GradcheckOptions& opt);

/// Parameters that are frozen in the gradcheck model and whose gradient
/// buffer after backward holds a nonzero entry. Empty means all frozen
/// parameters came back with exactly zero gradient.
std::vector<std::string> frozen_parameters_with_gradient(std::uint64_t seed);

struct PassTiming {
  std::size_t k = 0;
  double single_pass_s = 0;  // one masked pass over prefix + K prompts
  double one_prompt_s = 0;   // one pass over prefix + a single prompt
  double multi_pass_s = 0;   // K separate single-prompt passes
  double ratio = 0;          // single_pass_s / (K * one_prompt_s)
};

struct BenchOptions {
  std::vector<std::size_t> ks{1, 2, 3, 6};
  std::size_t repeats = 5;
  std::size_t batch = 32;
  TrainConfig base;
};

/// Text-encoder forward timings without gradient tracking; each figure is
/// the minimum over `repeats`.
std::vector<PassTiming> bench_passes(const BenchOptions& opt);

struct RunResult {
  std::vector<RetrievalReport> reports;  // on the eval split
  double segment_cosine = 0;
  double seconds = 0;                    // training wall time
  double cpu_seconds = 0;                // training CPU time of this process, all threads
  double text_to_image_r1() const { return reports.at(0).r1; }
};

/// User plus system CPU time of this process so far.
double process_cpu_seconds();

/// Trains cfg from scratch to total_steps and evaluates on the eval split.
/// The trained model is left in `*trainer` when given.
RunResult train_and_evaluate(const TrainConfig& cfg, std::ostream* metrics = nullptr,
                             std::unique_ptr<Trainer>* trainer = nullptr);

/// Two-object probe images: pairs of shapes at different positions.
std::vector<Image> two_object_images();

/// Number of distinct argmax patches among the K segment maps of `image`.
std::size_t distinct_argmax_patches(const Model<float>& m, const Image& image);

}  // namespace camp
