#pragma once

#include "icl/attention.hpp"
#include "icl/dual.hpp"
#include "icl/features.hpp"
#include "icl/tasks.hpp"
#include "icl/tape.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace icl {

/// Runs fn(0..count-1) on up to `threads` workers. Callers store results by
/// index, so output order never depends on scheduling. The first exception
/// thrown by any task is rethrown after all workers stop.
void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& fn);

/// Attention modifications for training. Neutral values (alpha = 0,
/// beta = 0, identity g1/g2) leave the model untouched.
struct ModificationConfig {
  std::string name = "normal";
  double alpha = 0.0;  // regularization weight
  double beta = 0.0;   // negative-sample weight
  Index k = 1;         // negatives per demo
  AugmentSpec g1;      // on projected values
  AugmentSpec g2;      // on projected keys

  void validate(Index demos) const;
};

struct TrainConfig {
  Index tokens_per_step = 16;  // N + 1
  Index steps_per_epoch = 1024;
  Index epochs = 50;
  double learning_rate = 0.003;
  FeatureKind feature_kind = FeatureKind::PositiveRandom;
  Index feature_dim = 1200;
  std::uint64_t seed = 0;
  ModificationConfig modification;

  void validate() const;
};

/// Kernelized attention layer trained on the query's label slot.
///
/// Keys and queries are scaled by d_o^{-1/4} before the feature map. With
/// positive random features the per-call exponent maxima are held constant
/// during differentiation; they cancel in the column normalization.
class AttentionModel {
 public:
  AttentionModel(AttentionWeights weights, FeatureMap features, ModificationConfig modification,
                 Index label_dim);

  /// Weights N(0, 1/d_i), features and augmentations drawn from `rng` streams.
  static AttentionModel initialize(Index token_dim, Index label_dim, const TrainConfig& cfg,
                                   const SeededRng& rng);

  const AttentionWeights& weights() const noexcept { return weights_; }
  const FeatureMap& features() const noexcept { return features_; }
  const ModificationConfig& modification() const noexcept { return modification_; }

  /// W_Q, W_K, W_V, then g1 weights, then g2 weights.
  std::vector<Matrix> parameters() const;
  void set_parameters(const std::vector<Matrix>& params);

  /// W_Q and W_K with the d_o^{-1/4} scaling absorbed, for use with the
  /// untempered kernel attention and the dual model.
  AttentionWeights effective_weights() const;

  struct Evaluation {
    double loss = 0.0;
    Vector prediction;
    std::vector<Matrix> gradients;  // empty unless requested
  };

  Evaluation evaluate(const TokenBatch& batch, bool with_gradients) const;
  double loss(const TokenBatch& batch) const { return evaluate(batch, false).loss; }

  /// Demo -> negatives, chosen from the model's own (kernel) attention scores.
  std::vector<std::vector<Index>> negative_sets(const Matrix& tokens) const;

 private:
  AttentionWeights weights_;
  FeatureMap features_;
  ModificationConfig modification_;
  Index label_dim_;
};

struct TrainResult {
  std::vector<double> epoch_losses;
  /// FNV-1a hash of every batch in the fixed per-epoch dataset.
  std::vector<std::uint64_t> batch_hashes;
  AttentionModel model;
};

std::uint64_t hash_batch(const TokenBatch& batch);

/// Called after each epoch with its 1-based index and loss; returning false
/// ends training early.
using EpochHook = std::function<bool(Index epoch, double loss)>;

/// Plain SGD over a fixed dataset of steps_per_epoch batches, reused every
/// epoch. Epoch loss is the mean squared error over the epoch's steps. A
/// non-finite loss raises DivergenceError carrying the global step index.
TrainResult train_attention_model(const TaskSpec& task, const TrainConfig& cfg,
                                  const EpochHook& hook = {});

/// Task matrix for a seed (its own stream, independent of data and weights).
TaskSpec make_task(TaskKind kind, Index input_dim, Index label_dim, std::uint64_t seed);

struct SweepCurve {
  std::string variant;
  std::uint64_t seed = 0;
  std::vector<double> epoch_losses;
};

/// One curve per (variant, seed), ordered by variant then seed. Every variant
/// sees the same task, batches, initial weights and features for a seed.
std::vector<SweepCurve> variant_sweep(TaskKind kind, Index input_dim, Index label_dim,
                                      const TrainConfig& base,
                                      const std::vector<ModificationConfig>& variants,
                                      const std::vector<std::uint64_t>& seeds,
                                      unsigned threads = 1);

struct RankBoundRow {
  Index hidden_dim = 0;
  double mean_bound = 0.0;
};

/// Mean of min(d, d_h, active units) over batches x reps random FFNs and
/// inputs (standard normal). force_active makes every unit active.
std::vector<RankBoundRow> rank_bound_experiment(Index d, const std::vector<Index>& hidden_dims,
                                                Index batches, Index reps, std::uint64_t seed,
                                                bool force_active = false);

struct EquivalenceExperiment {
  TaskKind task = TaskKind::Linear;
  Index input_dim = 11;
  Index label_dim = 1;
  Index demos = 15;
  FeatureKind feature_kind = FeatureKind::PositiveRandom;
  Index feature_dim = 1200;
  double learning_rate = 1.0;
  /// Use these weights instead of random N(0, 1/d_i) draws.
  std::optional<AttentionWeights> weights;
};

struct EquivalenceRun {
  std::uint64_t seed = 0;
  EquivalenceReport report;
};

std::vector<EquivalenceRun> equivalence_experiment(const EquivalenceExperiment& cfg,
                                                   const std::vector<std::uint64_t>& seeds,
                                                   unsigned threads = 1);

struct ApproxRow {
  Index feature_dim = 0;
  Index trial = 0;
  double mse = 0.0;
  double mae = 0.0;
};

/// Attention-matrix approximation error per (d_r, trial). Tokens and
/// projections depend only on the trial, so rows are paired across d_r.
std::vector<ApproxRow> approx_experiment(TaskKind task, Index input_dim, Index label_dim,
                                         Index tokens, const std::vector<Index>& feature_dims,
                                         Index trials, std::uint64_t seed, unsigned threads = 1);

}  // namespace icl
