#include "icl/harness.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <exception>
#include <mutex>
#include <thread>

namespace icl {
namespace {

enum Stream : std::uint64_t {
  kTaskStream = 0,
  kDataStream = 1,
  kWeightStream = 2,
  kFeatureStream = 3,
  kValueAugmentStream = 4,
  kKeyAugmentStream = 5,
};

NodeRef activate(Tape& t, NodeRef z, Activation a) {
  return a == Activation::Gelu ? t.gelu(z) : t.elu(z);
}

// Appends g(projected) to the tape, consuming g's weights from `params`.
NodeRef augment(Tape& t, const AugmentSpec& g, NodeRef projected, NodeRef raw,
                std::vector<NodeRef>::const_iterator& params) {
  switch (g.kind) {
    case AugmentSpec::Kind::Identity:
      return projected;
    case AugmentSpec::Kind::Mlp:
      if (g.depth == 1) return activate(t, t.matmul(*params++, projected), g.activation);
      {
        const NodeRef w1 = *params++;
        const NodeRef w2 = *params++;
        return t.matmul(w2, activate(t, t.matmul(w1, projected), g.activation));
      }
    case AugmentSpec::Kind::ParallelMlp: {
      const NodeRef w1 = *params++;
      const NodeRef w2 = *params++;
      const NodeRef branch = t.matmul(w2, activate(t, t.matmul(w1, raw), g.activation));
      return t.add(projected, t.scale(branch, g.c));
    }
  }
  throw Error("augment: unknown kind");
}

// phi(z) up to a positive constant per call (keys) or per column (queries).
NodeRef feature_nodes(Tape& t, const FeatureMap& fm, NodeRef omega, NodeRef z, bool per_column) {
  if (fm.kind() == FeatureKind::EluPlusOne) {
    const Matrix& v = t.value(z);
    return t.add(t.elu(z), t.constant(Matrix::Ones(v.rows(), v.cols())));
  }
  const NodeRef logits =
      t.add_row_broadcast(t.matmul(omega, z), t.scale(t.column_sq_norms(z), -0.5));
  const Matrix& l = t.value(logits);
  RowVector shift(l.cols());
  if (per_column)
    shift = -l.colwise().maxCoeff();
  else
    shift.setConstant(-l.maxCoeff());
  return t.exp(t.add_row_broadcast(logits, t.constant(shift)));
}

double temper(Index d_o) { return std::pow(static_cast<double>(d_o), -0.25); }

}  // namespace

void parallel_for(std::size_t count, unsigned threads,
                  const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(count);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const auto n = static_cast<unsigned>(std::min<std::size_t>(threads, count));
  pool.reserve(n);
  for (unsigned i = 0; i < n; ++i) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

void ModificationConfig::validate(Index demos) const {
  require(std::isfinite(alpha) && std::isfinite(beta), "modification: alpha and beta must be finite");
  require(alpha != 1.0, "modification: alpha = 1 leaves nothing to normalize");
  if (beta != 0.0) require(k >= 1 && k <= demos - 1, "modification: k must lie in [1, N-1]");
}

void TrainConfig::validate() const {
  require(tokens_per_step >= 2, "train: need at least one demo and the query per step");
  require(steps_per_epoch >= 1 && epochs >= 1, "train: steps and epochs must be positive");
  require(std::isfinite(learning_rate) && learning_rate >= 0.0,
          "train: learning rate must be finite and non-negative");
  require(feature_dim >= 1, "train: feature dimension must be positive");
  modification.validate(tokens_per_step - 1);
}

AttentionModel::AttentionModel(AttentionWeights weights, FeatureMap features,
                               ModificationConfig modification, Index label_dim)
    : weights_(std::move(weights)),
      features_(std::move(features)),
      modification_(std::move(modification)),
      label_dim_(label_dim) {
  weights_.validate();
  require(weights_.output_dim() == weights_.input_dim(),
          "AttentionModel: the label slot needs d_o = d_i");
  require(label_dim_ >= 1 && label_dim_ < weights_.output_dim(),
          "AttentionModel: label dimension out of range");
  require(features_.input_dim() == weights_.output_dim(),
          "AttentionModel: feature map input dimension must equal d_o");
  require(modification_.g1.initialized() && modification_.g2.initialized(),
          "AttentionModel: augmentation weights not initialized");
}

AttentionModel AttentionModel::initialize(Index token_dim, Index label_dim, const TrainConfig& cfg,
                                          const SeededRng& rng) {
  SeededRng weight_rng = rng.derive(kWeightStream);
  SeededRng feature_rng = rng.derive(kFeatureStream);
  SeededRng g1_rng = rng.derive(kValueAugmentStream);
  SeededRng g2_rng = rng.derive(kKeyAugmentStream);
  AttentionWeights w = AttentionWeights::random(token_dim, token_dim, weight_rng);
  FeatureMap fm = cfg.feature_kind == FeatureKind::PositiveRandom
                      ? FeatureMap::positive_random(token_dim, cfg.feature_dim, feature_rng)
                      : FeatureMap::elu_plus_one(token_dim);
  ModificationConfig mod = cfg.modification;
  mod.g1 = mod.g1.initialize(token_dim, token_dim, g1_rng);
  mod.g2 = mod.g2.initialize(token_dim, token_dim, g2_rng);
  return AttentionModel(std::move(w), std::move(fm), std::move(mod), label_dim);
}

std::vector<Matrix> AttentionModel::parameters() const {
  std::vector<Matrix> p{weights_.query, weights_.key, weights_.value};
  for (const Matrix& m : modification_.g1.weights) p.push_back(m);
  for (const Matrix& m : modification_.g2.weights) p.push_back(m);
  return p;
}

void AttentionModel::set_parameters(const std::vector<Matrix>& params) {
  const std::size_t n1 = modification_.g1.weights.size();
  const std::size_t n2 = modification_.g2.weights.size();
  require(params.size() == 3 + n1 + n2, "AttentionModel: parameter count mismatch");
  auto assign = [](Matrix& dst, const Matrix& src) {
    require(dst.rows() == src.rows() && dst.cols() == src.cols(),
            "AttentionModel: parameter shape mismatch");
    dst = src;
  };
  assign(weights_.query, params[0]);
  assign(weights_.key, params[1]);
  assign(weights_.value, params[2]);
  for (std::size_t i = 0; i < n1; ++i) assign(modification_.g1.weights[i], params[3 + i]);
  for (std::size_t i = 0; i < n2; ++i) assign(modification_.g2.weights[i], params[3 + n1 + i]);
}

AttentionWeights AttentionModel::effective_weights() const {
  const double c = temper(weights_.output_dim());
  return AttentionWeights{c * weights_.query, c * weights_.key, weights_.value};
}

std::vector<std::vector<Index>> AttentionModel::negative_sets(const Matrix& tokens) const {
  const double c = temper(weights_.output_dim());
  const Matrix keys = c * modification_.g2.apply(weights_.key * tokens, tokens);
  const Matrix queries = c * (weights_.query * tokens);
  const Matrix scores = features_.apply(keys).transpose() * features_.apply(queries);
  return lowest_score_neighbours(scores, tokens.cols() - 1, modification_.k);
}

AttentionModel::Evaluation AttentionModel::evaluate(const TokenBatch& batch,
                                                    bool with_gradients) const {
  const Matrix& x = batch.tokens;
  const Index n = x.cols();
  const Index d_o = weights_.output_dim();
  require(x.rows() == weights_.input_dim() && n >= 2, "AttentionModel: batch shape mismatch");
  require(batch.query_label.size() == label_dim_, "AttentionModel: query label size mismatch");
  const Index label_row = x.rows() - label_dim_;
  const ModificationConfig& mod = modification_;

  Tape t;
  std::vector<NodeRef> params;
  for (const Matrix& p : parameters()) params.push_back(t.parameter(p));
  auto cursor = params.cbegin() + 3;

  const NodeRef tokens = t.constant(x);
  NodeRef value_tokens = tokens;
  if (mod.beta != 0.0) {
    // x~_i = x_i - (beta/k) sum_{j in N(i)} x_j, i.e. X (I - S).
    Matrix mix = Matrix::Identity(n, n);
    const auto sets = negative_sets(x);
    for (Index i = 0; i < n - 1; ++i)
      for (Index j : sets[static_cast<std::size_t>(i)])
        mix(j, i) -= mod.beta / static_cast<double>(mod.k);
    value_tokens = t.constant(x * mix);
  }
  const NodeRef values =
      augment(t, mod.g1, t.matmul(params[2], value_tokens), value_tokens, cursor);
  const NodeRef keys =
      t.scale(augment(t, mod.g2, t.matmul(params[1], tokens), tokens, cursor), temper(d_o));
  const NodeRef query =
      t.scale(t.matmul(params[0], t.constant(x.col(n - 1))), temper(d_o));

  const NodeRef omega =
      t.constant(features_.kind() == FeatureKind::PositiveRandom ? features_.omega() : Matrix());
  const NodeRef phi_k = feature_nodes(t, features_, omega, keys, false);
  const NodeRef phi_q = feature_nodes(t, features_, omega, query, true);
  NodeRef weights = t.column_normalize(t.matmul(t.transpose(phi_k), phi_q));
  if (mod.alpha != 0.0) {
    // Self form for the query column: (a - alpha e_q) / (1 - alpha).
    Matrix e_q = Matrix::Zero(n, 1);
    e_q(n - 1, 0) = mod.alpha;
    weights = t.scale(t.sub(weights, t.constant(e_q)), 1.0 / (1.0 - mod.alpha));
  }
  const NodeRef output = t.matmul(values, weights);
  const NodeRef prediction = t.slice_rows(output, label_row, label_dim_);
  const NodeRef loss = t.squared_error(prediction, t.constant(Matrix(batch.query_label)));

  Evaluation ev;
  ev.loss = t.scalar(loss);
  ev.prediction = t.value(prediction).col(0);
  if (with_gradients) ev.gradients = t.backward(loss).by_parameter;
  return ev;
}

std::uint64_t hash_batch(const TokenBatch& batch) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](const Matrix& m) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(m.data());
    for (std::size_t i = 0; i < static_cast<std::size_t>(m.size()) * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  feed(batch.tokens);
  feed(Matrix(batch.query_label));
  return h;
}

TaskSpec make_task(TaskKind kind, Index input_dim, Index label_dim, std::uint64_t seed) {
  SeededRng rng = SeededRng(seed).derive(kTaskStream);
  return TaskSpec::random(kind, input_dim, label_dim, rng);
}

TrainResult train_attention_model(const TaskSpec& task, const TrainConfig& cfg,
                                  const EpochHook& hook) {
  task.validate();
  cfg.validate();
  const SeededRng root(cfg.seed);
  SeededRng data_rng = root.derive(kDataStream);

  std::vector<TokenBatch> data;
  std::vector<std::uint64_t> hashes;
  data.reserve(static_cast<std::size_t>(cfg.steps_per_epoch));
  for (Index s = 0; s < cfg.steps_per_epoch; ++s) {
    data.push_back(sample_task_batch(task, cfg.tokens_per_step, data_rng));
    hashes.push_back(hash_batch(data.back()));
  }

  TrainResult result{{}, std::move(hashes),
                     AttentionModel::initialize(task.token_dim(), task.label_dim, cfg, root)};
  AttentionModel& model = result.model;
  std::vector<Matrix> params = model.parameters();
  std::size_t step = 0;
  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    double total = 0.0;
    for (const TokenBatch& batch : data) {
      ++step;
      AttentionModel::Evaluation ev;
      try {
        ev = model.evaluate(batch, cfg.learning_rate != 0.0);
      } catch (const NumericalError& e) {
        throw DivergenceError(step, "training diverged at step " + std::to_string(step) + ": " +
                                        e.what());
      }
      if (!std::isfinite(ev.loss))
        throw DivergenceError(step, "training diverged at step " + std::to_string(step) +
                                        ": non-finite loss");
      total += ev.loss;
      if (cfg.learning_rate != 0.0) {
        for (std::size_t p = 0; p < params.size(); ++p)
          params[p] -= cfg.learning_rate * ev.gradients[p];
        model.set_parameters(params);
      }
    }
    result.epoch_losses.push_back(total / static_cast<double>(data.size()));
    if (hook && !hook(epoch + 1, result.epoch_losses.back())) break;
  }
  return result;
}

std::vector<SweepCurve> variant_sweep(TaskKind kind, Index input_dim, Index label_dim,
                                      const TrainConfig& base,
                                      const std::vector<ModificationConfig>& variants,
                                      const std::vector<std::uint64_t>& seeds,
                                      unsigned threads) {
  require(!variants.empty(), "variant_sweep: no variants");
  require(!seeds.empty(), "variant_sweep: no seeds");
  const std::size_t jobs = variants.size() * seeds.size();
  std::vector<SweepCurve> curves(jobs);
  std::vector<std::vector<std::uint64_t>> hashes(jobs);
  parallel_for(jobs, threads, [&](std::size_t job) {
    const std::size_t v = job / seeds.size();
    const std::size_t s = job % seeds.size();
    TrainConfig cfg = base;
    cfg.seed = seeds[s];
    cfg.modification = variants[v];
    const TrainResult r =
        train_attention_model(make_task(kind, input_dim, label_dim, seeds[s]), cfg);
    curves[job] = SweepCurve{variants[v].name, seeds[s], r.epoch_losses};
    hashes[job] = r.batch_hashes;
  });
  for (std::size_t job = 0; job < jobs; ++job)
    if (hashes[job] != hashes[job % seeds.size()])
      throw Error("variant_sweep: variant '" + curves[job].variant +
                  "' saw a different data stream");
  return curves;
}

std::vector<RankBoundRow> rank_bound_experiment(Index d, const std::vector<Index>& hidden_dims,
                                                Index batches, Index reps, std::uint64_t seed,
                                                bool force_active) {
  require(d >= 1, "rank_bound_experiment: d must be positive");
  require(batches >= 1 && reps >= 1, "rank_bound_experiment: batches and reps must be positive");
  std::vector<RankBoundRow> rows;
  const SeededRng root(seed);
  for (std::size_t a = 0; a < hidden_dims.size(); ++a) {
    const Index dh = hidden_dims[a];
    require(dh >= 1, "rank_bound_experiment: d_h must be positive");
    double total = 0.0;
    for (Index r = 0; r < reps; ++r) {
      SeededRng rng = root.derive(a).derive(static_cast<std::uint64_t>(r));
      for (Index b = 0; b < batches; ++b) {
        FfnWeights f{rng.normal_matrix(dh, d), rng.normal_vector(dh), rng.normal_matrix(d, dh),
                     rng.normal_vector(d)};
        const Vector h = rng.normal_vector(d);
        if (force_active) f.b1.setConstant((f.w1 * h).cwiseAbs().maxCoeff() + 1.0);
        const FfnOutput out = ffn_forward(h, f);
        total += static_cast<double>(wf_rank_report(f, out.mask).upper_bound);
      }
    }
    rows.push_back(RankBoundRow{dh, total / static_cast<double>(batches * reps)});
  }
  return rows;
}

std::vector<EquivalenceRun> equivalence_experiment(const EquivalenceExperiment& cfg,
                                                   const std::vector<std::uint64_t>& seeds,
                                                   unsigned threads) {
  require(cfg.demos >= 1, "equivalence_experiment: need at least one demonstration");
  std::vector<EquivalenceRun> runs(seeds.size());
  parallel_for(seeds.size(), threads, [&](std::size_t i) {
    const SeededRng root(seeds[i]);
    const TaskSpec task = make_task(cfg.task, cfg.input_dim, cfg.label_dim, seeds[i]);
    SeededRng data_rng = root.derive(kDataStream);
    SeededRng weight_rng = root.derive(kWeightStream);
    SeededRng feature_rng = root.derive(kFeatureStream);
    const TokenBatch batch = sample_task_batch(task, cfg.demos + 1, data_rng);
    const Index d = task.token_dim();
    const AttentionWeights w = cfg.weights ? *cfg.weights : AttentionWeights::random(d, d, weight_rng);
    const FeatureMap fm =
        cfg.feature_kind == FeatureKind::PositiveRandom
            ? FeatureMap::positive_random(w.output_dim(), cfg.feature_dim, feature_rng)
            : FeatureMap::elu_plus_one(w.output_dim());
    runs[i].seed = seeds[i];
    runs[i].report = verify_equivalence(batch.tokens.leftCols(cfg.demos), Matrix(),
                                        batch.tokens.col(cfg.demos), w, fm, true,
                                        cfg.learning_rate);
  });
  return runs;
}

std::vector<ApproxRow> approx_experiment(TaskKind task, Index input_dim, Index label_dim,
                                         Index tokens, const std::vector<Index>& feature_dims,
                                         Index trials, std::uint64_t seed, unsigned threads) {
  require(tokens >= 1 && trials >= 1, "approx_experiment: tokens and trials must be positive");
  require(!feature_dims.empty(), "approx_experiment: empty d_r grid");
  const std::size_t n_dr = feature_dims.size();
  std::vector<ApproxRow> rows(n_dr * static_cast<std::size_t>(trials));
  const SeededRng root(seed);
  parallel_for(static_cast<std::size_t>(trials), threads, [&](std::size_t trial) {
    const SeededRng trial_rng = root.derive(trial);
    SeededRng task_rng = trial_rng.derive(kTaskStream);
    SeededRng data_rng = trial_rng.derive(kDataStream);
    SeededRng weight_rng = trial_rng.derive(kWeightStream);
    const TaskSpec spec = TaskSpec::random(task, input_dim, label_dim, task_rng);
    const Index n = std::max<Index>(tokens, 2);
    Matrix x = sample_task_batch(spec, n, data_rng).tokens.leftCols(tokens);
    const Index d = spec.token_dim();
    const AttentionWeights w = AttentionWeights::random(d, d, weight_rng);
    for (std::size_t a = 0; a < n_dr; ++a) {
      SeededRng feature_rng = trial_rng.derive(kFeatureStream).derive(a);
      const FeatureMap fm = FeatureMap::positive_random(d, feature_dims[a], feature_rng);
      const AttentionApproxReport r = attention_approx_report(x, w.key, w.query, fm);
      rows[a * static_cast<std::size_t>(trials) + trial] =
          ApproxRow{feature_dims[a], static_cast<Index>(trial), r.mse, r.mae};
    }
  });
  return rows;
}

}  // namespace icl
