#include "icl/cli.hpp"

#include "icl/csv.hpp"
#include "icl/generalization.hpp"
#include "icl/harness.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>

#ifndef ICLDUAL_VERSION
#define ICLDUAL_VERSION "0.0.0"
#endif

namespace icl {
namespace {

using nlohmann::ordered_json;

constexpr int kSchemaVersion = 1;

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) parts.push_back(cur);
  if (!s.empty() && s.back() == sep) parts.emplace_back();
  return parts;
}

double parse_number(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ValidationError("cannot parse " + what + " '" + s + "' as a number");
}

// identity | mlp1[:act] | mlp2[:act[:width]] | parallel:c[:act[:width]]
AugmentSpec parse_augment(const std::string& text) {
  const auto p = split(text, ':');
  const std::string& kind = p.empty() ? text : p[0];
  auto act = [&](std::size_t i) { return p.size() > i ? parse_activation(p[i]) : Activation::Gelu; };
  auto width = [&](std::size_t i) {
    return p.size() > i ? static_cast<Index>(parse_number(p[i], "augment width")) : Index{0};
  };
  if (kind == "identity" && p.size() <= 1) return AugmentSpec::identity();
  if (kind == "mlp1" && p.size() <= 2) return AugmentSpec::mlp(1, act(1));
  if (kind == "mlp2" && p.size() <= 3) return AugmentSpec::mlp(2, act(1), width(2));
  if (kind == "parallel" && p.size() >= 2 && p.size() <= 4)
    return AugmentSpec::parallel_mlp(parse_number(p[1], "parallel c"), act(2), width(3));
  throw ValidationError("cannot parse augmentation '" + text +
                        "' (identity, mlp1[:act], mlp2[:act[:width]], parallel:c[:act[:width]])");
}

// "normal" or comma-separated key=value with keys alpha, beta, k, g1, g2, name.
ModificationConfig parse_variant(const std::string& text) {
  ModificationConfig m;
  m.name = text;
  if (text == "normal") return m;
  for (const std::string& field : split(text, ',')) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw ValidationError("variant field '" + field + "' lacks '='");
    const std::string key = field.substr(0, eq);
    const std::string value = field.substr(eq + 1);
    if (key == "alpha")
      m.alpha = parse_number(value, "alpha");
    else if (key == "beta")
      m.beta = parse_number(value, "beta");
    else if (key == "k")
      m.k = static_cast<Index>(parse_number(value, "k"));
    else if (key == "g1")
      m.g1 = parse_augment(value);
    else if (key == "g2")
      m.g2 = parse_augment(value);
    else if (key == "name")
      m.name = value;
    else
      throw ValidationError("unknown variant key '" + key + "'");
  }
  return m;
}

std::vector<std::uint64_t> seed_list(std::uint64_t base, std::uint64_t count) {
  std::vector<std::uint64_t> s(count);
  for (std::uint64_t i = 0; i < count; ++i) s[i] = base + i;
  return s;
}

// Parameters shared by every command.
struct Common {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct TaskOptions {
  std::string task = "linear";
  Index dt = 11;
  Index ds = 1;
};

struct Command {
  CLI::App* app = nullptr;
  Common common;
  std::function<CsvTable(ordered_json&)> run;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON config file (flags override it)");
  app->add_option("--out", c.out, "Output CSV path");
  app->add_option("--seed", c.seed, "Base seed")->capture_default_str();
  app->add_option("--threads", c.threads, "Worker threads")->capture_default_str()->check(
      CLI::PositiveNumber);
}

void add_task(CLI::App* app, TaskOptions& t) {
  app->add_option("--task", t.task, "linear | trig | exp")->capture_default_str();
  app->add_option("--dt", t.dt, "Task input dimension d_t")->capture_default_str();
  app->add_option("--ds", t.ds, "Task label dimension d_s")->capture_default_str();
}

ordered_json task_json(const TaskOptions& t) {
  return ordered_json{{"task", t.task}, {"dt", t.dt}, {"ds", t.ds}};
}

// Expands config-file entries into flags the user did not pass, so that
// flags always win over the file.
std::vector<std::string> merge_config(const std::string& command,
                                      const std::vector<std::string>& args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;

  std::ifstream f(path);
  if (!f) throw ValidationError("cannot read config '" + path + "'");
  ordered_json cfg;
  try {
    cfg = ordered_json::parse(f);
  } catch (const std::exception& e) {
    throw ValidationError("malformed config '" + path + "': " + e.what());
  }
  if (!cfg.is_object()) throw ValidationError("config must be a JSON object");
  if (!cfg.contains("schema_version") || cfg["schema_version"] != kSchemaVersion)
    throw ValidationError("config schema_version must be " + std::to_string(kSchemaVersion));
  if (cfg.contains("command") && cfg["command"] != command)
    throw ValidationError("config is for command '" + cfg["command"].dump() + "', not '" +
                          command + "'");

  auto given = [&](const std::string& flag) {
    return std::any_of(args.begin(), args.end(), [&](const std::string& a) {
      return a == flag || a.rfind(flag + "=", 0) == 0;
    });
  };
  auto scalar = [](const ordered_json& v) -> std::string {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_float()) return format_double(v.get<double>());
    return v.dump();
  };

  std::vector<std::string> merged = args;
  for (const auto& [key, value] : cfg.items()) {
    if (key == "schema_version" || key == "command") continue;
    if (key == "config") throw ValidationError("config may not name another config");
    const std::string flag = "--" + key;
    if (given(flag)) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) merged.push_back(flag);
    } else if (value.is_array()) {
      for (const auto& item : value) {
        merged.push_back(flag);
        merged.push_back(scalar(item));
      }
    } else {
      merged.push_back(flag);
      merged.push_back(scalar(value));
    }
  }
  return merged;
}

std::filesystem::path output_path(const std::string& command, const std::string& out) {
  if (!out.empty()) return out;
  const char* dir = std::getenv(kOutputDirEnv);
  const std::filesystem::path base = dir && *dir ? std::filesystem::path(dir) : ".";
  return base / (command + ".csv");
}

void write_sidecar(const std::filesystem::path& csv_path, const std::string& command,
                   const Common& common, const ordered_json& config, std::size_t rows) {
  ordered_json meta;
  meta["schema_version"] = kSchemaVersion;
  meta["artifact"] = "icldual";
  meta["version"] = ICLDUAL_VERSION;
  meta["command"] = command;
  meta["seed"] = common.seed;
  meta["config"] = config;
  meta["rows"] = rows;
  const std::string text = meta.dump(2) + "\n";
  std::filesystem::path path = csv_path;
  path += ".meta.json";
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ValidationError("cannot write metadata '" + path.string() + "'");
  f << text;
}

}  // namespace

int run_command(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Attention / dual-model numerical laboratory", "icldual"};
  app.set_version_flag("--version", ICLDUAL_VERSION);
  app.require_subcommand(1);
  std::map<std::string, Command> commands;

  // equivalence
  TaskOptions eq_task;
  Index eq_n = 15, eq_dr = 1200, eq_pre_epochs = 0, eq_pre_steps = 64;
  std::uint64_t eq_seeds = 3;
  std::string eq_feature = "prf";
  double eq_eta = 1.0, eq_pre_lr = 0.003;
  {
    Command& c = commands["equivalence"];
    c.app = app.add_subcommand("equivalence", "Dual-model training vs kernel attention per step");
    add_common(c.app, c.common);
    add_task(c.app, eq_task);
    c.app->add_option("--n", eq_n, "Demonstrations N")->capture_default_str();
    c.app->add_option("--dr", eq_dr, "Random feature dimension")->capture_default_str();
    c.app->add_option("--feature", eq_feature, "prf | elu")->capture_default_str();
    c.app->add_option("--seeds", eq_seeds, "Number of seeds")->capture_default_str();
    c.app->add_option("--eta", eq_eta, "Dual learning rate")->capture_default_str();
    c.app->add_option("--pretrain-epochs", eq_pre_epochs, "Train the layer first (0: random)")
        ->capture_default_str();
    c.app->add_option("--pretrain-steps", eq_pre_steps, "Steps per pretraining epoch")
        ->capture_default_str();
    c.app->add_option("--pretrain-lr", eq_pre_lr, "Pretraining learning rate")
        ->capture_default_str();
    c.run = [&](ordered_json& cfg) {
      cfg = task_json(eq_task);
      cfg.update(ordered_json{{"n", eq_n}, {"dr", eq_dr}, {"feature", eq_feature},
                              {"seeds", eq_seeds}, {"eta", eq_eta},
                              {"pretrain-epochs", eq_pre_epochs},
                              {"pretrain-steps", eq_pre_steps}, {"pretrain-lr", eq_pre_lr}});
      EquivalenceExperiment e;
      e.task = parse_task_kind(eq_task.task);
      e.input_dim = eq_task.dt;
      e.label_dim = eq_task.ds;
      e.demos = eq_n;
      e.feature_kind = parse_feature_kind(eq_feature);
      e.feature_dim = eq_dr;
      e.learning_rate = eq_eta;
      const auto seeds = seed_list(c.common.seed, eq_seeds);
      std::vector<EquivalenceRun> runs(seeds.size());
      parallel_for(seeds.size(), c.common.threads, [&](std::size_t i) {
        EquivalenceExperiment local = e;
        if (eq_pre_epochs > 0) {
          TrainConfig t;
          t.tokens_per_step = eq_n + 1;
          t.steps_per_epoch = eq_pre_steps;
          t.epochs = eq_pre_epochs;
          t.learning_rate = eq_pre_lr;
          t.feature_kind = e.feature_kind;
          t.feature_dim = eq_dr;
          t.seed = seeds[i];
          const TaskSpec task = make_task(e.task, e.input_dim, e.label_dim, seeds[i]);
          local.weights = train_attention_model(task, t).model.effective_weights();
        }
        runs[i] = equivalence_experiment(local, {seeds[i]}).front();
      });
      CsvTable t{{"seed", "step", "l2_error"}, {}};
      for (const auto& r : runs)
        for (std::size_t s = 0; s < r.report.step_errors.size(); ++s)
          t.add_row({r.seed, static_cast<std::uint64_t>(s), r.report.step_errors[s]});
      return t;
    };
  }

  // approx
  TaskOptions ap_task;
  Index ap_tokens = 16, ap_trials = 50;
  std::vector<Index> ap_dr{3, 12, 120, 1200, 12000};
  {
    Command& c = commands["approx"];
    c.app = app.add_subcommand("approx", "Attention-matrix approximation error over d_r");
    add_common(c.app, c.common);
    add_task(c.app, ap_task);
    c.app->add_option("--tokens", ap_tokens, "Tokens per context (N+1)")->capture_default_str();
    c.app->add_option("--dr", ap_dr, "Feature dimensions")->delimiter(',')->capture_default_str();
    c.app->add_option("--trials", ap_trials, "Trials per d_r")->capture_default_str();
    c.run = [&](ordered_json& cfg) {
      cfg = task_json(ap_task);
      cfg.update(ordered_json{{"tokens", ap_tokens}, {"dr", ap_dr}, {"trials", ap_trials}});
      const auto rows = approx_experiment(parse_task_kind(ap_task.task), ap_task.dt, ap_task.ds,
                                          ap_tokens, ap_dr, ap_trials, c.common.seed,
                                          c.common.threads);
      CsvTable t{{"dr", "trial", "mse", "mae"}, {}};
      for (const auto& r : rows)
        t.add_row({static_cast<std::int64_t>(r.feature_dim), static_cast<std::int64_t>(r.trial),
                   r.mse, r.mae});
      return t;
    };
  }

  // train and sweep share the training options
  struct TrainOptions {
    TaskOptions task;
    Index tokens = 16, steps = 1024, epochs = 50, dr = 1200;
    double lr = 0.003;
    std::string feature = "prf";
    std::uint64_t seeds = 1;
  };
  auto add_train = [](CLI::App* a, TrainOptions& o) {
    add_task(a, o.task);
    a->add_option("--tokens", o.tokens, "Tokens per step (N+1)")->capture_default_str();
    a->add_option("--steps", o.steps, "Steps per epoch")->capture_default_str();
    a->add_option("--epochs", o.epochs, "Epochs")->capture_default_str();
    a->add_option("--lr", o.lr, "SGD learning rate")->capture_default_str();
    a->add_option("--dr", o.dr, "Random feature dimension")->capture_default_str();
    a->add_option("--feature", o.feature, "prf | elu")->capture_default_str();
    a->add_option("--seeds", o.seeds, "Number of seeds")->capture_default_str();
  };
  auto train_json = [](const TrainOptions& o) {
    ordered_json j = task_json(o.task);
    j.update(ordered_json{{"tokens", o.tokens}, {"steps", o.steps}, {"epochs", o.epochs},
                          {"lr", o.lr}, {"dr", o.dr}, {"feature", o.feature},
                          {"seeds", o.seeds}});
    return j;
  };
  auto train_config = [](const TrainOptions& o) {
    TrainConfig t;
    t.tokens_per_step = o.tokens;
    t.steps_per_epoch = o.steps;
    t.epochs = o.epochs;
    t.learning_rate = o.lr;
    t.feature_kind = parse_feature_kind(o.feature);
    t.feature_dim = o.dr;
    return t;
  };

  TrainOptions tr;
  std::string tr_variant = "normal";
  {
    Command& c = commands["train"];
    c.app = app.add_subcommand("train", "Train a kernelized attention layer; per-epoch MSE");
    add_common(c.app, c.common);
    add_train(c.app, tr);
    c.app->add_option("--variant", tr_variant, "normal or key=value list (alpha,beta,k,g1,g2)")
        ->capture_default_str();
    c.run = [&](ordered_json& cfg) {
      cfg = train_json(tr);
      cfg["variant"] = tr_variant;
      const auto curves = variant_sweep(parse_task_kind(tr.task.task), tr.task.dt, tr.task.ds,
                                        train_config(tr), {parse_variant(tr_variant)},
                                        seed_list(c.common.seed, tr.seeds), c.common.threads);
      CsvTable t{{"seed", "epoch", "loss"}, {}};
      for (const auto& cv : curves)
        for (std::size_t e = 0; e < cv.epoch_losses.size(); ++e)
          t.add_row({cv.seed, static_cast<std::uint64_t>(e + 1), cv.epoch_losses[e]});
      return t;
    };
  }

  TrainOptions sw;
  sw.epochs = 10;
  sw.steps = 128;
  std::vector<std::string> sw_variants{"normal", "alpha=0.1", "beta=0.1,k=1", "g2=mlp1:gelu"};
  {
    Command& c = commands["sweep"];
    c.app = app.add_subcommand("sweep", "Train several attention variants on shared data");
    add_common(c.app, c.common);
    add_train(c.app, sw);
    c.app->add_option("--variant", sw_variants, "Variant (repeatable)")->capture_default_str();
    c.run = [&](ordered_json& cfg) {
      cfg = train_json(sw);
      cfg["variant"] = sw_variants;
      std::vector<ModificationConfig> variants;
      for (const auto& v : sw_variants) variants.push_back(parse_variant(v));
      const auto curves =
          variant_sweep(parse_task_kind(sw.task.task), sw.task.dt, sw.task.ds, train_config(sw),
                        variants, seed_list(c.common.seed, sw.seeds), c.common.threads);
      CsvTable t{{"variant", "seed", "epoch", "loss"}, {}};
      for (const auto& cv : curves)
        for (std::size_t e = 0; e < cv.epoch_losses.size(); ++e)
          t.add_row({cv.variant, cv.seed, static_cast<std::uint64_t>(e + 1), cv.epoch_losses[e]});
      return t;
    };
  }

  // rank-bound
  Index rb_d = 12, rb_batches = 128, rb_reps = 3;
  std::vector<Index> rb_dh{12, 24, 33, 48};
  bool rb_force = false;
  {
    Command& c = commands["rank-bound"];
    c.app = app.add_subcommand("rank-bound", "Mean rank upper bound of W_F over d_h");
    add_common(c.app, c.common);
    c.app->add_option("--d", rb_d, "Model dimension d")->capture_default_str();
    c.app->add_option("--dh", rb_dh, "Hidden widths")->delimiter(',')->capture_default_str();
    c.app->add_option("--batches", rb_batches, "Batches per repetition")->capture_default_str();
    c.app->add_option("--reps", rb_reps, "Repetitions")->capture_default_str();
    c.app->add_flag("--force-active", rb_force, "Force b_1 >> 0 so every unit is active");
    c.run = [&](ordered_json& cfg) {
      cfg = ordered_json{{"d", rb_d}, {"dh", rb_dh}, {"batches", rb_batches}, {"reps", rb_reps},
                         {"force-active", rb_force}};
      const auto rows =
          rank_bound_experiment(rb_d, rb_dh, rb_batches, rb_reps, c.common.seed, rb_force);
      CsvTable t{{"dh", "mean_bound"}, {}};
      for (const auto& r : rows) t.add_row({static_cast<std::int64_t>(r.hidden_dim), r.mean_bound});
      return t;
    };
  }

  // gen-bound
  TaskOptions gb_task;
  Index gb_dr = 1200, gb_eval = 4096;
  std::vector<Index> gb_n{8, 16, 32, 64, 128, 256, 512};
  std::uint64_t gb_seeds = 20;
  double gb_w = 0.0, gb_rho = 0.0, gb_delta = 0.05, gb_r = 0.0;
  {
    Command& c = commands["gen-bound"];
    c.app = app.add_subcommand("gen-bound", "Generalization bound surrogate and empirical gap");
    add_common(c.app, c.common);
    add_task(c.app, gb_task);
    c.app->add_option("--dr", gb_dr, "Random feature dimension")->capture_default_str();
    c.app->add_option("--n", gb_n, "Demonstration counts")->delimiter(',')->capture_default_str();
    c.app->add_option("--seeds", gb_seeds, "Number of seeds")->capture_default_str();
    c.app->add_option("--eval-samples", gb_eval, "Population sample size")->capture_default_str();
    c.app->add_option("--w", gb_w, "Frobenius bound w (0: estimate)")->capture_default_str();
    c.app->add_option("--rho", gb_rho, "Norm bound rho (0: estimate)")->capture_default_str();
    c.app->add_option("--delta", gb_delta, "Confidence delta")->capture_default_str();
    c.app->add_option("--r", gb_r, "Negative-sample ratio K/N (0: plain bound)")
        ->capture_default_str();
    c.run = [&](ordered_json& cfg) {
      const TaskKind kind = parse_task_kind(gb_task.task);
      const TaskSpec task = make_task(kind, gb_task.dt, gb_task.ds, c.common.seed);
      const Index d = task.token_dim();
      SeededRng rng = SeededRng(c.common.seed).derive(7);
      const AttentionWeights w = AttentionWeights::random(d, d, rng);
      const FeatureMap fm = FeatureMap::positive_random(d, gb_dr, rng);
      require(!gb_n.empty(), "gen-bound: empty N list");
      double w_bound = gb_w;
      double rho = gb_rho;
      if (w_bound <= 0.0 || rho <= 0.0) {
        const Index n_max = *std::max_element(gb_n.begin(), gb_n.end());
        const Matrix probe = sample_task_tokens(task, n_max + 1, rng);
        const BoundScales s = estimate_bound_scales(probe, w.query, w.key, w.value, fm);
        if (w_bound <= 0.0) w_bound = s.w;
        if (rho <= 0.0) rho = s.rho;
      }
      cfg = task_json(gb_task);
      cfg.update(ordered_json{{"dr", gb_dr}, {"n", gb_n}, {"seeds", gb_seeds},
                              {"eval-samples", gb_eval}, {"w", w_bound}, {"rho", rho},
                              {"delta", gb_delta}, {"r", gb_r}});
      GapSetup setup{task, w.value, w.key, fm, w_bound, gb_eval};
      const auto rows = empirical_gap(setup, gb_n, gb_seeds, c.common.seed);
      CsvTable t{{"n", "seed", "trace", "bound", "gap"}, {}};
      for (const auto& r : rows) {
        BoundInputs b{w_bound, rho, d, r.n, gb_delta, std::nullopt};
        if (gb_r > 0.0) b.r = gb_r;
        t.add_row({static_cast<std::int64_t>(r.n), r.seed, r.trace, bound_surrogate(b, r.trace),
                   r.gap});
      }
      return t;
    };
  }

  // dual-inspect
  TaskOptions di_task;
  Index di_n = 15, di_dr = 1200;
  std::string di_feature = "prf";
  double di_eta = 1.0;
  bool di_no_self = false;
  {
    Command& c = commands["dual-inspect"];
    c.app = app.add_subcommand("dual-inspect", "Quantities of one dual-model construction");
    add_common(c.app, c.common);
    add_task(c.app, di_task);
    c.app->add_option("--n", di_n, "Demonstrations N")->capture_default_str();
    c.app->add_option("--dr", di_dr, "Random feature dimension")->capture_default_str();
    c.app->add_option("--feature", di_feature, "prf | elu")->capture_default_str();
    c.app->add_option("--eta", di_eta, "Dual learning rate")->capture_default_str();
    c.app->add_flag("--no-query-self", di_no_self, "Exclude the query from its own context");
    c.run = [&](ordered_json& cfg) {
      cfg = task_json(di_task);
      cfg.update(ordered_json{{"n", di_n}, {"dr", di_dr}, {"feature", di_feature},
                              {"eta", di_eta}, {"no-query-self", di_no_self}});
      const TaskSpec task =
          make_task(parse_task_kind(di_task.task), di_task.dt, di_task.ds, c.common.seed);
      const SeededRng root(c.common.seed);
      SeededRng data_rng = root.derive(1);
      SeededRng weight_rng = root.derive(2);
      SeededRng feature_rng = root.derive(3);
      const TokenBatch batch = sample_task_batch(task, di_n + 1, data_rng);
      const Index d = task.token_dim();
      const AttentionWeights w = AttentionWeights::random(d, d, weight_rng);
      const FeatureMap fm = parse_feature_kind(di_feature) == FeatureKind::PositiveRandom
                                ? FeatureMap::positive_random(d, di_dr, feature_rng)
                                : FeatureMap::elu_plus_one(d);
      const Matrix demos = batch.tokens.leftCols(di_n);
      const Vector query = batch.tokens.col(di_n);
      const DualSetup s = build_dual_for_attention(demos, Matrix(), query, w, fm, !di_no_self, di_eta);
      const DualModel trained = dual_update(s.model, s.data, UpdateSchedule::FullBatch);
      const Vector reference = kernel_attention_query(
          assemble_context(demos, Matrix(), query, !di_no_self), query, w, fm);
      const Vector prediction = dual_predict(trained, s.data.test_input);
      CsvTable t{{"quantity", "value"}, {}};
      t.add_row({std::string("normalizer"), s.data.normalizer});
      t.add_row({std::string("w0_frobenius"), s.model.weight.norm()});
      t.add_row({std::string("w_hat_frobenius"), trained.weight.norm()});
      t.add_row({std::string("loss_at_w0"), dual_loss(s.model, s.data)});
      t.add_row({std::string("loss_at_w_hat"), dual_loss(trained, s.data)});
      t.add_row({std::string("attention_norm"), reference.norm()});
      t.add_row({std::string("initial_error"),
                 (dual_predict(s.model, s.data.test_input) - reference).norm()});
      t.add_row({std::string("final_error"), (prediction - reference).norm()});
      t.add_row({std::string("final_relative_error"),
                 (prediction - reference).norm() / reference.norm()});
      return t;
    };
  }

  std::vector<std::string> args = raw_args;
  try {
    if (!args.empty() && commands.count(args[0])) {
      std::vector<std::string> rest(args.begin() + 1, args.end());
      rest = merge_config(args[0], rest);
      args.assign(1, args[0]);
      args.insert(args.end(), rest.begin(), rest.end());
    }
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }

  for (auto& [name, c] : commands) {
    if (!c.app->parsed()) continue;
    try {
      ordered_json cfg;
      const CsvTable table = c.run(cfg);
      const auto path = output_path(name, c.common.out);
      write_csv(table, path);
      write_sidecar(path, name, c.common, cfg, table.rows.size());
      out << "wrote " << path.string() << " (" << table.rows.size() << " rows)\n";
      return kExitOk;
    } catch (const NumericalError& e) {
      err << "numerical error: " << e.what() << "\n";
      return kExitNumerical;
    } catch (const Error& e) {
      err << "error: " << e.what() << "\n";
      return kExitValidation;
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      return kExitValidation;
    }
  }
  err << "error: no command given\n";
  return kExitValidation;
}

}  // namespace icl
