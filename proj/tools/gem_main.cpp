#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <mutex>
#include <set>
#include <thread>

#include "cli_support.hpp"
#include "gem/audits.hpp"
#include "gem/behavior_mle.hpp"
#include "gem/inference.hpp"
#include "gem/synthenv.hpp"
#include "gem/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace gem::cli {
namespace {

std::size_t default_episodes(const std::string& env) { return env == "maze" ? 20 : 50; }

// The bandit is a single decision, where the cosine ramp would always sit at
// its start value; hold w_p at wp_end there instead.
Schedule default_schedule(const Env& env) { return env.horizon() <= 1 ? Schedule::kConstant : Schedule::kCosine; }

std::size_t param_count(const Cgmm& m) {
  return m.gating_net().params().size() + m.mean_net().params().size() + m.log_std_params().size();
}

std::size_t inference_param_count(const Agent& a) {
  std::size_t n = param_count(a.actor) + param_count(a.behavior);
  for (const auto& h : a.critics.heads()) n += h.params().size();
  return n;
}

NormalizationAnchors dataset_anchors(const OfflineDataset& d, const Env& env) {
  if (d.metadata.contains("anchors")) {
    const json& a = d.metadata["anchors"];
    return {a.at("random_return").get<double>(), a.at("expert_return").get<double>()};
  }
  return standard_anchors(env);
}

// ---------------------------------------------------------------- options

struct TrainOpts {
  std::string env = "bandit";
  std::uint64_t seed = 0;
  std::string dataset;
  std::size_t dataset_size = 10000;
  std::string out;
  std::string log;
  std::string config;
  TrainConfig train;
};

void add_train_config_flags(CLI::App* app, Overrides& ov, TrainConfig& t) {
  ov.add(app, "--steps", t.steps, "Training iterations");
  ov.add(app, "--batch", t.batch_size, "Minibatch size");
  ov.add(app, "--K", t.K, "Mixture components of actor and behavior models");
  ov.add(app, "--hidden", t.hidden, "Hidden layer widths, comma separated")->delimiter(',');
  ov.add(app, "--ensemble", t.ensemble_size, "Critic ensemble size");
  ov.add(app, "--gamma", t.gamma, "Discount");
  ov.add(app, "--expectile-tau", t.expectile_tau, "Value expectile");
  ov.add(app, "--polyak-tau", t.polyak_tau, "Target network averaging rate");
  ov.add(app, "--lr", t.lr, "Adam learning rate for actor, critics and value");
  ov.add(app, "--beta", t.guidance.beta, "Guidance inverse temperature");
  ov.add(app, "--omega-max", t.guidance.omega_max, "Guidance weight ceiling");
  ov.add(app, "--alpha-entropy", t.guidance.alpha_entropy, "Gating entropy bonus");
  ov.add(app, "--behavior-steps", t.behavior_steps, "Behavior model pretraining iterations");
  ov.add(app, "--behavior-lr", t.behavior_lr, "Behavior model learning rate");
  ov.add(app, "--log-every", t.log_every, "Loss logging interval");
}

void load_train_section(const json& cfg, TrainOpts& o) {
  o.env = cfg.value("env", o.env);
  o.seed = cfg.value("seed", o.seed);
  o.dataset_size = cfg.value("dataset_size", o.dataset_size);
  if (cfg.contains("train")) o.train = cfg["train"].get<TrainConfig>();
}

struct InferOpts {
  InferenceConfig cfg;
  CLI::Option* schedule_flag = nullptr;
  bool schedule_in_file = false;
};

void add_inference_flags(CLI::App* app, Overrides& ov, InferOpts& o, bool variant_required = false) {
  InferenceConfig& c = o.cfg;
  ov.add(app, "--N", c.N, "Sampled candidates per decision");
  ov.add(app, "--lambda", c.lambda, "Ensemble pessimism");
  ov.add(app, "--wp-end", c.wp_end, "Support weight at the end of the episode");
  o.schedule_flag = ov.add_parsed<Schedule>(app, "--schedule", c.schedule, parse_schedule,
                                            "cosine | constant (default: constant on single-step envs)");
  ov.add(app, "--ksmooth", c.k_smooth, "Average the top-k candidates");
  ov.add_parsed<Source>(app, "--source", c.source, parse_source, "Candidate source: actor | behavior");
  ov.add_parsed<SupportMode>(app, "--support-mode", c.support_mode, parse_support_mode, "zscore | raw");
  auto* v = ov.add_parsed<Variant>(app, "--variant", c.variant, parse_variant,
                                   "full | no_pw | no_lcb | no_anchor | anchor_bary | unimodal_actor_cands | "
                                   "behavior_only_cands");
  if (variant_required) v->required();
  ov.add(app, "--critic-noise", c.critic_noise_sigma, "Stress test: Gaussian noise sigma added to critic head 0");
}

void load_inference_section(const json& cfg, InferOpts& o) {
  if (!cfg.contains("inference")) return;
  o.cfg = cfg["inference"].get<InferenceConfig>();
  o.schedule_in_file = cfg["inference"].contains("schedule");
}

void finish_schedule(InferOpts& o, const Env& env) {
  if (!o.schedule_in_file && o.schedule_flag->count() == 0) o.cfg.schedule = default_schedule(env);
}

// ---------------------------------------------------------------- gen-data

struct GenOpts {
  std::string env = "bandit";
  std::uint64_t seed = 0;
  std::size_t n = 10000;
  std::string out;
};

int cmd_gen_data(GenOpts& o) {
  o.seed = resolve_seed(o.seed);
  const auto env = make_env(o.env);
  const NormalizationAnchors anchors = standard_anchors(*env);
  const OfflineDataset d = generate_dataset(*env, o.n, o.seed, &anchors);
  d.save(o.out);
  std::cout << "wrote " << d.size() << " transitions (" << d.metadata["episodes"].get<std::size_t>()
            << " episodes) to " << o.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------- train

int cmd_train(TrainOpts& o, const Overrides& ov) {
  if (!o.config.empty()) load_train_section(load_config_file(o.config), o);
  ov.apply();
  o.seed = resolve_seed(o.seed);
  if (o.log.empty()) o.log = o.out + ".log.csv";

  OfflineDataset data;
  std::unique_ptr<Env> env;
  if (!o.dataset.empty()) {
    data = OfflineDataset::load(o.dataset);
    env = make_env(data.env);
  } else {
    env = make_env(o.env);
    const NormalizationAnchors a = standard_anchors(*env);
    data = generate_dataset(*env, o.dataset_size, o.seed, &a);
  }
  const NormalizationAnchors anchors = dataset_anchors(data, *env);

  const json resolved = {{"command", "train"},
                         {"env", env->name()},
                         {"dataset", o.dataset.empty() ? json(nullptr) : json(file_hash(o.dataset))},
                         {"dataset_size", data.size()},
                         {"train", o.train}};
  CsvOut log(o.log, resolved,
             {"env", "seed", "config_hash", "step", "critic_loss", "value_loss", "actor_loss", "entropy", "mean_omega"});
  const std::string hash = config_hash(resolved);
  const auto on_row = [&](const TrainLogRow& r) {
    log.row({env->name(), std::to_string(o.seed), hash, num(r.step), num(r.critic_loss), num(r.value_loss),
             num(r.actor_loss), num(r.entropy), num(r.mean_omega)});
  };

  try {
    const TrainResult res = train_agent(data, o.train, o.seed, anchors, on_row);
    res.agent.save(o.out);
    std::cout << "behavior nll " << num(res.behavior_fit.nll_start) << " -> " << num(res.behavior_fit.nll_end) << "\n"
              << "trained " << o.train.steps << " steps in " << num(res.seconds) << " s; checkpoint " << o.out
              << "\n";
  } catch (const TrainingDiverged& e) {
    e.last_good().save(o.out);
    std::cerr << "error: " << e.what() << "\n"
              << "last good parameters saved to " << o.out << "\n";
    return kNumerical;
  }
  return kOk;
}

// ---------------------------------------------------------------- eval

struct EvalOpts {
  std::string checkpoint;
  std::uint64_t seed = 0;
  std::size_t episodes = 0;
  std::string out = "-";
  std::string trace;
  std::string config;
  InferOpts infer;
  CLI::Option* seed_flag = nullptr;
};

const std::vector<std::string> kEvalHeader = {
    "env",         "seed",  "config_hash", "N",          "lambda",         "wp_end",         "schedule",
    "k_smooth",    "source", "support_mode", "variant",  "critic_noise",   "episodes",       "score",
    "raw_return",  "violation_rate", "collapse_dist", "mean_support_z", "steps_per_sec"};

std::vector<std::string> eval_cells(const std::string& env, std::uint64_t seed, const std::string& hash,
                                    const InferenceConfig& c, std::size_t episodes, const EvalResult& r) {
  return {env,
          std::to_string(seed),
          hash,
          num(c.N),
          num(c.lambda),
          num(c.wp_end),
          to_string(c.schedule),
          num(c.k_smooth),
          to_string(c.source),
          to_string(c.support_mode),
          to_string(c.variant),
          num(c.critic_noise_sigma),
          num(episodes),
          num(r.normalized_score),
          num(r.raw_return_mean),
          num(r.violation_rate),
          num(r.mean_collapse_dist),
          num(r.mean_support_z),
          num(r.seconds > 0.0 ? static_cast<double>(r.decisions) / r.seconds : 0.0)};
}

int cmd_eval(EvalOpts& o, const Overrides& ov) {
  json file;
  if (!o.config.empty()) {
    file = load_config_file(o.config);
    o.episodes = file.value("episodes", o.episodes);
    load_inference_section(file, o.infer);
  }
  ov.apply();
  const Agent agent = Agent::load(o.checkpoint);
  const auto env = make_env(agent.env);
  finish_schedule(o.infer, *env);
  o.infer.cfg.validate();
  if (o.seed_flag->count() == 0 && !file.contains("seed")) o.seed = agent.seed;
  else if (o.seed_flag->count() == 0) o.seed = file["seed"].get<std::uint64_t>();
  o.seed = resolve_seed(o.seed);
  if (o.episodes == 0) o.episodes = default_episodes(agent.env);

  const json resolved = {{"command", "eval"},
                         {"env", agent.env},
                         {"checkpoint", file_hash(o.checkpoint)},
                         {"episodes", o.episodes},
                         {"inference", o.infer.cfg}};

  std::ofstream trace;
  std::size_t episode = 0, seen = 0;
  DecisionObserver observe;
  if (!o.trace.empty()) {
    trace.open(o.trace, std::ios::trunc);
    if (!trace) throw FormatError("cannot open '" + o.trace + "' for writing");
    observe = [&](const Vector& s, const StepContext& ctx, const StepOutcome& out) {
      if (ctx.t == 0 && seen++ > 0) ++episode;
      const json line = {{"episode", episode},
                         {"t", ctx.t},
                         {"state", std::vector<double>(s.begin(), s.end())},
                         {"action", std::vector<double>(out.selection.action.begin(), out.selection.action.end())},
                         {"candidates", out.candidates},
                         {"candidate_digest", hex64(out.candidate_digest)},
                         {"winner_is_anchor", out.winner.is_anchor},
                         {"lcb", out.winner.lcb},
                         {"score", out.winner.score},
                         {"support_z", out.audit.support_z},
                         {"violation", out.audit.violation},
                         {"collapse_dist", out.audit.collapse_dist}};
      trace << line.dump() << "\n";
    };
  }
  const EvalResult r = evaluate_agent(agent, *env, o.infer.cfg, o.episodes, o.seed, observe);
  CsvOut csv(o.out, resolved, kEvalHeader);
  csv.row(eval_cells(agent.env, o.seed, config_hash(resolved), o.infer.cfg, o.episodes, r));
  return kOk;
}


// ---------------------------------------------------------------- sweep

struct SweepOpts {
  std::string env = "bandit";
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<std::size_t> Ns{1024};
  std::vector<double> lambdas{1.0};
  std::vector<double> wp_ends{0.4};
  std::vector<std::string> variants{"full"};
  std::vector<double> noises{0.0};
  std::size_t dataset_size = 10000;
  std::size_t episodes = 0;
  std::size_t workers = 1;
  std::string out;
  std::string progress;
  std::string ckpt_dir;
  std::string config;
  TrainConfig train;
  InferOpts infer;
};

struct SweepCell {
  std::uint64_t seed;
  InferenceConfig cfg;
  json resolved;
  std::string hash;
  std::string key;
};

// Runs `count` jobs on up to `workers` threads.
void run_pool(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& job) {
  std::atomic<std::size_t> next{0};
  const auto loop = [&] {
    for (std::size_t i = next++; i < count; i = next++) job(i);
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < std::min(workers, count); ++w) pool.emplace_back(loop);
  loop();
  for (auto& t : pool) t.join();
}

int cmd_sweep(SweepOpts& o, const Overrides& ov) {
  if (!o.config.empty()) {
    const json file = load_config_file(o.config);
    o.env = file.value("env", o.env);
    o.dataset_size = file.value("dataset_size", o.dataset_size);
    o.episodes = file.value("episodes", o.episodes);
    if (file.contains("train")) o.train = file["train"].get<TrainConfig>();
    load_inference_section(file, o.infer);
  }
  ov.apply();
  if (o.workers == 0) throw ConfigError("--workers must be >= 1");
  const auto env = make_env(o.env);
  finish_schedule(o.infer, *env);
  o.train.validate();
  if (o.episodes == 0) o.episodes = default_episodes(o.env);
  if (o.progress.empty()) o.progress = o.out + ".progress";
  if (o.ckpt_dir.empty()) o.ckpt_dir = (fs::path(o.out).parent_path() / "checkpoints").string();
  fs::create_directories(o.ckpt_dir);

  const json train_resolved = {{"env", o.env}, {"dataset_size", o.dataset_size}, {"train", o.train}};
  const std::string train_hash = config_hash(train_resolved);

  std::vector<SweepCell> cells;
  for (std::uint64_t seed : o.seeds)
    for (std::size_t N : o.Ns)
      for (double lambda : o.lambdas)
        for (double wp : o.wp_ends)
          for (const std::string& variant : o.variants)
            for (double noise : o.noises) {
              SweepCell c{seed, o.infer.cfg, {}, {}, {}};
              c.cfg.N = N;
              c.cfg.lambda = lambda;
              c.cfg.wp_end = wp;
              c.cfg.variant = parse_variant(variant);
              c.cfg.critic_noise_sigma = noise;
              c.cfg.validate();
              c.resolved = {{"command", "sweep"},
                            {"env", o.env},
                            {"dataset_size", o.dataset_size},
                            {"train", o.train},
                            {"episodes", o.episodes},
                            {"inference", c.cfg}};
              c.hash = config_hash(c.resolved);
              c.key = c.hash + " seed=" + std::to_string(seed);
              cells.push_back(std::move(c));
            }

  std::set<std::string> done;
  {
    std::ifstream in(o.progress);
    for (std::string line; std::getline(in, line);)
      if (!line.empty()) done.insert(line);
  }
  std::vector<const SweepCell*> todo;
  std::set<std::uint64_t> seeds_needed;
  for (const auto& c : cells) {
    if (done.count(c.key)) continue;
    todo.push_back(&c);
    seeds_needed.insert(c.seed);
  }
  std::cerr << "sweep: " << cells.size() << " cells, " << cells.size() - todo.size() << " already complete\n";
  if (todo.empty()) return kOk;

  // One agent per seed, reused from the checkpoint directory when present.
  const std::vector<std::uint64_t> seed_list(seeds_needed.begin(), seeds_needed.end());
  std::vector<std::optional<Agent>> agents(seed_list.size());
  std::vector<std::string> train_errors(seed_list.size());
  const NormalizationAnchors anchors = standard_anchors(*env);
  run_pool(seed_list.size(), o.workers, [&](std::size_t i) {
    const std::uint64_t seed = seed_list[i];
    const fs::path path =
        fs::path(o.ckpt_dir) / (o.env + "-seed" + std::to_string(seed) + "-" + train_hash.substr(0, 12) + ".ckpt");
    try {
      if (fs::exists(path)) {
        agents[i] = Agent::load(path);
        return;
      }
      const OfflineDataset data = generate_dataset(*env, o.dataset_size, seed, &anchors);
      agents[i] = train_agent(data, o.train, seed, anchors).agent;
      const fs::path tmp = path.string() + ".tmp";
      agents[i]->save(tmp);
      fs::rename(tmp, path);
    } catch (const std::exception& e) {
      train_errors[i] = std::string("training failed: ") + e.what();
    }
  });

  std::vector<std::string> header = kEvalHeader;
  header.push_back("status");
  header.push_back("error");
  CsvOut csv(o.out, json{{"command", "sweep"}, {"env", o.env}, {"train_config_hash", train_hash}}, header, true);
  std::ofstream progress(o.progress, std::ios::app);
  if (!progress) throw FormatError("cannot open '" + o.progress + "' for writing");
  std::mutex writer;
  std::atomic<std::size_t> failures{0};

  run_pool(todo.size(), o.workers, [&](std::size_t j) {
    const SweepCell& c = *todo[j];
    const auto at = std::find(seed_list.begin(), seed_list.end(), c.seed) - seed_list.begin();
    std::vector<std::string> row;
    std::string error;
    try {
      if (!agents[at]) throw ConfigError(train_errors[at]);
      const EvalResult r = evaluate_agent(*agents[at], *env, c.cfg, o.episodes, c.seed);
      row = eval_cells(o.env, c.seed, c.hash, c.cfg, o.episodes, r);
      row.push_back("ok");
      row.push_back("");
    } catch (const std::exception& e) {
      error = e.what();
      EvalResult empty;
      const double nan = std::nan("");
      empty.normalized_score = empty.raw_return_mean = empty.violation_rate = nan;
      empty.mean_collapse_dist = empty.mean_support_z = nan;
      row = eval_cells(o.env, c.seed, c.hash, c.cfg, o.episodes, empty);
      row.push_back("failed");
      row.push_back(error);
      ++failures;
    }
    const std::lock_guard lock(writer);
    csv.row(row);
    if (error.empty()) progress << c.key << "\n" << std::flush;
  });

  if (failures > 0) {
    std::cerr << "sweep: " << failures << " cell(s) failed; see the status column of " << o.out << "\n";
    return kFailure;
  }
  return kOk;
}

// ---------------------------------------------------------------- diagnose

struct NllGapOpts {
  std::string dataset;
  std::string checkpoint;
  std::string model = "behavior";
  std::size_t K = 2;
  std::vector<std::size_t> hidden{32, 32};
  std::size_t fit_steps = 2000;
  std::uint64_t seed = 0;
  std::string out = "-";
};

int cmd_nll_gap(NllGapOpts& o) {
  o.seed = resolve_seed(o.seed);
  const OfflineDataset data = OfflineDataset::load(o.dataset);
  json resolved = {{"command", "diagnose nll-gap"}, {"dataset", file_hash(o.dataset)}};
  NllGap gap;
  std::size_t K = 0;
  if (!o.checkpoint.empty()) {
    const Agent agent = Agent::load(o.checkpoint);
    if (o.model != "behavior" && o.model != "actor") throw ConfigError("--model must be behavior or actor");
    const Cgmm& m = o.model == "actor" ? static_cast<const Cgmm&>(agent.actor) : agent.behavior;
    K = m.K();
    gap = nll_gap(m, data.states, data.actions);
    resolved["checkpoint"] = file_hash(o.checkpoint);
    resolved["model"] = o.model;
  } else {
    CgmmSpec spec;
    spec.state_dim = data.state_dim();
    spec.action_dim = data.action_dim();
    spec.K = o.K;
    spec.hidden = o.hidden;
    BehaviorGmm m(spec, derive_seed(o.seed, "diagnose_fit"));
    PretrainConfig pc;
    pc.steps = o.fit_steps;
    pc.adam.lr = 1e-3;
    pretrain_behavior(m, data.states, data.actions, pc, o.seed);
    K = o.K;
    gap = nll_gap(m, data.states, data.actions);
    resolved["fit"] = {{"K", o.K}, {"hidden", o.hidden}, {"steps", o.fit_steps}};
  }
  CsvOut csv(o.out, resolved, {"env", "seed", "config_hash", "K", "n", "nll_gmm", "nll_top1", "gap"});
  csv.row({data.env, std::to_string(o.seed), config_hash(resolved), num(K), num(data.size()), num(gap.nll_gmm),
           num(gap.nll_top1), num(gap.gap)});
  return kOk;
}

struct ExtremeValueOpts {
  double sigma = 1.0;
  double rho = 0.0;
  std::vector<std::size_t> Ns{1, 64, 1024, 2048};
  std::size_t reps = 10000;
  std::uint64_t seed = 0;
  std::string out = "-";
};

int cmd_extreme_value(ExtremeValueOpts& o) {
  o.seed = resolve_seed(o.seed);
  Rng rng(derive_seed(o.seed, "extreme_value"));
  const auto rows = extreme_value_sim(o.sigma, o.Ns, o.reps, rng, o.rho);
  const json resolved = {
      {"command", "diagnose extreme-value"}, {"sigma", o.sigma}, {"rho", o.rho}, {"reps", o.reps}, {"N", o.Ns}};
  CsvOut csv(o.out, resolved, {"seed", "config_hash", "sigma", "rho", "reps", "N", "empirical_mean", "std_error", "bound"});
  for (const auto& r : rows) {
    csv.row({std::to_string(o.seed), config_hash(resolved), num(o.sigma), num(o.rho), num(o.reps), num(r.N),
             num(r.empirical_mean), num(r.std_error), num(r.bound)});
  }
  return kOk;
}

// ---------------------------------------------------------------- profile

struct ProfileOpts {
  std::string checkpoint;
  std::vector<std::size_t> Ns{1, 64, 1024, 2048};
  std::size_t steps = 1000;
  std::uint64_t seed = 0;
  std::string out = "-";
  InferOpts infer;
};

int cmd_profile(ProfileOpts& o, const Overrides& ov) {
  ov.apply();
  o.seed = resolve_seed(o.seed);
  if (o.steps < 2) throw ConfigError("--steps must be >= 2");
  const Agent agent = Agent::load(o.checkpoint);
  const auto env = make_env(agent.env);
  finish_schedule(o.infer, *env);
  const std::size_t A = env->action_dim();
  const std::size_t model_bytes = inference_param_count(agent) * sizeof(double);
  json resolved = {{"command", "profile"},
                   {"checkpoint", file_hash(o.checkpoint)},
                   {"steps", o.steps},
                   {"inference", o.infer.cfg}};
  resolved["inference"].erase("N");
  CsvOut csv(o.out, resolved,
             {"env", "seed", "config_hash", "N", "steps", "latency_mean_ms", "latency_std_ms", "candidate_bytes",
              "model_bytes", "total_bytes"});
  for (std::size_t N : o.Ns) {
    InferenceConfig cfg = o.infer.cfg;
    cfg.N = N;
    const InferenceEngine engine(agent.actor, agent.behavior, agent.critics, cfg);
    Rng rng(derive_seed(o.seed, "profile"));
    std::vector<Vector> states;
    for (std::size_t i = 0; i < o.steps; ++i) states.push_back(env->reset(rng));
    std::vector<double> ms;
    ms.reserve(o.steps);
    for (const Vector& s : states) {
      const auto t0 = std::chrono::steady_clock::now();
      engine.decide(std::span<const double>(s.data(), static_cast<std::size_t>(s.size())), 0, env->horizon(), rng);
      ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    double mean = 0.0, var = 0.0;
    for (double v : ms) mean += v / static_cast<double>(ms.size());
    for (double v : ms) var += (v - mean) * (v - mean) / static_cast<double>(ms.size() - 1);
    const std::size_t cand = cfg.set_size() * A * sizeof(double);
    csv.row({agent.env, std::to_string(o.seed), config_hash(resolved), num(N), num(o.steps), num(mean),
             num(std::sqrt(var)), num(cand), num(model_bytes), num(cand + model_bytes)});
  }
  return kOk;
}

}  // namespace
}  // namespace gem::cli

int main(int argc, char** argv) {
  using namespace gem;
  using namespace gem::cli;

  CLI::App app{"gem: mixture-actor offline RL with a conservative-support inference score"};
  app.require_subcommand(1);

  GenOpts gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate an offline dataset from an environment's behavior policy");
  gen_cmd->add_option("--env", gen.env, "bandit | maze")->capture_default_str();
  gen_cmd->add_option("--n", gen.n, "Transitions")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Dataset seed (GEM_SEED overrides)")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Dataset path; metadata goes to <path>.json")->required();

  TrainOpts train;
  Overrides train_ov;
  auto* train_cmd = app.add_subcommand("train", "Fit the behavior model, then run the value/critic/actor loop");
  train_ov.add(train_cmd, "--env", train.env, "bandit | maze (ignored with --dataset)");
  train_ov.add(train_cmd, "--seed", train.seed, "Training seed (GEM_SEED overrides)");
  train_cmd->add_option("--dataset", train.dataset, "Existing dataset; otherwise one is generated");
  train_ov.add(train_cmd, "--dataset-size", train.dataset_size, "Transitions to generate without --dataset");
  train_cmd->add_option("--out", train.out, "Checkpoint path")->required();
  train_cmd->add_option("--log", train.log, "Loss log CSV (default <out>.log.csv)");
  train_cmd->add_option("--config", train.config, "JSON config; flags take precedence");
  add_train_config_flags(train_cmd, train_ov, train.train);

  EvalOpts eval, ablate;
  Overrides eval_ov, ablate_ov;
  const auto add_eval = [](CLI::App* cmd, EvalOpts& o, Overrides& ov, bool variant_required) {
    cmd->add_option("--checkpoint", o.checkpoint, "Trained checkpoint")->required();
    o.seed_flag = cmd->add_option("--seed", o.seed, "Evaluation seed (default: the training seed; GEM_SEED overrides)");
    ov.add(cmd, "--episodes", o.episodes, "Episodes (default 50 on bandit, 20 on maze)");
    cmd->add_option("--out", o.out, "Metrics CSV ('-' for stdout)")->capture_default_str();
    cmd->add_option("--trace", o.trace, "Per-decision JSON-lines trace");
    cmd->add_option("--config", o.config, "JSON config; flags take precedence");
    add_inference_flags(cmd, ov, o.infer, variant_required);
  };
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint with the inference-time score");
  add_eval(eval_cmd, eval, eval_ov, false);
  auto* ablate_cmd = app.add_subcommand("ablate", "eval with a required --variant");
  add_eval(ablate_cmd, ablate, ablate_ov, true);

  SweepOpts sweep;
  Overrides sweep_ov;
  auto* sweep_cmd = app.add_subcommand("sweep", "Cross product of N, lambda, wp_end, variant and noise over seeds");
  sweep_ov.add(sweep_cmd, "--env", sweep.env, "bandit | maze");
  sweep_cmd->add_option("--seeds", sweep.seeds, "Training/evaluation seeds")->delimiter(',')->capture_default_str();
  sweep_cmd->add_option("--N", sweep.Ns, "Candidate budgets")->delimiter(',')->capture_default_str();
  sweep_cmd->add_option("--lambda", sweep.lambdas, "Pessimism values")->delimiter(',')->capture_default_str();
  sweep_cmd->add_option("--wp-end", sweep.wp_ends, "Support weights")->delimiter(',')->capture_default_str();
  sweep_cmd->add_option("--variant", sweep.variants, "Variants")->delimiter(',')->capture_default_str();
  sweep_cmd->add_option("--critic-noise", sweep.noises, "Stress noise levels")->delimiter(',')->capture_default_str();
  sweep_ov.add(sweep_cmd, "--dataset-size", sweep.dataset_size, "Transitions per seed");
  sweep_ov.add(sweep_cmd, "--episodes", sweep.episodes, "Episodes per cell (default 50 on bandit, 20 on maze)");
  sweep_cmd->add_option("--workers", sweep.workers, "Concurrent cells")->capture_default_str();
  sweep_cmd->add_option("--out", sweep.out, "Long-format CSV, appended to")->required();
  sweep_cmd->add_option("--progress", sweep.progress, "Completed-cell file (default <out>.progress)");
  sweep_cmd->add_option("--ckpt-dir", sweep.ckpt_dir, "Per-seed checkpoints (default <out dir>/checkpoints)");
  sweep_cmd->add_option("--config", sweep.config, "JSON config; flags take precedence");
  add_train_config_flags(sweep_cmd, sweep_ov, sweep.train);
  {
    Overrides& ov = sweep_ov;
    InferenceConfig& c = sweep.infer.cfg;
    sweep.infer.schedule_flag = ov.add_parsed<Schedule>(sweep_cmd, "--schedule", c.schedule, parse_schedule,
                                                        "cosine | constant (default: constant on single-step envs)");
    ov.add(sweep_cmd, "--ksmooth", c.k_smooth, "Average the top-k candidates");
    ov.add_parsed<Source>(sweep_cmd, "--source", c.source, parse_source, "actor | behavior");
    ov.add_parsed<SupportMode>(sweep_cmd, "--support-mode", c.support_mode, parse_support_mode, "zscore | raw");
  }

  auto* diag_cmd = app.add_subcommand("diagnose", "Audits that do not need an environment rollout");
  diag_cmd->require_subcommand(1);
  NllGapOpts gap;
  auto* gap_cmd = diag_cmd->add_subcommand("nll-gap", "Top-1 component NLL minus mixture NLL on a dataset");
  gap_cmd->add_option("--dataset", gap.dataset, "Dataset to score")->required();
  gap_cmd->add_option("--checkpoint", gap.checkpoint, "Use a trained model instead of fitting one");
  gap_cmd->add_option("--model", gap.model, "behavior | actor (with --checkpoint)")->capture_default_str();
  gap_cmd->add_option("--K", gap.K, "Components of the fitted model")->capture_default_str();
  gap_cmd->add_option("--hidden", gap.hidden, "Hidden widths of the fitted model")->delimiter(',')->capture_default_str();
  gap_cmd->add_option("--fit-steps", gap.fit_steps, "Fitting iterations")->capture_default_str();
  gap_cmd->add_option("--seed", gap.seed, "Fit seed (GEM_SEED overrides)")->capture_default_str();
  gap_cmd->add_option("--out", gap.out, "CSV ('-' for stdout)")->capture_default_str();
  ExtremeValueOpts ev;
  auto* ev_cmd = diag_cmd->add_subcommand("extreme-value", "Monte-Carlo E[max] of Gaussian noise against its bound");
  ev_cmd->add_option("--sigma", ev.sigma, "Noise standard deviation")->capture_default_str();
  ev_cmd->add_option("--rho", ev.rho, "Equicorrelation in [0, 1)")->capture_default_str();
  ev_cmd->add_option("--N", ev.Ns, "Budgets; N+1 draws each")->delimiter(',')->capture_default_str();
  ev_cmd->add_option("--reps", ev.reps, "Monte-Carlo repetitions (>= 1000)")->capture_default_str();
  ev_cmd->add_option("--seed", ev.seed, "Seed (GEM_SEED overrides)")->capture_default_str();
  ev_cmd->add_option("--out", ev.out, "CSV ('-' for stdout)")->capture_default_str();

  ProfileOpts prof;
  Overrides prof_ov;
  auto* prof_cmd = app.add_subcommand("profile", "Decision latency and candidate memory per budget");
  prof_cmd->add_option("--checkpoint", prof.checkpoint, "Trained checkpoint")->required();
  prof_cmd->add_option("--N-grid", prof.Ns, "Budgets")->delimiter(',')->capture_default_str();
  prof_cmd->add_option("--steps", prof.steps, "Timed decisions per budget")->capture_default_str();
  prof_cmd->add_option("--seed", prof.seed, "Seed (GEM_SEED overrides)")->capture_default_str();
  prof_cmd->add_option("--out", prof.out, "CSV ('-' for stdout)")->capture_default_str();
  {
    InferenceConfig& c = prof.infer.cfg;
    prof_ov.add(prof_cmd, "--lambda", c.lambda, "Ensemble pessimism");
    prof_ov.add(prof_cmd, "--wp-end", c.wp_end, "Support weight");
    prof.infer.schedule_flag =
        prof_ov.add_parsed<Schedule>(prof_cmd, "--schedule", c.schedule, parse_schedule, "cosine | constant");
    prof_ov.add_parsed<Variant>(prof_cmd, "--variant", c.variant, parse_variant, "Score variant");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen);
    if (*train_cmd) return cmd_train(train, train_ov);
    if (*eval_cmd) return cmd_eval(eval, eval_ov);
    if (*ablate_cmd) return cmd_eval(ablate, ablate_ov);
    if (*sweep_cmd) return cmd_sweep(sweep, sweep_ov);
    if (*gap_cmd) return cmd_nll_gap(gap);
    if (*ev_cmd) return cmd_extreme_value(ev);
    if (*prof_cmd) return cmd_profile(prof, prof_ov);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}
