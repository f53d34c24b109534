#include "distillery/cli.hpp"

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "distillery/config.hpp"
#include "distillery/distill.hpp"
#include "distillery/eval.hpp"
#include "distillery/persistence.hpp"
#include "distillery/ppo.hpp"

namespace distillery::cli {
namespace fs = std::filesystem;
namespace {

void configure_logging() {
  static bool done = false;
  if (done) return;
  done = true;
  auto logger = spdlog::stderr_logger_st("distillery");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  const char* level = std::getenv("DISTILLERY_LOG");
  const std::string name = level ? level : "info";
  if (name == "error") spdlog::set_level(spdlog::level::err);
  else if (name == "debug") spdlog::set_level(spdlog::level::debug);
  else spdlog::set_level(spdlog::level::info);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

ExperimentConfig config_or_default(const std::string& path) {
  return path.empty() ? ExperimentConfig{} : load_config(path);
}

void require_parent(const fs::path& path) {
  const fs::path parent = fs::absolute(path).parent_path();
  if (!fs::is_directory(parent))
    fail(ErrorKind::kIo, "output directory " + parent.string() + " does not exist");
}

std::string curve_csv(const std::vector<ppo::CurvePoint>& curve, const std::string& hash) {
  std::ostringstream out;
  out << "# config_hash=" << hash << '\n';
  out << "env_steps,mean_return,std_return,episodes\n";
  for (const auto& p : curve)
    out << p.env_steps << ',' << eval::format_number(p.mean_return) << ','
        << eval::format_number(p.std_return) << ',' << p.episodes << '\n';
  return out.str();
}

std::string loss_csv(const std::vector<double>& losses, const std::string& hash) {
  std::ostringstream out;
  out << "# config_hash=" << hash << '\n';
  out << "epoch,kl\n";
  for (std::size_t i = 0; i < losses.size(); ++i)
    out << i + 1 << ',' << eval::format_number(losses[i]) << '\n';
  return out.str();
}

std::string source_timestamp() {
  const char* epoch = std::getenv("SOURCE_DATE_EPOCH");
  return epoch ? epoch : "0";
}

// --- subcommands ---

struct TrainTeacherArgs {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
};

void train_teacher(const TrainTeacherArgs& a, std::ostream& out) {
  const ExperimentConfig cfg = load_config(a.config);
  const fs::path dir(a.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) fail(ErrorKind::kIo, "cannot create output directory " + dir.string());

  const std::uint64_t seed = phase_seed(a.seed, "teacher");
  spdlog::info("training {} teacher on {} for {} env steps", nn::to_string(cfg.tier),
               cfg.env.describe(), cfg.ppo.total_env_steps);
  ppo::TrainResult result = ppo::train(cfg.env, cfg.tier, cfg.ppo, seed, cfg.widths);
  if (!result.curve.empty())
    spdlog::info("final mean return {:.4f}", result.curve.back().mean_return);

  io::Provenance prov{"ppo", cfg.env, a.seed, result.env_steps, cfg.hash()};
  io::save_checkpoint(result.policy, prov, dir / "teacher.ckpt");
  io::write_text_atomic(dir / "teacher_curve.csv", curve_csv(result.curve, cfg.hash()));
  out << (dir / "teacher.ckpt").string() << '\n';
}

struct CollectArgs {
  std::string teacher;
  std::int64_t records = 0;
  std::uint64_t seed = 0;
  std::string out;
};

void collect(const CollectArgs& a, std::ostream& out) {
  require_parent(a.out);
  const io::LoadedCheckpoint teacher = io::load_checkpoint(a.teacher);
  const envs::EnvSpec& env = teacher.provenance.env;
  io::require_compatible(teacher.net, env);
  spdlog::info("collecting {} records from {} on {}", a.records, a.teacher, env.describe());
  distill::ReplayBuffer buffer =
      distill::collect_replay(teacher.net, env, a.records, phase_seed(a.seed, "collection"),
                              fs::path(a.teacher).filename().string());
  buffer.metadata.seed = a.seed;
  buffer.metadata.timestamp = source_timestamp();
  buffer.metadata.config_hash = teacher.provenance.config_hash;
  io::save_replay(buffer, a.out);
  out << a.out << '\n';
}

struct DistillArgs {
  std::string buffer;
  std::string tier;
  int epochs = 0;
  std::uint64_t seed = 0;
  std::string out;
  std::string config;
};

void run_distill(const DistillArgs& a, std::ostream& out) {
  require_parent(a.out);
  const ExperimentConfig cfg = config_or_default(a.config);
  const distill::ReplayBuffer buffer = io::load_replay(a.buffer);
  const nn::CapacityTier tier = nn::parse_tier(a.tier);
  distill::DistillConfig dcfg = cfg.distill;
  dcfg.epochs = a.epochs;
  dcfg.validate();

  const std::uint64_t seed = phase_seed(a.seed, "distill");
  Rng init_rng(seed, stream_id("student.init"));
  nn::ActorCriticNet student = nn::ActorCriticNet::initialized(
      ppo::topology_for(buffer.metadata.env, tier, cfg.widths), init_rng);
  spdlog::info("distilling {} records into a {} student for {} epochs", buffer.size(),
               nn::to_string(tier), a.epochs);

  const std::uint64_t steps_before = envs::global_step_count();
  distill::DistillResult result = distill::distill(std::move(student), buffer, dcfg, seed);
  if (envs::global_step_count() != steps_before)
    fail(ErrorKind::kUsage, "distillation stepped an environment");
  spdlog::info("final KL {:.6g}", result.epoch_loss.back());

  io::Provenance prov{"distill", buffer.metadata.env, a.seed, 0, cfg.hash()};
  io::save_checkpoint(result.student, prov, a.out);
  io::write_text_atomic(a.out + ".loss.csv", loss_csv(result.epoch_loss, cfg.hash()));
  out << a.out << '\n';
}

struct FinetuneArgs {
  std::string student;
  std::string config;
  std::int64_t steps = 0;
  std::uint64_t seed = 0;
  std::string out;
};

void run_finetune(const FinetuneArgs& a, std::ostream& out) {
  require_parent(a.out);
  ExperimentConfig cfg = load_config(a.config);
  const io::LoadedCheckpoint student = io::load_checkpoint(a.student);
  io::require_compatible(student.net, cfg.env);
  cfg.ppo.total_env_steps = a.steps;
  spdlog::info("fine-tuning {} on {} for {} env steps", a.student, cfg.env.describe(), a.steps);
  ppo::TrainResult result =
      distill::finetune(student.net, cfg.env, cfg.ppo, phase_seed(a.seed, "finetune"),
                        cfg.finetune_warmup);
  io::Provenance prov{"finetune", cfg.env, a.seed, result.env_steps, cfg.hash()};
  io::save_checkpoint(result.policy, prov, a.out);
  io::write_text_atomic(a.out + ".curve.csv", curve_csv(result.curve, cfg.hash()));
  out << a.out << '\n';
}

struct EvaluateArgs {
  std::string policy;
  std::string config;
  std::int64_t steps = 0;
  std::uint64_t seed = 0;
  std::string out;
  std::string agent;
};

void run_evaluate(const EvaluateArgs& a, std::ostream& out) {
  require_parent(a.out);
  const ExperimentConfig cfg = load_config(a.config);
  const io::LoadedCheckpoint ckpt = io::load_checkpoint(a.policy);
  io::require_compatible(ckpt.net, cfg.env);
  const std::int64_t steps = a.steps > 0 ? a.steps : cfg.eval_steps;
  const eval::EvalReport report = eval::evaluate(eval::NetPolicy(ckpt.net), cfg.env, steps,
                                                 phase_seed(a.seed, "eval"));
  const std::string agent = a.agent.empty() ? fs::path(a.policy).stem().string() : a.agent;
  spdlog::info("{}: {} episodes, mean {:.4f} +- {:.4f}, high {}", agent, report.episodes,
               report.mean, report.std, report.high);
  io::write_text_atomic(a.out, eval::eval_csv(report, cfg.env.describe(), agent, cfg.hash()));
  out << a.out << '\n';
}

struct SweepArgs {
  std::string buffer;
  std::string tiers;
  std::string epochs;
  std::uint64_t seed = 0;
  std::string out;
  std::string config;
  std::int64_t eval_steps = 0;
};

void run_sweep(const SweepArgs& a, std::ostream& out) {
  require_parent(a.out);
  const ExperimentConfig cfg = config_or_default(a.config);
  const distill::ReplayBuffer buffer = io::load_replay(a.buffer);
  std::vector<nn::CapacityTier> tiers;
  for (const auto& t : split_list(a.tiers)) tiers.push_back(nn::parse_tier(t));
  std::vector<int> epochs;
  for (const auto& e : split_list(a.epochs)) {
    try {
      epochs.push_back(std::stoi(e));
    } catch (const std::exception&) {
      fail(ErrorKind::kConfig, "--epochs: '" + e + "' is not an integer");
    }
  }
  distill::SweepOptions options;
  options.distill = cfg.distill;
  options.widths = cfg.widths;
  options.eval_steps = a.eval_steps > 0 ? a.eval_steps : cfg.eval_steps;
  const auto rows = distill::epoch_sweep(tiers, epochs, buffer, buffer.metadata.env, options,
                                         phase_seed(a.seed, "sweep"));
  for (const auto& row : rows)
    spdlog::info("{} @ {} epochs: mean {:.4f} +- {:.4f}", nn::to_string(row.tier), row.epochs,
                 row.report.mean, row.report.standard_error());
  io::write_text_atomic(a.out, distill::sweep_csv(rows, buffer.metadata.env.describe(), cfg.hash()));
  out << a.out << '\n';
}

struct ReportArgs {
  std::string columns;
  std::string teacher;
  std::string baseline;
  std::string out;
};

void run_report(const ReportArgs& a, std::ostream& out) {
  std::vector<eval::ScoreColumn> columns;
  for (const auto& item : split_list(a.columns)) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == item.size())
      fail(ErrorKind::kUsage, "--columns entries must look like name=file.csv, got '" + item + "'");
    const std::string name = item.substr(0, eq);
    columns.push_back(eval::parse_score_csv(io::read_text(item.substr(eq + 1)), name));
  }
  const auto baseline = a.baseline.empty() ? std::nullopt : std::optional<std::string>(a.baseline);
  const eval::ComparisonTable table = eval::comparison_report(columns, a.teacher, baseline);
  out << table.to_text();
  if (!a.out.empty()) {
    require_parent(a.out);
    io::write_text_atomic(a.out, table.to_csv());
  }
}

}  // namespace

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kUsage: return 1;
    case ErrorKind::kConfig:
    case ErrorKind::kDomain:
    case ErrorKind::kUnsupported: return 2;
    case ErrorKind::kNumeric: return 3;
    case ErrorKind::kIo:
    case ErrorKind::kFormat: return 4;
  }
  return 1;
}

std::uint64_t phase_seed(std::uint64_t seed, std::string_view phase) {
  return Rng(seed, stream_id(phase)).next_u64();
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  configure_logging();
  CLI::App app{"Actor distillation for PPO: train teachers, collect replay buffers, distill "
               "students, fine-tune and report.",
               "distillery"};
  app.require_subcommand(1);
  app.fallthrough(false);

  TrainTeacherArgs train_args;
  auto* train_cmd = app.add_subcommand("train-teacher", "Train a PPO teacher");
  train_cmd->add_option("--config", train_args.config, "Experiment config file")->required();
  train_cmd->add_option("--seed", train_args.seed, "Root seed")->required();
  train_cmd->add_option("--out", train_args.out, "Output directory")->required();

  CollectArgs collect_args;
  auto* collect_cmd = app.add_subcommand("collect", "Record a replay buffer from a teacher");
  collect_cmd->add_option("--teacher", collect_args.teacher, "Teacher checkpoint")->required();
  collect_cmd->add_option("--records", collect_args.records, "Number of records")
      ->required()
      ->check(CLI::PositiveNumber);
  collect_cmd->add_option("--seed", collect_args.seed, "Root seed")->required();
  collect_cmd->add_option("--out", collect_args.out, "Replay buffer file")->required();

  DistillArgs distill_args;
  auto* distill_cmd = app.add_subcommand("distill", "Distill a student from a replay buffer");
  distill_cmd->add_option("--buffer", distill_args.buffer, "Replay buffer file")->required();
  distill_cmd->add_option("--tier", distill_args.tier, "Student capacity tier")
      ->required()
      ->check(CLI::IsMember({"high", "medium", "low"}));
  distill_cmd->add_option("--epochs", distill_args.epochs, "Distillation epochs")
      ->required()
      ->check(CLI::PositiveNumber);
  distill_cmd->add_option("--seed", distill_args.seed, "Root seed")->required();
  distill_cmd->add_option("--out", distill_args.out, "Student checkpoint")->required();
  distill_cmd->add_option("--config", distill_args.config, "Optional experiment config");

  FinetuneArgs finetune_args;
  auto* finetune_cmd = app.add_subcommand("finetune", "Fine-tune a distilled student with PPO");
  finetune_cmd->add_option("--student", finetune_args.student, "Student checkpoint")->required();
  finetune_cmd->add_option("--config", finetune_args.config, "Experiment config file")->required();
  finetune_cmd->add_option("--steps", finetune_args.steps, "Environment step budget")
      ->required()
      ->check(CLI::NonNegativeNumber);
  finetune_cmd->add_option("--seed", finetune_args.seed, "Root seed")->required();
  finetune_cmd->add_option("--out", finetune_args.out, "Tuned checkpoint")->required();

  EvaluateArgs eval_args;
  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a policy checkpoint");
  eval_cmd->add_option("--policy", eval_args.policy, "Policy checkpoint")->required();
  eval_cmd->add_option("--config", eval_args.config, "Experiment config file")->required();
  eval_cmd->add_option("--steps", eval_args.steps, "Evaluation step budget")
      ->required()
      ->check(CLI::PositiveNumber);
  eval_cmd->add_option("--seed", eval_args.seed, "Root seed")->required();
  eval_cmd->add_option("--out", eval_args.out, "Report CSV")->required();
  eval_cmd->add_option("--agent", eval_args.agent, "Agent name (default: checkpoint stem)");

  SweepArgs sweep_args;
  auto* sweep_cmd = app.add_subcommand("sweep-epochs", "Distill and evaluate over an epoch grid");
  sweep_cmd->add_option("--buffer", sweep_args.buffer, "Replay buffer file")->required();
  sweep_cmd->add_option("--tiers", sweep_args.tiers, "Comma-separated tiers")->required();
  sweep_cmd->add_option("--epochs", sweep_args.epochs, "Comma-separated epoch counts")->required();
  sweep_cmd->add_option("--seed", sweep_args.seed, "Root seed")->required();
  sweep_cmd->add_option("--out", sweep_args.out, "Sweep CSV")->required();
  sweep_cmd->add_option("--config", sweep_args.config, "Optional experiment config");
  sweep_cmd->add_option("--eval-steps", sweep_args.eval_steps, "Evaluation steps per row");

  ReportArgs report_args;
  auto* report_cmd = app.add_subcommand("report", "Compare score columns by geometric mean");
  report_cmd->add_option("--columns", report_args.columns, "name=csv,... score columns")->required();
  report_cmd->add_option("--teacher", report_args.teacher, "Teacher column name")->required();
  report_cmd->add_option("--baseline", report_args.baseline, "Optional baseline column name");
  report_cmd->add_option("--out", report_args.out, "Optional CSV output");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*train_cmd) train_teacher(train_args, out);
    else if (*collect_cmd) collect(collect_args, out);
    else if (*distill_cmd) run_distill(distill_args, out);
    else if (*finetune_cmd) run_finetune(finetune_args, out);
    else if (*eval_cmd) run_evaluate(eval_args, out);
    else if (*sweep_cmd) run_sweep(sweep_args, out);
    else if (*report_cmd) run_report(report_args, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return 4;
  }
  return 0;
}

int run(int argc, const char* const argv[]) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace distillery::cli
