// Command-line front end for the interaction-aware planning and
// knowledge-distillation toolkit.
//
// Subcommands: gen-scenarios, train, distill-data, bench, eval, plan.
// Exit codes: 0 success, 2 bad arguments, 3 data error,
// 4 planner non-convergence. IAKD_LOG={error,warn,info,debug} controls
// stderr verbosity.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "iakd/bench.hpp"
#include "iakd/dataset.hpp"
#include "iakd/digest.hpp"
#include "iakd/distill.hpp"
#include "iakd/log.hpp"
#include "iakd/planner.hpp"
#include "iakd/scenario.hpp"
#include "iakd/training.hpp"

namespace fs = std::filesystem;
using namespace iakd;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitBadArgs = 2;
constexpr int kExitDataError = 3;
constexpr int kExitNonConvergence = 4;

struct ToolConfig {
  PlannerConfig planner;
  GeneratorConfig generator;
  nlohmann::json raw;  // full document, for digests and training sections

  TrainConfig training(Role role) const {
    TrainConfig base;
    base.role = role;
    if (role == Role::kTeacher) {
      base.k_var = 5;
      base.k_var_coeff = 1.0;
      base.epochs = 30;
      base.batch_size = 32;
      base.lr = 1e-3;
    } else {
      base.k_var = 1;
      base.k_var_coeff = 128.0;
      base.epochs = 40;
      base.batch_size = 64;
      base.lr = 1e-3;
    }
    const char* key = role == Role::kTeacher ? "teacher" : "student";
    if (raw.contains("training") && raw.at("training").contains(key))
      base = train_config_from_json(raw.at("training").at(key), base);
    return base;
  }

  NetworkDims dims(Role role) const {
    NetworkDims base = role == Role::kTeacher ? teacher_dims() : student_dims();
    const char* key = role == Role::kTeacher ? "teacher" : "student";
    if (raw.contains("training") && raw.at("training").contains(key) &&
        raw.at("training").at(key).contains("dims"))
      base = network_dims_from_json(raw.at("training").at(key).at("dims"), base);
    return base;
  }
};

ToolConfig load_config(const std::string& path) {
  ToolConfig cfg;
  if (path.empty()) {
    cfg.raw = nlohmann::json::object();
    cfg.generator.t_obs = cfg.planner.t_obs;
    cfg.generator.t_plan = cfg.planner.t_plan;
    cfg.generator.dt = cfg.planner.dt;
    return cfg;
  }
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config: " + path);
  f >> cfg.raw;
  cfg.planner = planner_config_from_json(cfg.raw);
  if (cfg.raw.contains("generator")) cfg.generator = generator_config_from_json(cfg.raw.at("generator"));
  cfg.generator.t_obs = cfg.planner.t_obs;
  cfg.generator.t_plan = cfg.planner.t_plan;
  cfg.generator.dt = cfg.planner.dt;
  return cfg;
}

std::vector<fs::path> scenario_files(const std::string& dir) {
  std::vector<fs::path> files;
  if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir);
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no scenario files in " + dir);
  return files;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path.string());
  f << text;
}

std::uint64_t file_digest(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return fnv1a64(bytes);
}

// ---- gen-scenarios -------------------------------------------------------

int cmd_gen_scenarios(const ToolConfig& cfg, int count, std::uint64_t seed, const std::string& out_dir,
                      int vehicles_override, int lanes_override) {
  GeneratorConfig gen = cfg.generator;
  if (vehicles_override >= 0) gen.n_vehicles = vehicles_override;
  if (lanes_override > 0) gen.lanes = lanes_override;
  fs::create_directories(out_dir);
  for (int i = 0; i < count; ++i) {
    const std::uint64_t s_seed = seed + static_cast<std::uint64_t>(i);
    const Scenario s = generate_scenario(gen, s_seed);
    char name[64];
    std::snprintf(name, sizeof(name), "scenario_%08llu.json", static_cast<unsigned long long>(s_seed));
    write_text(fs::path(out_dir) / name, scenario_to_string(s));
  }
  log::info("wrote " + std::to_string(count) + " scenarios to " + out_dir);
  return kExitOk;
}

// ---- train ----------------------------------------------------------------

std::vector<DistillationRecord> pairs_from_scenarios(const ToolConfig& cfg, const std::string& dir) {
  std::vector<DistillationRecord> pairs;
  std::uint32_t id = 0;
  for (const auto& path : scenario_files(dir)) {
    const Scenario sc = load_scenario(path.string());
    GeneratorConfig gen = cfg.generator;
    gen.n_vehicles = sc.n_vehicles() - 1;
    gen.lanes = sc.lanes.count;
    gen.lane_width = sc.lanes.width;
    gen.dt = sc.dt;
    gen.t_obs = sc.ego().length();
    gen.t_plan = cfg.planner.t_plan;
    const ScenarioWithFuture swf = generate_scenario_with_future(gen, sc.seed);
    // the file must be a product of this generator config
    for (int v = 0; v < sc.n_vehicles(); ++v)
      if ((swf.scenario.histories[static_cast<std::size_t>(v)].points -
           sc.histories[static_cast<std::size_t>(v)].points)
              .cwiseAbs()
              .maxCoeff() > 0.0)
        throw std::runtime_error("scenario " + path.string() +
                                 " does not regenerate from the configured generator (seed/config mismatch)");
    DistillationRecord rec;
    rec.scenario_id = id++;
    rec.step_index = 0;
    for (const auto& h : swf.scenario.histories) rec.histories.push_back(h.points);
    rec.candidate = swf.future.front();
    rec.prediction = swf.future;
    rec.round_to_f32();
    pairs.push_back(std::move(rec));
  }
  return pairs;
}

int cmd_train(const ToolConfig& cfg, const std::string& role_name, const std::string& data,
              const std::string& out_weights, std::uint64_t seed, int epochs_override, double lr_override) {
  const Role role = role_name == "teacher" ? Role::kTeacher : Role::kStudent;
  TrainConfig tc = cfg.training(role);
  tc.seed = seed;
  if (epochs_override >= 0) tc.epochs = epochs_override;
  if (lr_override > 0) tc.lr = lr_override;

  std::vector<DistillationRecord> records;
  if (fs::is_directory(data)) {
    if (role != Role::kTeacher)
      throw std::invalid_argument("student training needs a distillation dataset (.ds), not a scenario directory");
    records = pairs_from_scenarios(cfg, data);
  } else {
    auto [header, recs] = load_dataset(data);
    if (role == Role::kStudent && header.kind != DatasetKind::kDistillation)
      throw std::runtime_error("student training needs a distillation dataset");
    records = std::move(recs);
  }
  log::info("training " + role_name + " on " + std::to_string(records.size()) + " examples, " +
            std::to_string(tc.epochs) + " epochs");

  const TrainResult r = role == Role::kTeacher ? train_teacher(records, tc, cfg.dims(role))
                                               : train_student(records, tc, cfg.dims(role));
  r.params.save(out_weights);
  std::ostringstream losslog;
  losslog << "epoch,train_loss,val_loss\n";
  losslog.precision(17);
  for (const auto& row : r.log) losslog << row.epoch << ',' << row.train_loss << ',' << row.val_loss << '\n';
  write_text(out_weights + ".loss.csv", losslog.str());
  log::info("wrote " + out_weights);
  return kExitOk;
}

// ---- distill-data ----------------------------------------------------------

int cmd_distill_data(const ToolConfig& cfg, const std::string& scenarios_dir, const std::string& teacher_path,
                     std::uint64_t seed, const std::string& out, unsigned threads, int min_steps, int max_steps) {
  const NetworkParameters teacher = NetworkParameters::load(teacher_path);
  std::vector<Scenario> scenarios;
  for (const auto& path : scenario_files(scenarios_dir)) scenarios.push_back(load_scenario(path.string()));

  DistillOptions opt;
  opt.planner = cfg.planner;
  opt.traffic = cfg.generator.traffic;
  opt.latent_seed = seed;
  opt.min_steps = min_steps;
  opt.max_steps = max_steps;
  opt.threads = threads;
  const DistillOutput result = generate_student_dataset(scenarios, teacher, opt);
  if (result.records.empty()) throw std::runtime_error("distillation produced no records (all scenarios failed?)");

  DatasetHeader header;
  header.config_digest = fnv1a64(planner_config_to_json(cfg.planner).dump());
  header.latent_seed = seed;
  header.kind = DatasetKind::kDistillation;
  save_dataset(out, header, result.records);

  nlohmann::json scenarios_json = nlohmann::json::array();
  long failures = 0;
  for (const auto& s : result.scenarios) {
    scenarios_json.push_back(
        {{"id", s.scenario_id}, {"success", s.success}, {"error", s.error}, {"records", s.records}, {"steps", s.steps}});
    if (!s.success) ++failures;
  }
  const nlohmann::json manifest = {
      {"tool_version", IAKD_VERSION},
      {"host", host_descriptor()},
      {"records", result.records.size()},
      {"latent_seed", seed},
      {"config_digest", digest_hex(header.config_digest)},
      {"teacher_digest", digest_hex(params_digest(teacher))},
      {"scenario_failures", failures},
      {"teacher_vs_sim",
       {{"ade", result.teacher_vs_sim.ade}, {"fde", result.teacher_vs_sim.fde}, {"count", result.teacher_vs_sim.count}}},
      {"scenarios", scenarios_json}};
  write_text(out + ".manifest.json", manifest.dump(2) + "\n");
  log::info("wrote " + std::to_string(result.records.size()) + " records to " + out);
  return kExitOk;
}

// ---- bench ------------------------------------------------------------------

int cmd_bench(const ToolConfig& cfg, const std::string& scenarios_dir, const std::string& teacher_path,
              const std::string& student_path, int episodes, std::uint64_t seed, const std::string& out_dir,
              int min_steps, int max_steps) {
  const NetworkParameters teacher = NetworkParameters::load(teacher_path);
  const NetworkParameters student = NetworkParameters::load(student_path);

  // bucket scenario files by surrounding-vehicle count, keep the first
  // `episodes` of each bucket (paired design uses identical sets)
  std::map<int, std::vector<Scenario>> buckets;
  for (const auto& path : scenario_files(scenarios_dir)) {
    Scenario s = load_scenario(path.string());
    buckets[s.n_vehicles() - 1].push_back(std::move(s));
  }
  std::vector<Scenario> selected;
  for (auto& [n, list] : buckets) {
    const std::size_t take = episodes > 0 ? std::min<std::size_t>(list.size(), static_cast<std::size_t>(episodes))
                                          : list.size();
    for (std::size_t i = 0; i < take; ++i) selected.push_back(std::move(list[i]));
  }

  BenchOptions opt;
  opt.planner = cfg.planner;
  opt.traffic = cfg.generator.traffic;
  opt.seed = seed;
  opt.latent_seed = seed;
  opt.min_steps = min_steps;
  opt.max_steps = max_steps;
  const BenchReport report = run_paired_bench(selected, teacher, student, opt);

  fs::create_directories(out_dir);
  write_text(fs::path(out_dir) / "report.csv", bench_report_csv(report));
  write_text(fs::path(out_dir) / "samples.csv", bench_samples_csv(report));
  write_text(fs::path(out_dir) / "report.json", bench_report_json(report).dump(2) + "\n");
  write_text(fs::path(out_dir) / "manifest.json", report.manifest.dump(2) + "\n");
  log::info("bench report written to " + out_dir);
  return kExitOk;
}

// ---- eval -------------------------------------------------------------------

int cmd_eval(const std::string& weights_path, const std::string& data, int horizon, std::uint64_t seed,
             const std::string& out) {
  const NetworkParameters params = NetworkParameters::load(weights_path);
  auto [header, records] = load_dataset(data);
  const MetricReport m = evaluate_ade_fde(params, records, horizon, seed);
  const std::string text = metric_report_to_json(m).dump(2) + "\n";
  std::cout << text;
  if (!out.empty()) write_text(out, text);
  return kExitOk;
}

// ---- plan -------------------------------------------------------------------

int cmd_plan(const ToolConfig& cfg, const std::string& scenario_path, const std::string& weights_path,
             std::uint64_t seed, const std::string& out) {
  const Scenario sc = load_scenario(scenario_path.c_str());
  const NetworkParameters params = NetworkParameters::load(weights_path);
  std::unique_ptr<Predictor> predictor;
  if (params.role() == Role::kTeacher)
    predictor = std::make_unique<TeacherPredictor>(params, seed);
  else
    predictor = std::make_unique<StudentPredictor>(params);

  PlanInput input;
  input.histories = sc.histories;
  input.ego_state = state_from_history(sc.ego(), sc.dt);
  input.lanes = sc.lanes;
  input.target_lane = sc.target_lane;
  input.desired_speed = sc.desired_speed;
  const PlanResult r = plan_step(input, *predictor, cfg.planner);

  nlohmann::json traj = nlohmann::json::array();
  for (const auto& s : r.trajectory.states) traj.push_back({s.x, s.y, s.heading, s.speed});
  nlohmann::json controls = nlohmann::json::array();
  for (const auto& u : r.controls) controls.push_back({u.steer, u.accel});
  const nlohmann::json doc = {{"trajectory", traj},
                              {"controls", controls},
                              {"cost", r.diag.final_cost},
                              {"epochs", r.diag.epochs},
                              {"converged", r.diag.converged},
                              {"predictor_calls", r.diag.predictor_calls},
                              {"predictor", predictor->name()},
                              {"prediction", prediction_to_json(r.final_prediction)}};
  const std::string text = doc.dump(2) + "\n";
  std::cout << text;
  if (!out.empty()) write_text(out, text);
  return r.diag.converged ? kExitOk : kExitNonConvergence;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"interaction-aware MPC planning with distilled prediction networks"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::uint64_t seed = 0;
  std::string out;
  unsigned threads = 1;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--seed", seed, "base RNG seed");
  app.add_option("--out", out, "output path");
  app.add_option("--threads", threads, "worker threads (data generation only)");

  auto* gen = app.add_subcommand("gen-scenarios", "generate synthetic scenario files");
  int gen_count = 10, gen_vehicles = -1, gen_lanes = -1;
  gen->add_option("--count", gen_count, "number of scenarios");
  gen->add_option("--vehicles", gen_vehicles, "surrounding vehicles per scenario");
  gen->add_option("--lanes", gen_lanes, "lane count");

  auto* train = app.add_subcommand("train", "train the teacher or the student network");
  std::string train_role, train_data;
  int train_epochs = -1;
  double train_lr = -1.0;
  train->add_option("--role", train_role, "teacher|student")->required()->check(CLI::IsMember({"teacher", "student"}));
  train->add_option("--data", train_data, "scenario dir (teacher) or dataset file")->required();
  train->add_option("--epochs", train_epochs, "override epoch count");
  train->add_option("--lr", train_lr, "override learning rate");

  auto* distill = app.add_subcommand("distill-data", "generate distillation records with the teacher in the planner");
  std::string distill_scenarios, distill_teacher;
  int distill_min_steps = 9, distill_max_steps = 30;
  distill->add_option("--scenarios", distill_scenarios, "scenario directory")->required();
  distill->add_option("--teacher", distill_teacher, "teacher weights")->required();
  distill->add_option("--min-steps", distill_min_steps, "min planning steps per episode");
  distill->add_option("--max-steps", distill_max_steps, "max planning steps per episode");

  auto* bench = app.add_subcommand("bench", "paired teacher/student benchmark");
  std::string bench_scenarios, bench_teacher, bench_student;
  int bench_episodes = 0, bench_min_steps = 9, bench_max_steps = 18;
  bench->add_option("--scenarios", bench_scenarios, "scenario directory")->required();
  bench->add_option("--teacher", bench_teacher, "teacher weights")->required();
  bench->add_option("--student", bench_student, "student weights")->required();
  bench->add_option("--episodes", bench_episodes, "episodes per vehicle-count bucket (0 = all)");
  bench->add_option("--min-steps", bench_min_steps, "min planning steps per episode");
  bench->add_option("--max-steps", bench_max_steps, "max planning steps per episode");

  auto* eval = app.add_subcommand("eval", "ADE/FDE of a network against a dataset");
  std::string eval_weights, eval_data;
  int eval_horizon = 6;
  eval->add_option("--weights", eval_weights, "network weights")->required();
  eval->add_option("--data", eval_data, "dataset file")->required();
  eval->add_option("--horizon", eval_horizon, "evaluation horizon (steps)");

  auto* plan = app.add_subcommand("plan", "plan a single scenario and print the trajectory");
  std::string plan_scenario, plan_weights;
  plan->add_option("--scenario", plan_scenario, "scenario file")->required();
  plan->add_option("--weights", plan_weights, "predictor weights")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitBadArgs;
  }

  try {
    const ToolConfig cfg = load_config(config_path);
    if (gen->parsed()) {
      if (out.empty()) throw std::invalid_argument("gen-scenarios requires --out DIR");
      return cmd_gen_scenarios(cfg, gen_count, seed, out, gen_vehicles, gen_lanes);
    }
    if (train->parsed()) {
      if (out.empty()) throw std::invalid_argument("train requires --out WEIGHTS");
      return cmd_train(cfg, train_role, train_data, out, seed, train_epochs, train_lr);
    }
    if (distill->parsed()) {
      if (out.empty()) throw std::invalid_argument("distill-data requires --out FILE");
      return cmd_distill_data(cfg, distill_scenarios, distill_teacher, seed, out, threads, distill_min_steps,
                              distill_max_steps);
    }
    if (bench->parsed()) {
      if (out.empty()) throw std::invalid_argument("bench requires --out DIR");
      if (threads > 1) log::info("bench ignores --threads: timing runs stay on a single worker");
      return cmd_bench(cfg, bench_scenarios, bench_teacher, bench_student, bench_episodes, seed, out,
                       bench_min_steps, bench_max_steps);
    }
    if (eval->parsed()) return cmd_eval(eval_weights, eval_data, eval_horizon, seed, out);
    if (plan->parsed()) return cmd_plan(cfg, plan_scenario, plan_weights, seed, out);
  } catch (const std::invalid_argument& e) {
    log::error(e.what());
    return kExitBadArgs;
  } catch (const std::exception& e) {
    log::error(e.what());
    return kExitDataError;
  }
  return kExitBadArgs;
}
