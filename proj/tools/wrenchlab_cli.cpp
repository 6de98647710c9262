// command line front end: sampling, training, library campaigns, studies, reports
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "wrenchlab/airframe.hpp"
#include "wrenchlab/alloc.hpp"
#include "wrenchlab/errors.hpp"
#include "wrenchlab/io_util.hpp"
#include "wrenchlab/lab.hpp"
#include "wrenchlab/rl.hpp"
#include "wrenchlab/transfer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace wrenchlab;

namespace {

struct Args {
  std::uint64_t seed = 0;
  std::string config;
  std::string out;
};

std::string utc_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json read_config(const std::string& path) {
  if (!fs::exists(path)) throw ValidationError("config file not found: " + path);
  try {
    return json::parse(io::read_text(path));
  } catch (const json::exception& e) {
    throw ValidationError("config json parse: " + std::string(e.what()));
  }
}

// paths inside a config file resolve against the file's directory
fs::path resolve_from(const std::string& config_path, const std::string& p) {
  const fs::path fp(p);
  if (fp.is_absolute()) return fp;
  return fs::path(config_path).parent_path() / fp;
}

void write_manifest(const Args& a, const std::string& command, const json& config, json extra) {
  extra["command"] = command;
  extra["seed"] = a.seed;
  extra["config"] = config;
  extra["created_utc"] = utc_now();
  io::atomic_write(fs::path(a.out) / "manifest.json", extra.dump(2) + "\n");
}

lab::SamplingSpec sampling_from(const json& j) {
  lab::SamplingSpec spec;
  spec.n_m = j.value("n_m", spec.n_m);
  spec.l_min = j.value("l_min", spec.l_min);
  spec.l_max = j.value("l_max", spec.l_max);
  spec.cone_angle = j.value("cone_angle", spec.cone_angle);
  spec.max_tilt = j.value("max_tilt", spec.max_tilt);
  spec.neighbor_pos_dev = j.value("neighbor_pos_dev", spec.neighbor_pos_dev);
  spec.neighbor_ang_dev = j.value("neighbor_ang_dev", spec.neighbor_ang_dev);
  spec.validate();
  return spec;
}

alloc::AllocMode mode_from(const std::string& s) {
  if (s == "unconstrained") return alloc::AllocMode::unconstrained;
  if (s == "constrained") return alloc::AllocMode::constrained;
  throw ValidationError("unknown allocation mode: " + s);
}

alloc::TrainOptions train_options_from(const json& j) {
  alloc::TrainOptions o;
  o.max_epochs = j.value("max_epochs", o.max_epochs);
  o.patience = j.value("patience", o.patience);
  o.lr = j.value("lr", o.lr);
  o.minibatch = j.value("minibatch", o.minibatch);
  o.val_fraction = j.value("val_fraction", o.val_fraction);
  return o;
}

// the hyperparameter block: campaign recipe unless the config overrides fields
rl::PpoConfig ppo_from(const json& cfg) {
  rl::PpoConfig ppo = lab::campaign_ppo();
  if (cfg.contains("ppo")) ppo = lab::ppo_from_json_text(cfg["ppo"].dump(), ppo);
  return ppo;
}

// allocation net for a command that needs one: load if given, else train
nn::MlpModel alloc_net_from(const json& cfg, const Args& a, const AirframeConfig& airframe,
                            const WrenchBox& box) {
  if (cfg.contains("alloc")) return nn::load_model(resolve_from(a.config, cfg["alloc"]));
  const int n = cfg.value("alloc_n", 50'000);
  const auto ds = alloc::generate_dataset(airframe, box, alloc::AllocMode::unconstrained, n, a.seed);
  return alloc::train_allocation_net(ds, alloc::AllocMode::unconstrained, a.seed).model;
}

transfer::MeasureParams measure_params_from(const json& cfg, std::uint64_t seed) {
  transfer::MeasureParams mp;
  mp.mr_envs = cfg.value("mr_envs", mp.mr_envs);
  mp.mr_steps = cfg.value("mr_steps", mp.mr_steps);
  mp.mwd_samples = cfg.value("mwd_samples", mp.mwd_samples);
  if (cfg.value("standard_w2", false)) mp.mwd_form = transfer::WassersteinForm::standard_w2;
  mp.seed = seed;
  return mp;
}

std::string curve_summary_csv(const rl::TrainingCurve& curve) { return rl::curve_to_csv(curve); }

// -- subcommand bodies -- //

void cmd_sample(const Args& a) {
  const json cfg = read_config(a.config);
  const lab::SamplingSpec spec =
      sampling_from(cfg.contains("sampling") ? cfg["sampling"] : json::object());
  const int count = cfg.value("count", 1);
  if (count < 1) throw ValidationError("count must be >= 1");
  fs::create_directories(a.out);

  Rng rng(a.seed);
  std::vector<AirframeConfig> sampled;
  if (cfg.contains("base")) {
    const AirframeConfig base = load_config(resolve_from(a.config, cfg["base"]));
    sampled = lab::sample_neighbors(base, count, spec, rng);
  } else {
    for (int i = 0; i < count; ++i) sampled.push_back(lab::sample_config(spec, rng));
  }

  json files = json::array();
  for (int i = 0; i < count; ++i) {
    const std::string name = "config-" + std::to_string(i) + ".json";
    save_config(fs::path(a.out) / name, sampled[static_cast<std::size_t>(i)]);
    json f;
    f["file"] = name;
    f["hash"] = io::hex_u64(config_hash(sampled[static_cast<std::size_t>(i)]));
    files.push_back(f);
  }
  json extra;
  extra["configs"] = files;
  write_manifest(a, "sample", cfg, extra);
}

void cmd_train_alloc(const Args& a) {
  const json cfg = read_config(a.config);
  if (!cfg.contains("airframe")) throw ValidationError("config needs an \"airframe\" path");
  const AirframeConfig airframe = load_config(resolve_from(a.config, cfg["airframe"]));
  const alloc::AllocMode mode = mode_from(cfg.value("mode", std::string("unconstrained")));
  const int n = cfg.value("n", 50'000);
  const int eval_n = cfg.value("eval_n", 100'000);
  const alloc::TrainOptions opts =
      train_options_from(cfg.contains("train") ? cfg["train"] : json::object());
  fs::create_directories(a.out);

  const WrenchBox box = compute_wrench_box(airframe);
  const auto ds = alloc::generate_dataset(airframe, box, mode, n, a.seed);
  if (cfg.value("keep_dataset", false)) alloc::save_dataset(fs::path(a.out) / "dataset.bin", ds);
  auto res = alloc::train_allocation_net(ds, mode, a.seed, opts);
  nn::save_model(fs::path(a.out) / "alloc.bin", res.model);

  std::ostringstream log;
  log << "epoch,train_loss,val_loss\n";
  log.precision(17);
  for (int e = 0; e < res.log.epochs; ++e)
    log << e << ',' << res.log.train_loss[static_cast<std::size_t>(e)] << ','
        << res.log.val_loss[static_cast<std::size_t>(e)] << '\n';
  io::atomic_write(fs::path(a.out) / "train-log.csv", log.str());

  const std::uint64_t eval_seed = mix_seed(a.seed, 0x6576616c);
  const alloc::AllocError err =
      alloc::evaluate_allocation_error(res.model, airframe, box, mode, eval_n, eval_seed);
  io::atomic_write(fs::path(a.out) / "error-report.json",
                   alloc::error_report_json(config_hash(airframe), mode, eval_n, err, eval_seed));

  json extra;
  extra["config_hash"] = io::hex_u64(config_hash(airframe));
  extra["mode"] = cfg.value("mode", std::string("unconstrained"));
  extra["n"] = n;
  extra["epochs"] = res.log.epochs;
  extra["plateaued"] = res.log.plateaued;
  extra["qp_failures"] = ds.qp_failures;
  extra["max_abs"] = err.max_abs;
  extra["mean_abs"] = err.mean_abs;
  write_manifest(a, "train-alloc", cfg, extra);
}

void cmd_train_policy(const Args& a) {
  const json cfg = read_config(a.config);
  if (!cfg.contains("airframe")) throw ValidationError("config needs an \"airframe\" path");
  const AirframeConfig airframe = load_config(resolve_from(a.config, cfg["airframe"]));
  const WrenchBox box = compute_wrench_box(airframe);
  fs::create_directories(a.out);

  const nn::MlpModel alloc_net = alloc_net_from(cfg, a, airframe, box);
  const rl::PpoConfig ppo = ppo_from(cfg);

  std::optional<rl::PolicyPair> init;
  std::string provenance = "scratch";
  if (cfg.contains("init_policy")) {
    const fs::path ip = resolve_from(a.config, cfg["init_policy"]);
    init = rl::load_policy(ip);
    provenance = ip.string();
  }

  rl::TrainResult res =
      rl::train(airframe, alloc_net, box, ppo, init ? &*init : nullptr, a.seed);
  rl::save_policy(fs::path(a.out) / "policy.bin", res.policy);
  io::atomic_write(fs::path(a.out) / "curve.csv", curve_summary_csv(res.curve));

  json extra;
  extra["config_hash"] = io::hex_u64(config_hash(airframe));
  extra["ppo"] = json::parse(lab::ppo_to_json_text(ppo));
  extra["init"] = provenance;
  extra["final_reward"] = res.curve.final_reward();
  extra["interactions"] = res.curve.final_interactions();
  extra["terminated_reason"] = res.curve.terminated_reason;
  extra["wall_clock_s"] = res.curve.wall_clock_s;
  write_manifest(a, "train-policy", cfg, extra);
}

void cmd_build_library(const Args& a) {
  lab::CampaignConfig cfg = lab::campaign_from_json(io::read_text(a.config));
  cfg.seed = a.seed;
  const transfer::Library lib = lab::build_library(a.out, cfg);
  json extra;
  extra["library"] = "library";
  extra["entries"] = lib.entries.size();
  write_manifest(a, "build-library", json::parse(lab::campaign_to_json(cfg)), extra);
}

void cmd_score(const Args& a) {
  const json cfg = read_config(a.config);
  if (!cfg.contains("airframe")) throw ValidationError("config needs an \"airframe\" path");
  if (!cfg.contains("library")) throw ValidationError("config needs a \"library\" path");
  const AirframeConfig airframe = load_config(resolve_from(a.config, cfg["airframe"]));
  const WrenchBox box = compute_wrench_box(airframe);
  const transfer::Library lib = transfer::open_library(resolve_from(a.config, cfg["library"]));
  const transfer::MeasureId measure =
      transfer::measure_from_string(cfg.value("measure", std::string("deployed-reward")));
  fs::create_directories(a.out);

  nn::MlpModel alloc_net;
  if (measure == transfer::MeasureId::deployed_reward || cfg.contains("alloc"))
    alloc_net = alloc_net_from(cfg, a, airframe, box);

  const transfer::SelectionResult sel =
      transfer::select_donor(airframe, alloc_net, box, lib, measure, measure_params_from(cfg, a.seed));
  io::atomic_write(fs::path(a.out) / "score-table.csv", transfer::score_table_to_csv(sel));

  json extra;
  extra["config_hash"] = io::hex_u64(config_hash(airframe));
  extra["measure"] = transfer::measure_to_string(measure);
  extra["donor_hash"] = io::hex_u64(lib.entries[sel.donor_index].hash);
  extra["donor_name"] = lib.entries[sel.donor_index].name;
  extra["total_cost"] = sel.total_cost;
  write_manifest(a, "score", cfg, extra);
}

void cmd_jump_start(const Args& a) {
  const json cfg = read_config(a.config);
  if (!cfg.contains("airframe")) throw ValidationError("config needs an \"airframe\" path");
  if (!cfg.contains("library")) throw ValidationError("config needs a \"library\" path");
  const AirframeConfig airframe = load_config(resolve_from(a.config, cfg["airframe"]));
  const WrenchBox box = compute_wrench_box(airframe);
  const transfer::Library lib = transfer::open_library(resolve_from(a.config, cfg["library"]));
  const transfer::MeasureId measure =
      transfer::measure_from_string(cfg.value("measure", std::string("deployed-reward")));
  fs::create_directories(a.out);

  const nn::MlpModel alloc_net = alloc_net_from(cfg, a, airframe, box);
  const rl::PpoConfig ppo = ppo_from(cfg);
  const transfer::JumpStartResult js = transfer::jump_start(
      airframe, alloc_net, box, lib, measure, ppo, a.seed, measure_params_from(cfg, a.seed));

  rl::save_policy(fs::path(a.out) / "policy.bin", js.train.policy);
  io::atomic_write(fs::path(a.out) / "curve.csv", curve_summary_csv(js.train.curve));
  io::atomic_write(fs::path(a.out) / "score-table.csv", transfer::score_table_to_csv(js.selection));

  json extra;
  extra["config_hash"] = io::hex_u64(config_hash(airframe));
  extra["measure"] = transfer::measure_to_string(measure);
  extra["donor_hash"] = io::hex_u64(js.donor_hash);
  extra["selection_cost"] = js.selection.total_cost;
  extra["ppo"] = json::parse(lab::ppo_to_json_text(ppo));
  extra["final_reward"] = js.train.curve.final_reward();
  extra["interactions"] = js.train.curve.final_interactions();
  extra["terminated_reason"] = js.train.curve.terminated_reason;
  write_manifest(a, "jump-start", cfg, extra);
}

void cmd_study_correlation(const Args& a) {
  lab::CampaignConfig cfg = lab::campaign_from_json(io::read_text(a.config));
  cfg.seed = a.seed;
  const transfer::Library lib = transfer::open_library(fs::path(a.out) / "library");
  const lab::CorrelationStudy study = lab::correlation_study(a.out, cfg, lib);
  json extra;
  extra["median_scratch_final"] = study.median_scratch_final;
  for (const auto& [name, cell] : study.reported) {
    json c;
    c["goal"] = cell.goal;
    c["rho"] = cell.rho;
    c["p_value"] = cell.p_value;
    c["n"] = cell.n;
    extra["reported"][name] = c;
  }
  write_manifest(a, "study-correlation", json::parse(lab::campaign_to_json(cfg)), extra);
}

void cmd_study_savings(const Args& a) {
  lab::CampaignConfig cfg = lab::campaign_from_json(io::read_text(a.config));
  cfg.seed = a.seed;
  const transfer::Library lib = transfer::open_library(fs::path(a.out) / "library");
  const lab::SavingsStudy study = lab::savings_study(a.out, cfg, lib);
  json extra;
  extra["goal"] = study.goal;
  for (const auto& [s, v] : study.median_savings) extra["median_savings"][s] = v;
  for (const auto& [s, n] : study.failures) extra["failures"][s] = n;
  write_manifest(a, "study-savings", json::parse(lab::campaign_to_json(cfg)), extra);
}

void cmd_study_sensitivity(const Args& a) {
  const json cfg = read_config(a.config);
  const AirframeConfig airframe = cfg.contains("airframe")
                                      ? load_config(resolve_from(a.config, cfg["airframe"]))
                                      : standard_airframe(4);
  const WrenchBox box = compute_wrench_box(airframe);
  fs::create_directories(a.out);
  const nn::MlpModel alloc_net = alloc_net_from(cfg, a, airframe, box);

  rl::PolicyPair policy;
  std::string provenance;
  if (cfg.contains("policy")) {
    const fs::path pp = resolve_from(a.config, cfg["policy"]);
    policy = rl::load_policy(pp);
    provenance = pp.string();
  } else {
    policy = rl::train(airframe, alloc_net, box, ppo_from(cfg), nullptr, a.seed).policy;
    provenance = "trained in place";
  }

  std::vector<double> levels = {0.0, 1e-3, 1e-2, 5e-2};
  if (cfg.contains("levels")) levels = cfg["levels"].get<std::vector<double>>();
  const int n_seeds = cfg.value("seeds", 3);

  const lab::SensitivityStudy study =
      lab::sensitivity_study(airframe, alloc_net, box, policy, levels, n_seeds, a.seed);
  io::atomic_write(fs::path(a.out) / "sensitivity.csv", lab::sensitivity_to_csv(study));

  json extra;
  extra["config_hash"] = io::hex_u64(config_hash(airframe));
  extra["policy"] = provenance;
  extra["levels"] = levels;
  extra["seeds"] = n_seeds;
  json pts = json::array();
  for (const auto& p : study.points) {
    json jp;
    jp["level"] = p.level;
    jp["mean_error"] = p.mean_error;
    jp["per_seed"] = p.per_seed;
    pts.push_back(jp);
  }
  extra["points"] = pts;
  write_manifest(a, "study-sensitivity", cfg, extra);
}

void cmd_report(const Args& a) {
  const json cfg = read_config(a.config);
  const fs::path dir =
      cfg.contains("campaign_dir") ? resolve_from(a.config, cfg["campaign_dir"]) : fs::path(a.out);
  if (!fs::exists(dir / "campaign.json"))
    throw ValidationError("no campaign.json under " + dir.string());
  fs::create_directories(a.out);

  json report;
  report["campaign"] = json::parse(io::read_text(dir / "campaign.json"));

  // library roster from the index
  const fs::path index = dir / "library" / "index.json";
  if (fs::exists(index)) report["library"] = json::parse(io::read_text(index));

  // every run manifest: roster plus the total wall clock of the campaign
  double total_wall = 0.0;
  int n_runs = 0;
  json runs = json::array();
  if (fs::exists(dir / "runs")) {
    std::vector<fs::path> paths;
    for (const auto& e : fs::directory_iterator(dir / "runs"))
      if (e.path().extension() == ".json") paths.push_back(e.path());
    std::sort(paths.begin(), paths.end());
    for (const auto& p : paths) {
      const json run = json::parse(io::read_text(p));
      total_wall += run.value("wall_clock_s", 0.0);
      if (run.contains("strategy")) ++n_runs;
      json r;
      for (const char* k : {"key", "config_hash", "strategy", "seed", "donor_hash",
                            "selection_cost", "final_reward", "interactions",
                            "terminated_reason", "wall_clock_s"})
        if (run.contains(k)) r[k] = run[k];
      runs.push_back(r);
    }
  }
  report["runs"] = runs;
  report["n_training_runs"] = n_runs;
  report["total_wall_clock_s"] = total_wall;

  std::ostringstream csv;
  csv.precision(17);
  csv << "metric,value\n";
  csv << "n_training_runs," << n_runs << '\n';
  csv << "total_wall_clock_s," << total_wall << '\n';

  if (fs::exists(dir / "studies" / "savings.json")) {
    const json sv = json::parse(io::read_text(dir / "studies" / "savings.json"));
    report["savings"] = sv;
    for (const auto& [s, v] : sv["median_savings"].items())
      csv << "median_savings_" << s << ',' << v.get<double>() << '\n';
  }
  if (fs::exists(dir / "studies" / "correlation.csv")) {
    report["correlation_csv"] = io::read_text(dir / "studies" / "correlation.csv");
    // reported rows become csv lines too
    std::istringstream lines(report["correlation_csv"].get<std::string>());
    std::string line;
    std::getline(lines, line);
    while (std::getline(lines, line)) {
      if (line.empty()) continue;
      if (line.back() == '1' && line.rfind(",1") == line.size() - 2) {
        const auto comma = line.find(',');
        csv << "reported_measure," << line.substr(0, comma) << '\n';
      }
    }
  }
  if (fs::exists(dir / "studies" / "sensitivity.csv"))
    report["sensitivity_csv"] = io::read_text(dir / "studies" / "sensitivity.csv");

  io::atomic_write(fs::path(a.out) / "report.json", report.dump(2) + "\n");
  io::atomic_write(fs::path(a.out) / "report.csv", csv.str());
  write_manifest(a, "report", cfg, json::object());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wrench-level multirotor control laboratory"};
  app.require_subcommand(1);

  Args args;
  const std::vector<std::pair<std::string, void (*)(const Args&)>> commands = {
      {"sample", cmd_sample},
      {"train-alloc", cmd_train_alloc},
      {"train-policy", cmd_train_policy},
      {"build-library", cmd_build_library},
      {"score", cmd_score},
      {"jump-start", cmd_jump_start},
      {"study-correlation", cmd_study_correlation},
      {"study-savings", cmd_study_savings},
      {"study-sensitivity", cmd_study_sensitivity},
      {"report", cmd_report},
  };
  for (const auto& [name, fn] : commands) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--seed", args.seed, "rng seed")->required();
    sub->add_option("--config", args.config, "json config path")->required();
    sub->add_option("--out", args.out, "output directory")->required();
    sub->callback([&args, fn] { fn(args); });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "validation error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
