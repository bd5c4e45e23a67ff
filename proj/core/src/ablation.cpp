// SPDX-License-Identifier: Apache-2.0
#include "uniqseg/ablation.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "uniqseg/errors.hpp"
#include "uniqseg/evaluator.hpp"
#include "uniqseg/svg_plot.hpp"
#include "uniqseg/trainer.hpp"

namespace uniqseg::ablate {
namespace {

using nlohmann::json;

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

scene::DatasetManifest ensure_dataset(const std::filesystem::path& dir, int count,
                                      const scene::SceneSpec& spec, std::uint64_t seed) {
  if (std::filesystem::exists(dir / "manifest.json")) {
    scene::DatasetManifest m = scene::load_manifest(dir);
    if (static_cast<int>(m.scenes.size()) == count && m.seed == seed && m.spec == spec) return m;
    throw ConfigError("ablate: existing dataset at " + dir.string() +
                      " does not match the requested spec; remove it first");
  }
  return scene::render_dataset(count, spec, dir, seed);
}

}  // namespace

void apply_arm(const std::string& arm, train::TrainConfig& config) {
  if (arm == "baseline") {
    config.inter_enabled = false;
    config.equi_mode = train::EquiMode::Off;
  } else if (arm == "inter") {
    config.inter_enabled = true;
    config.equi_mode = train::EquiMode::Off;
  } else if (arm == "equi") {
    config.inter_enabled = false;
    config.equi_mode = train::EquiMode::Equivariance;
  } else if (arm == "both") {
    config.inter_enabled = true;
    config.equi_mode = train::EquiMode::Equivariance;
  } else if (arm == "aug") {
    config.inter_enabled = false;
    config.equi_mode = train::EquiMode::Augmentation;
  } else {
    throw ConfigError("ablate: unknown arm '" + arm + "'");
  }
}

AblationSummary run_ablation(const config::RunConfig& base, const std::filesystem::path& out_dir) {
  base.validate();
  std::filesystem::create_directories(out_dir);

  scene::DatasetManifest trainset = ensure_dataset(
      out_dir / "data_train", base.ablate_train_scenes, base.scene, base.ablate_data_seed);
  scene::DatasetManifest evalset =
      ensure_dataset(out_dir / "data_eval", base.ablate_eval_scenes, base.scene,
                     base.ablate_data_seed + 0x5eedULL);
  std::vector<scene::SyntheticScene> eval_scenes = scene::load_all_scenes(evalset);

  struct Task {
    std::string arm;
    std::uint64_t seed;
    std::filesystem::path dir;
  };
  std::vector<Task> tasks;
  for (const std::string& arm : base.ablate_arms)
    for (std::uint64_t seed : base.ablate_seeds)
      tasks.push_back({arm, seed, out_dir / (arm + "_seed" + std::to_string(seed))});

  std::vector<ArmResult> results(tasks.size());
  std::atomic<std::size_t> next{0};
  int jobs = base.ablate_jobs > 0 ? base.ablate_jobs
                                  : static_cast<int>(std::thread::hardware_concurrency());
  jobs = std::max(1, std::min<int>(jobs, static_cast<int>(tasks.size())));

  auto worker = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      const Task& task = tasks[i];

      train::TrainConfig tc = base.train;
      tc.seed = task.seed;
      tc.threads = 1;  // run-level parallelism; each run stays sequential
      apply_arm(task.arm, tc);

      train::TrainResult tr = train::train<float>(trainset, std::nullopt, base.model, tc,
                                                  task.dir);
      model::ModelParams<float> params = ckpt::load_model<float>(tr.final_checkpoint);
      ArmResult r;
      r.arm = task.arm;
      r.seed = task.seed;
      r.run_dir = task.dir;
      r.report = apeval::evaluate_model(params, eval_scenes);
      results[i] = std::move(r);
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();

  AblationSummary summary;
  summary.runs = results;

  json runs_json = json::array();
  for (const ArmResult& r : results)
    runs_json.push_back(json{{"arm", r.arm},
                             {"seed", r.seed},
                             {"dir", r.run_dir.string()},
                             {"AP", r.report.ap},
                             {"AP50", r.report.ap50},
                             {"AP75", r.report.ap75},
                             {"AP_S", r.report.ap_small},
                             {"AP_M", r.report.ap_medium},
                             {"AP_L", r.report.ap_large}});

  json arms_json = json::array();
  std::vector<std::string> labels;
  std::vector<double> bars;
  std::ostringstream md;
  md << "| arm | AP | AP50 | AP75 | AP_S | AP_M | AP_L |\n";
  md << "|-----|----|------|------|------|------|------|\n";
  for (const std::string& arm : base.ablate_arms) {
    std::vector<double> ap, ap50, ap75, s, m, l;
    for (const ArmResult& r : results) {
      if (r.arm != arm) continue;
      ap.push_back(r.report.ap);
      ap50.push_back(r.report.ap50);
      ap75.push_back(r.report.ap75);
      s.push_back(r.report.ap_small);
      m.push_back(r.report.ap_medium);
      l.push_back(r.report.ap_large);
    }
    ArmSummary a;
    a.arm = arm;
    a.median_ap = median(ap);
    a.median_ap50 = median(ap50);
    a.median_ap75 = median(ap75);
    a.median_ap_small = median(s);
    a.median_ap_medium = median(m);
    a.median_ap_large = median(l);
    summary.arms.push_back(a);

    arms_json.push_back(json{{"arm", arm},
                             {"AP", a.median_ap},
                             {"AP50", a.median_ap50},
                             {"AP75", a.median_ap75},
                             {"AP_S", a.median_ap_small},
                             {"AP_M", a.median_ap_medium},
                             {"AP_L", a.median_ap_large}});
    char row[256];
    std::snprintf(row, sizeof(row), "| %s | %.1f | %.1f | %.1f | %.1f | %.1f | %.1f |\n",
                  arm.c_str(), a.median_ap * 100, a.median_ap50 * 100, a.median_ap75 * 100,
                  a.median_ap_small * 100, a.median_ap_medium * 100, a.median_ap_large * 100);
    md << row;
    labels.push_back(arm);
    bars.push_back(a.median_ap * 100);
  }

  summary.table_json = out_dir / "summary.json";
  summary.table_md = out_dir / "summary.md";
  summary.plot_svg = out_dir / "ablation.svg";
  {
    std::ofstream f(summary.table_json, std::ios::trunc);
    f << json{{"runs", runs_json}, {"arms", arms_json}}.dump(2) << "\n";
    if (!f) throw IoError("ablate: cannot write summary.json");
  }
  {
    std::ofstream f(summary.table_md, std::ios::trunc);
    f << md.str();
    if (!f) throw IoError("ablate: cannot write summary.md");
  }
  svg::write_bar_chart(summary.plot_svg, "median mask AP per training arm", labels, bars,
                       "AP x100");
  return summary;
}

}  // namespace uniqseg::ablate
