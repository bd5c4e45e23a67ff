// SPDX-License-Identifier: Apache-2.0
//
// uniqseg command-line interface: dataset generation, training, evaluation,
// the ablation matrix and the verification batteries.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "uniqseg/ablation.hpp"
#include "uniqseg/checkpoint.hpp"
#include "uniqseg/errors.hpp"
#include "uniqseg/evaluator.hpp"
#include "uniqseg/run_config.hpp"
#include "uniqseg/scene.hpp"
#include "uniqseg/svg_plot.hpp"
#include "uniqseg/trainer.hpp"
#include "uniqseg/verification.hpp"

namespace fs = std::filesystem;
using namespace uniqseg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitVerifyFailed = 4;

config::RunConfig load_config_or_default(const std::string& path) {
  if (path.empty()) {
    config::RunConfig c;
    c.validate();
    return c;
  }
  return config::load_run_config(path);
}

void emit_loss_curves(const fs::path& metrics_path, const fs::path& svg_path) {
  std::ifstream f(metrics_path);
  if (!f) return;
  std::vector<double> total, cls, intra, inter, equi;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || j.contains("kind")) continue;
    total.push_back(j.value("total", 0.0));
    cls.push_back(j.value("cls", 0.0));
    intra.push_back(j.value("intra", 0.0));
    inter.push_back(j.value("inter", 0.0));
    equi.push_back(j.value("equi", 0.0));
  }
  if (total.empty()) return;
  svg::write_line_chart(svg_path, "training losses",
                        {{"total", total},
                         {"cls", cls},
                         {"intra", intra},
                         {"inter", inter},
                         {"equi", equi}});
}

int cmd_gen(int count, std::uint64_t seed, const std::string& out,
            const std::string& spec_path) {
  config::RunConfig c = load_config_or_default(spec_path);
  scene::DatasetManifest m = scene::render_dataset(count, c.scene, out, seed);
  std::printf("wrote %zu scenes to %s\n", m.scenes.size(), out.c_str());
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& data, const std::string& eval_data,
              const std::string& out, bool deterministic, bool no_inter, bool no_equi,
              bool aug_only, const std::string& resume) {
  config::RunConfig c = config::load_run_config(config_path);
  if (!data.empty()) c.data_dir = data;
  if (!eval_data.empty()) c.eval_data_dir = eval_data;
  if (!out.empty()) c.out_dir = out;
  if (c.data_dir.empty()) throw ConfigError("train: no dataset (set --data or [paths] data)");
  if (c.out_dir.empty()) throw ConfigError("train: no output directory (set --out or [paths] out)");

  if (deterministic) c.train.deterministic = true;
  if (no_inter) c.train.inter_enabled = false;
  if (no_equi && aug_only) throw ConfigError("train: --no-equi conflicts with --aug-only");
  if (no_equi) c.train.equi_mode = train::EquiMode::Off;
  if (aug_only) c.train.equi_mode = train::EquiMode::Augmentation;

  scene::DatasetManifest trainset = scene::load_manifest(c.data_dir);
  std::optional<scene::DatasetManifest> evalset;
  if (!c.eval_data_dir.empty()) evalset = scene::load_manifest(c.eval_data_dir);

  std::optional<fs::path> resume_path;
  if (!resume.empty()) resume_path = resume;

  c.model.class_count = c.scene.class_count;
  model::ModelParams<float> probe = model::init_params<float>(c.model);
  std::printf("model parameters: %zu\n", probe.parameter_count());

  train::TrainResult r =
      train::train<float>(trainset, evalset, c.model, c.train, c.out_dir, resume_path);
  emit_loss_curves(r.metrics_path, c.out_dir / "loss_curves.svg");

  // The effective configuration ships with the run for exact replays.
  std::ofstream cf(c.out_dir / "effective_config.toml", std::ios::trunc);
  cf << config::to_toml(c);

  std::printf("final checkpoint: %s\n", r.final_checkpoint.string().c_str());
  std::printf("metrics log:      %s\n", r.metrics_path.string().c_str());
  if (r.final_ap >= 0) std::printf("final AP: %.4f\n", r.final_ap);
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& data) {
  model::ModelParams<float> params = ckpt::load_model<float>(checkpoint);
  scene::DatasetManifest manifest = scene::load_manifest(data);
  std::vector<scene::SyntheticScene> scenes = scene::load_all_scenes(manifest);
  apeval::APReport report = apeval::evaluate_model(params, scenes);
  std::printf("%s", report.to_table().c_str());
  std::printf("%s\n", report.to_json().c_str());
  return kExitOk;
}

int cmd_ablate(const std::string& config_path, const std::string& out, const std::string& arms,
               int jobs) {
  config::RunConfig c = load_config_or_default(config_path);
  if (!out.empty()) c.out_dir = out;
  if (c.out_dir.empty()) throw ConfigError("ablate: no output directory");
  if (!arms.empty()) {
    c.ablate_arms.clear();
    std::string cur;
    for (char ch : arms + ",") {
      if (ch == ',') {
        if (!cur.empty()) c.ablate_arms.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(ch);
      }
    }
  }
  if (jobs > 0) c.ablate_jobs = jobs;
  c.validate();

  ablate::AblationSummary s = ablate::run_ablation(c, c.out_dir);
  std::ifstream md(s.table_md);
  std::cout << md.rdbuf();
  std::printf("summary: %s\nplot:    %s\n", s.table_json.string().c_str(),
              s.plot_svg.string().c_str());
  return kExitOk;
}

int cmd_verify(const std::string& suite) {
  std::vector<verify::CheckResult> results = verify::run_suite(suite);
  bool ok = true;
  for (const verify::CheckResult& r : results) {
    std::printf("[%s] %s — %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
    ok = ok && r.passed;
  }
  return ok ? kExitOk : kExitVerifyFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale training framework for query-based instance segmentation"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  int gen_count = 0;
  std::uint64_t gen_seed = 1;
  std::string gen_out, gen_spec;
  gen->add_option("--count", gen_count, "number of scenes")->required();
  gen->add_option("--seed", gen_seed, "base seed (scene i uses seed+i)");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--spec", gen_spec, "TOML config supplying the [scene] section");

  // train
  auto* tr = app.add_subcommand("train", "train a model");
  std::string tr_config, tr_data, tr_eval, tr_out, tr_resume;
  bool tr_det = false, tr_no_inter = false, tr_no_equi = false, tr_aug_only = false;
  tr->add_option("--config", tr_config, "TOML run config")->required();
  tr->add_option("--data", tr_data, "training dataset directory");
  tr->add_option("--eval-data", tr_eval, "evaluation dataset directory");
  tr->add_option("--out", tr_out, "output directory");
  tr->add_option("--resume", tr_resume, "checkpoint to resume from");
  tr->add_flag("--deterministic", tr_det, "force deterministic single-run reproducibility");
  tr->add_flag("--no-inter", tr_no_inter, "disable the inter-scene discrimination loss");
  tr->add_flag("--no-equi", tr_no_equi, "disable the transformed branch entirely");
  tr->add_flag("--aug-only", tr_aug_only,
               "use the transformed branch as plain data augmentation");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint (mask AP)");
  std::string ev_ckpt, ev_data;
  ev->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
  ev->add_option("--data", ev_data, "dataset directory")->required();

  // ablate
  auto* ab = app.add_subcommand("ablate", "run the training-objective ablation matrix");
  std::string ab_config, ab_out, ab_arms;
  int ab_jobs = 0;
  ab->add_option("--config", ab_config, "TOML run config");
  ab->add_option("--out", ab_out, "output directory");
  ab->add_option("--arms", ab_arms, "comma-separated subset of baseline,inter,equi,both,aug");
  ab->add_option("--jobs", ab_jobs, "parallel runs");

  // verify
  auto* vf = app.add_subcommand("verify", "run the verification batteries");
  std::string vf_suite = "all";
  vf->add_option("--suite", vf_suite, "grads|oracles|memory|all");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen(gen_count, gen_seed, gen_out, gen_spec);
    if (tr->parsed())
      return cmd_train(tr_config, tr_data, tr_eval, tr_out, tr_det, tr_no_inter, tr_no_equi,
                       tr_aug_only, tr_resume);
    if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data);
    if (ab->parsed()) return cmd_ablate(ab_config, ab_out, ab_arms, ab_jobs);
    if (vf->parsed()) return cmd_verify(vf_suite);
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitDivergence;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  } catch (const IntegrityError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  } catch (const std::exception& e) {  // config/contract/not-found/capacity
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}
