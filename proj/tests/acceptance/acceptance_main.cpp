// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: runs every release criterion end to end and prints one
// PASS/FAIL line per criterion. Exit code 0 iff all pass.
//
//   uniqseg_acceptance [--only 1,2,5] [--skip 8,9] [--work DIR]
//
// Criteria 8/9 train the full ablation matrix (5 arms x 3 seeds, 500/100
// scenes, 20 epochs) and dominate the runtime.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "uniqseg/ablation.hpp"
#include "uniqseg/grad_check.hpp"
#include "uniqseg/run_config.hpp"
#include "uniqseg/scene.hpp"
#include "uniqseg/trainer.hpp"
#include "uniqseg/verification.hpp"

using namespace uniqseg;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string title;
  double budget_seconds;  // 0 = no stated bound
  std::function<Outcome()> run;
};

fs::path g_work = "acceptance_work";

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

Outcome from_checks(std::initializer_list<verify::CheckResult> checks) {
  Outcome o;
  o.passed = true;
  for (const auto& c : checks) {
    o.passed = o.passed && c.passed;
    if (!o.detail.empty()) o.detail += "; ";
    o.detail += c.detail;
  }
  return o;
}

// ---- criteria 1-7, 10, 11 -------------------------------------------------

Outcome run_loss_oracles() {
  return from_checks({verify::check_focal_oracle(), verify::check_dice_oracle()});
}

Outcome run_gradient_suite() {
  Outcome o;
  o.passed = true;
  double worst = 0.0;
  for (const char* name : {"focal", "dice", "cls", "intra", "inter", "equi", "total"}) {
    train::GradCheckReport rep = train::grad_check(name, 1e-4);
    o.passed = o.passed && rep.passed;
    worst = std::max(worst, rep.max_rel_error);
    if (!rep.passed) o.detail += std::string(name) + " FAILED; ";
  }
  char buf[96];
  std::snprintf(buf, sizeof(buf), "7 losses, max rel error %.3g (tol 1e-4)", worst);
  o.detail += buf;
  return o;
}

Outcome run_identity_collapse() { return from_checks({verify::check_identity_collapse()}); }

Outcome run_memory_invariants() {
  return from_checks({verify::check_memory_fuzz(), verify::check_balanced_bound(),
                      verify::check_detach_and_batch_equivalence()});
}

Outcome run_batch_equivalence() {
  return from_checks({verify::check_detach_and_batch_equivalence()});
}

Outcome run_matching_optimality() { return from_checks({verify::check_matching_oracle()}); }

Outcome run_ap_oracle() { return from_checks({verify::check_ap_oracle()}); }

Outcome run_determinism() {
  // Two full deterministic runs with an identical modest config must produce
  // byte-identical metrics logs.
  fs::path dir = g_work / "determinism";
  fs::remove_all(dir);
  scene::SceneSpec spec;
  spec.image_size = 64;
  spec.max_instances = 3;
  scene::DatasetManifest data = scene::render_dataset(24, spec, dir / "data", 77);

  model::ModelConfig mc;
  mc.feature_channels = 8;
  mc.query_count = 8;
  train::TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 4;
  tc.deterministic = true;
  tc.threads = 2;  // worker threads must not affect the log bytes
  tc.memory_capacity = 2048;
  tc.seed = 5;

  auto r1 = train::train<float>(data, std::nullopt, mc, tc, dir / "run1");
  auto r2 = train::train<float>(data, std::nullopt, mc, tc, dir / "run2");
  std::string a = read_file(r1.metrics_path);
  std::string b = read_file(r2.metrics_path);
  Outcome o;
  o.passed = !a.empty() && a == b;
  o.detail = "two runs, " + std::to_string(a.size()) + " log bytes, " +
             (o.passed ? "bitwise identical" : "DIFFER");
  return o;
}

Outcome run_config_defaults() {
  config::RunConfig c = config::parse_run_config("");
  bool ok = c.train.loss.focal_alpha == 0.1 && c.train.loss.focal_gamma == 2.5 &&
            c.train.loss.lambda_equi == 3.0 && c.train.sampling.pixels_per_instance == 50;
  config::RunConfig big = config::parse_run_config("[memory]\ncapacity = 100000\n");
  ok = ok && big.train.memory_capacity == 100000;
  Outcome o;
  o.passed = ok;
  o.detail = "alpha=0.1 gamma=2.5 lambda=3 pixels_per_instance=50, capacity configurable to 100k";
  return o;
}

// ---- criteria 8/9: the directional ablation --------------------------------

/// Shared state so criterion 9 reuses criterion 8's runs.
std::optional<ablate::AblationSummary> g_ablation;

const ablate::AblationSummary& ablation_results() {
  if (g_ablation.has_value()) return *g_ablation;

  const char* override_path = std::getenv("UNIQSEG_ABLATION_CONFIG");
  fs::path cfg_path = override_path ? fs::path(override_path)
                                    : fs::path(UNIQSEG_SOURCE_DIR) / "configs" / "ablation.toml";
  config::RunConfig base = config::load_run_config(cfg_path);
  std::printf("  [ablation config: %s]\n", cfg_path.string().c_str());
  std::printf("  [arms x seeds = %zu x %zu, %d train / %d eval scenes, %d epochs]\n",
              base.ablate_arms.size(), base.ablate_seeds.size(), base.ablate_train_scenes,
              base.ablate_eval_scenes, base.train.epochs);
  std::fflush(stdout);
  g_ablation = ablate::run_ablation(base, g_work / "ablation");
  return *g_ablation;
}

double median_ap(const ablate::AblationSummary& s, const std::string& arm) {
  for (const auto& a : s.arms)
    if (a.arm == arm) return a.median_ap;
  throw ContractError("acceptance: arm missing from ablation summary: " + arm);
}

Outcome run_directional_ablation() {
  const auto& s = ablation_results();
  double base = median_ap(s, "baseline");
  double inter = median_ap(s, "inter");
  double equi = median_ap(s, "equi");
  double both = median_ap(s, "both");
  Outcome o;
  o.passed = inter > base && equi > base && both >= inter && both >= equi;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "median AP x100: baseline %.2f, +inter %.2f, +equi %.2f, +both %.2f",
                base * 100, inter * 100, equi * 100, both * 100);
  o.detail = buf;
  return o;
}

Outcome run_equi_vs_augmentation() {
  const auto& s = ablation_results();
  double equi = median_ap(s, "equi");
  double aug = median_ap(s, "aug");
  Outcome o;
  o.passed = equi > aug;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "median AP x100: equivariance %.2f vs augmentation-only %.2f",
                equi * 100, aug * 100);
  o.detail = buf;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only, skip;
  for (int i = 1; i < argc; ++i) {
    auto parse_list = [](const char* s, std::set<int>& out) {
      int v = 0;
      for (const char* p = s;; ++p) {
        if (*p >= '0' && *p <= '9') {
          v = v * 10 + (*p - '0');
        } else {
          if (v) out.insert(v);
          v = 0;
          if (!*p) break;
        }
      }
    };
    if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
      parse_list(argv[++i], only);
    } else if (std::strcmp(argv[i], "--skip") == 0 && i + 1 < argc) {
      parse_list(argv[++i], skip);
    } else if (std::strcmp(argv[i], "--work") == 0 && i + 1 < argc) {
      g_work = argv[++i];
    }
  }
  fs::create_directories(g_work);

  std::vector<Criterion> criteria = {
      {1, "loss oracles: focal/dice vs independent formulas (1e-10) + pinned scalars", 10.0,
       run_loss_oracles},
      {2, "gradient suite: all seven losses vs finite differences (1e-4)", 300.0,
       run_gradient_suite},
      {3, "identity collapse: equivariance loss == intra loss, 100 draws, exact", 0.0,
       run_identity_collapse},
      {4, "memory invariants: capacity/FIFO/background/bounds/exclusion/detach", 120.0,
       run_memory_invariants},
      {5, "batch equivalence: memory path == brute-force cross-image loss (1e-10)", 0.0,
       run_batch_equivalence},
      {6, "matching optimality: Hungarian == exhaustive enumeration, scale-invariant", 0.0,
       run_matching_optimality},
      {7, "AP oracle: greedy evaluation == exhaustive matching (1e-9) + hand case", 0.0,
       run_ap_oracle},
      {8, "directional ablation: +inter > baseline, +equi > baseline, +both >= each", 7200.0,
       run_directional_ablation},
      {9, "equivariance beats augmentation-only under the same protocol", 0.0,
       run_equi_vs_augmentation},
      {10, "determinism: identical deterministic runs produce bitwise-identical logs", 0.0,
       run_determinism},
      {11, "config defaults: alpha/gamma/lambda/pixels-per-instance/capacity", 0.0,
       run_config_defaults},
  };

  int failures = 0;
  for (const Criterion& c : criteria) {
    if (!only.empty() && !only.contains(c.id)) continue;
    if (skip.contains(c.id)) continue;
    std::printf("criterion %2d: %s\n", c.id, c.title.c_str());
    std::fflush(stdout);
    auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.passed = false;
      o.detail = std::string("exception: ") + e.what();
    }
    double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    bool in_budget = c.budget_seconds <= 0.0 || secs <= c.budget_seconds;
    bool pass = o.passed && in_budget;
    std::printf("criterion %2d: %s (%.1fs%s) — %s\n", c.id, pass ? "PASS" : "FAIL", secs,
                !in_budget ? ", OVER BUDGET" : "", o.detail.c_str());
    std::fflush(stdout);
    failures += pass ? 0 : 1;
  }
  std::printf("%s\n", failures == 0 ? "ALL CRITERIA PASSED" : "CRITERIA FAILED");
  return failures == 0 ? 0 : 1;
}
