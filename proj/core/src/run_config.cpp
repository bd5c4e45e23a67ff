// SPDX-License-Identifier: Apache-2.0
#include "uniqseg/run_config.hpp"

#include <set>
#include <sstream>

#include "uniqseg/errors.hpp"
#include "uniqseg/toml_lite.hpp"

namespace uniqseg::config {
namespace {

/// Tracks which keys of a section were consumed so leftovers can be named.
class SectionReader {
 public:
  SectionReader(const toml::Table& table, const std::string& name) : name_(name) {
    auto it = table.find(name);
    if (it != table.end()) section_ = &it->second;
  }

  template <typename Fn>
  void key(const std::string& k, Fn&& apply) {
    if (!section_) return;
    auto it = section_->find(k);
    if (it == section_->end()) return;
    consumed_.insert(k);
    try {
      apply(it->second);
    } catch (const std::bad_variant_access&) {
      throw ConfigError("config [" + name_ + "] " + k + ": wrong value type");
    }
  }

  void finish() const {
    if (!section_) return;
    for (const auto& [k, v] : *section_)
      if (!consumed_.contains(k))
        throw ConfigError("config: unknown key '" + k + "' in section [" + name_ + "]");
  }

 private:
  std::string name_;
  const toml::Section* section_ = nullptr;
  std::set<std::string> consumed_;
};

int to_int(const toml::Value& v) { return static_cast<int>(v.as_int()); }

}  // namespace

RunConfig parse_run_config(const std::string& toml_text) {
  toml::Table table = toml::parse(toml_text);

  static const std::set<std::string> known_sections = {
      "",      "scene",  "model",      "loss",  "sampling",
      "transforms", "memory", "train", "paths", "ablate"};
  for (const auto& [name, section] : table) {
    if (!known_sections.contains(name))
      throw ConfigError("config: unknown section [" + name + "]");
    if (name.empty() && !section.empty())
      throw ConfigError("config: unknown key '" + section.begin()->first +
                        "' outside any section");
  }

  RunConfig c;

  SectionReader scene(table, "scene");
  scene.key("image_size", [&](const toml::Value& v) { c.scene.image_size = to_int(v); });
  scene.key("class_count", [&](const toml::Value& v) { c.scene.class_count = to_int(v); });
  scene.key("min_instances", [&](const toml::Value& v) { c.scene.min_instances = to_int(v); });
  scene.key("max_instances", [&](const toml::Value& v) { c.scene.max_instances = to_int(v); });
  scene.key("min_instance_area",
            [&](const toml::Value& v) { c.scene.min_instance_area = to_int(v); });
  scene.key("occlusion", [&](const toml::Value& v) { c.scene.occlusion = v.as_bool(); });
  scene.finish();

  SectionReader model(table, "model");
  model.key("feature_channels",
            [&](const toml::Value& v) { c.model.feature_channels = to_int(v); });
  model.key("stride", [&](const toml::Value& v) { c.model.stride = to_int(v); });
  model.key("query_count", [&](const toml::Value& v) { c.model.query_count = to_int(v); });
  model.finish();
  c.model.class_count = c.scene.class_count;

  SectionReader loss(table, "loss");
  loss.key("focal_alpha", [&](const toml::Value& v) { c.train.loss.focal_alpha = v.as_float(); });
  loss.key("focal_gamma", [&](const toml::Value& v) { c.train.loss.focal_gamma = v.as_float(); });
  loss.key("lambda_equi", [&](const toml::Value& v) { c.train.loss.lambda_equi = v.as_float(); });
  loss.key("dice_eps", [&](const toml::Value& v) { c.train.loss.dice_eps = v.as_float(); });
  loss.key("inter_loss_kind", [&](const toml::Value& v) {
    c.train.loss.inter_loss_kind = loss::inter_loss_kind_from_name(v.as_string());
  });
  loss.key("match_class_weight",
           [&](const toml::Value& v) { c.train.loss.match_class_weight = v.as_float(); });
  loss.key("match_dice_weight",
           [&](const toml::Value& v) { c.train.loss.match_dice_weight = v.as_float(); });
  loss.key("no_object_weight",
           [&](const toml::Value& v) { c.train.loss.no_object_weight = v.as_float(); });
  loss.finish();

  SectionReader sampling(table, "sampling");
  sampling.key("kind", [&](const toml::Value& v) {
    c.train.sampling.kind = membank::sampling_kind_from_name(v.as_string());
  });
  sampling.key("pixels_per_image",
               [&](const toml::Value& v) { c.train.sampling.pixels_per_image = to_int(v); });
  sampling.key("pixels_per_instance",
               [&](const toml::Value& v) { c.train.sampling.pixels_per_instance = to_int(v); });
  sampling.finish();

  SectionReader transforms(table, "transforms");
  auto& tf = c.train.transforms;
  transforms.key("enable_identity", [&](const toml::Value& v) { tf.enable_identity = v.as_bool(); });
  transforms.key("enable_hflip", [&](const toml::Value& v) { tf.enable_hflip = v.as_bool(); });
  transforms.key("enable_crop", [&](const toml::Value& v) { tf.enable_crop = v.as_bool(); });
  transforms.key("crop_ratio_min",
                 [&](const toml::Value& v) { tf.crop_ratio_min = v.as_float(); });
  transforms.key("crop_ratio_max",
                 [&](const toml::Value& v) { tf.crop_ratio_max = v.as_float(); });
  transforms.key("enable_rotation",
                 [&](const toml::Value& v) { tf.enable_rotation = v.as_bool(); });
  transforms.key("rotation_min_deg",
                 [&](const toml::Value& v) { tf.rotation_min_deg = v.as_float(); });
  transforms.key("rotation_max_deg",
                 [&](const toml::Value& v) { tf.rotation_max_deg = v.as_float(); });
  transforms.key("enable_scaling", [&](const toml::Value& v) { tf.enable_scaling = v.as_bool(); });
  transforms.key("scaling_min", [&](const toml::Value& v) { tf.scaling_min = v.as_float(); });
  transforms.key("scaling_max", [&](const toml::Value& v) { tf.scaling_max = v.as_float(); });
  transforms.finish();

  SectionReader memory(table, "memory");
  memory.key("capacity", [&](const toml::Value& v) {
    c.train.memory_capacity = static_cast<std::size_t>(v.as_int());
  });
  memory.finish();

  SectionReader train(table, "train");
  train.key("epochs", [&](const toml::Value& v) { c.train.epochs = to_int(v); });
  train.key("batch_size", [&](const toml::Value& v) { c.train.batch_size = to_int(v); });
  train.key("optimizer", [&](const toml::Value& v) {
    c.train.optimizer = train::optimizer_from_name(v.as_string());
  });
  train.key("learning_rate", [&](const toml::Value& v) { c.train.learning_rate = v.as_float(); });
  train.key("momentum", [&](const toml::Value& v) { c.train.momentum = v.as_float(); });
  train.key("seed", [&](const toml::Value& v) {
    c.train.seed = static_cast<std::uint64_t>(v.as_int());
  });
  train.key("eval_every", [&](const toml::Value& v) { c.train.eval_every = to_int(v); });
  train.key("deterministic", [&](const toml::Value& v) { c.train.deterministic = v.as_bool(); });
  train.key("threads", [&](const toml::Value& v) { c.train.threads = to_int(v); });
  train.key("inter", [&](const toml::Value& v) { c.train.inter_enabled = v.as_bool(); });
  train.key("inter_warmup_epochs",
            [&](const toml::Value& v) { c.train.inter_warmup_epochs = to_int(v); });
  train.key("equi_mode", [&](const toml::Value& v) {
    c.train.equi_mode = train::equi_mode_from_name(v.as_string());
  });
  train.key("share_equi_matching",
            [&](const toml::Value& v) { c.train.share_equi_matching = v.as_bool(); });
  train.finish();

  SectionReader paths(table, "paths");
  paths.key("data", [&](const toml::Value& v) { c.data_dir = v.as_string(); });
  paths.key("eval_data", [&](const toml::Value& v) { c.eval_data_dir = v.as_string(); });
  paths.key("out", [&](const toml::Value& v) { c.out_dir = v.as_string(); });
  paths.finish();

  SectionReader ablate(table, "ablate");
  ablate.key("seeds", [&](const toml::Value& v) {
    c.ablate_seeds.clear();
    for (const toml::Value& s : v.as_array())
      c.ablate_seeds.push_back(static_cast<std::uint64_t>(s.as_int()));
  });
  ablate.key("arms", [&](const toml::Value& v) {
    c.ablate_arms.clear();
    for (const toml::Value& s : v.as_array()) c.ablate_arms.push_back(s.as_string());
  });
  ablate.key("train_scenes", [&](const toml::Value& v) { c.ablate_train_scenes = to_int(v); });
  ablate.key("eval_scenes", [&](const toml::Value& v) { c.ablate_eval_scenes = to_int(v); });
  ablate.key("data_seed", [&](const toml::Value& v) {
    c.ablate_data_seed = static_cast<std::uint64_t>(v.as_int());
  });
  ablate.key("jobs", [&](const toml::Value& v) { c.ablate_jobs = to_int(v); });
  ablate.finish();

  c.validate();
  return c;
}

void RunConfig::validate() const {
  scene.validate();
  model.validate();
  train.validate();
  if (model.class_count != scene.class_count)
    throw ConfigError("config: model/scene class_count mismatch");
  if (ablate_seeds.empty()) throw ConfigError("config: ablate.seeds must not be empty");
  static const std::set<std::string> known_arms = {"baseline", "inter", "equi", "both", "aug"};
  for (const std::string& arm : ablate_arms)
    if (!known_arms.contains(arm)) throw ConfigError("config: unknown ablation arm '" + arm + "'");
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw NotFoundError("config: cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str());
}

std::string to_toml(const RunConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "[scene]\n"
     << "image_size = " << c.scene.image_size << "\n"
     << "class_count = " << c.scene.class_count << "\n"
     << "min_instances = " << c.scene.min_instances << "\n"
     << "max_instances = " << c.scene.max_instances << "\n"
     << "min_instance_area = " << c.scene.min_instance_area << "\n"
     << "occlusion = " << (c.scene.occlusion ? "true" : "false") << "\n\n";
  os << "[model]\n"
     << "feature_channels = " << c.model.feature_channels << "\n"
     << "stride = " << c.model.stride << "\n"
     << "query_count = " << c.model.query_count << "\n\n";
  os << "[loss]\n"
     << "focal_alpha = " << c.train.loss.focal_alpha << "\n"
     << "focal_gamma = " << c.train.loss.focal_gamma << "\n"
     << "lambda_equi = " << c.train.loss.lambda_equi << "\n"
     << "dice_eps = " << c.train.loss.dice_eps << "\n"
     << "inter_loss_kind = \"" << loss::inter_loss_kind_name(c.train.loss.inter_loss_kind)
     << "\"\n"
     << "match_class_weight = " << c.train.loss.match_class_weight << "\n"
     << "match_dice_weight = " << c.train.loss.match_dice_weight << "\n"
     << "no_object_weight = " << c.train.loss.no_object_weight << "\n\n";
  os << "[sampling]\n"
     << "kind = \"" << membank::sampling_kind_name(c.train.sampling.kind) << "\"\n"
     << "pixels_per_image = " << c.train.sampling.pixels_per_image << "\n"
     << "pixels_per_instance = " << c.train.sampling.pixels_per_instance << "\n\n";
  const auto& tf = c.train.transforms;
  os << "[transforms]\n"
     << "enable_identity = " << (tf.enable_identity ? "true" : "false") << "\n"
     << "enable_hflip = " << (tf.enable_hflip ? "true" : "false") << "\n"
     << "enable_crop = " << (tf.enable_crop ? "true" : "false") << "\n"
     << "crop_ratio_min = " << tf.crop_ratio_min << "\n"
     << "crop_ratio_max = " << tf.crop_ratio_max << "\n"
     << "enable_rotation = " << (tf.enable_rotation ? "true" : "false") << "\n"
     << "rotation_min_deg = " << tf.rotation_min_deg << "\n"
     << "rotation_max_deg = " << tf.rotation_max_deg << "\n"
     << "enable_scaling = " << (tf.enable_scaling ? "true" : "false") << "\n"
     << "scaling_min = " << tf.scaling_min << "\n"
     << "scaling_max = " << tf.scaling_max << "\n\n";
  os << "[memory]\n"
     << "capacity = " << c.train.memory_capacity << "\n\n";
  os << "[train]\n"
     << "epochs = " << c.train.epochs << "\n"
     << "batch_size = " << c.train.batch_size << "\n"
     << "optimizer = \"" << train::optimizer_name(c.train.optimizer) << "\"\n"
     << "learning_rate = " << c.train.learning_rate << "\n"
     << "momentum = " << c.train.momentum << "\n"
     << "seed = " << c.train.seed << "\n"
     << "eval_every = " << c.train.eval_every << "\n"
     << "deterministic = " << (c.train.deterministic ? "true" : "false") << "\n"
     << "threads = " << c.train.threads << "\n"
     << "inter = " << (c.train.inter_enabled ? "true" : "false") << "\n"
     << "inter_warmup_epochs = " << c.train.inter_warmup_epochs << "\n"
     << "equi_mode = \"" << train::equi_mode_name(c.train.equi_mode) << "\"\n"
     << "share_equi_matching = " << (c.train.share_equi_matching ? "true" : "false") << "\n\n";
  os << "[paths]\n";
  if (!c.data_dir.empty()) os << "data = \"" << c.data_dir.string() << "\"\n";
  if (!c.eval_data_dir.empty()) os << "eval_data = \"" << c.eval_data_dir.string() << "\"\n";
  if (!c.out_dir.empty()) os << "out = \"" << c.out_dir.string() << "\"\n";
  os << "\n[ablate]\n";
  os << "seeds = [";
  for (std::size_t i = 0; i < c.ablate_seeds.size(); ++i)
    os << (i ? ", " : "") << c.ablate_seeds[i];
  os << "]\narms = [";
  for (std::size_t i = 0; i < c.ablate_arms.size(); ++i)
    os << (i ? ", " : "") << '"' << c.ablate_arms[i] << '"';
  os << "]\n";
  os << "train_scenes = " << c.ablate_train_scenes << "\n"
     << "eval_scenes = " << c.ablate_eval_scenes << "\n"
     << "data_seed = " << c.ablate_data_seed << "\n"
     << "jobs = " << c.ablate_jobs << "\n";
  return os.str();
}

}  // namespace uniqseg::config
