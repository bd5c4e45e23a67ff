// SPDX-License-Identifier: Apache-2.0
#include "uniqseg/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "uniqseg/errors.hpp"

namespace uniqseg::ckpt {
namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'U', 'Q', 'S', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
const char* dtype_name() {
  if constexpr (sizeof(T) == 4) return "f32";
  return "f64";
}

json config_to_json(const model::ModelConfig& c) {
  return json{{"feature_channels", c.feature_channels},
              {"stride", c.stride},
              {"query_count", c.query_count},
              {"class_count", c.class_count},
              {"init_seed", c.init_seed}};
}

model::ModelConfig config_from_json(const json& j) {
  model::ModelConfig c;
  c.feature_channels = j.at("feature_channels").get<int>();
  c.stride = j.at("stride").get<int>();
  c.query_count = j.at("query_count").get<int>();
  c.class_count = j.at("class_count").get<int>();
  c.init_seed = j.at("init_seed").get<std::uint64_t>();
  return c;
}

struct BlobWriter {
  std::vector<char> bytes;
  json directory = json::array();

  template <typename T>
  void add(const std::string& name, const T* data, const std::vector<int>& shape,
           std::size_t count) {
    json e{{"name", name},
           {"dtype", dtype_name<T>()},
           {"shape", shape},
           {"offset", bytes.size()},
           {"count", count}};
    directory.push_back(e);
    std::size_t nbytes = count * sizeof(T);
    std::size_t at = bytes.size();
    bytes.resize(at + nbytes);
    std::memcpy(bytes.data() + at, data, nbytes);
  }
};

struct BlobReader {
  json directory;
  std::vector<char> bytes;

  const json* find(const std::string& name) const {
    for (const json& e : directory)
      if (e.at("name").get<std::string>() == name) return &e;
    return nullptr;
  }

  template <typename T>
  void read(const std::string& name, T* dst, std::size_t expected_count) const {
    const json* e = find(name);
    if (!e) throw IntegrityError("checkpoint: missing array " + name);
    if (e->at("dtype").get<std::string>() != dtype_name<T>())
      throw IntegrityError("checkpoint: dtype mismatch for " + name);
    std::size_t count = e->at("count").get<std::size_t>();
    std::size_t offset = e->at("offset").get<std::size_t>();
    if (count != expected_count) throw IntegrityError("checkpoint: size mismatch for " + name);
    if (offset + count * sizeof(T) > bytes.size())
      throw IntegrityError("checkpoint: truncated payload for " + name);
    std::memcpy(dst, bytes.data() + offset, count * sizeof(T));
  }
};

template <typename T>
std::vector<int> tensor_shape(const nn::Tensor<T>& t) {
  std::vector<int> s;
  for (int i = 0; i < t.rank(); ++i) s.push_back(t.dim(i));
  return s;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const CheckpointData<T>& data) {
  BlobWriter blob;
  data.params.for_each([&](const std::string& name, const nn::Tensor<T>& t) {
    blob.add("params/" + name, t.data(), tensor_shape(t), t.size());
  });
  if (data.has_optimizer) {
    data.opt_m.for_each([&](const std::string& name, const nn::Tensor<T>& t) {
      blob.add("opt_m/" + name, t.data(), tensor_shape(t), t.size());
    });
    data.opt_v.for_each([&](const std::string& name, const nn::Tensor<T>& t) {
      blob.add("opt_v/" + name, t.data(), tensor_shape(t), t.size());
    });
  }

  json memory_provenance = json::array();
  if (data.has_memory) {
    blob.add("memory/embeddings", data.memory_embeddings.data(),
             {static_cast<int>(data.memory_provenance.size()),
              data.memory_provenance.empty()
                  ? 0
                  : static_cast<int>(data.memory_embeddings.size() / data.memory_provenance.size())},
             data.memory_embeddings.size());
    for (const membank::Provenance& p : data.memory_provenance)
      memory_provenance.push_back(json{{"scene_id", p.scene_id},
                                       {"instance_id", p.instance_id},
                                       {"class_id", p.class_id},
                                       {"step_added", p.step_added}});
  }

  json header{{"version", kFormatVersion},
              {"precision", dtype_name<T>()},
              {"model", config_to_json(data.params.config)},
              {"has_optimizer", data.has_optimizer},
              {"has_memory", data.has_memory},
              {"memory_capacity", data.memory_capacity},
              {"memory_inserted", data.memory_inserted},
              {"memory_provenance", memory_provenance},
              {"step", data.step},
              {"epoch", data.epoch},
              {"rng_state", data.rng_state},
              {"rng_stream", data.rng_stream},
              {"arrays", blob.directory}};
  std::string header_text = header.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("checkpoint: cannot open for write: " + path.string());
  f.write(kMagic, 8);
  std::uint32_t version = kFormatVersion;
  std::uint64_t header_len = header_text.size();
  f.write(reinterpret_cast<const char*>(&version), sizeof(version));
  f.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  f.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  f.write(blob.bytes.data(), static_cast<std::streamsize>(blob.bytes.size()));
  if (!f) throw IoError("checkpoint: short write: " + path.string());
}

template <typename T>
CheckpointData<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw NotFoundError("checkpoint: cannot open: " + path.string());
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw IntegrityError("checkpoint: bad magic: " + path.string());
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  f.read(reinterpret_cast<char*>(&version), sizeof(version));
  f.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!f || version != kFormatVersion) throw IntegrityError("checkpoint: unsupported version");
  std::string header_text(header_len, '\0');
  f.read(header_text.data(), static_cast<std::streamsize>(header_len));
  if (!f) throw IntegrityError("checkpoint: truncated header");

  json header;
  try {
    header = json::parse(header_text);
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("checkpoint: bad header JSON: ") + e.what());
  }
  if (header.at("precision").get<std::string>() != dtype_name<T>())
    throw IntegrityError("checkpoint: precision mismatch (expected " +
                         std::string(dtype_name<T>()) + ")");

  BlobReader blob;
  blob.directory = header.at("arrays");
  blob.bytes.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());

  CheckpointData<T> data;
  data.params = model::init_params<T>(config_from_json(header.at("model")));
  data.params.for_each([&](const std::string& name, nn::Tensor<T>& t) {
    blob.read("params/" + name, t.data(), t.size());
  });

  data.has_optimizer = header.at("has_optimizer").get<bool>();
  if (data.has_optimizer) {
    data.opt_m = model::zeros_like(data.params);
    data.opt_v = model::zeros_like(data.params);
    data.opt_m.for_each([&](const std::string& name, nn::Tensor<T>& t) {
      blob.read("opt_m/" + name, t.data(), t.size());
    });
    data.opt_v.for_each([&](const std::string& name, nn::Tensor<T>& t) {
      blob.read("opt_v/" + name, t.data(), t.size());
    });
  }

  data.has_memory = header.at("has_memory").get<bool>();
  data.memory_capacity = header.at("memory_capacity").get<std::size_t>();
  data.memory_inserted = header.at("memory_inserted").get<std::int64_t>();
  if (data.has_memory) {
    for (const json& pj : header.at("memory_provenance")) {
      membank::Provenance p;
      p.scene_id = pj.at("scene_id").get<std::string>();
      p.instance_id = pj.at("instance_id").get<int>();
      p.class_id = pj.at("class_id").get<int>();
      p.step_added = pj.at("step_added").get<std::int64_t>();
      data.memory_provenance.push_back(std::move(p));
    }
    const json* e = blob.find("memory/embeddings");
    if (!e) throw IntegrityError("checkpoint: missing memory embeddings");
    data.memory_embeddings.resize(e->at("count").get<std::size_t>());
    blob.read("memory/embeddings", data.memory_embeddings.data(), data.memory_embeddings.size());
  }

  data.step = header.at("step").get<std::int64_t>();
  data.epoch = header.at("epoch").get<int>();
  data.rng_state = header.at("rng_state").get<std::uint64_t>();
  data.rng_stream = header.at("rng_stream").get<std::uint64_t>();
  return data;
}

template <typename T>
void save_model(const std::filesystem::path& path, const model::ModelParams<T>& params) {
  CheckpointData<T> data;
  data.params = params;
  save_checkpoint(path, data);
}

template <typename T>
model::ModelParams<T> load_model(const std::filesystem::path& path) {
  return load_checkpoint<T>(path).params;
}

template void save_checkpoint<float>(const std::filesystem::path&, const CheckpointData<float>&);
template void save_checkpoint<double>(const std::filesystem::path&, const CheckpointData<double>&);
template CheckpointData<float> load_checkpoint<float>(const std::filesystem::path&);
template CheckpointData<double> load_checkpoint<double>(const std::filesystem::path&);
template void save_model<float>(const std::filesystem::path&, const model::ModelParams<float>&);
template void save_model<double>(const std::filesystem::path&, const model::ModelParams<double>&);
template model::ModelParams<float> load_model<float>(const std::filesystem::path&);
template model::ModelParams<double> load_model<double>(const std::filesystem::path&);

}  // namespace uniqseg::ckpt
