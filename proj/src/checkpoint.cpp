#include "simseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "simseg/config.hpp"

namespace simseg {
namespace {

constexpr char kMagic[8] = {'S', 'I', 'M', 'S', 'E', 'G', 'C', 'K'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are written in host order");

NamedTensors snapshot_params(SegNetwork& net) {
  NamedTensors out;
  for (auto& [name, v] : net.parameters()) out.emplace_back(name, v.value());
  return out;
}

NamedTensors snapshot_buffers(SegNetwork& net) {
  NamedTensors out;
  for (auto& [name, t] : net.buffers()) out.emplace_back(name, *t);
  return out;
}

Json shape_json(const Shape4& s) { return {s.n, s.c, s.h, s.w}; }

}  // namespace

Checkpoint make_checkpoint(SegNetwork& net, const CheckpointMeta& meta,
                           const OptimizerState& optimizer) {
  Checkpoint c;
  c.config = net.config();
  c.parameters = snapshot_params(net);
  c.buffers = snapshot_buffers(net);
  c.optimizer = optimizer;
  c.meta = meta;
  return c;
}

void load_into(SegNetwork& net, const Checkpoint& ckpt) {
  std::map<std::string, const Tensor*> params, buffers;
  for (const auto& [n, t] : ckpt.parameters) params[n] = &t;
  for (const auto& [n, t] : ckpt.buffers) buffers[n] = &t;
  std::vector<std::string> bad;
  auto copy = [&](const std::string& name, Tensor& dst,
                  std::map<std::string, const Tensor*>& src) {
    auto it = src.find(name);
    if (it == src.end()) {
      bad.push_back(name + " (missing)");
      return;
    }
    if (!(it->second->shape() == dst.shape())) {
      bad.push_back(name + " " + it->second->shape().str() + " vs " +
                    dst.shape().str());
    } else {
      dst = *it->second;
    }
    src.erase(it);
  };
  for (auto& [name, v] : net.parameters()) copy(name, v.mutable_value(), params);
  for (auto& [name, t] : net.buffers()) copy(name, *t, buffers);
  for (const auto& [n, t] : params) bad.push_back(n + " (unexpected)");
  for (const auto& [n, t] : buffers) bad.push_back(n + " (unexpected buffer)");
  if (!bad.empty()) {
    std::string msg = "checkpoint does not match the network:";
    for (const auto& b : bad) msg += " " + b + ";";
    throw CheckpointError(msg);
  }
}

SegNetwork restore_network(const Checkpoint& ckpt) {
  SegNetwork net = build_network(ckpt.config, 0);
  load_into(net, ckpt);
  return net;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  Json header;
  header["config"] = to_json(ckpt.config);
  header["meta"] = {{"stage", ckpt.meta.stage},
                    {"epoch", ckpt.meta.epoch},
                    {"best_val_iou", ckpt.meta.best_val_iou},
                    {"seed", ckpt.meta.seed}};
  header["optimizer_step"] = ckpt.optimizer.step;
  Json table = Json::array();
  std::vector<const Tensor*> blobs;
  std::uint64_t offset = 0;
  auto add = [&](const char* kind, const NamedTensors& tensors) {
    for (const auto& [name, t] : tensors) {
      table.push_back({{"kind", kind},
                       {"name", name},
                       {"shape", shape_json(t.shape())},
                       {"offset", offset}});
      offset += t.size();
      blobs.push_back(&t);
    }
  };
  add("param", ckpt.parameters);
  add("buffer", ckpt.buffers);
  add("adam_m", ckpt.optimizer.first_moment);
  add("adam_v", ckpt.optimizer.second_moment);
  header["tensors"] = table;
  const std::string h = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t hlen = h.size();
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const Tensor* t : blobs)
    out.write(reinterpret_cast<const char*>(t->data()),
              static_cast<std::streamsize>(t->size() * sizeof(double)));
  if (!out) throw CheckpointError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t hlen = 0;
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw CheckpointError(path.string() + " is not a checkpoint file");
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  if (!in || version != kCheckpointVersion)
    throw CheckpointError(path.string() + ": unsupported checkpoint version " +
                          std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  in.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
  if (!in || hlen > (1u << 30))
    throw CheckpointError(path.string() + ": corrupt header length");
  std::string h(hlen, '\0');
  in.read(h.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw CheckpointError(path.string() + ": truncated header");

  Checkpoint c;
  try {
    const Json header = Json::parse(h);
    c.config = network_config_from_json(header.at("config"));
    const Json& m = header.at("meta");
    c.meta.stage = m.at("stage").get<std::string>();
    c.meta.epoch = m.at("epoch").get<int>();
    c.meta.best_val_iou = m.at("best_val_iou").get<double>();
    c.meta.seed = m.at("seed").get<std::uint64_t>();
    c.optimizer.step = header.at("optimizer_step").get<std::int64_t>();
    for (const Json& e : header.at("tensors")) {
      const auto s = e.at("shape").get<std::array<int, 4>>();
      Tensor t(Shape4{s[0], s[1], s[2], s[3]});
      in.read(reinterpret_cast<char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
      if (!in) throw CheckpointError(path.string() + ": truncated tensor data");
      const std::string kind = e.at("kind").get<std::string>();
      const std::string name = e.at("name").get<std::string>();
      if (kind == "param") c.parameters.emplace_back(name, std::move(t));
      else if (kind == "buffer") c.buffers.emplace_back(name, std::move(t));
      else if (kind == "adam_m")
        c.optimizer.first_moment.emplace_back(name, std::move(t));
      else if (kind == "adam_v")
        c.optimizer.second_moment.emplace_back(name, std::move(t));
      else
        throw CheckpointError(path.string() + ": unknown tensor kind " + kind);
    }
  } catch (const Json::exception& e) {
    throw CheckpointError(path.string() + ": malformed header: " + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(path.string() + ": invalid stored config: " +
                          e.what());
  }
  return c;
}

}  // namespace simseg
