#pragma once

// Training checkpoints.
//
//   "MIMC", version u32, tensor count u32, then per tensor:
//     name length u16, UTF-8 name, rank u8, dims u32 × rank, dtype u8, data
//
// dtype 0 is f32, 1 is u8 (opaque bytes), 2 is u64; all little-endian.
// Model parameters use their own names. Everything else lives under a
// reserved prefix:
//   adam.m/<param>, adam.v/<param>   AdamW moments (f32)
//   meta/step                        completed optimizer steps (u64, rank 0)
//   meta/model_config                model config as JSON text (u8)
//   rng/<stream>                     engine state as text (u8)
//   data/epoch_order                 current epoch permutation (u64)

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mimco/io.hpp"
#include "mimco/trainer.hpp"

namespace mimco {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { kF32 = 0, kU8 = 1, kU64 = 2 };

struct TensorEntry {
  Shape shape;
  DType dtype = DType::kF32;
  std::string raw;  // little-endian element bytes
};

namespace detail {

inline std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::kF32: return 4;
    case DType::kU8: return 1;
    case DType::kU64: return 8;
  }
  return 0;
}

inline void write_entry(io::Writer& w, const std::string& name, const Shape& shape, DType dtype,
                        const std::string& raw) {
  if (name.size() > 0xffff) throw ContractError("checkpoint: tensor name too long");
  if (shape.size() > 0xff) throw ContractError("checkpoint: rank too large for " + name);
  w.u16(static_cast<std::uint16_t>(name.size()));
  w.bytes(name);
  w.u8(static_cast<std::uint8_t>(shape.size()));
  for (auto d : shape) w.u32(static_cast<std::uint32_t>(d));
  w.u8(static_cast<std::uint8_t>(dtype));
  w.bytes(raw);
}

inline std::string f32_bytes(const std::vector<float>& v) {
  io::Writer w;
  for (float x : v) w.f32(x);
  return w.buffer();
}

inline std::string u64_bytes(const std::vector<std::uint64_t>& v) {
  io::Writer w;
  for (auto x : v) w.u64(x);
  return w.buffer();
}

inline std::vector<float> f32_values(const std::string& raw) {
  io::Reader r(raw, "tensor");
  std::vector<float> out(raw.size() / 4);
  for (auto& x : out) x = r.f32();
  return out;
}

inline std::vector<std::uint64_t> u64_values(const std::string& raw) {
  io::Reader r(raw, "tensor");
  std::vector<std::uint64_t> out(raw.size() / 8);
  for (auto& x : out) x = r.u64();
  return out;
}

inline const std::string kAdamM = "adam.m/";
inline const std::string kAdamV = "adam.v/";
inline const std::string kStep = "meta/step";
inline const std::string kModelConfig = "meta/model_config";
inline const std::string kRngPrefix = "rng/";
inline const std::string kEpochOrder = "data/epoch_order";

inline bool reserved(const std::string& name) {
  for (const auto* p : {&kAdamM, &kAdamV, &kRngPrefix})
    if (name.starts_with(*p)) return true;
  return name.starts_with("meta/") || name.starts_with("data/");
}

}  // namespace detail

inline std::string encode_checkpoint(const TrainState& s) {
  std::vector<std::pair<std::string, TensorEntry>> entries;
  for (const auto* p : s.params.list()) entries.push_back({p->name, {p->shape, DType::kF32, detail::f32_bytes(p->data)}});
  for (const auto* p : s.m.list())
    entries.push_back({detail::kAdamM + p->name, {p->shape, DType::kF32, detail::f32_bytes(p->data)}});
  for (const auto* p : s.v.list())
    entries.push_back({detail::kAdamV + p->name, {p->shape, DType::kF32, detail::f32_bytes(p->data)}});
  entries.push_back({detail::kStep, {{}, DType::kU64, detail::u64_bytes({s.step})}});
  const std::string cfg = nlohmann::json(s.params.config).dump();
  entries.push_back({detail::kModelConfig, {{cfg.size()}, DType::kU8, cfg}});
  for (auto st : kAllStreams) {
    auto text = s.rng.state(st);
    entries.push_back({detail::kRngPrefix + std::string(stream_name(st)), {{text.size()}, DType::kU8, text}});
  }
  std::vector<std::uint64_t> order(s.epoch_order.begin(), s.epoch_order.end());
  entries.push_back({detail::kEpochOrder, {{order.size()}, DType::kU64, detail::u64_bytes(order)}});

  io::Writer w;
  w.bytes("MIMC");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, e] : entries) detail::write_entry(w, name, e.shape, e.dtype, e.raw);
  return w.buffer();
}

inline void save_checkpoint(const TrainState& s, const std::string& path) {
  io::Writer w;
  w.bytes(encode_checkpoint(s));
  w.save(path);
}

// Parses the container only; no interpretation of names.
inline std::map<std::string, TensorEntry> read_entries(io::Reader& r) {
  r.expect_magic("MIMC");
  if (const auto v = r.u32(); v != kCheckpointVersion)
    throw FormatError(detail::concat(r.source(), ": unsupported checkpoint version ", v));
  const std::uint32_t count = r.u32();
  std::map<std::string, TensorEntry> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.bytes(r.u16());
    TensorEntry e;
    const std::uint8_t rank = r.u8();
    for (std::uint8_t k = 0; k < rank; ++k) e.shape.push_back(r.u32());
    const std::uint8_t tag = r.u8();
    if (tag > 2) throw FormatError(detail::concat(r.source(), ": unknown dtype tag ", int(tag), " for ", name));
    e.dtype = static_cast<DType>(tag);
    e.raw = r.bytes(numel(e.shape) * detail::dtype_size(e.dtype));
    if (!out.emplace(name, std::move(e)).second) throw FormatError(r.source() + ": duplicate tensor " + name);
  }
  if (!r.done()) throw FormatError(r.source() + ": trailing bytes after last tensor");
  return out;
}

// Restores a full training state. When `expected` is given, the stored
// tensors must match that architecture; every missing, extra or misshapen
// parameter is listed in the CheckpointMismatch.
inline TrainState decode_checkpoint(io::Reader r, const std::optional<ModelConfig>& expected = std::nullopt) {
  auto entries = read_entries(r);
  auto take = [&](const std::string& name, DType dtype) -> TensorEntry& {
    auto it = entries.find(name);
    if (it == entries.end()) throw FormatError(r.source() + ": missing tensor " + name);
    if (it->second.dtype != dtype) throw FormatError(r.source() + ": wrong dtype for " + name);
    return it->second;
  };

  ModelConfig cfg;
  if (expected) {
    cfg = *expected;
  } else {
    try {
      cfg = nlohmann::json::parse(take(detail::kModelConfig, DType::kU8).raw).get<ModelConfig>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(r.source() + ": bad model config: " + e.what());
    }
  }

  TrainState s;
  s.params = ModelParams<float>(cfg);
  s.m = zeros_like<float>(cfg);
  s.v = zeros_like<float>(cfg);

  std::vector<std::string> bad;
  std::vector<std::string> wanted;
  for (const auto* p : s.params.list()) wanted.push_back(p->name);
  auto check = [&](const std::string& name, const Shape& shape) {
    auto it = entries.find(name);
    if (it == entries.end()) {
      bad.push_back(name + " (missing)");
    } else if (it->second.shape != shape || it->second.dtype != DType::kF32) {
      bad.push_back(name + " (stored " + to_string(it->second.shape) + ", expected " + to_string(shape) + ")");
    }
  };
  for (const auto* p : s.params.list()) {
    check(p->name, p->shape);
    check(detail::kAdamM + p->name, p->shape);
    check(detail::kAdamV + p->name, p->shape);
  }
  for (const auto& [name, e] : entries) {
    std::string base = name;
    if (name.starts_with(detail::kAdamM)) base = name.substr(detail::kAdamM.size());
    else if (name.starts_with(detail::kAdamV)) base = name.substr(detail::kAdamV.size());
    else if (detail::reserved(name)) continue;
    if (std::find(wanted.begin(), wanted.end(), base) == wanted.end()) bad.push_back(name + " (unexpected)");
  }
  if (!bad.empty()) {
    std::string msg = r.source() + ": checkpoint does not match the model architecture:";
    for (const auto& b : bad) msg += "\n  " + b;
    throw CheckpointMismatch(msg, bad);
  }

  auto fill = [&](ModelParams<float>& dst, const std::string& prefix) {
    for (auto* p : dst.list()) p->data = detail::f32_values(entries.at(prefix + p->name).raw);
  };
  fill(s.params, "");
  fill(s.m, detail::kAdamM);
  fill(s.v, detail::kAdamV);

  const auto& step = take(detail::kStep, DType::kU64);
  if (!step.shape.empty()) throw FormatError(r.source() + ": meta/step must be a scalar");
  s.step = detail::u64_values(step.raw).at(0);
  for (auto st : kAllStreams)
    s.rng.restore(st, take(detail::kRngPrefix + std::string(stream_name(st)), DType::kU8).raw);
  for (auto i : detail::u64_values(take(detail::kEpochOrder, DType::kU64).raw))
    s.epoch_order.push_back(static_cast<std::size_t>(i));
  return s;
}

inline TrainState load_checkpoint(const std::string& path, const std::optional<ModelConfig>& expected = std::nullopt) {
  return decode_checkpoint(io::Reader::from_file(path), expected);
}

}  // namespace mimco
