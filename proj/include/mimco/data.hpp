#pragma once

// Synthetic labeled image sets and the raw on-disk image format.
//
// Each synthetic image is a class-specific plaid of two sinusoidal gratings
// at angles θ and π − θ (θ, frequency, phase and colour tint depend on the
// label) plus one texture motif per patch drawn from a bank shared by every
// variant, plus pixel noise. The plaid is symmetric under horizontal flips,
// so flip augmentation keeps the label. Values are quantized to the 8-bit
// grid so a raw export reloads bit-exactly.
//
// Raw layout in a directory:
//   <split>.rimg   "RIMG", version u32, count u32, H u32, W u32, C u32,
//                  then count·H·W·C u8 pixels (row-major, channel fastest)
//   <split>.csv    header "index,label", one row per image
//   dataset.json   {"num_classes": K}

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mimco/errors.hpp"
#include "mimco/image.hpp"
#include "mimco/io.hpp"
#include "mimco/rng.hpp"

namespace mimco {

struct Dataset {
  std::vector<Image> images;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return images.size(); }
  bool operator==(const Dataset&) const = default;
};

struct SynthSpec {
  std::size_t n_train = 1000;
  std::size_t n_val = 200;
  std::size_t num_classes = 8;
  std::size_t image_size = 32;
  std::size_t channels = 3;
  std::size_t texture_patch = 8;
  double noise = 0.03;
  std::uint64_t seed = 0;
  // 0 and 1 use disjoint grating parameters over the same texture bank.
  std::uint32_t variant = 0;

  void validate() const {
    if (num_classes < 2) throw ContractError("synth: need at least 2 classes");
    if (n_train < 1 || n_val < 1 || image_size < 1 || channels < 1) throw ContractError("synth: sizes must be >= 1");
    if (texture_patch == 0 || image_size % texture_patch != 0)
      throw ContractError("synth: image size must be divisible by texture_patch");
    if (noise < 0.0) throw ContractError("synth: noise must be >= 0");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SynthSpec, n_train, n_val, num_classes, image_size, channels,
                                                texture_patch, noise, seed, variant)

struct ClassPattern {
  double orientation;
  double frequency;
  double phase;
  std::vector<double> tint;

  bool operator==(const ClassPattern&) const = default;
};

inline std::vector<ClassPattern> class_patterns(const SynthSpec& spec) {
  constexpr double pi = std::numbers::pi;
  const auto k_total = static_cast<double>(spec.num_classes);
  const auto v = static_cast<double>(spec.variant);
  std::vector<ClassPattern> out;
  for (std::size_t k = 0; k < spec.num_classes; ++k) {
    const auto kk = static_cast<double>(k);
    ClassPattern p;
    // θ in (0, π/2), interleaved so the two variants never share one
    p.orientation = 0.5 * pi * (kk + 0.25 + 0.5 * v) / k_total;
    p.frequency = 1.5 + static_cast<double>((k * 3 + spec.variant) % 4);
    p.phase = 2.0 * pi * kk / k_total + v * pi / k_total;
    for (std::size_t c = 0; c < spec.channels; ++c)
      p.tint.push_back(0.6 + 0.4 * std::cos(2.0 * pi * (kk / k_total + static_cast<double>(c) / 3.0) + v));
    out.push_back(std::move(p));
  }
  return out;
}

inline constexpr std::size_t kMotifCount = 16;
inline constexpr std::uint64_t kTextureSeed = 0x7e57u;

// texture_patch² · channels values per motif, uniform in [−1, 1]; depends
// only on the geometry, never on the variant or dataset seed.
inline std::vector<float> texture_bank(const SynthSpec& spec) {
  Engine engine = make_engine(kTextureSeed, spec.texture_patch * 131 + spec.channels);
  std::vector<float> bank(kMotifCount * spec.texture_patch * spec.texture_patch * spec.channels);
  for (auto& v : bank) v = static_cast<float>(std::uniform_real_distribution<double>(-1.0, 1.0)(engine));
  return bank;
}

inline float quantize_u8(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<float>(std::lround(c * 255.0)) / 255.0f;
}

// One image of class `label`; the per-image seed drives phase/amplitude
// jitter, motif choice and noise.
inline Image synth_image(const SynthSpec& spec, const std::vector<ClassPattern>& patterns,
                         const std::vector<float>& bank, std::size_t label, std::uint64_t image_seed) {
  constexpr double pi = std::numbers::pi;
  Engine engine = make_engine(spec.seed, image_seed);
  const auto& pat = patterns.at(label);
  const double jitter = std::uniform_real_distribution<double>(-0.4, 0.4)(engine);
  const double amp = std::uniform_real_distribution<double>(0.8, 1.2)(engine);
  const std::size_t p = spec.texture_patch, g = spec.image_size / p;
  const std::size_t motif_size = p * p * spec.channels;
  std::vector<std::size_t> motif(g * g);
  for (auto& m : motif) m = std::uniform_int_distribution<std::size_t>(0, kMotifCount - 1)(engine);
  const double s = static_cast<double>(spec.image_size);
  const double ct = std::cos(pat.orientation), st = std::sin(pat.orientation);
  const double xc = 0.5 * (s - 1.0);
  Image img(spec.image_size, spec.image_size, spec.channels);
  for (std::size_t y = 0; y < spec.image_size; ++y)
    for (std::size_t x = 0; x < spec.image_size; ++x) {
      // x measured from the centre so the mirror image is the same plaid
      const double dx = static_cast<double>(x) - xc, dy = static_cast<double>(y);
      const double u1 = (dx * ct + dy * st) / s, u2 = (-dx * ct + dy * st) / s;
      const double arg = pat.phase + jitter;
      const double wave = 0.5 * (std::sin(2.0 * pi * pat.frequency * u1 + arg) +
                                 std::sin(2.0 * pi * pat.frequency * u2 + arg));
      const float* mot = bank.data() + motif[(y / p) * g + x / p] * motif_size + ((y % p) * p + x % p) * spec.channels;
      for (std::size_t c = 0; c < spec.channels; ++c) {
        double v = 0.5 + 0.3 * amp * pat.tint[c] * wave + 0.12 * mot[c];
        if (spec.noise > 0.0) v += std::normal_distribution<double>(0.0, spec.noise)(engine);
        img.at(y, x, c) = quantize_u8(v);
      }
    }
  return img;
}

struct SynthData {
  Dataset train;
  Dataset val;
};

// Labels cycle 0..K−1 so every class gets n/K images (±1).
inline SynthData generate(const SynthSpec& spec) {
  spec.validate();
  const auto patterns = class_patterns(spec);
  const auto bank = texture_bank(spec);
  auto make = [&](std::size_t count, std::uint64_t split) {
    Dataset ds;
    ds.num_classes = spec.num_classes;
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t label = i % spec.num_classes;
      const std::uint64_t image_seed = (static_cast<std::uint64_t>(spec.variant) << 40) | (split << 32) | i;
      ds.images.push_back(synth_image(spec, patterns, bank, label, image_seed));
      ds.labels.push_back(label);
    }
    return ds;
  };
  return {make(spec.n_train, 0), make(spec.n_val, 1)};
}

// ---------------------------------------------------------------------------
// raw format

inline constexpr std::uint32_t kRawVersion = 1;

namespace detail {

inline std::string split_path(const std::filesystem::path& dir, const std::string& split, const char* ext) {
  return (dir / (split + ext)).string();
}

}  // namespace detail

inline void write_raw(const Dataset& ds, const std::filesystem::path& dir, const std::string& split) {
  std::filesystem::create_directories(dir);
  if (ds.images.empty()) throw ContractError("write_raw: empty dataset");
  const auto& first = ds.images.front();
  io::Writer w;
  w.bytes("RIMG");
  w.u32(kRawVersion);
  w.u32(static_cast<std::uint32_t>(ds.size()));
  w.u32(static_cast<std::uint32_t>(first.height));
  w.u32(static_cast<std::uint32_t>(first.width));
  w.u32(static_cast<std::uint32_t>(first.channels));
  for (const auto& img : ds.images) {
    if (img.height != first.height || img.width != first.width || img.channels != first.channels)
      throw ShapeError("write_raw: images differ in size");
    for (float v : img.pixels) w.u8(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
  }
  w.save(detail::split_path(dir, split, ".rimg"));

  std::ofstream csv(detail::split_path(dir, split, ".csv"), std::ios::trunc);
  csv << "index,label\n";
  for (std::size_t i = 0; i < ds.size(); ++i) csv << i << ',' << ds.labels[i] << '\n';
  if (!csv) throw FormatError("write_raw: cannot write manifest in " + dir.string());

  std::ofstream meta(dir / "dataset.json", std::ios::trunc);
  meta << nlohmann::json{{"num_classes", ds.num_classes}}.dump(2) << '\n';
}

inline Dataset load_raw(const std::filesystem::path& dir, const std::string& split) {
  const auto meta_path = (dir / "dataset.json").string();
  const auto blob_path = detail::split_path(dir, split, ".rimg");
  const auto csv_path = detail::split_path(dir, split, ".csv");
  for (const auto& p : {meta_path, blob_path, csv_path})
    if (!std::filesystem::exists(p)) throw FormatError("missing file: " + p);

  Dataset ds;
  {
    std::ifstream in(meta_path);
    nlohmann::json meta;
    try {
      in >> meta;
      ds.num_classes = meta.at("num_classes").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(meta_path + ": " + e.what());
    }
  }

  auto r = io::Reader::from_file(blob_path);
  r.expect_magic("RIMG");
  if (const auto v = r.u32(); v != kRawVersion)
    throw FormatError(detail::concat(blob_path, ": unsupported version ", v));
  const std::size_t count = r.u32(), h = r.u32(), w = r.u32(), c = r.u32();
  const std::size_t per = h * w * c;
  if (r.remaining() != count * per)
    throw FormatError(detail::concat(blob_path, ": size mismatch, header says ", count, " images of ", per,
                                     " bytes but ", r.remaining(), " bytes follow"));
  for (std::size_t i = 0; i < count; ++i) {
    Image img(h, w, c);
    const auto bytes = r.bytes(per);
    for (std::size_t j = 0; j < per; ++j)
      img.pixels[j] = static_cast<float>(static_cast<unsigned char>(bytes[j])) / 255.0f;
    ds.images.push_back(std::move(img));
  }

  std::ifstream csv(csv_path);
  std::string line;
  std::getline(csv, line);
  if (line != "index,label") throw FormatError(csv_path + ": expected header \"index,label\"");
  ds.labels.assign(count, 0);
  std::vector<bool> seen(count, false);
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    long long index = -1, label = -1;
    char comma = 0;
    if (!(ls >> index >> comma >> label) || comma != ',')
      throw FormatError(csv_path + ": malformed row \"" + line + "\"");
    if (index < 0 || static_cast<std::size_t>(index) >= count)
      throw FormatError(detail::concat(csv_path, ": index ", index, " out of range for ", count, " images"));
    if (label < 0 || static_cast<std::size_t>(label) >= ds.num_classes)
      throw FormatError(detail::concat(csv_path, ": label ", label, " out of range for ", ds.num_classes, " classes"));
    ds.labels[static_cast<std::size_t>(index)] = static_cast<std::size_t>(label);
    seen[static_cast<std::size_t>(index)] = true;
    ++rows;
  }
  if (rows != count || std::find(seen.begin(), seen.end(), false) != seen.end())
    throw FormatError(detail::concat(csv_path, ": size mismatch, ", rows, " rows for ", count, " images"));
  return ds;
}

}  // namespace mimco
