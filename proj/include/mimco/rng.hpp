#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <string_view>

#include "mimco/errors.hpp"

namespace mimco {

using Engine = std::mt19937_64;

// Independent engines per purpose so that, e.g., drawing masks never shifts
// the data order or the initialization.
enum class Stream : std::uint8_t { kInit, kDataOrder, kMask, kAugment, kDropout };

inline constexpr std::array<Stream, 5> kAllStreams = {Stream::kInit, Stream::kDataOrder, Stream::kMask,
                                                      Stream::kAugment, Stream::kDropout};

inline std::string_view stream_name(Stream s) {
  switch (s) {
    case Stream::kInit: return "init";
    case Stream::kDataOrder: return "data_order";
    case Stream::kMask: return "mask";
    case Stream::kAugment: return "augment";
    case Stream::kDropout: return "dropout";
  }
  return "?";
}

inline Engine make_engine(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt), static_cast<std::uint32_t>(salt >> 32)};
  return Engine(seq);
}

class RngStreams {
 public:
  explicit RngStreams(std::uint64_t seed = 0) {
    for (auto s : kAllStreams) engines_[index(s)] = make_engine(seed, 0x9e3779b97f4a7c15ULL + index(s));
  }

  Engine& operator[](Stream s) { return engines_[index(s)]; }
  const Engine& operator[](Stream s) const { return engines_[index(s)]; }

  std::string state(Stream s) const {
    std::ostringstream os;
    os << engines_[index(s)];
    return os.str();
  }

  void restore(Stream s, const std::string& text) {
    std::istringstream is(text);
    Engine e;
    is >> e;
    if (!is) throw FormatError("corrupt RNG state for stream " + std::string(stream_name(s)));
    engines_[index(s)] = e;
  }

  bool operator==(const RngStreams&) const = default;

 private:
  static std::size_t index(Stream s) { return static_cast<std::size_t>(s); }
  std::array<Engine, kAllStreams.size()> engines_;
};

}  // namespace mimco
