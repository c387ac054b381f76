#pragma once

#include <chrono>
#include <deque>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>

#include "sigfuzz/codec.hpp"
#include "sigfuzz/mutation.hpp"

namespace sigfuzz::testing {

// Replays a fixed list of draws; throws when a draw falls outside the
// requested range or the script runs dry.
class ScriptedRandom final : public RandomSource {
 public:
  ScriptedRandom(std::deque<std::uint64_t> values, Bytes fill_bytes = {})
      : values_(std::move(values)), fill_(fill_bytes.begin(), fill_bytes.end()) {}

  std::uint64_t uniform(std::uint64_t lo, std::uint64_t hi) override {
    if (values_.empty()) throw std::logic_error("scripted draws exhausted");
    std::uint64_t v = values_.front();
    values_.pop_front();
    if (v < lo || v > hi) throw std::logic_error("scripted draw outside requested range");
    return v;
  }
  void fill(std::span<std::uint8_t> out) override {
    for (auto& b : out) {
      if (fill_.empty()) throw std::logic_error("scripted bytes exhausted");
      b = fill_.front();
      fill_.pop_front();
    }
  }
  bool exhausted() const { return values_.empty() && fill_.empty(); }

 private:
  std::deque<std::uint64_t> values_;
  std::deque<std::uint8_t> fill_;
};

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            ("sigfuzz-test-" + std::to_string(stamp) + "-" + std::to_string(++counter));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::string source_path(const std::string& rel) {
  return std::string(SIGFUZZ_SOURCE_DIR) + "/" + rel;
}

// Configuration options with correct lengths, drawn from the known types.
inline Bytes random_options(std::mt19937_64& g) {
  static constexpr std::uint8_t kWidths[] = {0, 2, 2, 22, 9, 1, 16, 2};
  Bytes out;
  int n = static_cast<int>(g() % 3);
  for (int i = 0; i < n; ++i) {
    std::uint8_t type = static_cast<std::uint8_t>(1 + g() % 7);
    std::uint8_t width = kWidths[type];
    if (g() % 4 == 0) type |= 0x80;  // hint bit
    out.push_back(type);
    out.push_back(width);
    for (int b = 0; b < width; ++b) out.push_back(static_cast<std::uint8_t>(g()));
  }
  return out;
}

// A schema-valid packet in canonical form: random in-range field values,
// garbage up to 64 bytes. A garbage tail behind an OPT field never starts
// with a well-formed option, so the field/garbage boundary is unambiguous.
inline L2capPacket random_packet(std::mt19937_64& g, CommandKind k) {
  std::vector<DataField> fields;
  for (;;) {
    auto schema = expected_schema(k, fields);
    if (fields.size() == schema.size()) break;
    const FieldSpec& spec = schema[fields.size()];
    DataField f{spec.name, 0, {}};
    switch (spec.format) {
      case FieldFormat::U8: f.value = static_cast<std::uint16_t>(g() & 0xFF); break;
      case FieldFormat::U16:
        f.value = static_cast<std::uint16_t>(g() & 0xFFFF);
        // Bias the selector fields so dependent tails are exercised.
        if (spec.name == FieldName::Reason && g() % 2) f.value = static_cast<std::uint16_t>(g() % 3);
        if (spec.name == FieldName::Type && g() % 2) f.value = static_cast<std::uint16_t>(1 + g() % 3);
        if (spec.name == FieldName::Result && k == CommandKind::InfoRsp && g() % 2) f.value = 0;
        break;
      case FieldFormat::Octets:
        f.bytes.resize(spec.width);
        for (auto& b : f.bytes) b = static_cast<std::uint8_t>(g());
        break;
      case FieldFormat::Options: f.bytes = random_options(g); break;
      case FieldFormat::Opaque: break;
    }
    fields.push_back(std::move(f));
  }
  Bytes garbage(g() % 65);
  for (auto& b : garbage) b = static_cast<std::uint8_t>(g());
  bool opt_last = !fields.empty() && fields.back().name == FieldName::Opt;
  if (opt_last && options_prefix(garbage) > 0) garbage[0] = 0x00;
  L2capPacket p = make_packet(k, static_cast<std::uint8_t>(1 + g() % 255), std::move(fields),
                              std::move(garbage));
  if (g() % 8 == 0) p.header_cid = static_cast<std::uint16_t>(g());
  return p;
}

}  // namespace sigfuzz::testing
