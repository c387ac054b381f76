#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "sigfuzz/codec.hpp"

namespace sigfuzz {

class RandomSource {
 public:
  virtual ~RandomSource() = default;
  // Uniform over the inclusive range [lo, hi].
  virtual std::uint64_t uniform(std::uint64_t lo, std::uint64_t hi) = 0;
  virtual void fill(std::span<std::uint8_t> out) = 0;
};

// mt19937_64 with rejection-sampled bounded draws, so a seed produces the same
// stream on every standard library.
class SeededRandom final : public RandomSource {
 public:
  explicit SeededRandom(std::uint64_t seed) : engine_(seed) {}
  std::uint64_t uniform(std::uint64_t lo, std::uint64_t hi) override;
  void fill(std::span<std::uint8_t> out) override;

 private:
  std::mt19937_64 engine_;
};

struct U16Range {
  std::uint16_t lo = 0;
  std::uint16_t hi = 0;
  bool contains(std::uint32_t v) const { return v >= lo && v <= hi; }
  bool operator==(const U16Range&) const = default;
};

std::vector<U16Range> default_psm_abnormal_ranges();

struct MutationConfig {
  std::size_t packets_per_command = 1000;
  std::size_t mtu = 672;
  std::uint64_t seed = 0;
  std::vector<U16Range> psm_abnormal_ranges = default_psm_abnormal_ranges();
  bool psm_all_even = true;  // union with every even 16-bit value
  U16Range cid_normal_range{0x0040, 0xFFFF};
  std::size_t garbage_max = 672;

  // Throws ConfigError.
  void validate() const;
};

enum class MutationMode : std::uint8_t { CoreField, Baseline };
std::string_view mutation_mode_name(MutationMode m);

struct FieldMutation {
  FieldName field{};
  std::uint16_t old_value = 0;
  std::uint16_t new_value = 0;
  bool operator==(const FieldMutation&) const = default;
};

struct MutationRecord {
  CommandKind base_command{};
  MutationMode mode = MutationMode::CoreField;
  std::vector<FieldMutation> mutated_fields;
  Bytes garbage;
  L2capPacket packet;
  Bytes wire;  // exact bytes handed to the transport
  std::vector<std::uint64_t> rng_draws;
  std::uint64_t seed = 0;
  std::uint64_t index = 0;

  // True when at least one byte differs from the unmutated default packet.
  bool changed() const;
  // Assigns the session identifier; a baseline record whose ID was itself
  // mutated keeps its drawn value.
  void stamp_identifier(std::uint8_t id);

  bool operator==(const MutationRecord&) const = default;
};

class Mutator {
 public:
  explicit Mutator(MutationConfig config);

  const MutationConfig& config() const { return config_; }
  // Sorted, duplicate free.
  const std::vector<std::uint16_t>& psm_pool() const { return psm_pool_; }
  bool psm_abnormal(std::uint16_t psm) const;

  MutationRecord mutate_command(CommandKind k, RandomSource& rng) const;
  MutationRecord baseline_mutate(CommandKind k, RandomSource& rng) const;

  // Command-major: all records of commands[0], then commands[1], ...
  std::vector<MutationRecord> generate_batch(std::span<const CommandKind> commands,
                                             RandomSource& rng, MutationMode mode,
                                             std::uint64_t first_index = 0) const;

 private:
  std::size_t garbage_bound(const L2capPacket& base) const;
  void append_garbage(MutationRecord& rec, RandomSource& rng) const;

  MutationConfig config_;
  std::vector<std::uint16_t> psm_pool_;
};

MutationRecord mutate_command(CommandKind k, const MutationConfig& config, RandomSource& rng);
MutationRecord baseline_mutate(CommandKind k, const MutationConfig& config, RandomSource& rng);
// Seeds a fresh SeededRandom from config.seed.
std::vector<MutationRecord> generate_batch(std::span<const CommandKind> commands,
                                           const MutationConfig& config,
                                           MutationMode mode = MutationMode::CoreField);

}  // namespace sigfuzz
