#include "sigfuzz/mutation.hpp"

#include <algorithm>
#include <limits>

#include "sigfuzz/errors.hpp"

namespace sigfuzz {

std::uint64_t SeededRandom::uniform(std::uint64_t lo, std::uint64_t hi) {
  if (lo > hi) std::swap(lo, hi);
  std::uint64_t range = hi - lo;
  if (range == std::numeric_limits<std::uint64_t>::max()) return engine_();
  std::uint64_t n = range + 1;
  // Reject the 2^64 mod n smallest outputs so every residue is equally likely.
  std::uint64_t threshold = (0 - n) % n;
  while (true) {
    std::uint64_t x = engine_();
    if (x >= threshold) return lo + x % n;
  }
}

void SeededRandom::fill(std::span<std::uint8_t> out) {
  std::size_t i = 0;
  while (i < out.size()) {
    std::uint64_t x = engine_();
    for (int b = 0; b < 8 && i < out.size(); ++b, ++i) {
      out[i] = static_cast<std::uint8_t>(x >> (8 * b));
    }
  }
}

std::vector<U16Range> default_psm_abnormal_ranges() {
  return {{0x0100, 0x01FF}, {0x0300, 0x03FF}, {0x0500, 0x05FF}, {0x0700, 0x07FF},
          {0x0900, 0x09FF}, {0x0B00, 0x0BFF}, {0x0D00, 0x0DFF}};
}

void MutationConfig::validate() const {
  if (packets_per_command == 0) throw ConfigError("packets_per_command must be at least 1");
  if (mtu < 48 || mtu > kMaxPayload) throw ConfigError("mtu must be within 48..65535");
  if (garbage_max > kMaxPayload) throw ConfigError("garbage_max must be at most 65535");
  if (cid_normal_range.lo > cid_normal_range.hi) throw ConfigError("cid_normal_range is empty");
  for (const auto& r : psm_abnormal_ranges) {
    if (r.lo > r.hi) throw ConfigError("psm_abnormal_ranges contains an empty range");
  }
  if (psm_abnormal_ranges.empty() && !psm_all_even) {
    throw ConfigError("psm abnormal set is empty");
  }
}

std::string_view mutation_mode_name(MutationMode m) {
  return m == MutationMode::CoreField ? "core" : "baseline";
}

bool MutationRecord::changed() const {
  if (!garbage.empty()) return true;
  return std::any_of(mutated_fields.begin(), mutated_fields.end(),
                     [](const FieldMutation& m) { return m.old_value != m.new_value; });
}

void MutationRecord::stamp_identifier(std::uint8_t id) {
  if (mode == MutationMode::Baseline) {
    bool id_drawn = std::any_of(mutated_fields.begin(), mutated_fields.end(),
                                [](const FieldMutation& m) { return m.field == FieldName::Id; });
    if (id_drawn) return;
  }
  packet.identifier = id;
  wire = encode(packet, mode == MutationMode::CoreField ? EncodeMode::Checked : EncodeMode::Raw);
}

namespace {

// Records every bounded draw for the audit trail.
class AuditedRandom final : public RandomSource {
 public:
  AuditedRandom(RandomSource& inner, std::vector<std::uint64_t>& log) : inner_(inner), log_(log) {}
  std::uint64_t uniform(std::uint64_t lo, std::uint64_t hi) override {
    std::uint64_t v = inner_.uniform(lo, hi);
    log_.push_back(v);
    return v;
  }
  void fill(std::span<std::uint8_t> out) override { inner_.fill(out); }

 private:
  RandomSource& inner_;
  std::vector<std::uint64_t>& log_;
};

// Uniform over [0, max] without `current`.
std::uint16_t draw_other(RandomSource& rng, std::uint16_t current, std::uint16_t max) {
  auto v = static_cast<std::uint16_t>(rng.uniform(0, max - 1u));
  return v >= current ? static_cast<std::uint16_t>(v + 1) : v;
}

}  // namespace

Mutator::Mutator(MutationConfig config) : config_(std::move(config)) {
  config_.validate();
  for (std::uint32_t v = 0; v <= 0xFFFF; ++v) {
    if (psm_abnormal(static_cast<std::uint16_t>(v))) psm_pool_.push_back(static_cast<std::uint16_t>(v));
  }
}

bool Mutator::psm_abnormal(std::uint16_t psm) const {
  if (config_.psm_all_even && psm % 2 == 0) return true;
  return std::any_of(config_.psm_abnormal_ranges.begin(), config_.psm_abnormal_ranges.end(),
                     [psm](const U16Range& r) { return r.contains(psm); });
}

std::size_t Mutator::garbage_bound(const L2capPacket& base) const {
  std::size_t payload = kCommandHeaderSize + base.fields_size();
  std::size_t limit = std::min(config_.mtu, kMaxPayload);
  if (payload >= limit) return 0;
  return std::min(config_.garbage_max, limit - payload);
}

void Mutator::append_garbage(MutationRecord& rec, RandomSource& rng) const {
  std::size_t bound = garbage_bound(rec.packet);
  rec.garbage.resize(rng.uniform(0, bound));
  rng.fill(rec.garbage);
  rec.packet.garbage_tail = rec.garbage;
}

MutationRecord Mutator::mutate_command(CommandKind k, RandomSource& source) const {
  MutationRecord rec;
  rec.base_command = k;
  rec.mode = MutationMode::CoreField;
  AuditedRandom rng(source, rec.rng_draws);

  rec.packet = default_packet(k);
  rec.packet.header_cid = kSignalingCid;
  for (auto& f : rec.packet.data_fields) {
    std::uint16_t old = f.value;
    if (f.name == FieldName::Psm) {
      f.value = psm_pool_[rng.uniform(0, psm_pool_.size() - 1)];
    } else if (is_cid_field(f.name)) {
      std::uint16_t hi = config_.cid_normal_range.hi;
      if (f.name == FieldName::ContId) hi = std::min<std::uint16_t>(hi, 0xFF);
      std::uint16_t lo = std::min(config_.cid_normal_range.lo, hi);
      f.value = static_cast<std::uint16_t>(rng.uniform(lo, hi));
    } else {
      continue;
    }
    rec.mutated_fields.push_back({f.name, old, f.value});
  }
  append_garbage(rec, rng);
  rec.packet.recompute_lengths();
  rec.wire = encode(rec.packet, EncodeMode::Checked);
  return rec;
}

MutationRecord Mutator::baseline_mutate(CommandKind k, RandomSource& source) const {
  MutationRecord rec;
  rec.base_command = k;
  rec.mode = MutationMode::Baseline;
  AuditedRandom rng(source, rec.rng_draws);

  rec.packet = default_packet(k);
  rec.packet.header_cid = kSignalingCid;
  for (auto& f : rec.packet.data_fields) {
    std::uint16_t old = f.value;
    if (f.name == FieldName::ContId) {
      f.value = static_cast<std::uint16_t>(rng.uniform(0, 0xFF));
    } else if (f.name == FieldName::Opt || f.name == FieldName::Data || f.name == FieldName::Raw) {
      continue;
    } else {
      f.value = static_cast<std::uint16_t>(rng.uniform(0, 0xFFFF));
    }
    rec.mutated_fields.push_back({f.name, old, f.value});
  }
  append_garbage(rec, rng);
  rec.packet.recompute_lengths();

  // Dependent fields get values that differ from the coherent ones.
  L2capPacket& p = rec.packet;
  auto mutate_d = [&](FieldName name, std::uint16_t max) {
    std::uint16_t old = *p.value_of(name);
    std::uint16_t v = draw_other(rng, old, max);
    p.set(name, v);
    rec.mutated_fields.push_back({name, old, v});
  };
  mutate_d(FieldName::PayloadLen, 0xFFFF);
  mutate_d(FieldName::Code, 0xFF);
  mutate_d(FieldName::Id, 0xFF);
  mutate_d(FieldName::DataLen, 0xFFFF);
  rec.wire = encode(p, EncodeMode::Raw);
  return rec;
}

std::vector<MutationRecord> Mutator::generate_batch(std::span<const CommandKind> commands,
                                                    RandomSource& rng, MutationMode mode,
                                                    std::uint64_t first_index) const {
  std::vector<MutationRecord> out;
  out.reserve(commands.size() * config_.packets_per_command);
  std::uint64_t index = first_index;
  for (CommandKind k : commands) {
    for (std::size_t j = 0; j < config_.packets_per_command; ++j) {
      MutationRecord rec =
          mode == MutationMode::CoreField ? mutate_command(k, rng) : baseline_mutate(k, rng);
      rec.seed = config_.seed;
      rec.index = index++;
      out.push_back(std::move(rec));
    }
  }
  return out;
}

MutationRecord mutate_command(CommandKind k, const MutationConfig& config, RandomSource& rng) {
  MutationRecord rec = Mutator(config).mutate_command(k, rng);
  rec.seed = config.seed;
  return rec;
}

MutationRecord baseline_mutate(CommandKind k, const MutationConfig& config, RandomSource& rng) {
  MutationRecord rec = Mutator(config).baseline_mutate(k, rng);
  rec.seed = config.seed;
  return rec;
}

std::vector<MutationRecord> generate_batch(std::span<const CommandKind> commands,
                                           const MutationConfig& config, MutationMode mode) {
  SeededRandom rng(config.seed);
  return Mutator(config).generate_batch(commands, rng, mode);
}

}  // namespace sigfuzz
