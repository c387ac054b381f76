#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "sigfuzz/bytes.hpp"

namespace sigfuzz {

// Signaling command codes, standard Bluetooth Core 5.2 assignments.
enum class CommandKind : std::uint8_t {
  CommandReject = 0x01,
  ConnectReq = 0x02,
  ConnectRsp = 0x03,
  ConfigReq = 0x04,
  ConfigRsp = 0x05,
  DisconnectReq = 0x06,
  DisconnectRsp = 0x07,
  EchoReq = 0x08,
  EchoRsp = 0x09,
  InfoReq = 0x0A,
  InfoRsp = 0x0B,
  CreateChannelReq = 0x0C,
  CreateChannelRsp = 0x0D,
  MoveChannelReq = 0x0E,
  MoveChannelRsp = 0x0F,
  MoveChannelConfirmReq = 0x10,
  MoveChannelConfirmRsp = 0x11,
};

inline constexpr std::size_t kCommandCount = 17;
extern const std::array<CommandKind, kCommandCount> kAllCommands;

inline constexpr std::uint16_t kSignalingCid = 0x0001;
inline constexpr std::size_t kHeaderSize = 4;   // payload length + channel id
inline constexpr std::size_t kCommandHeaderSize = 4;  // code + id + data length
inline constexpr std::size_t kMinFrameSize = kHeaderSize + kCommandHeaderSize;
inline constexpr std::size_t kMaxPayload = 65535;
inline constexpr std::uint16_t kDefaultCid = 0x0040;

// CommandReject reasons.
inline constexpr std::uint16_t kRejectNotUnderstood = 0x0000;
inline constexpr std::uint16_t kRejectMtuExceeded = 0x0001;
inline constexpr std::uint16_t kRejectInvalidCid = 0x0002;

constexpr std::uint8_t command_code(CommandKind k) { return static_cast<std::uint8_t>(k); }
std::optional<CommandKind> command_from_code(std::uint8_t code);
std::string_view command_name(CommandKind k);
std::optional<CommandKind> parse_command(std::string_view name);
std::size_t command_index(CommandKind k);  // 0..16 in code order

enum class FieldName : std::uint8_t {
  HeaderCid,
  PayloadLen,
  Code,
  Id,
  DataLen,
  Psm,
  Scid,
  Dcid,
  Icid,
  ContId,
  Reason,
  Result,
  Status,
  Flags,
  Type,
  Interval,
  Latency,
  Timeout,
  Spsm,
  Mtu,
  Credit,
  Mps,
  Opt,
  Qos,
  Data,
  Raw,
};

std::string_view field_name(FieldName f);
std::optional<FieldName> parse_field(std::string_view name);

enum class FieldClass : std::uint8_t { Fixed, Dependent, MutableCore, MutableApplication };
std::string_view field_class_name(FieldClass c);

enum class FieldFormat : std::uint8_t {
  U8,
  U16,
  Options,  // run of configuration options, self-delimiting
  Octets,   // fixed-width opaque bytes (width from FieldSpec)
  Opaque,   // everything remaining (unknown codes only)
};

struct FieldSpec {
  FieldName name;
  FieldFormat format;
  std::uint16_t default_value = 0;
  std::uint16_t width = 0;  // Octets only

  std::size_t fixed_size() const;  // 0 for Options / Opaque
};

struct DataField {
  FieldName name{};
  std::uint16_t value = 0;  // U8 / U16
  Bytes bytes;              // Options / Octets / Opaque

  bool operator==(const DataField&) const = default;
};

struct L2capPacket {
  std::uint16_t payload_length = 0;
  std::uint16_t header_cid = kSignalingCid;
  std::uint8_t code = 0;
  std::uint8_t identifier = 0;
  std::uint16_t data_length = 0;
  std::vector<DataField> data_fields;
  Bytes garbage_tail;

  std::optional<CommandKind> kind() const { return command_from_code(code); }
  const DataField* find(FieldName f) const;
  DataField* find(FieldName f);
  std::optional<std::uint16_t> value_of(FieldName f) const;
  // Throws UnknownFieldError when the field is not present.
  void set(FieldName f, std::uint16_t value);

  // Sum of encoded data field sizes (excluding garbage).
  std::size_t fields_size() const;
  // Recompute data_length and payload_length from content.
  void recompute_lengths();

  bool operator==(const L2capPacket&) const = default;
};

// Base schema of a kind, with reason/type dependent tails resolved against
// the default values.
std::vector<FieldSpec> schema_of(CommandKind k);

// Schema a packet of kind k must follow given the values already present
// (CommandReject tail depends on REASON, InfoRsp tail on TYPE and RESULT).
std::vector<FieldSpec> expected_schema(CommandKind k, const std::vector<DataField>& fields);

FieldClass classify_field(CommandKind k, FieldName f);
FieldClass field_class(FieldName f);
bool is_cid_field(FieldName f);  // SCID, DCID, ICID, CONT ID

L2capPacket default_packet(CommandKind k, std::uint8_t identifier = 0x01);
L2capPacket make_packet(CommandKind k, std::uint8_t identifier, std::vector<DataField> fields,
                        Bytes garbage = {});

enum class EncodeMode { Checked, Raw };

Bytes encode(const L2capPacket& p, EncodeMode mode = EncodeMode::Checked);
L2capPacket decode(ByteView bytes);

// Known configuration option payload widths (type without hint bit).
std::optional<std::size_t> config_option_width(std::uint8_t type);
// Length of the longest prefix of `bytes` made of well-formed known options.
std::size_t options_prefix(ByteView bytes);

}  // namespace sigfuzz
