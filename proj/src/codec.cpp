#include "sigfuzz/codec.hpp"

#include <algorithm>
#include <cctype>
#include <string>

#include "sigfuzz/errors.hpp"

namespace sigfuzz {

const std::array<CommandKind, kCommandCount> kAllCommands = {
    CommandKind::CommandReject,         CommandKind::ConnectReq,
    CommandKind::ConnectRsp,            CommandKind::ConfigReq,
    CommandKind::ConfigRsp,             CommandKind::DisconnectReq,
    CommandKind::DisconnectRsp,         CommandKind::EchoReq,
    CommandKind::EchoRsp,               CommandKind::InfoReq,
    CommandKind::InfoRsp,               CommandKind::CreateChannelReq,
    CommandKind::CreateChannelRsp,      CommandKind::MoveChannelReq,
    CommandKind::MoveChannelRsp,        CommandKind::MoveChannelConfirmReq,
    CommandKind::MoveChannelConfirmRsp,
};

namespace {

constexpr std::array<std::string_view, kCommandCount> kCommandNames = {
    "CommandReject",  "ConnectReq",       "ConnectRsp",       "ConfigReq",
    "ConfigRsp",      "DisconnectReq",    "DisconnectRsp",    "EchoReq",
    "EchoRsp",        "InfoReq",          "InfoRsp",          "CreateChannelReq",
    "CreateChannelRsp", "MoveChannelReq", "MoveChannelRsp",   "MoveChannelConfirmReq",
    "MoveChannelConfirmRsp",
};

constexpr std::array<std::string_view, 26> kFieldNames = {
    "HEADER CID", "PAYLOAD LEN", "CODE",    "ID",      "DATA LEN", "PSM",   "SCID",
    "DCID",       "ICID",        "CONT ID", "REASON",  "RESULT",   "STATUS", "FLAGS",
    "TYPE",       "INTERVAL",    "LATENCY", "TIMEOUT", "SPSM",     "MTU",   "CREDIT",
    "MPS",        "OPT",         "QoS",     "DATA",    "RAW",
};

std::string normalize(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == ' ' || c == '_' || c == '-') continue;
    out.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  }
  return out;
}

FieldSpec u16(FieldName n, std::uint16_t def = 0) { return {n, FieldFormat::U16, def, 0}; }
FieldSpec u8(FieldName n, std::uint16_t def = 0) { return {n, FieldFormat::U8, def, 0}; }
FieldSpec opt() { return {FieldName::Opt, FieldFormat::Options, 0, 0}; }

std::optional<std::uint16_t> info_data_width(std::uint16_t type) {
  switch (type) {
    case 0x0001: return 2;  // connectionless MTU
    case 0x0002: return 4;  // extended feature mask
    case 0x0003: return 8;  // fixed channels
    default: return std::nullopt;
  }
}

std::uint16_t value_or(const std::vector<DataField>& fields, FieldName n, std::uint16_t def) {
  for (const auto& f : fields) {
    if (f.name == n) return f.value;
  }
  return def;
}

FieldFormat format_of(FieldName n) {
  switch (n) {
    case FieldName::ContId: return FieldFormat::U8;
    case FieldName::Opt: return FieldFormat::Options;
    case FieldName::Data: return FieldFormat::Octets;
    case FieldName::Raw: return FieldFormat::Opaque;
    default: return FieldFormat::U16;
  }
}

void put_field(Bytes& out, const DataField& f) {
  switch (format_of(f.name)) {
    case FieldFormat::U8: out.push_back(static_cast<std::uint8_t>(f.value & 0xFF)); break;
    case FieldFormat::U16: put_u16le(out, f.value); break;
    default: out.insert(out.end(), f.bytes.begin(), f.bytes.end()); break;
  }
}

std::size_t encoded_size(const DataField& f) {
  switch (format_of(f.name)) {
    case FieldFormat::U8: return 1;
    case FieldFormat::U16: return 2;
    default: return f.bytes.size();
  }
}

}  // namespace

std::optional<CommandKind> command_from_code(std::uint8_t code) {
  if (code >= 0x01 && code <= 0x11) return static_cast<CommandKind>(code);
  return std::nullopt;
}

std::size_t command_index(CommandKind k) { return static_cast<std::size_t>(k) - 1; }

std::string_view command_name(CommandKind k) { return kCommandNames[command_index(k)]; }

std::optional<CommandKind> parse_command(std::string_view name) {
  std::string want = normalize(name);
  for (CommandKind k : kAllCommands) {
    if (normalize(command_name(k)) == want) return k;
  }
  return std::nullopt;
}

std::string_view field_name(FieldName f) { return kFieldNames[static_cast<std::size_t>(f)]; }

std::optional<FieldName> parse_field(std::string_view name) {
  std::string want = normalize(name);
  for (std::size_t i = 0; i < kFieldNames.size(); ++i) {
    if (normalize(kFieldNames[i]) == want) return static_cast<FieldName>(i);
  }
  return std::nullopt;
}

std::string_view field_class_name(FieldClass c) {
  switch (c) {
    case FieldClass::Fixed: return "F";
    case FieldClass::Dependent: return "D";
    case FieldClass::MutableCore: return "M_C";
    case FieldClass::MutableApplication: return "M_A";
  }
  return "?";
}

std::size_t FieldSpec::fixed_size() const {
  switch (format) {
    case FieldFormat::U8: return 1;
    case FieldFormat::U16: return 2;
    case FieldFormat::Octets: return width;
    default: return 0;
  }
}

const DataField* L2capPacket::find(FieldName f) const {
  for (const auto& d : data_fields) {
    if (d.name == f) return &d;
  }
  return nullptr;
}

DataField* L2capPacket::find(FieldName f) {
  for (auto& d : data_fields) {
    if (d.name == f) return &d;
  }
  return nullptr;
}

std::optional<std::uint16_t> L2capPacket::value_of(FieldName f) const {
  switch (f) {
    case FieldName::HeaderCid: return header_cid;
    case FieldName::PayloadLen: return payload_length;
    case FieldName::Code: return code;
    case FieldName::Id: return identifier;
    case FieldName::DataLen: return data_length;
    default: break;
  }
  if (const DataField* d = find(f)) return d->value;
  return std::nullopt;
}

void L2capPacket::set(FieldName f, std::uint16_t value) {
  switch (f) {
    case FieldName::HeaderCid: header_cid = value; return;
    case FieldName::PayloadLen: payload_length = value; return;
    case FieldName::Code: code = static_cast<std::uint8_t>(value); return;
    case FieldName::Id: identifier = static_cast<std::uint8_t>(value); return;
    case FieldName::DataLen: data_length = value; return;
    default: break;
  }
  DataField* d = find(f);
  if (!d) throw UnknownFieldError("packet has no field " + std::string(field_name(f)));
  d->value = value;
}

std::size_t L2capPacket::fields_size() const {
  std::size_t total = 0;
  for (const auto& f : data_fields) total += encoded_size(f);
  return total;
}

void L2capPacket::recompute_lengths() {
  std::size_t data = fields_size() + garbage_tail.size();
  data_length = static_cast<std::uint16_t>(data);
  payload_length = static_cast<std::uint16_t>(kCommandHeaderSize + data);
}

std::vector<FieldSpec> expected_schema(CommandKind k, const std::vector<DataField>& fields) {
  using F = FieldName;
  switch (k) {
    case CommandKind::CommandReject: {
      std::vector<FieldSpec> s{u16(F::Reason)};
      std::uint16_t reason = value_or(fields, F::Reason, 0);
      if (reason == kRejectMtuExceeded) s.push_back(u16(F::Mtu, 672));
      if (reason == kRejectInvalidCid) {
        s.push_back(u16(F::Scid, kDefaultCid));
        s.push_back(u16(F::Dcid, kDefaultCid));
      }
      return s;
    }
    case CommandKind::ConnectReq: return {u16(F::Psm, 0x0001), u16(F::Scid, kDefaultCid)};
    case CommandKind::ConnectRsp:
    case CommandKind::CreateChannelRsp:
      return {u16(F::Dcid, kDefaultCid), u16(F::Scid, kDefaultCid), u16(F::Result),
              u16(F::Status)};
    case CommandKind::ConfigReq: return {u16(F::Dcid, kDefaultCid), u16(F::Flags), opt()};
    case CommandKind::ConfigRsp:
      return {u16(F::Scid, kDefaultCid), u16(F::Flags), u16(F::Result), opt()};
    case CommandKind::DisconnectReq:
    case CommandKind::DisconnectRsp:
      return {u16(F::Dcid, kDefaultCid), u16(F::Scid, kDefaultCid)};
    case CommandKind::EchoReq:
    case CommandKind::EchoRsp: return {};
    case CommandKind::InfoReq: return {u16(F::Type, 0x0002)};
    case CommandKind::InfoRsp: {
      std::vector<FieldSpec> s{u16(F::Type, 0x0002), u16(F::Result)};
      std::uint16_t type = value_or(fields, F::Type, 0x0002);
      std::uint16_t result = value_or(fields, F::Result, 0);
      if (result == 0) {
        if (auto w = info_data_width(type)) s.push_back({F::Data, FieldFormat::Octets, 0, *w});
      }
      return s;
    }
    case CommandKind::CreateChannelReq:
      return {u16(F::Psm, 0x0001), u16(F::Scid, kDefaultCid), u8(F::ContId, 0x00)};
    case CommandKind::MoveChannelReq: return {u16(F::Icid, kDefaultCid), u8(F::ContId, 0x01)};
    case CommandKind::MoveChannelRsp:
    case CommandKind::MoveChannelConfirmReq: return {u16(F::Icid, kDefaultCid), u16(F::Result)};
    case CommandKind::MoveChannelConfirmRsp: return {u16(F::Icid, kDefaultCid)};
  }
  return {};
}

std::vector<FieldSpec> schema_of(CommandKind k) { return expected_schema(k, {}); }

FieldClass field_class(FieldName f) {
  switch (f) {
    case FieldName::HeaderCid: return FieldClass::Fixed;
    case FieldName::PayloadLen:
    case FieldName::Code:
    case FieldName::Id:
    case FieldName::DataLen: return FieldClass::Dependent;
    case FieldName::Psm:
    case FieldName::Scid:
    case FieldName::Dcid:
    case FieldName::Icid:
    case FieldName::ContId: return FieldClass::MutableCore;
    default: return FieldClass::MutableApplication;
  }
}

bool is_cid_field(FieldName f) {
  return f == FieldName::Scid || f == FieldName::Dcid || f == FieldName::Icid ||
         f == FieldName::ContId;
}

FieldClass classify_field(CommandKind k, FieldName f) {
  switch (f) {
    case FieldName::HeaderCid:
    case FieldName::PayloadLen:
    case FieldName::Code:
    case FieldName::Id:
    case FieldName::DataLen: return field_class(f);
    default: break;
  }
  // Every variant of the schema (reason / info-type dependent tails).
  std::vector<std::vector<DataField>> variants{{}};
  if (k == CommandKind::CommandReject) {
    variants.push_back({{FieldName::Reason, kRejectMtuExceeded, {}}});
    variants.push_back({{FieldName::Reason, kRejectInvalidCid, {}}});
  }
  for (const auto& v : variants) {
    for (const auto& spec : expected_schema(k, v)) {
      if (spec.name == f) return field_class(f);
    }
  }
  throw UnknownFieldError(std::string(field_name(f)) + " is not a field of " +
                          std::string(command_name(k)));
}

L2capPacket make_packet(CommandKind k, std::uint8_t identifier, std::vector<DataField> fields,
                        Bytes garbage) {
  L2capPacket p;
  p.code = command_code(k);
  p.identifier = identifier;
  p.data_fields = std::move(fields);
  p.garbage_tail = std::move(garbage);
  p.recompute_lengths();
  return p;
}

L2capPacket default_packet(CommandKind k, std::uint8_t identifier) {
  std::vector<DataField> fields;
  for (const auto& spec : schema_of(k)) {
    DataField f{spec.name, spec.default_value, {}};
    if (spec.format == FieldFormat::Octets) f.bytes.assign(spec.width, 0);
    fields.push_back(std::move(f));
  }
  return make_packet(k, identifier, std::move(fields));
}

std::optional<std::size_t> config_option_width(std::uint8_t type) {
  switch (type & 0x7F) {
    case 0x01: return 2;   // MTU
    case 0x02: return 2;   // flush timeout
    case 0x03: return 22;  // QoS
    case 0x04: return 9;   // retransmission and flow control
    case 0x05: return 1;   // FCS
    case 0x06: return 16;  // extended flow specification
    case 0x07: return 2;   // extended window size
    default: return std::nullopt;
  }
}

std::size_t options_prefix(ByteView bytes) {
  std::size_t pos = 0;
  while (bytes.size() - pos >= 2) {
    auto w = config_option_width(bytes[pos]);
    if (!w || bytes[pos + 1] != *w || bytes.size() - pos - 2 < *w) break;
    pos += 2 + *w;
  }
  return pos;
}

namespace {

void check_schema(const L2capPacket& p) {
  auto k = p.kind();
  if (!k) {
    if (p.data_fields.size() != 1 || p.data_fields[0].name != FieldName::Raw) {
      throw SchemaError("unknown code requires a single RAW field");
    }
    return;
  }
  auto schema = expected_schema(*k, p.data_fields);
  if (schema.size() != p.data_fields.size()) {
    throw SchemaError(std::string(command_name(*k)) + " expects " +
                      std::to_string(schema.size()) + " fields, got " +
                      std::to_string(p.data_fields.size()));
  }
  for (std::size_t i = 0; i < schema.size(); ++i) {
    const auto& spec = schema[i];
    const auto& f = p.data_fields[i];
    if (spec.name != f.name) {
      throw SchemaError("field " + std::to_string(i) + " of " + std::string(command_name(*k)) +
                        " must be " + std::string(field_name(spec.name)));
    }
    switch (spec.format) {
      case FieldFormat::U8:
        if (f.value > 0xFF) throw SchemaError(std::string(field_name(f.name)) + " exceeds 8 bits");
        break;
      case FieldFormat::Octets:
        if (f.bytes.size() != spec.width) {
          throw SchemaError(std::string(field_name(f.name)) + " must be " +
                            std::to_string(spec.width) + " bytes");
        }
        break;
      case FieldFormat::Options:
        if (options_prefix(f.bytes) != f.bytes.size()) throw SchemaError("malformed OPT field");
        break;
      default: break;
    }
  }
}

}  // namespace

Bytes encode(const L2capPacket& p, EncodeMode mode) {
  if (mode == EncodeMode::Checked) {
    check_schema(p);
    std::size_t data = p.fields_size() + p.garbage_tail.size();
    if (kCommandHeaderSize + data > kMaxPayload) {
      throw SizeError("payload of " + std::to_string(kCommandHeaderSize + data) +
                      " bytes exceeds 65535");
    }
    if (p.data_length != data || p.payload_length != kCommandHeaderSize + data) {
      throw SchemaError("length fields do not match content");
    }
  }

  Bytes out;
  out.reserve(kMinFrameSize + p.fields_size() + p.garbage_tail.size());
  put_u16le(out, p.payload_length);
  put_u16le(out, p.header_cid);
  out.push_back(p.code);
  out.push_back(p.identifier);
  put_u16le(out, p.data_length);
  for (const auto& f : p.data_fields) put_field(out, f);
  out.insert(out.end(), p.garbage_tail.begin(), p.garbage_tail.end());
  return out;
}

L2capPacket decode(ByteView bytes) {
  if (bytes.size() < kMinFrameSize) {
    throw TruncatedError("frame of " + std::to_string(bytes.size()) + " bytes is below the " +
                         std::to_string(kMinFrameSize) + "-byte minimum");
  }
  L2capPacket p;
  p.payload_length = get_u16le(bytes, 0);
  p.header_cid = get_u16le(bytes, 2);
  p.code = bytes[4];
  p.identifier = bytes[5];
  p.data_length = get_u16le(bytes, 6);
  if (kHeaderSize + p.payload_length > bytes.size()) {
    throw TruncatedError("declared payload length " + std::to_string(p.payload_length) +
                         " exceeds available bytes");
  }
  if (kMinFrameSize + p.data_length > bytes.size()) {
    throw TruncatedError("declared data length " + std::to_string(p.data_length) +
                         " exceeds available bytes");
  }
  ByteView region = bytes.subspan(kMinFrameSize, p.data_length);
  ByteView extra = bytes.subspan(kMinFrameSize + p.data_length);

  std::size_t pos = 0;
  auto k = p.kind();
  bool fits = k.has_value();
  if (k) {
    while (true) {
      auto schema = expected_schema(*k, p.data_fields);
      if (p.data_fields.size() >= schema.size()) break;
      const auto& spec = schema[p.data_fields.size()];
      DataField f{spec.name, 0, {}};
      std::size_t left = region.size() - pos;
      if (spec.format == FieldFormat::Options) {
        std::size_t n = options_prefix(region.subspan(pos));
        f.bytes.assign(region.begin() + pos, region.begin() + pos + n);
        pos += n;
      } else {
        std::size_t n = spec.fixed_size();
        if (left < n) {
          fits = false;
          break;
        }
        if (spec.format == FieldFormat::U8) {
          f.value = region[pos];
        } else if (spec.format == FieldFormat::U16) {
          f.value = get_u16le(region, pos);
        } else {
          f.bytes.assign(region.begin() + pos, region.begin() + pos + n);
        }
        pos += n;
      }
      p.data_fields.push_back(std::move(f));
    }
  }
  if (!fits) {
    // Unknown code, or too short for its schema: keep the data opaque.
    p.data_fields.clear();
    p.data_fields.push_back({FieldName::Raw, 0, Bytes(region.begin(), region.end())});
    pos = region.size();
  }
  p.garbage_tail.assign(region.begin() + pos, region.end());
  p.garbage_tail.insert(p.garbage_tail.end(), extra.begin(), extra.end());
  return p;
}

}  // namespace sigfuzz
