#include "sigfuzz/transport.hpp"

#include <cstdio>
#include <stdexcept>

#include "sigfuzz/codec.hpp"
#include "sigfuzz/errors.hpp"

namespace sigfuzz {

std::string_view link_status_name(LinkStatus s) {
  switch (s) {
    case LinkStatus::Ok: return "ok";
    case LinkStatus::Timeout: return "timeout";
    case LinkStatus::Failed: return "failed";
    case LinkStatus::Aborted: return "aborted";
    case LinkStatus::Reset: return "reset";
    case LinkStatus::Refused: return "refused";
  }
  return "?";
}

std::string format_mac(const std::array<std::uint8_t, 6>& mac) {
  char buf[18];
  std::snprintf(buf, sizeof buf, "%02X:%02X:%02X:%02X:%02X:%02X", mac[0], mac[1], mac[2], mac[3],
                mac[4], mac[5]);
  return buf;
}

std::array<std::uint8_t, 6> parse_mac(std::string_view text) {
  std::array<std::uint8_t, 6> mac{};
  if (text.size() != 17) throw std::invalid_argument("MAC must look like AA:BB:CC:DD:EE:FF");
  for (std::size_t i = 0; i < 6; ++i) {
    if (i > 0 && text[i * 3 - 1] != ':') throw std::invalid_argument("MAC separator must be ':'");
    Bytes b = from_hex(text.substr(i * 3, 2));
    mac[i] = b.at(0);
  }
  return mac;
}

PingResult Transport::ping(std::uint8_t identifier, std::chrono::milliseconds timeout) {
  PingResult r;
  r.sent = encode(default_packet(CommandKind::EchoReq, identifier));
  send(r.sent);
  r.reply = receive(timeout);
  if (r.reply.status == LinkStatus::Ok && r.reply.frame.size() >= kMinFrameSize) {
    r.ok = r.reply.frame[4] == command_code(CommandKind::EchoRsp) &&
           r.reply.frame[5] == identifier;
  }
  return r;
}

// ACL data header: handle (12 bits) + packet boundary flag "first automatically
// flushable" (0b10), then the L2CAP frame length.
Bytes Transport::wrap_acl(ByteView frame) const {
  if (!acl_prologue_) return Bytes(frame.begin(), frame.end());
  Bytes out;
  out.reserve(frame.size() + 4);
  put_u16le(out, 0x0001 | (0x2 << 12));
  put_u16le(out, static_cast<std::uint16_t>(frame.size()));
  out.insert(out.end(), frame.begin(), frame.end());
  return out;
}

Bytes Transport::unwrap_acl(ByteView bytes) const {
  if (!acl_prologue_) return Bytes(bytes.begin(), bytes.end());
  if (bytes.size() < 4) throw TransportError("ACL packet shorter than its header");
  return Bytes(bytes.begin() + 4, bytes.end());
}

HciTransport::HciTransport(std::string device) : device_(std::move(device)) {}

void HciTransport::unavailable() const {
  throw TransportError("HCI transport for " + device_ + " is not available in this build");
}

DeviceInfo HciTransport::device_info() { unavailable(); }
std::vector<ServicePort> HciTransport::list_ports() { unavailable(); }
LinkStatus HciTransport::connect(std::uint16_t) { unavailable(); }
void HciTransport::send(ByteView) { unavailable(); }
ReceiveResult HciTransport::receive(std::chrono::milliseconds) { unavailable(); }
bool HciTransport::reset_target() { unavailable(); }

}  // namespace sigfuzz
