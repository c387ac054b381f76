#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "sigfuzz/bytes.hpp"

namespace sigfuzz {

// Outcome of a link-level operation as seen by the fuzzer host.
enum class LinkStatus : std::uint8_t { Ok, Timeout, Failed, Aborted, Reset, Refused };
std::string_view link_status_name(LinkStatus s);

struct ReceiveResult {
  LinkStatus status = LinkStatus::Timeout;
  Bytes frame;  // valid when status == Ok
};

struct PingResult {
  bool ok = false;
  Bytes sent;
  ReceiveResult reply;
};

struct DeviceInfo {
  std::array<std::uint8_t, 6> mac{};
  std::string name;
  std::string device_class;
  std::uint32_t oui = 0;
  bool operator==(const DeviceInfo&) const = default;
};

struct ServicePort {
  std::uint16_t psm = 0;
  bool requires_pairing = false;
  bool operator==(const ServicePort&) const = default;
};

inline constexpr std::uint16_t kSdpPsm = 0x0001;

std::string format_mac(const std::array<std::uint8_t, 6>& mac);
// "AA:BB:CC:DD:EE:FF"; throws std::invalid_argument.
std::array<std::uint8_t, 6> parse_mac(std::string_view text);

// One signaling session with a target. Single in-flight request: send, then
// receive. Implementations throw TransportError for carrier failures.
class Transport {
 public:
  virtual ~Transport() = default;

  virtual DeviceInfo device_info() = 0;
  virtual std::vector<ServicePort> list_ports() = 0;
  // Connection probe to a service port: Ok, Refused, or an error class.
  virtual LinkStatus connect(std::uint16_t psm) = 0;
  virtual void send(ByteView frame) = 0;
  virtual ReceiveResult receive(std::chrono::milliseconds timeout) = 0;
  // EchoReq / EchoRsp exchange on the signaling channel.
  virtual PingResult ping(std::uint8_t identifier, std::chrono::milliseconds timeout);
  // Returns false when the target cannot be reset from the host.
  virtual bool reset_target() = 0;

  // Optional 4-byte HCI ACL data header ahead of each L2CAP frame.
  void set_acl_prologue(bool on) { acl_prologue_ = on; }
  bool acl_prologue() const { return acl_prologue_; }

 protected:
  Bytes wrap_acl(ByteView frame) const;
  // Returns the frame unchanged when the prologue is off.
  Bytes unwrap_acl(ByteView bytes) const;

 private:
  bool acl_prologue_ = false;
};

// Real-radio transport placeholder: every operation throws TransportError.
class HciTransport final : public Transport {
 public:
  explicit HciTransport(std::string device);
  DeviceInfo device_info() override;
  std::vector<ServicePort> list_ports() override;
  LinkStatus connect(std::uint16_t psm) override;
  void send(ByteView frame) override;
  ReceiveResult receive(std::chrono::milliseconds timeout) override;
  bool reset_target() override;

 private:
  [[noreturn]] void unavailable() const;
  std::string device_;
};

}  // namespace sigfuzz
