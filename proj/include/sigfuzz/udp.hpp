#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <string>
#include <thread>

#include "sigfuzz/simulator.hpp"
#include "sigfuzz/transport.hpp"

namespace sigfuzz {

// Simulator reachable over UDP on the loopback interface, so the fuzzer can be
// pointed at a separate process. One datagram carries one L2CAP frame.
// Control datagrams start with four zero bytes (header CID 0x0000) and an op:
//   'P' psm(le16) -> 'p' status     connection probe
//   'R'           -> 'r'            reset the device
//   'I'           -> 'i' json       meta-information and service ports
//                    'D' status     sent instead of a reply while the device is down
class UdpShimServer {
 public:
  // port 0 picks an ephemeral port. Throws TransportError.
  UdpShimServer(DeviceProfile profile, std::uint16_t port = 0,
                std::filesystem::path dump_dir = {});
  ~UdpShimServer();
  UdpShimServer(const UdpShimServer&) = delete;
  UdpShimServer& operator=(const UdpShimServer&) = delete;

  std::uint16_t port() const { return port_; }
  void start();
  void stop();
  // Blocks until stop() is called from another thread or a signal handler
  // clears the flag.
  void run();

  bool device_dead();
  L2capState device_state();

 private:
  void serve_once(int timeout_ms);

  int fd_ = -1;
  std::uint16_t port_ = 0;
  std::mutex mu_;
  Simulator sim_;
  std::atomic<bool> running_{false};
  std::thread thread_;
};

class UdpTransport final : public Transport {
 public:
  // Throws TransportError.
  UdpTransport(const std::string& host, std::uint16_t port,
               std::chrono::milliseconds control_timeout = std::chrono::milliseconds(2000));
  ~UdpTransport() override;
  UdpTransport(const UdpTransport&) = delete;
  UdpTransport& operator=(const UdpTransport&) = delete;

  DeviceInfo device_info() override;
  std::vector<ServicePort> list_ports() override;
  LinkStatus connect(std::uint16_t psm) override;
  void send(ByteView frame) override;
  ReceiveResult receive(std::chrono::milliseconds timeout) override;
  bool reset_target() override;

 private:
  Bytes control(std::uint8_t op, ByteView payload, std::uint8_t reply_op);
  std::string info_json();

  int fd_ = -1;
  std::chrono::milliseconds control_timeout_;
};

}  // namespace sigfuzz
