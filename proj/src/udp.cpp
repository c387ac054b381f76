#include "sigfuzz/udp.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include <json.hpp>

#include "sigfuzz/errors.hpp"

namespace sigfuzz {

namespace {

constexpr std::size_t kMaxDatagram = 65535 + 8;
constexpr std::uint8_t kOpProbe = 'P';
constexpr std::uint8_t kOpReset = 'R';
constexpr std::uint8_t kOpInfo = 'I';
constexpr std::uint8_t kOpDead = 'D';

Bytes control_frame(std::uint8_t op, ByteView payload) {
  Bytes out(4, 0);
  out.push_back(op);
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

// Returns the op byte for control datagrams, 0 for data.
std::uint8_t control_op(ByteView d) {
  if (d.size() < 5 || d[0] || d[1] || d[2] || d[3]) return 0;
  return d[4];
}

[[noreturn]] void sys_fail(const std::string& what) {
  throw TransportError(what + ": " + std::strerror(errno));
}

// Waits up to timeout_ms; returns false on timeout.
bool wait_readable(int fd, int timeout_ms) {
  pollfd p{fd, POLLIN, 0};
  int r = ::poll(&p, 1, timeout_ms);
  if (r < 0 && errno != EINTR) sys_fail("poll");
  return r > 0;
}

}  // namespace

// ---- server ----------------------------------------------------------------

UdpShimServer::UdpShimServer(DeviceProfile profile, std::uint16_t port,
                             std::filesystem::path dump_dir)
    : sim_(std::move(profile), TransitionTable::builtin(), std::move(dump_dir)) {
  fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
  if (fd_ < 0) sys_fail("socket");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(port);
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) {
    ::close(fd_);
    sys_fail("bind");
  }
  socklen_t len = sizeof addr;
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

UdpShimServer::~UdpShimServer() {
  stop();
  if (fd_ >= 0) ::close(fd_);
}

void UdpShimServer::start() {
  if (running_.exchange(true)) return;
  thread_ = std::thread([this] {
    while (running_) serve_once(50);
  });
}

void UdpShimServer::stop() {
  running_ = false;
  if (thread_.joinable()) thread_.join();
}

void UdpShimServer::run() {
  running_ = true;
  while (running_) serve_once(200);
}

bool UdpShimServer::device_dead() {
  std::lock_guard lock(mu_);
  return sim_.dead();
}

L2capState UdpShimServer::device_state() {
  std::lock_guard lock(mu_);
  return sim_.state();
}

void UdpShimServer::serve_once(int timeout_ms) {
  if (!wait_readable(fd_, timeout_ms)) return;
  Bytes buf(kMaxDatagram);
  sockaddr_in peer{};
  socklen_t plen = sizeof peer;
  ssize_t n = ::recvfrom(fd_, buf.data(), buf.size(), 0, reinterpret_cast<sockaddr*>(&peer), &plen);
  if (n < 0) return;
  buf.resize(static_cast<std::size_t>(n));

  Bytes reply;
  {
    std::lock_guard lock(mu_);
    std::uint8_t op = control_op(buf);
    if (op == kOpProbe && buf.size() >= 7) {
      LinkStatus st = sim_.probe(get_u16le(buf, 5));
      reply = control_frame('p', Bytes{static_cast<std::uint8_t>(st)});
    } else if (op == kOpReset) {
      sim_.reset();
      reply = control_frame('r', {});
    } else if (op == kOpInfo) {
      DeviceInfo info = scan_info(sim_.profile());
      nlohmann::json ports = nlohmann::json::array();
      for (const auto& p : sim_.profile().service_ports) ports.push_back({p.psm, p.requires_pairing});
      nlohmann::json j{{"mac", format_mac(info.mac)},
                       {"name", info.name},
                       {"device_class", info.device_class},
                       {"oui", info.oui},
                       {"ports", ports}};
      std::string text = j.dump();
      reply = control_frame('i', Bytes(text.begin(), text.end()));
    } else if (sim_.dead()) {
      reply = control_frame(kOpDead, Bytes{static_cast<std::uint8_t>(sim_.dead_receive_status())});
    } else {
      HandleResult r = sim_.handle(buf);
      if (r.kind == HandleResult::Kind::Response) {
        reply = std::move(r.frame);
      } else if (r.kind == HandleResult::Kind::Death) {
        reply = control_frame(kOpDead, Bytes{static_cast<std::uint8_t>(sim_.dead_receive_status())});
      }
    }
  }
  if (!reply.empty()) {
    ::sendto(fd_, reply.data(), reply.size(), 0, reinterpret_cast<sockaddr*>(&peer), plen);
  }
}

// ---- client ----------------------------------------------------------------

UdpTransport::UdpTransport(const std::string& host, std::uint16_t port,
                           std::chrono::milliseconds control_timeout)
    : control_timeout_(control_timeout) {
  fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
  if (fd_ < 0) sys_fail("socket");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd_);
    throw TransportError("not an IPv4 address: " + host);
  }
  if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) {
    ::close(fd_);
    sys_fail("connect");
  }
}

UdpTransport::~UdpTransport() {
  if (fd_ >= 0) ::close(fd_);
}

Bytes UdpTransport::control(std::uint8_t op, ByteView payload, std::uint8_t reply_op) {
  Bytes frame = control_frame(op, payload);
  if (::send(fd_, frame.data(), frame.size(), 0) < 0) sys_fail("send");
  auto deadline = std::chrono::steady_clock::now() + control_timeout_;
  Bytes buf(kMaxDatagram);
  for (;;) {
    auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0 || !wait_readable(fd_, static_cast<int>(left.count()))) {
      throw TransportError("simulator did not answer control request");
    }
    ssize_t n = ::recv(fd_, buf.data(), buf.size(), 0);
    if (n < 0) {
      if (errno == ECONNREFUSED) throw TransportError("simulator is not listening");
      sys_fail("recv");
    }
    ByteView d(buf.data(), static_cast<std::size_t>(n));
    if (control_op(d) == reply_op) return Bytes(d.begin() + 5, d.end());
    // A late data reply from an earlier exchange; drop it.
  }
}

std::string UdpTransport::info_json() {
  Bytes raw = control(kOpInfo, {}, 'i');
  return std::string(raw.begin(), raw.end());
}

DeviceInfo UdpTransport::device_info() {
  auto j = nlohmann::json::parse(info_json(), nullptr, false);
  if (j.is_discarded()) throw TransportError("malformed info reply");
  DeviceInfo info;
  info.mac = parse_mac(j.value("mac", "00:00:00:00:00:00"));
  info.name = j.value("name", "");
  info.device_class = j.value("device_class", "");
  info.oui = j.value("oui", 0u);
  return info;
}

std::vector<ServicePort> UdpTransport::list_ports() {
  auto j = nlohmann::json::parse(info_json(), nullptr, false);
  if (j.is_discarded() || !j.contains("ports")) throw TransportError("malformed info reply");
  std::vector<ServicePort> out;
  for (const auto& p : j["ports"]) out.push_back({p[0].get<std::uint16_t>(), p[1].get<bool>()});
  return out;
}

LinkStatus UdpTransport::connect(std::uint16_t psm) {
  Bytes payload;
  put_u16le(payload, psm);
  Bytes r = control(kOpProbe, payload, 'p');
  if (r.empty() || r[0] > static_cast<std::uint8_t>(LinkStatus::Refused)) {
    throw TransportError("malformed probe reply");
  }
  return static_cast<LinkStatus>(r[0]);
}

void UdpTransport::send(ByteView frame) {
  if (::send(fd_, frame.data(), frame.size(), 0) < 0) sys_fail("send");
}

ReceiveResult UdpTransport::receive(std::chrono::milliseconds timeout) {
  auto deadline = std::chrono::steady_clock::now() + timeout;
  Bytes buf(kMaxDatagram);
  for (;;) {
    auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (left.count() < 0 || !wait_readable(fd_, static_cast<int>(left.count()))) {
      return {LinkStatus::Timeout, {}};
    }
    ssize_t n = ::recv(fd_, buf.data(), buf.size(), 0);
    if (n < 0) {
      if (errno == ECONNREFUSED) throw TransportError("simulator is not listening");
      sys_fail("recv");
    }
    ByteView d(buf.data(), static_cast<std::size_t>(n));
    std::uint8_t op = control_op(d);
    if (op == kOpDead && d.size() >= 6 && d[5] <= static_cast<std::uint8_t>(LinkStatus::Refused)) {
      return {static_cast<LinkStatus>(d[5]), {}};
    }
    if (op != 0) continue;
    return {LinkStatus::Ok, Bytes(d.begin(), d.end())};
  }
}

bool UdpTransport::reset_target() {
  control(kOpReset, {}, 'r');
  return true;
}

}  // namespace sigfuzz
