#include "sigfuzz/metrics.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sigfuzz/errors.hpp"

namespace sigfuzz {

using json = nlohmann::json;

bool CampaignMetrics::same_counts(const CampaignMetrics& o) const {
  return transmitted == o.transmitted && transmitted_malformed == o.transmitted_malformed &&
         received == o.received && received_rejections == o.received_rejections &&
         states_covered == o.states_covered;
}

double mp_ratio(const CampaignMetrics& m) {
  return m.transmitted == 0 ? 0.0
                            : static_cast<double>(m.transmitted_malformed) / m.transmitted;
}

double pr_ratio(const CampaignMetrics& m) {
  return m.received == 0 ? 0.0 : static_cast<double>(m.received_rejections) / m.received;
}

double mutation_efficiency(double mp, double pr) { return mp * (1.0 - pr); }

double mutation_efficiency(const CampaignMetrics& m) {
  return mutation_efficiency(mp_ratio(m), pr_ratio(m));
}

namespace {

using u128 = unsigned __int128;

std::string floor_percent(u128 num, u128 den) {
  if (den == 0) return "0.00";
  u128 basis = num * 10000 / den;  // hundredths of a percent
  auto whole = static_cast<unsigned long long>(basis / 100);
  auto frac = static_cast<unsigned long long>(basis % 100);
  char buf[48];
  std::snprintf(buf, sizeof buf, "%llu.%02llu", whole, frac);
  return buf;
}

std::uint64_t get_count(const json& j, const char* key) {
  if (!j.contains(key)) throw ConfigError(std::string("metrics lack \"") + key + "\"");
  return j.at(key).get<std::uint64_t>();
}

CampaignMetrics metrics_from_summary(const json& m) {
  CampaignMetrics out;
  out.transmitted = get_count(m, "transmitted");
  out.transmitted_malformed = get_count(m, "transmitted_malformed");
  out.received = get_count(m, "received");
  out.received_rejections = get_count(m, "received_rejections");
  if (m.contains("states_covered")) {
    for (const auto& s : m.at("states_covered")) {
      if (auto st = parse_state(s.get<std::string>())) out.states_covered.insert(*st);
    }
  }
  if (m.contains("packets_per_second")) out.packets_per_second = m.at("packets_per_second").get<double>();
  return out;
}

}  // namespace

std::string mp_percent(const CampaignMetrics& m) {
  return floor_percent(m.transmitted_malformed, m.transmitted);
}

std::string pr_percent(const CampaignMetrics& m) {
  return floor_percent(m.received_rejections, m.received);
}

std::string efficiency_percent(const CampaignMetrics& m) {
  u128 num = static_cast<u128>(m.transmitted_malformed) * (m.received - m.received_rejections);
  u128 den = static_cast<u128>(m.transmitted) * m.received;
  return floor_percent(num, den);
}

CampaignMetrics metrics_from_jsonl(std::istream& in) {
  CampaignMetrics m;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw ConfigError("log line " + std::to_string(n) + " is not a JSON object");
    }
    if (j.value("type", "") != "packet") continue;
    ++m.transmitted;
    if (j.value("malformed", false)) ++m.transmitted_malformed;
    if (j.value("status", "") == "ok") {
      ++m.received;
      if (j.value("rx_command", "") == "CommandReject") ++m.received_rejections;
    }
    if (j.value("phase", "") == "fuzz") {
      if (auto s = parse_state(j.value("state", ""))) m.states_covered.insert(*s);
    }
  }
  return m;
}

ReportRow load_report(const std::string& path_text) {
  namespace fs = std::filesystem;
  fs::path path(path_text);
  if (fs::is_directory(path)) {
    if (fs::exists(path / "summary.json")) {
      path /= "summary.json";
    } else {
      path /= "packets.jsonl";
    }
  }
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  std::string text = ss.str();

  ReportRow row{"sigfuzz", {}};
  json whole = json::parse(text, nullptr, false);
  if (!whole.is_discarded() && whole.is_object() && whole.contains("metrics")) {
    row.metrics = metrics_from_summary(whole.at("metrics"));
    if (whole.contains("mode")) row.label = whole.at("mode").get<std::string>();
    return row;
  }
  std::istringstream lines(text);
  row.metrics = metrics_from_jsonl(lines);
  std::istringstream first(text);
  std::string line;
  while (std::getline(first, line)) {
    json j = json::parse(line, nullptr, false);
    if (!j.is_discarded() && j.value("type", "") == "config") {
      row.label = j.value("mode", row.label);
      break;
    }
  }
  return row;
}

std::string format_report(const ReportRow& row) {
  const CampaignMetrics& m = row.metrics;
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%-10s %-10s %-10s %-21s %s\n"
                "%-10s %-10s %-10s %-21s %zu/%zu\n",
                "Fuzzer", "MP Ratio", "PR Ratio", "Mutation efficiency", "State coverage",
                row.label.c_str(), (mp_percent(m) + "%").c_str(), (pr_percent(m) + "%").c_str(),
                (efficiency_percent(m) + "%").c_str(), m.states_covered.size(), kStateCount);
  std::string out = buf;
  std::snprintf(buf, sizeof buf,
                "\ntransmitted %llu  malformed %llu  received %llu  rejections %llu\n",
                static_cast<unsigned long long>(m.transmitted),
                static_cast<unsigned long long>(m.transmitted_malformed),
                static_cast<unsigned long long>(m.received),
                static_cast<unsigned long long>(m.received_rejections));
  out += buf;
  return out;
}

}  // namespace sigfuzz
