#pragma once

#include <cstdint>
#include <istream>
#include <set>
#include <string>

#include "sigfuzz/state_engine.hpp"

namespace sigfuzz {

struct CampaignMetrics {
  std::uint64_t transmitted = 0;
  std::uint64_t transmitted_malformed = 0;
  std::uint64_t received = 0;
  std::uint64_t received_rejections = 0;
  std::set<L2capState> states_covered;
  double packets_per_second = 0.0;  // wall clock, informational

  // Counter equality; packets_per_second is ignored.
  bool same_counts(const CampaignMetrics& o) const;
};

// Zero when the denominator is zero.
double mp_ratio(const CampaignMetrics& m);
double pr_ratio(const CampaignMetrics& m);
double mutation_efficiency(double mp, double pr);
double mutation_efficiency(const CampaignMetrics& m);

// Percentages truncated to two decimals, computed from the integer counters
// ("69.96").
std::string mp_percent(const CampaignMetrics& m);
std::string pr_percent(const CampaignMetrics& m);
std::string efficiency_percent(const CampaignMetrics& m);

// Recomputes the counters from a campaign JSONL log.
CampaignMetrics metrics_from_jsonl(std::istream& in);

struct ReportRow {
  std::string label;
  CampaignMetrics metrics;
};

// Reads a JSONL log, a summary JSON, or a directory holding either.
ReportRow load_report(const std::string& path);
std::string format_report(const ReportRow& row);

}  // namespace sigfuzz
