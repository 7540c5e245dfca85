#include <iomanip>
#include <json.hpp>
#include <sstream>

#include "splitfhe/error.hpp"
#include "splitfhe/proto/protocol.hpp"

namespace splitfhe::proto {

std::string metrics_csv(std::span<const MetricsRow> rows) {
  std::ostringstream os;
  os << kMetricsCsvHeader << '\n' << std::setprecision(9);
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    os << r.enc_tail_layers << ',' << m.t1 << ',' << m.c1 << ',' << m.t2 << ',' << m.c2 << ',' << m.t3 << ','
       << m.c3 << ',' << m.t4 << ',' << m.c4 << ',' << m.total() << '\n';
  }
  return os.str();
}

std::string metrics_json(std::span<const MetricsRow> rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    arr.push_back({{"enc_tail_layers", r.enc_tail_layers},
                   {"t1_s", m.t1},
                   {"c1_bytes", m.c1},
                   {"t2_s", m.t2},
                   {"c2_bytes", m.c2},
                   {"t3_s", m.t3},
                   {"c3_bytes", m.c3},
                   {"t4_s", m.t4},
                   {"c4_bytes", m.c4},
                   {"total_s", m.total()},
                   {"offline_key_bytes", m.offline_key_bytes},
                   {"offline_deploy_bytes", m.offline_deploy_bytes}});
  }
  return arr.dump(2) + "\n";
}

std::vector<MetricsRow> parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kMetricsCsvHeader) throw FormatError("metrics CSV header mismatch");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 10) throw FormatError("metrics CSV row has " + std::to_string(f.size()) + " fields");
    try {
      MetricsRow r;
      r.enc_tail_layers = std::stoul(f[0]);
      r.metrics.t1 = std::stod(f[1]);
      r.metrics.c1 = std::stoull(f[2]);
      r.metrics.t2 = std::stod(f[3]);
      r.metrics.c2 = std::stoull(f[4]);
      r.metrics.t3 = std::stod(f[5]);
      r.metrics.c3 = std::stoull(f[6]);
      r.metrics.t4 = std::stod(f[7]);
      r.metrics.c4 = std::stoull(f[8]);
      rows.push_back(r);
    } catch (const std::logic_error&) {
      throw FormatError("bad number in metrics CSV row: " + line);
    }
  }
  return rows;
}

SessionMetrics mean_metrics(std::span<const SessionMetrics> runs) {
  SessionMetrics out;
  if (runs.empty()) return out;
  out = runs.front();
  out.t1 = out.t2 = out.t3 = out.t4 = 0.0;
  for (const auto& r : runs) {
    out.t1 += r.t1;
    out.t2 += r.t2;
    out.t3 += r.t3;
    out.t4 += r.t4;
  }
  const double n = static_cast<double>(runs.size());
  out.t1 /= n;
  out.t2 /= n;
  out.t3 /= n;
  out.t4 /= n;
  return out;
}

}  // namespace splitfhe::proto
