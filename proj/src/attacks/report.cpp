#include <iomanip>
#include <json.hpp>
#include <sstream>

#include "splitfhe/attacks/attacks.hpp"
#include "splitfhe/error.hpp"

namespace splitfhe::attacks {

namespace {

std::vector<std::vector<std::string>> csv_rows(const std::string& text, const char* header, std::size_t fields,
                                               const char* what) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != header) throw FormatError(std::string(what) + " CSV header mismatch");
  std::vector<std::vector<std::string>> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != fields) {
      throw FormatError(std::string(what) + " CSV row has " + std::to_string(f.size()) + " fields");
    }
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace

std::string mea_csv(std::span<const MeaReport> rows) {
  std::ostringstream os;
  os << kMeaCsvHeader << '\n' << std::setprecision(9);
  for (const auto& r : rows) os << r.samples << ',' << r.enc_tail_layers << ',' << r.seed << ',' << r.fidelity << '\n';
  return os.str();
}

std::string mea_json(std::span<const MeaReport> rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j = {{"samples", r.samples},
                        {"enc_tail_layers", r.enc_tail_layers},
                        {"seed", r.seed},
                        {"fidelity", r.fidelity},
                        {"model1_mse", r.model1_mse},
                        {"failed", r.failed}};
    if (r.failed) j["failure"] = r.failure;
    arr.push_back(std::move(j));
  }
  return arr.dump(2) + "\n";
}

std::vector<MeaReport> parse_mea_csv(const std::string& text) {
  std::vector<MeaReport> out;
  for (const auto& f : csv_rows(text, kMeaCsvHeader, 4, "MEA")) {
    try {
      MeaReport r;
      r.samples = std::stoul(f[0]);
      r.enc_tail_layers = std::stoul(f[1]);
      r.seed = std::stoull(f[2]);
      r.fidelity = std::stod(f[3]);
      out.push_back(r);
    } catch (const std::logic_error&) {
      throw FormatError("bad number in MEA CSV row");
    }
  }
  return out;
}

std::string mia_csv(std::span<const MiaRow> rows) {
  std::ostringstream os;
  os << kMiaCsvHeader << '\n' << std::setprecision(9);
  for (const auto& r : rows) {
    os << r.kind << ',' << r.cls << ',' << r.auc << ',' << r.advantage << ',' << r.precision << '\n';
  }
  return os.str();
}

std::string mia_json(std::span<const MiaRow> rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    arr.push_back({{"kind", r.kind},
                   {"class", r.cls},
                   {"auc", r.auc},
                   {"advantage", r.advantage},
                   {"precision", r.precision}});
  }
  return arr.dump(2) + "\n";
}

std::vector<MiaRow> parse_mia_csv(const std::string& text) {
  std::vector<MiaRow> out;
  for (const auto& f : csv_rows(text, kMiaCsvHeader, 5, "MIA")) {
    try {
      MiaRow r;
      r.kind = f[0];
      r.cls = f[1];
      r.auc = std::stod(f[2]);
      r.advantage = std::stod(f[3]);
      r.precision = std::stod(f[4]);
      out.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw FormatError("bad number in MIA CSV row");
    }
  }
  return out;
}

}  // namespace splitfhe::attacks
