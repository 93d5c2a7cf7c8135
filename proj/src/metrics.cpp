#include "blockasm/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "blockasm/error.hpp"

namespace blockasm {

double discounted_return(std::span<const double> rewards, double gamma) {
  double total = 0.0;
  double discount = 1.0;
  for (double r : rewards) {
    total += discount * r;
    discount *= gamma;
  }
  return total;
}

MetricsSummary compute_metrics(std::span<const EpisodeRecord> records, const std::string& policy, int grid_size) {
  if (records.empty()) throw ConfigError("no episodes to summarize");
  MetricsSummary m;
  m.policy = policy;
  m.grid_size = grid_size;
  m.n = static_cast<int>(records.size());
  const double n = static_cast<double>(records.size());

  for (const auto& r : records) {
    m.R += r.discounted_return;
    switch (r.status) {
      case Status::done_success: m.d += 1; break;
      case Status::done_terminated: m.e += 1; break;
      case Status::done_exhausted: m.exhausted += 1; break;
      case Status::done_failed:
        m.f += 1;
        if (r.reason == Reason::fail_grasp) m.f_g += 1;
        if (r.reason == Reason::fail_place) m.f_p += 1;
        break;
      case Status::running: throw ConfigError("episode did not finish");
    }
    m.a_bar += r.initial_targets > 0 ? double(r.filled_targets) / r.initial_targets : 1.0;
    m.a_bar_corrected += r.milp_targets > 0 ? double(r.filled_milp_targets) / r.milp_targets : 1.0;
  }
  m.R /= n;
  m.e /= n;
  m.d /= n;
  m.exhausted /= n;
  m.f /= n;
  m.f_g /= n;
  m.f_p /= n;
  m.a_bar /= n;
  m.a_bar_corrected /= n;

  if (records.size() > 1) {
    double ss = 0.0;
    for (const auto& r : records) ss += (r.discounted_return - m.R) * (r.discounted_return - m.R);
    m.sem_R = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  return m;
}

void write_metrics_csv_row(std::ostream& os, const MetricsSummary& m) {
  std::ostringstream line;
  line << std::setprecision(6) << std::fixed;
  line << m.policy << ',' << m.grid_size << ',' << m.n << ',' << m.R << ',' << m.sem_R << ',' << m.e << ',' << m.d
       << ',' << m.exhausted << ',' << m.f << ',' << m.f_g << ',' << m.f_p << ',' << m.a_bar << ','
       << m.a_bar_corrected;
  os << line.str() << "\n";
}

std::string metrics_json(const MetricsSummary& m) {
  nlohmann::ordered_json j;
  j["policy"] = m.policy;
  j["grid_size"] = m.grid_size;
  j["n"] = m.n;
  j["R"] = m.R;
  j["sem_R"] = m.sem_R;
  j["e"] = m.e;
  j["d"] = m.d;
  j["exhausted"] = m.exhausted;
  j["f"] = m.f;
  j["f_g"] = m.f_g;
  j["f_p"] = m.f_p;
  j["a_bar"] = m.a_bar;
  j["a_bar_corrected"] = m.a_bar_corrected;
  return j.dump(2);
}

}  // namespace blockasm
