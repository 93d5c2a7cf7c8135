#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "blockasm/env.hpp"

namespace blockasm {

/// Full trace of one evaluation episode.
struct EpisodeRecord {
  std::vector<Action> actions;
  std::vector<double> rewards;
  Status status = Status::running;
  Reason reason = Reason::none;
  double discounted_return = 0.0;
  int initial_targets = 0;
  int filled_targets = 0;
  int milp_targets = 0;         // initial targets covered by the packing solution
  int filled_milp_targets = 0;  // of those, filled by the episode
};

struct MetricsSummary {
  std::string policy;
  int grid_size = 0;
  int n = 0;
  double R = 0.0;
  double sem_R = 0.0;
  double e = 0.0;          // terminated by the agent
  double d = 0.0;          // all targets filled
  double exhausted = 0.0;  // no blocks left
  double f = 0.0;          // any failure
  double f_g = 0.0;        // grasp proxy failures
  double f_p = 0.0;        // placement proxy failures
  double a_bar = 0.0;
  double a_bar_corrected = 0.0;
};

/// Discounted return sum_t gamma^t r_t.
double discounted_return(std::span<const double> rewards, double gamma);

/// Throws ConfigError on an empty record list or an unfinished episode.
MetricsSummary compute_metrics(std::span<const EpisodeRecord> records, const std::string& policy = "",
                               int grid_size = 0);

inline constexpr const char* kMetricsCsvHeader =
    "policy,grid_size,n,R,sem_R,e,d,exhausted,f,f_g,f_p,a_bar,a_bar_corrected";

void write_metrics_csv_row(std::ostream& os, const MetricsSummary& m);
std::string metrics_json(const MetricsSummary& m);

}  // namespace blockasm
