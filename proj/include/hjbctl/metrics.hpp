#ifndef HJBCTL_METRICS_HPP_
#define HJBCTL_METRICS_HPP_

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

namespace hjbctl {

// One validation measurement during training. Shared by every method so the
// comparison tooling can stay method-agnostic.
struct MetricsRow {
  std::size_t iter = 0;
  std::uint64_t pde_solves = 0;  // training solves so far
  double mean_val_J = 0.0;
  std::vector<double> val_J;
  std::vector<double> loss_terms;
  double lr = 0.0;
};

using MetricsSink = std::function<void(const MetricsRow&)>;

// Append-only CSV writer: one '#' comment line, a header
//   iter,pde_solves,mean_val_J,val_J_0..val_J_{k-1},<loss names>,lr
// and one flushed line per row.
class MetricsCsv {
 public:
  MetricsCsv(const std::string& path, const std::string& comment,
             std::size_t validation_count, std::vector<std::string> loss_names);

  void append(const MetricsRow& row);

 private:
  std::ofstream os_;
  std::size_t validation_count_;
  std::size_t loss_count_;
};

struct MetricsTable {
  std::string comment;
  std::vector<std::string> columns;
  std::vector<MetricsRow> rows;
  std::size_t validation_count = 0;
};

MetricsTable read_metrics_csv(const std::string& path);

}  // namespace hjbctl

#endif  // HJBCTL_METRICS_HPP_
