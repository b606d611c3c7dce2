#include "hjbctl/metrics.hpp"

#include <iomanip>
#include <sstream>

#include "hjbctl/tensor.hpp"

namespace hjbctl {

MetricsCsv::MetricsCsv(const std::string& path, const std::string& comment,
                       std::size_t validation_count, std::vector<std::string> loss_names)
    : os_(path, std::ios::trunc),
      validation_count_(validation_count),
      loss_count_(loss_names.size()) {
  if (!os_) throw Error("MetricsCsv: cannot open " + path);
  os_ << "# " << comment << '\n' << "iter,pde_solves,mean_val_J";
  for (std::size_t i = 0; i < validation_count; ++i) os_ << ",val_J_" << i;
  for (const auto& n : loss_names) os_ << ',' << n;
  os_ << ",lr\n";
  os_.flush();
}

void MetricsCsv::append(const MetricsRow& row) {
  if (row.val_J.size() != validation_count_ || row.loss_terms.size() != loss_count_) {
    throw DimensionError("MetricsCsv::append: row does not match header");
  }
  std::ostringstream line;
  line << std::setprecision(17) << row.iter << ',' << row.pde_solves << ',' << row.mean_val_J;
  for (double v : row.val_J) line << ',' << v;
  for (double v : row.loss_terms) line << ',' << v;
  line << ',' << row.lr << '\n';
  os_ << line.str();
  os_.flush();
}

MetricsTable read_metrics_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("read_metrics_csv: cannot open " + path);
  MetricsTable t;
  std::string line;
  bool header = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      t.comment = line.size() > 2 ? line.substr(2) : "";
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (!header) {
      t.columns = cells;
      if (cells.size() < 4 || cells[0] != "iter" || cells[1] != "pde_solves" ||
          cells[2] != "mean_val_J" || cells.back() != "lr") {
        throw Error("read_metrics_csv: " + path + " has an unexpected header");
      }
      for (const auto& c : cells) {
        if (c.rfind("val_J_", 0) == 0) ++t.validation_count;
      }
      header = true;
      continue;
    }
    if (cells.size() != t.columns.size()) {
      throw Error("read_metrics_csv: ragged row in " + path);
    }
    MetricsRow r;
    r.iter = std::stoull(cells[0]);
    r.pde_solves = std::stoull(cells[1]);
    r.mean_val_J = std::stod(cells[2]);
    for (std::size_t i = 0; i < t.validation_count; ++i) r.val_J.push_back(std::stod(cells[3 + i]));
    for (std::size_t i = 3 + t.validation_count; i + 1 < cells.size(); ++i) {
      r.loss_terms.push_back(std::stod(cells[i]));
    }
    r.lr = std::stod(cells.back());
    t.rows.push_back(std::move(r));
  }
  if (!header) throw Error("read_metrics_csv: " + path + " has no header");
  return t;
}

}  // namespace hjbctl
