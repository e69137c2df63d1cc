#pragma once

#include "rsss/model.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace rsss {

/// Panel of N individuals observed over T occasions. y1 holds the
/// time-dependent indicators with a per-entry missingness mask; y2 the
/// complete time-invariant indicators. regime_event[i] is the 1-based
/// occasion from which individual i's regime is observed to be 2
/// (e.g. dropout), or 0 if never observed.
struct PanelDataset {
  int n = 0;
  int t = 0;
  std::vector<Matrix> y1;                                     // n of (o1 x t)
  std::vector<Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>> observed;  // same shape
  Matrix y2;                                                  // n x o2
  std::vector<int> regime_event;                              // n, 0 = none

  void validate(const ModelSpec& spec) const {
    if (static_cast<int>(y1.size()) != n || static_cast<int>(observed.size()) != n) {
      throw ConstraintError("PanelDataset: y1/observed size mismatch");
    }
    for (int i = 0; i < n; ++i) {
      if (y1[i].rows() != spec.o1 || y1[i].cols() != t ||
          observed[i].rows() != spec.o1 || observed[i].cols() != t) {
        throw ConstraintError("PanelDataset: y1 shape mismatch at individual " +
                              std::to_string(i + 1));
      }
    }
    if (y2.rows() != n || y2.cols() != spec.o2) {
      throw ConstraintError("PanelDataset: y2 shape mismatch");
    }
    if (static_cast<int>(regime_event.size()) != n) {
      throw ConstraintError("PanelDataset: regime_event size mismatch");
    }
    for (int i = 0; i < n; ++i) {
      if (regime_event[i] < 0 || regime_event[i] > t) {
        throw ConstraintError("PanelDataset: regime_event out of range for individual " +
                              std::to_string(i + 1));
      }
    }
  }

  PanelDataset subset(const std::vector<int>& individuals) const {
    PanelDataset out;
    out.n = static_cast<int>(individuals.size());
    out.t = t;
    out.y2 = Matrix(out.n, y2.cols());
    for (int k = 0; k < out.n; ++k) {
      const int i = individuals[k];
      out.y1.push_back(y1[i]);
      out.observed.push_back(observed[i]);
      out.y2.row(k) = y2.row(i);
      out.regime_event.push_back(regime_event[i]);
    }
    return out;
  }
};

namespace csv {

inline std::string format(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace csv

/// Long format: id,t,item_1..item_O1; empty cell = missing.
inline void write_y1_csv(const std::filesystem::path& path, const PanelDataset& data) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "id,t";
  const int o1 = data.y1.empty() ? 0 : static_cast<int>(data.y1[0].rows());
  for (int j = 0; j < o1; ++j) {
    out << ",item_" << (j + 1);
  }
  out << "\n";
  for (int i = 0; i < data.n; ++i) {
    for (int tt = 0; tt < data.t; ++tt) {
      out << (i + 1) << "," << (tt + 1);
      for (int j = 0; j < data.y1[i].rows(); ++j) {
        out << ",";
        if (data.observed[i](j, tt)) out << csv::format(data.y1[i](j, tt));
      }
      out << "\n";
    }
  }
}

/// Wide format: id,item_1..item_O2; plus optional regime_event column.
inline void write_y2_csv(const std::filesystem::path& path, const PanelDataset& data) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "id";
  for (int j = 0; j < data.y2.cols(); ++j) out << ",item_" << (j + 1);
  out << ",regime_event\n";
  for (int i = 0; i < data.n; ++i) {
    out << (i + 1);
    for (int j = 0; j < data.y2.cols(); ++j) out << "," << csv::format(data.y2(i, j));
    out << ",";
    if (data.regime_event[i] > 0) out << data.regime_event[i];
    out << "\n";
  }
}

inline PanelDataset read_panel_csv(const std::filesystem::path& y1_path,
                                   const std::filesystem::path& y2_path) {
  std::ifstream f1(y1_path);
  if (!f1) throw std::runtime_error("cannot read " + y1_path.string());
  std::string line;
  if (!std::getline(f1, line)) throw std::runtime_error("empty file " + y1_path.string());
  const int o1 = static_cast<int>(csv::split_line(line).size()) - 2;
  if (o1 <= 0) throw std::runtime_error("bad y1 header in " + y1_path.string());

  struct Row {
    int id, t;
    std::vector<std::pair<bool, double>> items;
  };
  std::vector<Row> rows;
  int max_id = 0, max_t = 0;
  while (std::getline(f1, line)) {
    if (line.empty()) continue;
    auto cells = csv::split_line(line);
    if (static_cast<int>(cells.size()) != o1 + 2) {
      throw std::runtime_error("bad y1 row in " + y1_path.string() + ": " + line);
    }
    Row r;
    r.id = std::stoi(cells[0]);
    r.t = std::stoi(cells[1]);
    for (int j = 0; j < o1; ++j) {
      const std::string& c = cells[j + 2];
      if (c.empty()) {
        r.items.emplace_back(false, 0.0);
      } else {
        r.items.emplace_back(true, std::stod(c));
      }
    }
    max_id = std::max(max_id, r.id);
    max_t = std::max(max_t, r.t);
    rows.push_back(std::move(r));
  }

  PanelDataset data;
  data.n = max_id;
  data.t = max_t;
  for (int i = 0; i < data.n; ++i) {
    data.y1.emplace_back(Matrix::Zero(o1, data.t));
    data.observed.emplace_back(
        Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(o1, data.t, false));
  }
  for (const auto& r : rows) {
    for (int j = 0; j < o1; ++j) {
      data.observed[r.id - 1](j, r.t - 1) = r.items[j].first;
      data.y1[r.id - 1](j, r.t - 1) = r.items[j].second;
    }
  }

  std::ifstream f2(y2_path);
  if (!f2) throw std::runtime_error("cannot read " + y2_path.string());
  if (!std::getline(f2, line)) throw std::runtime_error("empty file " + y2_path.string());
  auto header = csv::split_line(line);
  const bool has_event = !header.empty() && header.back() == "regime_event";
  const int o2 = static_cast<int>(header.size()) - 1 - (has_event ? 1 : 0);
  if (o2 <= 0) throw std::runtime_error("bad y2 header in " + y2_path.string());
  data.y2 = Matrix::Zero(data.n, o2);
  data.regime_event.assign(data.n, 0);
  while (std::getline(f2, line)) {
    if (line.empty()) continue;
    auto cells = csv::split_line(line);
    const int id = std::stoi(cells[0]);
    if (id < 1 || id > data.n) throw std::runtime_error("y2 id outside y1 panel: " + line);
    for (int j = 0; j < o2; ++j) data.y2(id - 1, j) = std::stod(cells[j + 1]);
    if (has_event && cells.size() > static_cast<size_t>(o2 + 1) && !cells[o2 + 1].empty()) {
      data.regime_event[id - 1] = std::stoi(cells[o2 + 1]);
    }
  }
  return data;
}

}  // namespace rsss
