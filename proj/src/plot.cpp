// Copyright 2026 The Sidetune Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "sidetune/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <vector>

namespace sidetune {

namespace {

constexpr double kWidth = 900.0;
constexpr double kPanelHeight = 300.0;
constexpr double kTitleHeight = 40.0;
constexpr double kLeft = 80.0;
constexpr double kRight = 180.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 50.0;

constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string fmt(double v) {
  if (v == 0.0) v = 0.0;  // folds -0 so it prints as 0.000
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string tick_label(double v) {
  if (std::abs(v) < 1e-12) v = 0.0;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

const char* color(std::size_t i) { return kPalette[i % std::size(kPalette)]; }

struct Range {
  double lo = 0.0;
  double hi = 1.0;

  static Range of(const std::vector<double>& values, bool include_zero) {
    Range r;
    if (values.empty()) return r;
    r.lo = *std::min_element(values.begin(), values.end());
    r.hi = *std::max_element(values.begin(), values.end());
    if (include_zero) {
      r.lo = std::min(r.lo, 0.0);
      r.hi = std::max(r.hi, 0.0);
    }
    if (r.hi - r.lo < 1e-12) {
      const double pad = std::max(std::abs(r.hi) * 0.1, 0.5);
      r.lo -= pad;
      r.hi += pad;
    }
    return r;
  }
};

class Panel {
 public:
  Panel(std::string& out, double top, std::string title, std::string x_label, std::string y_label)
      : out_(out), top_(top + kTop) {
    out_ += "<g class=\"panel\" data-panel=\"" + escape(title) + "\">\n";
    out_ += "<text x=\"" + fmt(kLeft) + "\" y=\"" + fmt(top_ - 12.0) +
            "\" font-size=\"14\" font-weight=\"bold\">" + escape(title) + "</text>\n";
    out_ += "<text x=\"" + fmt(kLeft + plot_w() / 2.0) + "\" y=\"" + fmt(top_ + plot_h() + 38.0) +
            "\" font-size=\"12\" text-anchor=\"middle\">" + escape(x_label) + "</text>\n";
    out_ += "<text x=\"16\" y=\"" + fmt(top_ + plot_h() / 2.0) +
            "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
            fmt(top_ + plot_h() / 2.0) + ")\">" + escape(y_label) + "</text>\n";
  }
  ~Panel() { out_ += "</g>\n"; }
  Panel(const Panel&) = delete;
  Panel& operator=(const Panel&) = delete;

  static double plot_w() { return kWidth - kLeft - kRight; }
  static double plot_h() { return kPanelHeight - kTop - kBottom; }

  void axes(double x_lo, double x_hi, const Range& y) {
    x_lo_ = x_lo;
    x_hi_ = x_hi;
    y_ = y;
    const double bottom = top_ + plot_h();
    out_ += "<line x1=\"" + fmt(kLeft) + "\" y1=\"" + fmt(bottom) + "\" x2=\"" + fmt(kLeft + plot_w()) +
            "\" y2=\"" + fmt(bottom) + "\" stroke=\"black\"/>\n";
    out_ += "<line x1=\"" + fmt(kLeft) + "\" y1=\"" + fmt(top_) + "\" x2=\"" + fmt(kLeft) + "\" y2=\"" +
            fmt(bottom) + "\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
      const double v = y.lo + (y.hi - y.lo) * k / 4.0;
      const double py = py_of(v);
      out_ += "<line x1=\"" + fmt(kLeft - 4.0) + "\" y1=\"" + fmt(py) + "\" x2=\"" + fmt(kLeft) +
              "\" y2=\"" + fmt(py) + "\" stroke=\"black\"/>\n";
      out_ += "<text x=\"" + fmt(kLeft - 6.0) + "\" y=\"" + fmt(py + 4.0) +
              "\" font-size=\"10\" text-anchor=\"end\">" + tick_label(v) + "</text>\n";
    }
  }

  void x_ticks(std::size_t first, std::size_t last) {
    const double bottom = top_ + plot_h();
    for (std::size_t i = first; i <= last; ++i) {
      const double px = px_of(static_cast<double>(i));
      out_ += "<line x1=\"" + fmt(px) + "\" y1=\"" + fmt(bottom) + "\" x2=\"" + fmt(px) + "\" y2=\"" +
              fmt(bottom + 4.0) + "\" stroke=\"black\"/>\n";
      out_ += "<text x=\"" + fmt(px) + "\" y=\"" + fmt(bottom + 16.0) +
              "\" font-size=\"10\" text-anchor=\"middle\">" + std::to_string(i) + "</text>\n";
    }
  }

  void no_data() {
    out_ += "<text class=\"no-data\" x=\"" + fmt(kLeft + plot_w() / 2.0) + "\" y=\"" +
            fmt(top_ + plot_h() / 2.0) + "\" font-size=\"16\" text-anchor=\"middle\" fill=\"#888\">no data</text>\n";
  }

  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& run,
                std::optional<std::size_t> task, const char* stroke) {
    out_ += "<polyline data-run=\"" + escape(run) + "\"";
    if (task) out_ += " data-task=\"" + std::to_string(*task) + "\"";
    out_ += " fill=\"none\" stroke=\"" + std::string(stroke) + "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t k = 0; k < pts.size(); ++k) {
      if (k > 0) out_ += ' ';
      out_ += fmt(px_of(pts[k].first)) + "," + fmt(py_of(pts[k].second));
    }
    out_ += "\"/>\n";
    for (const auto& [x, y] : pts) {
      out_ += "<circle cx=\"" + fmt(px_of(x)) + "\" cy=\"" + fmt(py_of(y)) + "\" r=\"2.5\" fill=\"" +
              stroke + "\"/>\n";
    }
  }

  /// Bar centred `offset` pixels from task position x.
  void bar(double x, double offset, double width, double value, const std::string& run,
           std::size_t task, const char* fill_color) {
    const double y0 = py_of(0.0);
    const double y1 = py_of(value);
    const double px = px_of(x) + offset;
    out_ += "<rect data-run=\"" + escape(run) + "\" data-task=\"" + std::to_string(task) + "\" x=\"" +
            fmt(px - width / 2.0) + "\" y=\"" + fmt(std::min(y0, y1)) + "\" width=\"" + fmt(width) +
            "\" height=\"" + fmt(std::abs(y1 - y0)) + "\" fill=\"" + fill_color + "\"/>\n";
  }

  void zero_line() {
    if (y_.lo < 0.0 && y_.hi > 0.0) {
      const double py = py_of(0.0);
      out_ += "<line x1=\"" + fmt(kLeft) + "\" y1=\"" + fmt(py) + "\" x2=\"" + fmt(kLeft + plot_w()) +
              "\" y2=\"" + fmt(py) + "\" stroke=\"#aaa\" stroke-dasharray=\"4 3\"/>\n";
    }
  }

  void legend(std::size_t row, const std::string& label, const char* c) {
    const double x = kLeft + plot_w() + 16.0;
    const double y = top_ + 10.0 + 16.0 * static_cast<double>(row);
    out_ += "<rect x=\"" + fmt(x) + "\" y=\"" + fmt(y - 8.0) + "\" width=\"10\" height=\"10\" fill=\"" + c +
            "\"/>\n";
    out_ += "<text x=\"" + fmt(x + 14.0) + "\" y=\"" + fmt(y + 1.0) + "\" font-size=\"10\">" +
            escape(label) + "</text>\n";
  }

  double px_of(double x) const {
    const double span = x_hi_ - x_lo_;
    const double t = span > 0.0 ? (x - x_lo_) / span : 0.5;
    return kLeft + 20.0 + t * (plot_w() - 40.0);
  }
  double py_of(double v) const { return top_ + plot_h() - (v - y_.lo) / (y_.hi - y_.lo) * plot_h(); }

 private:
  std::string& out_;
  double top_;
  double x_lo_ = 0.0;
  double x_hi_ = 1.0;
  Range y_;
};

struct RunData {
  std::string id;
  std::string metric_kind;
  std::map<std::pair<std::size_t, std::size_t>, double> grid;  // (trained, evaled)
  std::map<std::size_t, double> rigidity;
  std::size_t stages = 0;
};

std::vector<RunData> group_runs(std::span<const ResultRow> rows) {
  std::vector<RunData> runs;
  std::map<std::string, std::size_t> index;
  for (const ResultRow& r : rows) {
    auto [it, inserted] = index.try_emplace(r.run_id, runs.size());
    if (inserted) runs.push_back(RunData{r.run_id, "", {}, {}, 0});
    RunData& run = runs[it->second];
    if (r.metric_kind == kRigidityKind) {
      run.rigidity[r.task_trained] = r.value;
    } else {
      run.metric_kind = r.metric_kind;
      run.grid[{r.task_trained, r.task_evaled}] = r.value;
      run.stages = std::max(run.stages, r.task_trained);
    }
  }
  return runs;
}

}  // namespace

std::string render_results_svg(std::span<const ResultRow> rows, std::string_view title) {
  const std::vector<RunData> runs = group_runs(rows);
  std::string metric = "metric";
  for (const RunData& r : runs) {
    if (!r.metric_kind.empty()) {
      metric = r.metric_kind;
      break;
    }
  }
  std::size_t stages = 0;
  std::size_t rigidity_tasks = 0;
  std::vector<double> curve_values, forgetting_values, rigidity_values;
  for (const RunData& r : runs) {
    stages = std::max(stages, r.stages);
    for (const auto& [key, v] : r.grid) curve_values.push_back(v);
    for (const auto& [task, v] : r.rigidity) {
      rigidity_values.push_back(v);
      rigidity_tasks = std::max(rigidity_tasks, task);
    }
    for (std::size_t j = 1; j < r.stages; ++j) {
      auto last = r.grid.find({r.stages, j});
      auto diag = r.grid.find({j, j});
      if (last != r.grid.end() && diag != r.grid.end()) forgetting_values.push_back(last->second - diag->second);
    }
  }

  const double height = kTitleHeight + 3.0 * kPanelHeight;
  std::string out;
  out += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(kWidth) + "\" height=\"" + fmt(height) +
         "\" viewBox=\"0 0 " + fmt(kWidth) + " " + fmt(height) + "\" font-family=\"sans-serif\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<text x=\"" + fmt(kWidth / 2.0) + "\" y=\"26\" font-size=\"16\" text-anchor=\"middle\">" +
         escape(title.empty() ? std::string_view("results") : title) + "</text>\n";

  {
    Panel p(out, kTitleHeight, metric + " per task after each stage", "training stage", metric);
    p.axes(1.0, static_cast<double>(std::max<std::size_t>(stages, 1)), Range::of(curve_values, false));
    if (stages > 0) p.x_ticks(1, stages);
    if (curve_values.empty()) {
      p.no_data();
    } else {
      for (std::size_t ri = 0; ri < runs.size(); ++ri) {
        const RunData& r = runs[ri];
        for (std::size_t j = 1; j <= r.stages; ++j) {
          std::vector<std::pair<double, double>> pts;
          for (std::size_t i = j; i <= r.stages; ++i) {
            auto it = r.grid.find({i, j});
            if (it != r.grid.end()) pts.emplace_back(static_cast<double>(i), it->second);
          }
          if (!pts.empty()) p.polyline(pts, r.id, j, color(j - 1));
        }
      }
      for (std::size_t j = 1; j <= stages && j <= 12; ++j) p.legend(j - 1, "task " + std::to_string(j), color(j - 1));
    }
  }
  {
    Panel p(out, kTitleHeight + kPanelHeight, "forgetting after the last stage", "task", metric + " increase");
    const std::size_t tasks = stages > 1 ? stages - 1 : 1;
    p.axes(1.0, static_cast<double>(tasks), Range::of(forgetting_values, true));
    if (stages > 1) p.x_ticks(1, tasks);
    if (forgetting_values.empty()) {
      p.no_data();
    } else {
      p.zero_line();
      const double group = (Panel::plot_w() - 40.0) / static_cast<double>(std::max<std::size_t>(tasks, 2));
      const double width = std::max(2.0, 0.8 * group / static_cast<double>(runs.size()));
      for (std::size_t ri = 0; ri < runs.size(); ++ri) {
        const RunData& r = runs[ri];
        const double offset = (static_cast<double>(ri) - (static_cast<double>(runs.size()) - 1.0) / 2.0) * width;
        for (std::size_t j = 1; j < r.stages; ++j) {
          auto last = r.grid.find({r.stages, j});
          auto diag = r.grid.find({j, j});
          if (last == r.grid.end() || diag == r.grid.end()) continue;
          p.bar(static_cast<double>(j), offset, width, last->second - diag->second, r.id, j, color(ri));
        }
        if (ri < 12) p.legend(ri, r.id, color(ri));
      }
    }
  }
  {
    Panel p(out, kTitleHeight + 2.0 * kPanelHeight, "rigidity against task position", "task position",
            "ln(loss in sequence / loss trained first)");
    p.axes(1.0, static_cast<double>(std::max<std::size_t>(rigidity_tasks, 1)), Range::of(rigidity_values, true));
    if (rigidity_tasks > 0) p.x_ticks(1, rigidity_tasks);
    if (rigidity_values.empty()) {
      p.no_data();
    } else {
      p.zero_line();
      for (std::size_t ri = 0; ri < runs.size(); ++ri) {
        const RunData& r = runs[ri];
        if (r.rigidity.empty()) continue;
        std::vector<std::pair<double, double>> pts;
        for (const auto& [task, v] : r.rigidity) pts.emplace_back(static_cast<double>(task), v);
        p.polyline(pts, r.id, std::nullopt, color(ri));
        if (ri < 12) p.legend(ri, r.id, color(ri));
      }
    }
  }
  out += "</svg>\n";
  return out;
}

}  // namespace sidetune
