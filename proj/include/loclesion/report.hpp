#pragma once

// Report rendering: canonical JSON, flat CSV, and a grouped bar chart SVG.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "loclesion/analysis.hpp"
#include "loclesion/artifacts.hpp"
#include "loclesion/fsutil.hpp"

namespace loclesion::analysis {

enum class ReportFormat { Json, Csv, Svg };

inline ReportFormat parse_report_format(std::string_view s) {
  if (s == "json") return ReportFormat::Json;
  if (s == "csv") return ReportFormat::Csv;
  if (s == "svg") return ReportFormat::Svg;
  fail(ErrorCode::UsageError, "unknown report format '" + std::string(s) + "'");
}

namespace detail {

inline std::string shortest(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline std::string fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace detail

/// Columns: benchmark_id,localizer,condition,k_percent,model_id,delta,repeats
inline std::string render_csv(const ExperimentSummary& s) {
  std::string out = "benchmark_id,localizer,condition,k_percent,model_id,delta,repeats\n";
  for (const auto& series : s.series)
    for (const auto& d : series.deltas) {
      out += detail::csv_field(series.benchmark_id) + "," + std::string(to_string(series.localizer)) + "," +
             std::string(to_string(series.condition)) + "," + detail::shortest(series.k_percent.value()) + "," +
             detail::csv_field(d.model_id) + "," + detail::shortest(d.delta) + "," + std::to_string(d.repeats) + "\n";
    }
  return out;
}

/// One panel per (benchmark, localizer): Top/Bottom/Random bars at the mean
/// delta, a dot per model, and the star marker of each Top comparison.
inline std::string render_svg(const ExperimentSummary& s) {
  struct Panel {
    std::string benchmark;
    Localizer localizer;
  };
  std::vector<Panel> panels;
  for (const auto& series : s.series) {
    bool seen = false;
    for (const auto& p : panels) seen |= p.benchmark == series.benchmark_id && p.localizer == series.localizer;
    if (!seen) panels.push_back({series.benchmark_id, series.localizer});
  }
  double extent = 0.05;
  for (const auto& series : s.series)
    for (const auto& d : series.deltas) extent = std::max(extent, std::fabs(d.delta));

  constexpr double kPanelW = 240, kPanelH = 220, kPlotTop = 40, kPlotH = 140, kBarW = 44;
  const double width = std::max<double>(kPanelW, kPanelW * static_cast<double>(panels.size()));
  const double zero_y = kPlotTop + kPlotH / 2;
  auto y_of = [&](double delta) { return zero_y - delta / extent * (kPlotH / 2); };

  std::string out;
  out += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::fixed(width, 0) + "\" height=\"" +
         detail::fixed(kPanelH + 20, 0) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  const Selection order[] = {Selection::Top, Selection::Bottom, Selection::Random};
  const char* colors[] = {"#c0392b", "#2980b9", "#7f8c8d"};
  for (std::size_t pi = 0; pi < panels.size(); ++pi) {
    const Panel& p = panels[pi];
    const double x0 = kPanelW * static_cast<double>(pi);
    out += "<g>\n";
    out += "<text x=\"" + detail::fixed(x0 + 10) + "\" y=\"16\">" + detail::xml_escape(p.benchmark) + " (" +
           std::string(to_string(p.localizer)) + " localizer)</text>\n";
    out += "<line x1=\"" + detail::fixed(x0 + 20) + "\" y1=\"" + detail::fixed(zero_y) + "\" x2=\"" +
           detail::fixed(x0 + kPanelW - 20) + "\" y2=\"" + detail::fixed(zero_y) + "\" stroke=\"black\"/>\n";
    for (std::size_t ci = 0; ci < 3; ++ci) {
      const DeltaSeries* series = s.find(p.benchmark, p.localizer, order[ci]);
      const double bx = x0 + 30 + static_cast<double>(ci) * (kBarW + 20);
      out += "<text x=\"" + detail::fixed(bx) + "\" y=\"" + detail::fixed(kPlotTop + kPlotH + 16) + "\">" +
             std::string(to_string(order[ci])) + "</text>\n";
      if (!series || series->deltas.empty()) continue;
      double mean = 0;
      for (const auto& d : series->deltas) mean += d.delta;
      mean /= static_cast<double>(series->deltas.size());
      const double top = std::min(y_of(mean), zero_y), h = std::fabs(y_of(mean) - zero_y);
      out += "<rect x=\"" + detail::fixed(bx) + "\" y=\"" + detail::fixed(top) + "\" width=\"" +
             detail::fixed(kBarW) + "\" height=\"" + detail::fixed(h) + "\" fill=\"" + colors[ci] +
             "\" fill-opacity=\"0.6\"/>\n";
      for (const auto& d : series->deltas)
        out += "<circle cx=\"" + detail::fixed(bx + kBarW / 2) + "\" cy=\"" + detail::fixed(y_of(d.delta)) +
               "\" r=\"3\" fill=\"black\"><title>" + detail::xml_escape(d.model_id) + ": " +
               detail::shortest(d.delta) + "</title></circle>\n";
    }
    double ty = kPlotTop + kPlotH + 32;
    for (Selection other : {Selection::Random, Selection::Bottom}) {
      const std::string label = comparison_label(other, p.benchmark, p.localizer);
      for (const auto& c : s.comparisons)
        if (c.label == label) {
          out += "<text x=\"" + detail::fixed(x0 + 10) + "\" y=\"" + detail::fixed(ty) + "\">top vs " +
                 std::string(to_string(other)) + ": " + detail::xml_escape(std::string(to_string(c.stars))) +
                 " (p=" + detail::fixed(c.p, 3) + ")</text>\n";
          ty += 12;
        }
    }
    out += "</g>\n";
  }
  double ty = kPanelH + 14;
  for (const auto& c : s.comparisons)
    if (c.label.rfind("MD-top vs ToM-top", 0) == 0) {
      out += "<text x=\"10\" y=\"" + detail::fixed(ty) + "\">" + detail::xml_escape(c.label) + ": " +
             detail::xml_escape(std::string(to_string(c.stars))) + " (p=" + detail::fixed(c.p, 3) + ")</text>\n";
      ty += 12;
    }
  out += "</svg>\n";
  return out;
}

inline std::string render_report(const ExperimentSummary& s, ReportFormat format) {
  switch (format) {
    case ReportFormat::Json: return io::encode(s);
    case ReportFormat::Csv: return render_csv(s);
    case ReportFormat::Svg: return render_svg(s);
  }
  return {};
}

/// Writes report.<ext> into `dir` for each requested format; returns the paths.
inline std::vector<std::filesystem::path> emit_report(const ExperimentSummary& s,
                                                      std::span<const ReportFormat> formats,
                                                      const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> written;
  for (ReportFormat f : formats) {
    const char* ext = f == ReportFormat::Json ? "json" : f == ReportFormat::Csv ? "csv" : "svg";
    const auto path = dir / (std::string("report.") + ext);
    write_file_atomic(path, render_report(s, f));
    written.push_back(path);
  }
  return written;
}

}  // namespace loclesion::analysis
