#include "exitlab/workbench/report.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "exitlab/errors.hpp"

namespace exitlab {

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string short_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string csv_header(const ReportContext& ctx) {
  std::string out;
  if (!ctx.config_json.empty()) out += "# config: " + ctx.config_json + "\n";
  for (const auto& note : ctx.notes) out += "# " + note + "\n";
  return out;
}

std::string xml_escape(const std::string& s) {
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

std::string svg_open(double w, double h, const std::string& title, const ReportContext& ctx) {
  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + coord(w) + "\" height=\"" + coord(h) +
                    "\" viewBox=\"0 0 " + coord(w) + " " + coord(h) + "\" font-family=\"sans-serif\">\n";
  out += "<metadata>" + xml_escape(ctx.config_json);
  for (const auto& note : ctx.notes) out += "\n" + xml_escape(note);
  out += "</metadata>\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<text x=\"" + coord(w / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" + xml_escape(title) +
         "</text>\n";
  return out;
}

// Viridis-like ramp, t in [0, 1].
std::string ramp(double t) {
  static constexpr std::array<std::array<double, 3>, 5> stops{{
      {68, 1, 84},
      {59, 82, 139},
      {33, 145, 140},
      {94, 201, 98},
      {253, 231, 37},
  }};
  t = std::clamp(t, 0.0, 1.0) * static_cast<double>(stops.size() - 1);
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(t), stops.size() - 2);
  const double f = t - static_cast<double>(i);
  char buf[8];
  std::array<int, 3> rgb{};
  for (std::size_t c = 0; c < 3; ++c) {
    rgb[c] = static_cast<int>(std::lround(stops[i][c] + f * (stops[i + 1][c] - stops[i][c])));
  }
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", rgb[0], rgb[1], rgb[2]);
  return buf;
}

const std::array<const char*, 8> kPalette{"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                          "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

template <typename T>
void require_nonempty(const T& records, const char* what) {
  if (records.empty()) throw InvalidArgument(std::string("cannot emit an empty ") + what);
}

}  // namespace

ReportFormat parse_report_format(const std::string& name) {
  if (name == "csv") return ReportFormat::kCsv;
  if (name == "svg") return ReportFormat::kSvg;
  throw ConfigError("unknown report format '" + name + "'");
}

std::string budget_csv(const BudgetReport& report, const ReportContext& ctx) {
  require_nonempty(report.rows, "budget report");
  std::string out = csv_header(ctx);
  out += "# criterion: " + to_string(report.criterion) + "\n";
  out += "# calibrated on the early-stopping validation split, reported on test\n";
  out += "budget,parameter,val_cost,test_cost,test_metric,val_metric\n";
  for (const auto& r : report.rows) {
    out += (r.budget ? num(*r.budget * 100.0) : std::string("unlimited")) + "," + num(r.parameter) + "," +
           num(r.val_cost) + "," + num(r.test_cost) + "," + num(r.test_metric) + "," + num(r.val_metric) + "\n";
  }
  return out;
}

std::string train_log_csv(const TrainLog& log, const ReportContext& ctx) {
  require_nonempty(log.epochs(), "training log");
  std::string out = csv_header(ctx) + "epoch,phase,phase_name,lr,train_loss";
  const std::size_t K = log.epochs().front().val_metric.size();
  for (std::size_t k = 0; k < K; ++k) out += ",val_exit" + std::to_string(k + 1);
  out += ",wall_seconds\n";
  for (const auto& e : log.epochs()) {
    out += std::to_string(e.epoch) + "," + std::to_string(e.phase) + "," + e.phase_name + "," + num(e.lr) + "," +
           num(e.train_loss);
    for (double v : e.val_metric) out += "," + num(v);
    out += "," + num(e.wall_seconds) + "\n";
  }
  return out;
}

std::string gd_csv(const GDTrace& trace, const ReportContext& ctx) {
  require_nonempty(trace.values, "GD trace");
  std::string out = csv_header(ctx) + "epoch";
  for (std::size_t k = 0; k < trace.values.front().size(); ++k) out += ",gd_exit" + std::to_string(k + 1);
  out += "\n";
  for (std::size_t i = 0; i < trace.values.size(); ++i) {
    out += std::to_string(trace.epochs[i]);
    for (double v : trace.values[i]) out += "," + num(v);
    out += "\n";
  }
  return out;
}

std::string rank_csv(const RankProfile& profile, const ReportContext& ctx) {
  require_nonempty(profile, "rank profile");
  std::string out = csv_header(ctx) + "block,rank,samples,features,rel_tol\n";
  for (const auto& e : profile) {
    out += std::to_string(e.block) + "," + std::to_string(e.rank) + "," + std::to_string(e.samples) + "," +
           std::to_string(e.features) + "," + num(e.tolerance) + "\n";
  }
  return out;
}

std::string mi_csv(const MIProfile& profile, const ReportContext& ctx) {
  require_nonempty(profile, "MI profile");
  std::string out = csv_header(ctx) + "block,bits,bins,samples\n";
  for (const auto& e : profile) {
    out += std::to_string(e.block) + "," + num(e.bits) + "," + std::to_string(e.bins) + "," +
           std::to_string(e.samples) + "\n";
  }
  return out;
}

std::string connectivity_csv(const ConnectivityGrid& grid, const ReportContext& ctx) {
  require_nonempty(grid.total, "connectivity grid");
  const bool plane = grid.mode == ConnectivityMode::kPlane;
  std::string out = csv_header(ctx) + (plane ? "u,v,total" : "lambda,total");
  for (std::size_t k = 0; k < grid.per_exit.front().size(); ++k) out += ",loss_exit" + std::to_string(k + 1);
  out += "\n";
  for (std::size_t i = 0; i < grid.total.size(); ++i) {
    out += num(grid.u[i]) + (plane ? "," + num(grid.v[i]) : std::string()) + "," + num(grid.total[i]);
    for (double v : grid.per_exit[i]) out += "," + num(v);
    out += "\n";
  }
  return out;
}

std::string landscape_csv(const LandscapeGrid& grid, const ReportContext& ctx) {
  require_nonempty(grid.total, "landscape grid");
  std::string out = csv_header(ctx) + "x,y,total";
  for (std::size_t k = 0; k < grid.per_exit.front().size(); ++k) out += ",loss_exit" + std::to_string(k + 1);
  out += "\n";
  const std::size_t R = grid.resolution;
  for (std::size_t i = 0; i < grid.total.size(); ++i) {
    out += num(grid.coords[i % R]) + "," + num(grid.coords[i / R]) + "," + num(grid.total[i]);
    for (double v : grid.per_exit[i]) out += "," + num(v);
    out += "\n";
  }
  return out;
}

std::string render_line_plot(const LinePlot& plot, const ReportContext& ctx) {
  require_nonempty(plot.series, "line plot");
  constexpr double W = 640, H = 420, L = 70, R = 150, T = 40, B = 50;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : plot.series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!(x1 >= x0)) x0 = 0, x1 = 1;
  if (!(y1 >= y0)) y0 = 0, y1 = 1;
  if (x1 == x0) x0 -= 0.5, x1 += 0.5;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  std::string out = svg_open(W, H, plot.title, ctx);
  out += "<rect x=\"" + coord(L) + "\" y=\"" + coord(T) + "\" width=\"" + coord(W - L - R) + "\" height=\"" +
         coord(H - T - B) + "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = x0 + (x1 - x0) * i / 4.0;
    const double fy = y0 + (y1 - y0) * i / 4.0;
    out += "<text x=\"" + coord(px(fx)) + "\" y=\"" + coord(H - B + 16) +
           "\" text-anchor=\"middle\" font-size=\"10\">" + short_num(fx) + "</text>\n";
    out += "<text x=\"" + coord(L - 6) + "\" y=\"" + coord(py(fy) + 3) + "\" text-anchor=\"end\" font-size=\"10\">" +
           short_num(fy) + "</text>\n";
  }
  out += "<text x=\"" + coord((L + W - R) / 2) + "\" y=\"" + coord(H - 12) +
         "\" text-anchor=\"middle\" font-size=\"12\">" + xml_escape(plot.x_label) + "</text>\n";
  out += "<text x=\"16\" y=\"" + coord((T + H - B) / 2) + "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 " +
         coord((T + H - B) / 2) + ")\">" + xml_escape(plot.y_label) + "</text>\n";
  for (std::size_t si = 0; si < plot.series.size(); ++si) {
    const auto& s = plot.series[si];
    const char* color = kPalette[si % kPalette.size()];
    std::string points;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      points += (points.empty() ? "" : " ") + coord(px(s.x[i])) + "," + coord(py(s.y[i]));
    }
    out += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\" points=\"" + points +
           "\"/>\n";
    const double ly = T + 14.0 * static_cast<double>(si + 1);
    out += "<line x1=\"" + coord(W - R + 10) + "\" y1=\"" + coord(ly - 4) + "\" x2=\"" + coord(W - R + 30) +
           "\" y2=\"" + coord(ly - 4) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    out += "<text x=\"" + coord(W - R + 34) + "\" y=\"" + coord(ly) + "\" font-size=\"10\">" + xml_escape(s.name) +
           "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

std::string render_heat_map(const HeatMap& map, const ReportContext& ctx) {
  require_nonempty(map.values, "heat map");
  if (map.values.size() != map.rows * map.cols) throw ShapeError("heat map values do not match its grid");
  constexpr double cell_max = 10.0;
  const double cell = std::min(cell_max, 500.0 / static_cast<double>(std::max(map.rows, map.cols)));
  const double L = 20, T = 40;
  const double W = L + cell * static_cast<double>(map.cols) + 90;
  const double H = T + cell * static_cast<double>(map.rows) + 20;
  double lo = std::numeric_limits<double>::infinity();
  for (double v : map.values) {
    if (std::isfinite(v)) lo = std::min(lo, v);
  }
  if (!std::isfinite(lo)) lo = 0.0;
  lo = std::min(lo, map.clip);
  const double span = map.clip > lo ? map.clip - lo : 1.0;

  std::string out = svg_open(W, H, map.title, ctx);
  for (std::size_t r = 0; r < map.rows; ++r) {
    for (std::size_t c = 0; c < map.cols; ++c) {
      const double v = map.values[r * map.cols + c];
      const double t = std::isfinite(v) ? (std::min(v, map.clip) - lo) / span : 1.0;
      const double x = L + cell * static_cast<double>(c);
      const double y = T + cell * static_cast<double>(map.rows - 1 - r);
      out += "<rect x=\"" + coord(x) + "\" y=\"" + coord(y) + "\" width=\"" + coord(cell) + "\" height=\"" +
             coord(cell) + "\" fill=\"" + ramp(t) + "\"/>\n";
    }
  }
  const double bx = L + cell * static_cast<double>(map.cols) + 15;
  for (int i = 0; i < 10; ++i) {
    const double t = 1.0 - i / 9.0;
    out += "<rect x=\"" + coord(bx) + "\" y=\"" + coord(T + 12.0 * i) + "\" width=\"12\" height=\"12\" fill=\"" +
           ramp(t) + "\"/>\n";
  }
  out += "<text x=\"" + coord(bx + 16) + "\" y=\"" + coord(T + 10) + "\" font-size=\"10\">&gt;= " +
         short_num(map.clip) + "</text>\n";
  out += "<text x=\"" + coord(bx + 16) + "\" y=\"" + coord(T + 118) + "\" font-size=\"10\">" + short_num(lo) +
         "</text>\n";
  out += "</svg>\n";
  return out;
}

LinePlot cost_metric_plot(const BudgetReport& report) {
  LinePlot plot{"Cost vs " + std::string(report.higher_is_better ? "accuracy" : "MSE") + " (" +
                    to_string(report.criterion) + ")",
                "mean cost / backbone cost", report.higher_is_better ? "accuracy" : "MSE", {}};
  Series val{"validation", {}, {}};
  Series test{"test", {}, {}};
  auto sorted = [](std::vector<OperatingPoint> pts, Series& s) {
    std::stable_sort(pts.begin(), pts.end(),
                     [](const auto& a, const auto& b) { return a.mean_cost < b.mean_cost; });
    for (const auto& p : pts) {
      s.x.push_back(p.mean_cost);
      s.y.push_back(p.metric);
    }
  };
  sorted(report.val_sweep, val);
  sorted(report.test_sweep, test);
  plot.series = {val, test};
  return plot;
}

LinePlot gd_plot(const GDTrace& trace) {
  require_nonempty(trace.values, "GD trace");
  LinePlot plot{"Gradient dominance", "epoch", "cos(g_k, g_total)", {}};
  for (std::size_t k = 0; k < trace.values.front().size(); ++k) {
    Series s{"exit " + std::to_string(k + 1), {}, {}};
    for (std::size_t i = 0; i < trace.values.size(); ++i) {
      s.x.push_back(static_cast<double>(trace.epochs[i]));
      s.y.push_back(trace.values[i][k]);
    }
    plot.series.push_back(std::move(s));
  }
  return plot;
}

LinePlot rank_plot(const RankProfile& profile) {
  LinePlot plot{"Numerical rank per block", "block", "rank", {{"rank", {}, {}}}};
  for (const auto& e : profile) {
    plot.series[0].x.push_back(static_cast<double>(e.block));
    plot.series[0].y.push_back(static_cast<double>(e.rank));
  }
  return plot;
}

LinePlot mi_plot(const MIProfile& profile) {
  LinePlot plot{"Mutual information per block", "block", "I(X;Z) [bits]", {{"MI", {}, {}}}};
  for (const auto& e : profile) {
    plot.series[0].x.push_back(static_cast<double>(e.block));
    plot.series[0].y.push_back(e.bits);
  }
  return plot;
}

LinePlot path_plot(const ConnectivityGrid& grid) {
  require_nonempty(grid.total, "connectivity grid");
  LinePlot plot{"Loss along the aligned interpolation path", "lambda", "loss", {{"total", grid.u, grid.total}}};
  for (std::size_t k = 0; k < grid.per_exit.front().size(); ++k) {
    Series s{"exit " + std::to_string(k + 1), grid.u, {}};
    for (const auto& pe : grid.per_exit) s.y.push_back(pe[k]);
    plot.series.push_back(std::move(s));
  }
  return plot;
}

HeatMap plane_heat_map(const ConnectivityGrid& grid) {
  return {"Loss on the plane through three aligned checkpoints", grid.resolution, grid.resolution, grid.total, 2.0};
}

HeatMap landscape_heat_map(const LandscapeGrid& grid) {
  return {"Loss landscape (filter-normalised directions)", grid.resolution, grid.resolution, grid.total, 2.0};
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << content;
  if (!out) throw IoError("failed writing '" + path + "'");
}

void emit_report(const BudgetReport& report, ReportFormat format, const std::string& path, const ReportContext& ctx) {
  write_text_file(path, format == ReportFormat::kCsv ? budget_csv(report, ctx)
                                                     : render_line_plot(cost_metric_plot(report), ctx));
}

void emit_report(const TrainLog& log, ReportFormat format, const std::string& path, const ReportContext& ctx) {
  if (format == ReportFormat::kCsv) return write_text_file(path, train_log_csv(log, ctx));
  require_nonempty(log.epochs(), "training log");
  LinePlot plot{"Validation metric per exit", "epoch", "metric", {}};
  for (std::size_t k = 0; k < log.epochs().front().val_metric.size(); ++k) {
    Series s{"exit " + std::to_string(k + 1), {}, {}};
    for (const auto& e : log.epochs()) {
      s.x.push_back(static_cast<double>(e.epoch));
      s.y.push_back(e.val_metric[k]);
    }
    plot.series.push_back(std::move(s));
  }
  write_text_file(path, render_line_plot(plot, ctx));
}

void emit_report(const GDTrace& trace, ReportFormat format, const std::string& path, const ReportContext& ctx) {
  write_text_file(path, format == ReportFormat::kCsv ? gd_csv(trace, ctx) : render_line_plot(gd_plot(trace), ctx));
}

void emit_report(const RankProfile& profile, ReportFormat format, const std::string& path, const ReportContext& ctx) {
  write_text_file(path, format == ReportFormat::kCsv ? rank_csv(profile, ctx)
                                                     : render_line_plot(rank_plot(profile), ctx));
}

void emit_report(const MIProfile& profile, ReportFormat format, const std::string& path, const ReportContext& ctx) {
  write_text_file(path, format == ReportFormat::kCsv ? mi_csv(profile, ctx)
                                                     : render_line_plot(mi_plot(profile), ctx));
}

void emit_report(const ConnectivityGrid& grid, ReportFormat format, const std::string& path,
                 const ReportContext& ctx) {
  if (format == ReportFormat::kCsv) return write_text_file(path, connectivity_csv(grid, ctx));
  write_text_file(path, grid.mode == ConnectivityMode::kPlane ? render_heat_map(plane_heat_map(grid), ctx)
                                                              : render_line_plot(path_plot(grid), ctx));
}

void emit_report(const LandscapeGrid& grid, ReportFormat format, const std::string& path, const ReportContext& ctx) {
  write_text_file(path, format == ReportFormat::kCsv ? landscape_csv(grid, ctx)
                                                     : render_heat_map(landscape_heat_map(grid), ctx));
}

}  // namespace exitlab
