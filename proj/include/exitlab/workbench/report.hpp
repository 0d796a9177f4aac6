#pragma once

#include <string>
#include <vector>

#include "exitlab/analysis/analysis.hpp"
#include "exitlab/inference/inference.hpp"
#include "exitlab/regimes/regimes.hpp"

namespace exitlab {

// Carried into every artifact: the materialised run config plus free-form
// header notes (criterion, alpha scheme, seed, ...).
struct ReportContext {
  std::string config_json;
  std::vector<std::string> notes;
};

enum class ReportFormat { kCsv, kSvg };
ReportFormat parse_report_format(const std::string& name);

std::string budget_csv(const BudgetReport& report, const ReportContext& ctx);
std::string train_log_csv(const TrainLog& log, const ReportContext& ctx);
std::string gd_csv(const GDTrace& trace, const ReportContext& ctx);
std::string rank_csv(const RankProfile& profile, const ReportContext& ctx);
std::string mi_csv(const MIProfile& profile, const ReportContext& ctx);
std::string connectivity_csv(const ConnectivityGrid& grid, const ReportContext& ctx);
std::string landscape_csv(const LandscapeGrid& grid, const ReportContext& ctx);

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct LinePlot {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
};

// values are row-major with row 0 drawn at the bottom. Colour saturates at
// `clip`; the stored values are untouched.
struct HeatMap {
  std::string title;
  std::size_t cols = 0;
  std::size_t rows = 0;
  std::vector<double> values;
  double clip = 2.0;
};

std::string render_line_plot(const LinePlot& plot, const ReportContext& ctx);
std::string render_heat_map(const HeatMap& map, const ReportContext& ctx);

LinePlot cost_metric_plot(const BudgetReport& report);
LinePlot gd_plot(const GDTrace& trace);
LinePlot rank_plot(const RankProfile& profile);
LinePlot mi_plot(const MIProfile& profile);
LinePlot path_plot(const ConnectivityGrid& grid);
HeatMap plane_heat_map(const ConnectivityGrid& grid);
HeatMap landscape_heat_map(const LandscapeGrid& grid);

void write_text_file(const std::string& path, const std::string& content);

void emit_report(const BudgetReport& report, ReportFormat format, const std::string& path, const ReportContext& ctx);
void emit_report(const TrainLog& log, ReportFormat format, const std::string& path, const ReportContext& ctx);
void emit_report(const GDTrace& trace, ReportFormat format, const std::string& path, const ReportContext& ctx);
void emit_report(const RankProfile& profile, ReportFormat format, const std::string& path, const ReportContext& ctx);
void emit_report(const MIProfile& profile, ReportFormat format, const std::string& path, const ReportContext& ctx);
void emit_report(const ConnectivityGrid& grid, ReportFormat format, const std::string& path,
                 const ReportContext& ctx);
void emit_report(const LandscapeGrid& grid, ReportFormat format, const std::string& path, const ReportContext& ctx);

}  // namespace exitlab
