#include "tmlm/plot.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

#include "tmlm/error.hpp"

namespace tmlm {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& s, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError("plot CSV line " + std::to_string(line_no) + ": '" + s + "' is not a number");
  }
}

struct Series {
  std::vector<std::pair<double, double>> points;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

}  // namespace

std::string render_plot(const std::string& csv_text, const std::string& title) {
  std::istringstream in(csv_text);
  std::string header_line;
  while (std::getline(in, header_line) && header_line.empty()) {
  }
  if (header_line.empty()) throw ParseError("plot CSV is empty");
  if (header_line.back() == '\r') header_line.pop_back();
  const auto header = split_csv_line(header_line);
  auto column = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ParseError("plot CSV has no '" + name + "' column");
    return static_cast<std::size_t>(it - header.begin());
  };
  const bool is_patch = std::find(header.begin(), header.end(), "frac_donor_answer") != header.end();

  // std::map keeps series in name order, so output bytes depend only on content.
  std::map<std::string, Series> series;
  std::map<std::string, double> baselines;
  std::string line;
  std::size_t line_no = 1;
  std::size_t data_rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw ParseError("plot CSV line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                       " columns, got " + std::to_string(cells.size()));
    }
    ++data_rows;
    if (is_patch) {
      const double layer = parse_number(cells[column("layer")], line_no);
      for (const char* name : {"frac_original_answer", "frac_donor_answer", "frac_other"}) {
        series[name].points.emplace_back(layer, parse_number(cells[column(name)], line_no));
      }
      continue;
    }
    const std::string& manip = cells[column("manipulation")];
    const std::string& metric = cells[column("metric")];
    const double value = parse_number(cells[column("value")], line_no);
    const std::string& layer = cells[column("layer")];
    if (layer.empty()) {
      baselines[metric] = value;
    } else {
      series[manip + "|" + metric].points.emplace_back(parse_number(layer, line_no), value);
    }
  }
  if (data_rows == 0) throw ParseError("plot CSV has a header but no rows");

  std::size_t n_metrics = 0;
  {
    std::map<std::string, int> metrics;
    for (const auto& [key, s] : series) metrics[key.substr(key.find('|') + 1)] = 1;
    for (const auto& [m, v] : baselines) metrics[m] = 1;
    n_metrics = metrics.size();
  }
  auto label_of = [&](const std::string& key) {
    const auto bar = key.find('|');
    if (bar == std::string::npos) return key;
    return n_metrics > 1 ? key.substr(0, bar) + " (" + key.substr(bar + 1) + ")" : key.substr(0, bar);
  };

  double x_min = 1e300;
  double x_max = -1e300;
  for (auto& [key, s] : series) {
    std::sort(s.points.begin(), s.points.end());
    for (const auto& [x, y] : s.points) {
      x_min = std::min(x_min, x);
      x_max = std::max(x_max, x);
    }
  }
  if (series.empty()) {
    x_min = 0.0;
    x_max = 1.0;
  }
  if (x_max <= x_min) x_max = x_min + 1.0;

  const double width = 640, height = 400, left = 60, right = 160, top = 40, bottom = 50;
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;
  auto px = [&](double x) { return left + (x - x_min) / (x_max - x_min) * plot_w; };
  auto py = [&](double y) { return top + (1.0 - std::clamp(y, 0.0, 1.0)) * plot_h; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << " " << height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!title.empty()) {
    svg << "<text x=\"" << fmt(left + plot_w / 2) << "\" y=\"20\" text-anchor=\"middle\">" << title << "</text>\n";
  }
  svg << "<g stroke=\"#888\" stroke-width=\"1\">\n";
  svg << "<line x1=\"" << fmt(left) << "\" y1=\"" << fmt(top + plot_h) << "\" x2=\"" << fmt(left + plot_w)
      << "\" y2=\"" << fmt(top + plot_h) << "\"/>\n";
  svg << "<line x1=\"" << fmt(left) << "\" y1=\"" << fmt(top) << "\" x2=\"" << fmt(left) << "\" y2=\""
      << fmt(top + plot_h) << "\"/>\n";
  svg << "</g>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = i / 4.0;
    svg << "<text x=\"" << fmt(left - 6) << "\" y=\"" << fmt(py(y) + 4) << "\" text-anchor=\"end\">" << fmt(y)
        << "</text>\n";
  }
  const int x_ticks = static_cast<int>(std::min(10.0, x_max - x_min));
  for (int i = 0; i <= x_ticks; ++i) {
    const double x = x_min + (x_max - x_min) * i / std::max(1, x_ticks);
    svg << "<text x=\"" << fmt(px(x)) << "\" y=\"" << fmt(top + plot_h + 16) << "\" text-anchor=\"middle\">"
        << fmt(x) << "</text>\n";
  }
  svg << "<text x=\"" << fmt(left + plot_w / 2) << "\" y=\"" << fmt(height - 10)
      << "\" text-anchor=\"middle\">layer</text>\n";

  std::size_t color = 0;
  double legend_y = top + 10;
  auto legend = [&](const std::string& label, const char* stroke, bool dashed) {
    const double x0 = left + plot_w + 10;
    const std::vector<std::pair<double, double>> segments =
        dashed ? std::vector<std::pair<double, double>>{{x0, x0 + 7}, {x0 + 13, x0 + 20}}
               : std::vector<std::pair<double, double>>{{x0, x0 + 20}};
    for (const auto& [a, b] : segments) {
      svg << "<line x1=\"" << fmt(a) << "\" y1=\"" << fmt(legend_y) << "\" x2=\"" << fmt(b) << "\" y2=\""
          << fmt(legend_y) << "\" stroke=\"" << stroke << "\"/>\n";
    }
    svg << "<text x=\"" << fmt(left + plot_w + 36) << "\" y=\"" << fmt(legend_y + 4) << "\">" << label << "</text>\n";
    legend_y += 18;
  };
  for (const auto& [key, s] : series) {
    const char* stroke = kPalette[color++ % std::size(kPalette)];
    svg << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.points.size(); ++i) {
      svg << (i ? " " : "") << fmt(px(s.points[i].first)) << "," << fmt(py(s.points[i].second));
    }
    svg << "\"/>\n";
    legend(label_of(key), stroke, false);
  }
  for (const auto& [metric, value] : baselines) {
    svg << "<line class=\"baseline\" x1=\"" << fmt(left) << "\" y1=\"" << fmt(py(value)) << "\" x2=\""
        << fmt(left + plot_w) << "\" y2=\"" << fmt(py(value)) << "\" stroke=\"black\" stroke-dasharray=\"6,4\"/>\n";
    legend(n_metrics > 1 ? "baseline (" + metric + ")" : std::string("baseline"), "black", true);
  }
  svg << "</svg>\n";
  return svg.str();
}

void emit_plot(const std::filesystem::path& csv_path, const std::filesystem::path& out_path) {
  std::ifstream in(csv_path);
  if (!in) throw IoError("cannot open CSV " + csv_path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string svg = render_plot(buf.str(), csv_path.stem().string());
  std::ofstream out(out_path);
  if (!out) throw IoError("cannot write " + out_path.string());
  out << svg;
}

}  // namespace tmlm
