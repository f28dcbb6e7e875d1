#include <cctype>
#include <cstdio>
#include <iterator>
#include <fstream>
#include <set>

#include "sonarmatch/error.hpp"
#include "sonarmatch/evaluation.hpp"

namespace sonarmatch {

namespace fs = std::filesystem;

namespace {

std::string safe_name(const std::string& name) {
  std::string s;
  for (char c : name) s += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.') ? c : '_';
  return s.empty() ? "model" : s;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

}  // namespace

std::vector<fs::path> emit_report(std::span<const ReportEntry> entries, const fs::path& dir) {
  if (entries.empty()) throw ConfigError("report needs at least one model");
  std::set<std::string> names;
  for (const auto& e : entries)
    if (!names.insert(safe_name(e.name)).second) throw ConfigError("duplicate report name '" + e.name + "'");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create report directory " + dir.string() + ": " + ec.message());

  auto open = [](const fs::path& p) {
    std::ofstream f(p, std::ios::trunc);
    if (!f) throw DataError("cannot write " + p.string());
    return f;
  };

  std::vector<fs::path> written;
  for (const auto& e : entries) {
    const auto p = dir / ("roc_" + safe_name(e.name) + ".csv");
    auto f = open(p);
    f << "fpr,tpr\n";
    for (const auto& pt : e.roc.points) f << fixed(pt.fpr, 12) << ',' << fixed(pt.tpr, 12) << '\n';
    written.push_back(p);
  }

  const auto summary = dir / "summary.csv";
  {
    auto f = open(summary);
    f << "name,auc,params\n";
    for (const auto& e : entries) f << e.name << ',' << fixed(e.roc.auc, 12) << ',' << e.params << '\n';
  }
  written.push_back(summary);

  const auto svg = dir / "roc.svg";
  {
    auto f = open(svg);
    const double left = 60, top = 20, size = 400;
    auto X = [&](double v) { return fixed(left + v * size, 2); };
    auto Y = [&](double v) { return fixed(top + (1.0 - v) * size, 2); };
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left + size + 200 << "\" height=\"" << top + size + 60
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    f << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << size << "\" height=\"" << size
      << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 10; ++i) {
      const double v = i / 10.0;
      f << "<text x=\"" << X(v) << "\" y=\"" << top + size + 16 << "\" text-anchor=\"middle\">" << fixed(v, 1)
        << "</text>\n";
      f << "<text x=\"" << left - 6 << "\" y=\"" << Y(v) << "\" text-anchor=\"end\" dy=\"4\">" << fixed(v, 1)
        << "</text>\n";
    }
    f << "<text x=\"" << left + size / 2 << "\" y=\"" << top + size + 40
      << "\" text-anchor=\"middle\">False positive rate</text>\n";
    f << "<text x=\"16\" y=\"" << top + size / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << top + size / 2 << ")\">True positive rate</text>\n";
    f << "<line x1=\"" << X(0) << "\" y1=\"" << Y(0) << "\" x2=\"" << X(1) << "\" y2=\"" << Y(1)
      << "\" stroke=\"#999\" stroke-dasharray=\"4 4\"/>\n";
    for (std::size_t k = 0; k < entries.size(); ++k) {
      const char* color = kPalette[k % std::size(kPalette)];
      f << "<polyline class=\"roc\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (const auto& pt : entries[k].roc.points) f << X(pt.fpr) << ',' << Y(pt.tpr) << ' ';
      f << "\"/>\n";
      const double ly = top + 20 + 18 * static_cast<double>(k);
      f << "<line x1=\"" << left + size + 15 << "\" y1=\"" << ly << "\" x2=\"" << left + size + 35 << "\" y2=\"" << ly
        << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
      f << "<text x=\"" << left + size + 40 << "\" y=\"" << ly + 4 << "\">" << xml_escape(entries[k].name)
        << " (AUC " << fixed(entries[k].roc.auc, 3) << ")</text>\n";
    }
    f << "</svg>\n";
  }
  written.push_back(svg);
  return written;
}

}  // namespace sonarmatch
