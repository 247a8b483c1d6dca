#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace thz::cli::plots {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;  ///< non-finite values are skipped
};

void write_line_plot(const std::filesystem::path& file, const std::string& title, const std::string& x_label,
                     const std::string& y_label, const std::vector<Series>& series);

/// One group of bars per category, one bar per series (series.y indexed by category).
void write_bar_chart(const std::filesystem::path& file, const std::string& title,
                     const std::vector<std::string>& categories, const std::vector<Series>& series);

}  // namespace thz::cli::plots
