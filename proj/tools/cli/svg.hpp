#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "inflare/linalg.hpp"

namespace inflare::cli::svg {

struct Series {
  Matrix points;  // first two columns are plotted
  std::string color = "#1f77b4";
  double radius = 1.2;
};

void scatter(const std::filesystem::path& path, const std::string& title,
             const std::vector<Series>& series);

// y against index, log-scaled when every value is positive.
void line(const std::filesystem::path& path, const std::string& title, std::span<const double> ys);

}  // namespace inflare::cli::svg
