// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace uniqseg::svg {

/// Static bar chart (one bar per label) with value annotations.
void write_bar_chart(const std::filesystem::path& path, const std::string& title,
                     const std::vector<std::string>& labels, const std::vector<double>& values,
                     const std::string& value_name);

/// Line plot of one or more series over step index.
void write_line_chart(const std::filesystem::path& path, const std::string& title,
                      const std::vector<std::pair<std::string, std::vector<double>>>& series);

}  // namespace uniqseg::svg
