#pragma once

#include <span>
#include <vector>

namespace topodef {

double mean(std::span<const double> v);

/// Population standard deviation.
double stddev(std::span<const double> v);

/// Linear-interpolation quantile (R type 7) of already sorted data.
double quantile_sorted(std::span<const double> sorted, double q);

double quantile(std::vector<double> v, double q);

}  // namespace topodef
