// Copyright 2026 The Patchwork Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include <fmt/format.h>

#include "patchwork/discovery.hpp"
#include "patchwork/error.hpp"

namespace patchwork {

namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

double parse_double(const std::string& text) {
  const auto s = trim(text);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("not a number: \"{}\"", text));
  }
  return value;
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, sep)) out.push_back(item);
  if (!text.empty() && text.back() == sep) out.emplace_back();
  return out;
}

// Max absolute residual of a least-squares line through (x, y).
double fit_residual(const std::vector<double>& x, const std::vector<double>& y, std::size_t n) {
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  const double slope = sxx > 0 ? sxy / sxx : 0.0;
  double worst = 0;
  for (std::size_t i = 0; i < n; ++i) {
    worst = std::max(worst, std::abs(y[i] - (my + slope * (x[i] - mx))));
  }
  return worst;
}

}  // namespace

std::string sweep_to_csv(const SweepResult& sweep) {
  std::string out = "tau,edge_count,cosine\n";
  for (const auto& p : sweep.points) out += fmt::format("{},{},{}\n", p.tau, p.edge_count, p.cosine);
  return out;
}

SweepResult parse_sweep_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || trim(line) != "tau,edge_count,cosine") {
    throw Error(ErrorCode::kConfig, "sweep CSV must start with \"tau,edge_count,cosine\"");
  }
  SweepResult result;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split(trim(line), ',');
    if (cells.size() != 3) {
      throw Error(ErrorCode::kConfig, fmt::format("sweep CSV line {}: expected 3 fields", line_no));
    }
    try {
      const double count = parse_double(cells[1]);
      if (count < 0 || count != std::floor(count)) throw Error(ErrorCode::kConfig, "bad count");
      result.points.push_back(
          {parse_double(cells[0]), static_cast<std::size_t>(count), parse_double(cells[2])});
    } catch (const Error& e) {
      throw Error(ErrorCode::kConfig, fmt::format("sweep CSV line {}: {}", line_no, e.what()));
    }
  }
  return result;
}

std::vector<double> parse_tau_grid(const std::string& text) {
  std::vector<double> grid;
  const auto parts = split(text, ':');
  if (parts.size() == 3) {
    const double start = parse_double(parts[0]);
    const double stop = parse_double(parts[1]);
    const double step = parse_double(parts[2]);
    if (!(step > 0) || stop < start) {
      throw Error(ErrorCode::kInvalidArgument, "tau grid range needs start <= stop and step > 0");
    }
    const auto n = static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9)) + 1;
    if (n > 100000) throw Error(ErrorCode::kInvalidArgument, "tau grid too large");
    for (std::size_t i = 0; i < n; ++i) {
      // Snap to 1e-12 so 0.001:0.01:0.001 yields 0.007 rather than 0.007000000000000001.
      grid.push_back(std::round((start + i * step) * 1e12) / 1e12);
    }
  } else if (parts.size() == 1) {
    for (const auto& item : split(text, ',')) grid.push_back(parse_double(item));
  } else {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("tau grid \"{}\": use start:stop:step or a comma list", text));
  }
  if (grid.empty()) throw Error(ErrorCode::kInvalidArgument, "empty tau grid");
  return grid;
}

ThresholdSuggestion suggest_threshold(const std::vector<SweepPoint>& points) {
  if (points.size() < 4) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("threshold suggestion needs at least 4 sweep points, got {}",
                            points.size()));
  }
  for (std::size_t i = 1; i < points.size(); ++i) {
    if (!(points[i].tau > points[i - 1].tau)) {
      throw Error(ErrorCode::kInvalidArgument, "sweep points must be ascending in tau");
    }
  }
  const std::size_t n = points.size();
  std::vector<double> tau(n), log_count(n);
  for (std::size_t i = 0; i < n; ++i) {
    tau[i] = points[i].tau;
    // Empty circuits count as one edge so the log stays finite.
    log_count[i] = std::log(static_cast<double>(std::max<std::size_t>(points[i].edge_count, 1)));
  }

  ThresholdSuggestion out;
  for (std::size_t k = 3; k <= n; ++k) {
    if (fit_residual(tau, log_count, k) < kTailResidual) out.tail_end = k - 1;
  }
  const std::size_t start = out.tail_end.value_or(0);
  if (!out.tail_end) out.flags.push_back("no exponential tail");

  std::vector<std::size_t> jumps;
  for (std::size_t i = start; i + 1 < n; ++i) {
    const double lo = static_cast<double>(points[i + 1].edge_count);
    const double hi = static_cast<double>(points[i].edge_count);
    if (hi > 0 && (lo == 0 || hi / lo >= kJumpRatio)) jumps.push_back(i);
  }

  if (jumps.empty()) {
    out.flags.push_back("no topology jump detected");
    out.tau = n % 2 ? tau[n / 2] : 0.5 * (tau[n / 2 - 1] + tau[n / 2]);
  } else {
    out.jump = jumps.front();
    if (jumps.size() > 1) out.flags.push_back("multiple topology jumps");
    out.tau = 0.5 * (tau[start] + tau[*out.jump]);
  }
  if (out.tau < kTypicalTauLow || out.tau > kTypicalTauHigh) {
    out.flags.push_back(fmt::format("tau {} outside the typical range {}-{}", out.tau,
                                    kTypicalTauLow, kTypicalTauHigh));
  }
  out.flags.push_back("manual confirmation advised");
  return out;
}

}  // namespace patchwork
