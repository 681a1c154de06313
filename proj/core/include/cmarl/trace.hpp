#pragma once

#include <cmarl/environment.hpp>

#include <string>

namespace cmarl::env {

/// One polyline per evolution step, later steps drawn darker.
void write_trace_svg(const Trace& trace, const std::string& path);

/// Columns: step, miou, mdice, mboundf, r_region, r_boundary, r_coop_mean.
void write_trace_csv(const Trace& trace, const std::string& path);

}  // namespace cmarl::env
