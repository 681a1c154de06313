#include <cmarl/trace.hpp>

#include <fstream>
#include <stdexcept>

namespace cmarl::env {

void write_trace_svg(const Trace& trace, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("write_trace_svg: cannot open " + path);
    const int scale = 8;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << trace.width * scale
       << "\" height=\"" << trace.height * scale << "\" viewBox=\"0 0 " << trace.width << ' '
       << trace.height << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    const std::size_t steps = trace.entries.size();
    for (std::size_t t = 0; t < steps; ++t) {
        const auto& e = trace.entries[t];
        const int shade = steps > 1
                              ? static_cast<int>(220.0 * (1.0 - static_cast<double>(t) /
                                                                    (steps - 1)))
                              : 0;
        os << "<polygon fill=\"none\" stroke=\"rgb(" << shade << ',' << shade << ',' << shade
           << ")\" stroke-width=\"0.3\" points=\"";
        for (const auto& p : e.contour.points()) os << p.x << ',' << p.y << ' ';
        os << "\"/>\n";
    }
    os << "</svg>\n";
}

void write_trace_csv(const Trace& trace, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("write_trace_csv: cannot open " + path);
    os << "step,miou,mdice,mboundf,r_region,r_boundary,r_coop_mean\n";
    for (std::size_t t = 0; t < trace.entries.size(); ++t) {
        const auto& e = trace.entries[t];
        os << t << ',' << e.miou << ',' << e.mdice << ',' << e.mboundf << ',' << e.r_region
           << ',' << e.r_boundary << ',' << e.r_coop_mean << '\n';
    }
}

}  // namespace cmarl::env
