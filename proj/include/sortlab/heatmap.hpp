#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "sortlab/vocab.hpp"

namespace sortlab {

// Diverging blue-white-red scale over salience clipped to [-3, +3].
inline std::string salience_color(double s) {
    const double lo = -3.0, hi = 3.0;
    const double v = std::min(hi, std::max(lo, s));
    const int blue[3] = {59, 76, 192};
    const int white[3] = {255, 255, 255};
    const int red[3] = {180, 4, 38};
    int rgb[3];
    if (v < 0.0) {
        const double t = (v - lo) / (0.0 - lo);
        for (int i = 0; i < 3; ++i)
            rgb[i] = static_cast<int>(std::lround(blue[i] + t * (white[i] - blue[i])));
    } else {
        const double t = v / hi;
        for (int i = 0; i < 3; ++i)
            rgb[i] = static_cast<int>(std::lround(white[i] + t * (red[i] - white[i])));
    }
    char buf[8];
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", rgb[0], rgb[1], rgb[2]);
    return buf;
}

struct SalienceCell {
    int t = 0;
    TokenId token = 0;
    std::string token_class;
    std::string text;
    double p_base = 0.0;
    double p_plan = 0.0;
    double salience_hat = 0.0;
    double weight_beta = 0.0;
};

// One SVG per reference: a cell per token colored by salience, token text in
// the cell, and a legend for the [-3, +3] scale. A sidecar JSON carries the
// exact numbers behind every cell.
inline std::string render_salience_svg(const std::string& task_id,
                                       const std::vector<SalienceCell>& cells) {
    const int cell_w = 46, cell_h = 36, per_row = 16, margin = 10;
    const int n = static_cast<int>(cells.size());
    const int rows = (n + per_row - 1) / per_row;
    const int grid_w = std::min(n, per_row) * cell_w;
    const int width = std::max(grid_w, 300) + 2 * margin;
    const int legend_h = 56;
    const int height = rows * cell_h + legend_h + 2 * margin + 20;

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    svg << "<style>text{font-family:monospace;font-size:12px;text-anchor:middle;}"
           ".lbl{font-size:11px;}</style>\n";
    svg << "<text x=\"" << margin << "\" y=\"" << margin + 8
        << "\" style=\"text-anchor:start\">" << task_id << "</text>\n";

    const int top = margin + 16;
    for (int i = 0; i < n; ++i) {
        const int r = i / per_row, c = i % per_row;
        const int x = margin + c * cell_w, y = top + r * cell_h;
        svg << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell_w << "\" height=\""
            << cell_h << "\" fill=\"" << salience_color(cells[static_cast<size_t>(i)].salience_hat)
            << "\" stroke=\"#888\"/>\n";
        svg << "<text x=\"" << x + cell_w / 2 << "\" y=\"" << y + cell_h / 2 + 4 << "\">"
            << cells[static_cast<size_t>(i)].text << "</text>\n";
    }

    // legend: gradient swatches from -3 to +3
    const int ly = top + rows * cell_h + 18;
    const int swatches = 24, sw = 10;
    for (int i = 0; i < swatches; ++i) {
        const double s = -3.0 + 6.0 * (i + 0.5) / swatches;
        svg << "<rect x=\"" << margin + i * sw << "\" y=\"" << ly << "\" width=\"" << sw
            << "\" height=\"14\" fill=\"" << salience_color(s) << "\" stroke=\"none\"/>\n";
    }
    svg << "<text class=\"lbl\" x=\"" << margin << "\" y=\"" << ly + 28 << "\">-3</text>\n";
    svg << "<text class=\"lbl\" x=\"" << margin + swatches * sw / 2 << "\" y=\"" << ly + 28
        << "\">0</text>\n";
    svg << "<text class=\"lbl\" x=\"" << margin + swatches * sw << "\" y=\"" << ly + 28
        << "\">+3</text>\n";
    svg << "<text class=\"lbl\" x=\"" << margin + swatches * sw + 80 << "\" y=\"" << ly + 11
        << "\">salience</text>\n";
    svg << "</svg>\n";
    return svg.str();
}

// Reads a salience dump (JSON Lines) and writes <task_id>.svg plus
// <task_id>.json per reference. Returns the task ids in first-seen order.
inline std::vector<std::string> emit_salience_heatmap(const std::string& dump_path,
                                                      const std::string& out_dir,
                                                      const Vocab& vocab) {
    std::ifstream in(dump_path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + dump_path);
    std::vector<std::string> order;
    std::map<std::string, std::vector<SalienceCell>> by_task;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        SalienceCell cell;
        cell.t = j.at("t").get<int>();
        cell.token = j.at("token").get<TokenId>();
        cell.token_class = j.at("token_class").get<std::string>();
        cell.text = vocab.token_text(cell.token);
        cell.p_base = j.at("p_base").get<double>();
        cell.p_plan = j.at("p_plan").get<double>();
        cell.salience_hat = j.at("salience_hat").get<double>();
        cell.weight_beta = j.at("weight_beta").get<double>();
        const std::string id = j.at("task_id").get<std::string>();
        if (by_task.find(id) == by_task.end()) order.push_back(id);
        by_task[id].push_back(cell);
    }
    if (order.empty()) throw std::runtime_error("empty salience dump: " + dump_path);

    std::filesystem::create_directories(out_dir);
    for (const auto& id : order) {
        auto& cells = by_task[id];
        std::sort(cells.begin(), cells.end(),
                  [](const SalienceCell& a, const SalienceCell& b) { return a.t < b.t; });
        {
            std::ofstream svg(out_dir + "/" + id + ".svg", std::ios::binary);
            if (!svg) throw std::runtime_error("cannot write svg for " + id);
            svg << render_salience_svg(id, cells);
        }
        nlohmann::ordered_json sidecar = nlohmann::ordered_json::array();
        for (const auto& c : cells) {
            sidecar.push_back(nlohmann::ordered_json{{"t", c.t},
                                                     {"token", c.token},
                                                     {"text", c.text},
                                                     {"token_class", c.token_class},
                                                     {"p_base", c.p_base},
                                                     {"p_plan", c.p_plan},
                                                     {"salience_hat", c.salience_hat},
                                                     {"weight_beta", c.weight_beta}});
        }
        std::ofstream js(out_dir + "/" + id + ".json", std::ios::binary);
        js << sidecar.dump(2) << "\n";
    }
    return order;
}

}  // namespace sortlab
