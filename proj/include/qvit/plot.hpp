#pragma once

#include <cstdio>
#include <span>
#include <string>

#include "qvit/train.hpp"

namespace qvit::plot {

/// Static ROC figure: one polyline for the curve, a dashed chance diagonal,
/// and labelled axes.
inline std::string roc_svg(std::span<const train::RocPoint> roc, const std::string& title = "ROC") {
    constexpr double size = 400.0, margin = 60.0;
    auto px = [&](double fpr) { return margin + fpr * size; };
    auto py = [&](double tpr) { return margin + (1.0 - tpr) * size; };
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.3f", v);
        return std::string(buf);
    };
    std::string points;
    for (const auto& p : roc) points += (points.empty() ? "" : " ") + num(px(p.fpr)) + "," + num(py(p.tpr));

    const std::string w = num(size + 2 * margin);
    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + w + "\" height=\"" + w + "\" viewBox=\"0 0 " +
                      w + " " + w + "\">\n";
    svg += "  <rect x=\"" + num(margin) + "\" y=\"" + num(margin) + "\" width=\"" + num(size) + "\" height=\"" +
           num(size) + "\" fill=\"none\" stroke=\"black\"/>\n";
    svg += "  <line x1=\"" + num(px(0)) + "\" y1=\"" + num(py(0)) + "\" x2=\"" + num(px(1)) + "\" y2=\"" + num(py(1)) +
           "\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n";
    svg += "  <polyline fill=\"none\" stroke=\"#6a3d9a\" stroke-width=\"2\" points=\"" + points + "\"/>\n";
    svg += "  <text x=\"" + num(margin + size / 2) + "\" y=\"" + num(margin + size + 40) +
           "\" text-anchor=\"middle\">False positive rate</text>\n";
    svg += "  <text x=\"20\" y=\"" + num(margin + size / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 20 " +
           num(margin + size / 2) + ")\">True positive rate</text>\n";
    svg += "  <text x=\"" + num(margin + size / 2) + "\" y=\"35\" text-anchor=\"middle\">" + title +
           " (AUC = " + num(train::auc(roc)) + ")</text>\n";
    svg += "</svg>\n";
    return svg;
}

}  // namespace qvit::plot
