#pragma once

// IoU scoring of predicted masks and leaderboard generation.

#include "error.hpp"
#include "image.hpp"
#include "manifest.hpp"
#include "parallel.hpp"
#include "redact.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace dehate::eval {

/// |pred AND truth| / |pred OR truth|; 1.0 when both masks are empty.
inline double iou(BinaryMask const& pred, BinaryMask const& truth) {
    if (pred.height() != truth.height() || pred.width() != truth.width())
        throw ArgumentError("iou: mask dims differ (" + std::to_string(pred.height()) + "x" + std::to_string(pred.width()) +
                            " vs " + std::to_string(truth.height()) + "x" + std::to_string(truth.width()) + ")");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        inter += pred[i] && truth[i];
        uni += pred[i] || truth[i];
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

struct IoUReport {
    std::map<std::string, double> per_instance;
    double mean = 0.0;
    std::vector<std::string> missing;
    std::map<std::string, std::string> errors;
};

/// Ground truth for a manifest row: the stored mask, or the mask recovered
/// from the original/blurred pair at tolerance 0.
inline BinaryMask truth_mask(Manifest const& m, ManifestRow const& row) {
    if (row.mask) return read_mask_png(m.resolve(*row.mask));
    if (row.blurred)
        return redact::recover_mask(png_io::read_rgb(m.resolve(row.image)), png_io::read_rgb(m.resolve(*row.blurred)), 0);
    throw ValidationError("row '" + row.id + "' has neither mask nor blurred image");
}

inline IoUReport score(std::filesystem::path const& pred_dir, Manifest const& manifest) {
    std::vector<ManifestRow const*> rows;
    for (auto const& r : manifest.rows) rows.push_back(&r);
    std::sort(rows.begin(), rows.end(), [](auto* a, auto* b) { return a->id < b->id; });

    struct Outcome {
        double value = 0.0;
        bool missing = false;
        std::string error;
    };
    std::vector<Outcome> outcomes(rows.size());
    parallel_for(rows.size(), [&](std::size_t i) {
        auto const& row = *rows[i];
        BinaryMask truth = truth_mask(manifest, row);
        auto pred_path = pred_dir / (row.id + ".png");
        if (!std::filesystem::exists(pred_path)) {
            outcomes[i].missing = true;
            return;
        }
        try {
            outcomes[i].value = iou(read_mask_png(pred_path), truth);
        } catch (Error const& e) {
            outcomes[i].error = e.what();
        }
    });

    IoUReport report;
    double sum = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto const& id = rows[i]->id;
        report.per_instance[id] = outcomes[i].value;
        if (outcomes[i].missing) report.missing.push_back(id);
        if (!outcomes[i].error.empty()) report.errors[id] = outcomes[i].error;
        sum += outcomes[i].value;
    }
    report.mean = rows.empty() ? 0.0 : sum / static_cast<double>(rows.size());
    return report;
}

inline nlohmann::json to_json(IoUReport const& r) {
    nlohmann::json j{{"mean", r.mean}, {"per_instance", r.per_instance}, {"missing", r.missing}};
    if (!r.errors.empty()) j["errors"] = r.errors;
    return j;
}

inline IoUReport report_from_json(nlohmann::json const& j) {
    IoUReport r;
    try {
        r.mean = j.at("mean").get<double>();
        if (j.contains("per_instance")) r.per_instance = j["per_instance"].get<std::map<std::string, double>>();
        if (j.contains("missing")) r.missing = j["missing"].get<std::vector<std::string>>();
        if (j.contains("errors")) r.errors = j["errors"].get<std::map<std::string, std::string>>();
    } catch (nlohmann::json::exception const& e) {
        throw FormatError(std::string("bad IoU report: ") + e.what());
    }
    return r;
}

struct LeaderboardEntry {
    int rank = 0;
    std::string team;
    double iou = 0.0;
};

/// Two decimals, rounding half away from zero.
inline std::string format_score(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", std::round(v * 100.0) / 100.0);
    return buf;
}

inline std::vector<LeaderboardEntry> leaderboard(std::map<std::string, IoUReport> const& reports) {
    if (reports.empty()) throw ArgumentError("leaderboard needs at least one team");
    std::vector<LeaderboardEntry> rows;
    for (auto const& [team, rep] : reports) rows.push_back({0, team, rep.mean});
    std::stable_sort(rows.begin(), rows.end(), [](auto const& a, auto const& b) {
        if (a.iou != b.iou) return a.iou > b.iou;
        return a.team < b.team;
    });
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i].rank = static_cast<int>(i + 1);
    return rows;
}

inline std::string to_csv(std::vector<LeaderboardEntry> const& board) {
    std::string out = "rank,team,iou\n";
    for (auto const& e : board) out += std::to_string(e.rank) + "," + e.team + "," + format_score(e.iou) + "\n";
    return out;
}

} // namespace dehate::eval
