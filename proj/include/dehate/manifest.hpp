#pragma once

// JSON-lines dataset manifest: one instance per line.
//
//   {"id": "t1", "text": "...", "normalized_text": "...", "image": "img/t1.png",
//    "blurred": "blur/t1.png", "mask": "mask/t1.png",
//    "attention": ["att/t1.dht", "att/t1.json"], "split": "test"}
//
// Relative paths are resolved against the manifest's directory.

#include "error.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace dehate {

enum class Split { train, test };

inline std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

inline Split parse_split(std::string const& s) {
    if (s == "train") return Split::train;
    if (s == "test") return Split::test;
    throw ValidationError("unknown split '" + s + "'");
}

struct AttentionRef {
    std::string tensor;
    std::string meta;
    friend bool operator==(AttentionRef const&, AttentionRef const&) = default;
};

struct ManifestRow {
    std::string id;
    std::string text;
    std::optional<std::string> normalized_text;
    std::string image;
    std::optional<std::string> blurred;
    std::optional<std::string> mask;
    std::optional<AttentionRef> attention;
    Split split = Split::train;

    bool scorable() const { return mask.has_value() || blurred.has_value(); }
    friend bool operator==(ManifestRow const&, ManifestRow const&) = default;
};

struct Manifest {
    std::filesystem::path base_dir;
    std::vector<ManifestRow> rows;

    std::filesystem::path resolve(std::string const& p) const {
        std::filesystem::path path(p);
        return path.is_absolute() ? path : base_dir / path;
    }
};

inline nlohmann::json to_json(ManifestRow const& r) {
    nlohmann::json j{{"id", r.id}, {"text", r.text}, {"image", r.image}, {"split", to_string(r.split)}};
    if (r.normalized_text) j["normalized_text"] = *r.normalized_text;
    if (r.blurred) j["blurred"] = *r.blurred;
    if (r.mask) j["mask"] = *r.mask;
    if (r.attention) j["attention"] = nlohmann::json::array({r.attention->tensor, r.attention->meta});
    return j;
}

inline ManifestRow row_from_json(nlohmann::json const& j) {
    if (!j.is_object()) throw ValidationError("manifest row must be a JSON object");
    ManifestRow r;
    r.id = j.at("id").get<std::string>();
    if (r.id.empty()) throw ValidationError("manifest id must be non-empty");
    r.text = j.at("text").get<std::string>();
    r.image = j.at("image").get<std::string>();
    r.split = parse_split(j.at("split").get<std::string>());
    if (j.contains("normalized_text")) r.normalized_text = j["normalized_text"].get<std::string>();
    if (j.contains("blurred")) r.blurred = j["blurred"].get<std::string>();
    if (j.contains("mask")) r.mask = j["mask"].get<std::string>();
    if (j.contains("attention")) {
        auto const& a = j["attention"];
        if (a.is_array() && a.size() == 2)
            r.attention = AttentionRef{a[0].get<std::string>(), a[1].get<std::string>()};
        else if (a.is_object())
            r.attention = AttentionRef{a.at("tensor").get<std::string>(), a.at("meta").get<std::string>()};
        else
            throw ValidationError("attention must be a [tensor, meta] pair");
    }
    return r;
}

inline std::vector<ManifestRow> parse_manifest(std::istream& in, std::string const& origin = "<stream>") {
    std::vector<ManifestRow> rows;
    std::set<std::string> ids;
    std::string line;
    for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        ManifestRow row;
        try {
            row = row_from_json(nlohmann::json::parse(line));
        } catch (nlohmann::json::exception const& e) {
            throw FormatError(origin + ": malformed manifest line " + std::to_string(line_no) + ": " + e.what());
        } catch (ValidationError const& e) {
            throw ValidationError(origin + ": line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!ids.insert(row.id).second)
            throw ValidationError(origin + ": duplicate id '" + row.id + "' at line " + std::to_string(line_no));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Manifest load_manifest(std::filesystem::path const& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest", path.string());
    Manifest m;
    m.base_dir = path.parent_path();
    m.rows = parse_manifest(in, path.string());
    return m;
}

inline void write_manifest(std::filesystem::path const& path, std::vector<ManifestRow> const& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write manifest", path.string());
    for (auto const& r : rows) out << to_json(r).dump() << "\n";
    if (!out) throw IoError("failed writing manifest", path.string());
}

struct ManifestSummary {
    std::size_t train = 0;
    std::size_t test = 0;
    std::size_t total() const { return train + test; }
    std::vector<std::string> problems;
    bool valid() const { return problems.empty(); }
};

/// Split totals plus content checks: every test row must be scorable (carry a
/// mask or a blurred image).
inline ManifestSummary summarize(std::vector<ManifestRow> const& rows) {
    ManifestSummary s;
    for (auto const& r : rows) {
        (r.split == Split::train ? s.train : s.test) += 1;
        if (r.split == Split::test && !r.scorable())
            s.problems.push_back("row '" + r.id + "' is in the test split but has neither mask nor blurred");
    }
    return s;
}

} // namespace dehate
