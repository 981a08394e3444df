#pragma once

// `dehate` command-line driver. Exit codes: 0 success, 1 usage error,
// 2 data error. Diagnostics go to `err`; `out` receives machine-readable
// output only.

#include "attention.hpp"
#include "evaluate.hpp"
#include "gradcheck.hpp"
#include "image.hpp"
#include "manifest.hpp"
#include "masker.hpp"
#include "redact.hpp"
#include "textproc.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace dehate::cli {

inline constexpr int exit_ok = 0;
inline constexpr int exit_usage = 1;
inline constexpr int exit_data = 2;

struct UsageError : Error {
    using Error::Error;
};

namespace detail {

namespace fs = std::filesystem;
using nlohmann::json;

inline Heatmap read_heatmap(fs::path const& path) {
    if (path.extension() == ".png") {
        auto g = png_io::read_gray(path);
        Tensor t({g.height, g.width});
        for (std::size_t i = 0; i < g.pixels.size(); ++i) t[i] = static_cast<float>(g.pixels[i]) / 255.0f;
        return Heatmap(std::move(t));
    }
    return Heatmap(tensor_read(path));
}

inline json spans_json(std::vector<text::HateSpan> const& spans) {
    json arr = json::array();
    for (auto const& s : spans) arr.push_back({s.start, s.end});
    return arr;
}

inline json span_words_json(std::vector<text::HateSpan> const& spans) {
    json arr = json::array();
    for (auto const& s : spans) arr.push_back(s.words);
    return arr;
}

/// Spans for a manifest row: LCS spans against the normalized text when
/// present and non-trivial, otherwise the whole text as one span.
inline std::vector<text::HateSpan> row_spans(ManifestRow const& row) {
    std::vector<text::HateSpan> spans;
    if (row.normalized_text) spans = text::extract_spans(row.text, *row.normalized_text);
    if (spans.empty()) {
        auto words = text::split_words(row.text);
        if (words.empty()) throw ValidationError("row '" + row.id + "' has empty text");
        spans.push_back({0, words.size(), words});
    }
    return spans;
}

inline std::vector<ManifestRow> select_split(std::vector<ManifestRow> rows, std::string const& split) {
    if (split == "all") return rows;
    auto want = parse_split(split);
    std::erase_if(rows, [&](ManifestRow const& r) { return r.split != want; });
    return rows;
}

inline std::vector<std::size_t> parse_indices(std::string const& csv) {
    std::vector<std::size_t> out;
    std::stringstream ss(csv);
    for (std::string item; std::getline(ss, item, ',');) {
        if (item.empty()) continue;
        try {
            std::size_t pos = 0;
            long long v = std::stoll(item, &pos);
            if (pos != item.size() || v < 0) throw std::invalid_argument(item);
            out.push_back(static_cast<std::size_t>(v));
        } catch (std::exception const&) {
            throw UsageError("bad token index '" + item + "'");
        }
    }
    return out;
}

inline std::vector<std::string> split_csv(std::string const& csv) {
    std::vector<std::string> out;
    std::stringstream ss(csv);
    for (std::string item; std::getline(ss, item, ',');)
        if (!item.empty()) out.push_back(item);
    return out;
}

inline std::string fixed6(double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(6) << v;
    return s.str();
}

struct MaskerFlags {
    int image_size = 32;
    int patch_size = 4;
    int embed_dim = 32;
    int blocks = 2;
    int span_embed_dim = 32;

    void attach(CLI::App* app) {
        app->add_option("--image-size", image_size, "Square input size")->capture_default_str();
        app->add_option("--patch-size", patch_size, "Patch edge length")->capture_default_str();
        app->add_option("--embed-dim", embed_dim, "Token width")->capture_default_str();
        app->add_option("--blocks", blocks, "Encoder and decoder block count")->capture_default_str();
        app->add_option("--span-embed-dim", span_embed_dim, "Hashed span embedding width")->capture_default_str();
    }

    masker::MaskerConfig config(std::uint32_t seed) const {
        masker::MaskerConfig c;
        c.image_size = image_size;
        c.patch_size = patch_size;
        c.embed_dim = embed_dim;
        c.encoder_blocks = blocks;
        c.decoder_blocks = blocks;
        c.span_embed_dim = span_embed_dim;
        c.seed = seed;
        c.validate();
        return c;
    }
};

} // namespace detail

/// Parses argv and runs one subcommand.
inline int run(int argc, char const* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    using namespace detail;
    CLI::App app{"Hate-region localization, redaction and scoring toolkit", "dehate"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "dehate 0.1.0");

    // heatmap
    std::string stack_path, meta_path, tokens_csv, words_csv, out_png, out_tensor;
    auto* heat = app.add_subcommand("heatmap", "Aggregate an attention stack into a heatmap");
    heat->add_option("--stack", stack_path, "DHT1 rank-6 attention tensor")->required();
    heat->add_option("--meta", meta_path, "Attention metadata JSON")->required();
    heat->add_option("--tokens", tokens_csv, "Comma-separated token indices (default: all)");
    heat->add_option("--words", words_csv, "Comma-separated token strings to select");
    heat->add_option("--out", out_png, "Grayscale heatmap PNG");
    heat->add_option("--out-tensor", out_tensor, "Heatmap as DHT1 tensor");

    // mask
    std::string heatmap_path, mask_out;
    float tau = attention::default_tau;
    auto* mask = app.add_subcommand("mask", "Binarize a heatmap");
    mask->add_option("--heatmap", heatmap_path, "Heatmap (.dht tensor or grayscale .png)")->required();
    mask->add_option("--tau", tau, "Threshold in (0,1]")->capture_default_str();
    mask->add_option("--out", mask_out, "Mask PNG")->required();

    // blur
    std::string image_path, blur_out, blur_mask_out;
    redact::RedactionParams rp;
    auto* blur = app.add_subcommand("blur", "Two-step anonymizing blur");
    blur->add_option("--image", image_path, "RGB PNG")->required();
    blur->add_option("--heatmap", heatmap_path, "Heatmap (.dht tensor or grayscale .png)")->required();
    blur->add_option("--tau-black", rp.tau_black, "Blackout threshold")->capture_default_str();
    blur->add_option("--tau-avg", rp.tau_avg, "Box-average threshold")->capture_default_str();
    blur->add_option("--box-radius", rp.box_radius, "Half-width of the averaging box")->capture_default_str();
    blur->add_option("--out", blur_out, "Blurred RGB PNG")->required();
    blur->add_option("--out-mask", blur_mask_out, "Blackout mask PNG");

    // spans
    std::string hateful, normalized, manifest_path, out_path;
    auto* spans = app.add_subcommand("spans", "Extract hate spans from hateful/normalized text pairs");
    spans->add_option("--hateful", hateful, "Hateful text");
    spans->add_option("--normalized", normalized, "Normalized text");
    spans->add_option("--manifest", manifest_path, "Manifest; rows with normalized_text are processed");
    spans->add_option("--out", out_path, "Write JSON lines here instead of stdout");

    // prompt
    std::string tweet, prompt_id = "";
    int word_budget = text::default_word_budget;
    auto* prompt = app.add_subcommand("prompt", "Build generation prompts");
    prompt->add_option("--text", tweet, "Tweet text");
    prompt->add_option("--normalized", normalized, "Normalized text used to find spans");
    prompt->add_option("--id", prompt_id, "Id echoed in the output");
    prompt->add_option("--manifest", manifest_path, "Manifest; one prompt per row");
    prompt->add_option("--word-budget", word_budget, "Maximum inserted words")->capture_default_str();
    prompt->add_option("--out", out_path, "Write JSON lines here instead of stdout");

    // recover-mask
    std::string original_path, blurred_path;
    int tol = 0;
    auto* recover = app.add_subcommand("recover-mask", "Mask of pixels changed between an original and blurred image");
    recover->add_option("--original", original_path, "Original RGB PNG")->required();
    recover->add_option("--blurred", blurred_path, "Blurred RGB PNG")->required();
    recover->add_option("--tol", tol, "Per-channel tolerance")->capture_default_str();
    recover->add_option("--out", mask_out, "Mask PNG")->required();

    // score
    std::string pred_dir, report_path, split = "all";
    auto* score = app.add_subcommand("score", "Mean IoU of a prediction directory against a manifest");
    score->add_option("--pred", pred_dir, "Directory of <id>.png masks")->required();
    score->add_option("--manifest", manifest_path, "Manifest")->required();
    score->add_option("--split", split, "train, test or all")->capture_default_str()->check(CLI::IsMember({"train", "test", "all"}));
    score->add_option("--report", report_path, "Write the full report JSON here");

    // leaderboard
    std::vector<std::string> teams;
    auto* board = app.add_subcommand("leaderboard", "Rank teams by mean IoU");
    board->add_option("--team", teams, "NAME=report.json (repeatable)")->required();
    board->add_option("--out", out_path, "Write CSV here as well as stdout");

    // train
    std::string model_dir, log_path, loss_name = "bce";
    int steps = 2000, synthetic = 0;
    float lr = 0.3f;
    std::uint32_t seed = 42;
    MaskerFlags mflags;
    auto* train = app.add_subcommand("train", "Train the masker");
    train->add_option("--manifest", manifest_path, "Manifest; train rows need image and mask");
    train->add_option("--synthetic", synthetic, "Train on N synthetic rectangle instances instead");
    train->add_option("--out", model_dir, "Checkpoint directory")->required();
    train->add_option("--steps", steps, "Gradient-descent steps")->capture_default_str();
    train->add_option("--lr", lr, "Learning rate")->capture_default_str();
    train->add_option("--seed", seed, "Seed for initialization and synthetic data")->capture_default_str();
    train->add_option("--loss", loss_name, "bce or soft-iou")->capture_default_str()->check(CLI::IsMember({"bce", "soft-iou"}));
    train->add_option("--log", log_path, "Per-step loss CSV");
    mflags.attach(train);

    // predict
    std::string pred_out;
    float pred_tau = masker::default_tau;
    auto* predict = app.add_subcommand("predict", "Predict masks with a trained masker");
    predict->add_option("--model", model_dir, "Checkpoint directory")->required();
    predict->add_option("--manifest", manifest_path, "Manifest of images and texts");
    predict->add_option("--synthetic", synthetic, "Predict the first N synthetic instances instead");
    predict->add_option("--seed", seed, "Seed of the synthetic instances")->capture_default_str();
    predict->add_option("--split", split, "train, test or all")->capture_default_str()->check(CLI::IsMember({"train", "test", "all"}));
    predict->add_option("--tau", pred_tau, "Mask threshold")->capture_default_str();
    predict->add_option("--out", pred_out, "Output directory for <id>.png")->required();

    // gradcheck
    int graphs = 50;
    double tolerance = gradcheck::default_tolerance;
    auto* gcheck = app.add_subcommand("gradcheck", "Finite-difference check of the autodiff engine");
    gcheck->add_option("--graphs", graphs, "Random graphs to check")->capture_default_str();
    gcheck->add_option("--seed", seed, "Seed")->capture_default_str();
    gcheck->add_option("--tolerance", tolerance, "Maximum relative error")->capture_default_str();

    // manifest validate
    std::optional<std::size_t> expect_train, expect_test;
    auto* manifest = app.add_subcommand("manifest", "Manifest utilities");
    manifest->require_subcommand(1);
    auto* validate = manifest->add_subcommand("validate", "Validate a manifest and report split totals");
    validate->add_option("--manifest", manifest_path, "Manifest")->required();
    validate->add_option("--expect-train", expect_train, "Required train row count");
    validate->add_option("--expect-test", expect_test, "Required test row count");

    try {
        app.parse(argc, argv);
    } catch (CLI::ParseError const& e) {
        int code = app.exit(e, out, err);
        return code == 0 ? exit_ok : exit_usage;
    }

    auto emit_lines = [&](std::vector<json> const& lines) {
        std::ofstream file;
        if (!out_path.empty()) {
            file.open(out_path, std::ios::trunc);
            if (!file) throw IoError("cannot write output", out_path);
        }
        std::ostream& dst = out_path.empty() ? out : file;
        for (auto const& l : lines) dst << l.dump() << "\n";
    };

    try {
        if (heat->parsed()) {
            auto stack = attention::load_stack(stack_path, meta_path);
            std::vector<std::size_t> chosen = parse_indices(tokens_csv);
            if (!words_csv.empty()) {
                auto more = attention::tokens_matching(stack, split_csv(words_csv));
                if (more.empty()) throw ArgumentError("no token matches --words");
                chosen.insert(chosen.end(), more.begin(), more.end());
            }
            if (tokens_csv.empty() && words_csv.empty())
                for (std::size_t i = 0; i < stack.token_count(); ++i) chosen.push_back(i);
            if (out_png.empty() && out_tensor.empty()) throw UsageError("heatmap needs --out and/or --out-tensor");
            auto h = attention::aggregate(stack, chosen);
            if (!out_png.empty()) attention::export_gray(h, out_png);
            if (!out_tensor.empty()) tensor_write(h.values(), out_tensor);
        } else if (mask->parsed()) {
            write_mask_png(mask_out, attention::binarize(read_heatmap(heatmap_path), tau));
        } else if (blur->parsed()) {
            auto [img, m] = redact::anonymize(png_io::read_rgb(image_path), read_heatmap(heatmap_path), rp);
            png_io::write_rgb(blur_out, img);
            if (!blur_mask_out.empty()) write_mask_png(blur_mask_out, m);
        } else if (spans->parsed()) {
            std::vector<json> lines;
            if (!manifest_path.empty()) {
                for (auto const& row : load_manifest(manifest_path).rows) {
                    if (!row.normalized_text) continue;
                    auto s = text::extract_spans(row.text, *row.normalized_text);
                    lines.push_back({{"id", row.id}, {"spans", spans_json(s)}, {"words", span_words_json(s)}});
                }
            } else {
                if (hateful.empty() || normalized.empty()) throw UsageError("spans needs --hateful and --normalized, or --manifest");
                auto s = text::extract_spans(hateful, normalized);
                lines.push_back({{"spans", spans_json(s)}, {"words", span_words_json(s)}});
            }
            emit_lines(lines);
        } else if (prompt->parsed()) {
            auto one = [&](std::string const& id, std::string const& t, std::optional<std::string> const& norm) {
                std::vector<text::HateSpan> s;
                if (norm) s = text::extract_spans(t, *norm);
                auto p = text::build_prompt(t, s, word_budget);
                return json{{"id", id}, {"prompt", p.full_text}, {"truncated", p.truncated}, {"spans", spans_json(s)}};
            };
            std::vector<json> lines;
            if (!manifest_path.empty()) {
                for (auto const& row : load_manifest(manifest_path).rows) lines.push_back(one(row.id, row.text, row.normalized_text));
            } else {
                if (tweet.empty()) throw UsageError("prompt needs --text or --manifest");
                lines.push_back(one(prompt_id, tweet, normalized.empty() ? std::nullopt : std::optional(normalized)));
            }
            emit_lines(lines);
        } else if (recover->parsed()) {
            write_mask_png(mask_out, redact::recover_mask(png_io::read_rgb(original_path), png_io::read_rgb(blurred_path), tol));
        } else if (score->parsed()) {
            auto m = load_manifest(manifest_path);
            m.rows = select_split(std::move(m.rows), split);
            auto report = eval::score(pred_dir, m);
            if (!report_path.empty()) {
                std::ofstream f(report_path, std::ios::trunc);
                if (!f) throw IoError("cannot write report", report_path);
                f << eval::to_json(report).dump(2) << "\n";
            }
            for (auto const& [id, msg] : report.errors) err << "warning: " << id << ": " << msg << "\n";
            out << "mean " << fixed6(report.mean) << "\n";
        } else if (board->parsed()) {
            std::map<std::string, eval::IoUReport> reports;
            for (auto const& spec : teams) {
                auto eq = spec.find('=');
                if (eq == std::string::npos || eq == 0) throw UsageError("--team expects NAME=report.json, got '" + spec + "'");
                std::ifstream f(spec.substr(eq + 1));
                if (!f) throw IoError("cannot open report", spec.substr(eq + 1));
                json j;
                try {
                    f >> j;
                } catch (json::exception const& e) {
                    throw FormatError("bad report " + spec.substr(eq + 1) + ": " + e.what());
                }
                reports[spec.substr(0, eq)] = eval::report_from_json(j);
            }
            auto csv = eval::to_csv(eval::leaderboard(reports));
            if (!out_path.empty()) {
                std::ofstream f(out_path, std::ios::trunc);
                if (!f) throw IoError("cannot write leaderboard", out_path);
                f << csv;
            }
            out << csv;
        } else if (train->parsed()) {
            auto config = mflags.config(seed);
            masker::TrainBatch batch;
            if (synthetic > 0) {
                batch = masker::synthetic::to_batch(
                    masker::synthetic::make_instances(static_cast<std::size_t>(synthetic), config.image_size, seed, config.patch_size),
                    config);
            } else if (!manifest_path.empty()) {
                auto m = load_manifest(manifest_path);
                for (auto const& row : select_split(m.rows, "train")) {
                    if (!row.mask) throw ValidationError("train row '" + row.id + "' has no mask");
                    batch.images.push_back(png_io::read_rgb(m.resolve(row.image)));
                    batch.truth_masks.push_back(read_mask_png(m.resolve(*row.mask)));
                    batch.span_embeddings.push_back(masker::embed_spans(row_spans(row), config));
                }
                if (batch.images.empty()) throw ValidationError("manifest has no train rows");
            } else {
                throw UsageError("train needs --manifest or --synthetic");
            }
            auto model = masker::init(config);
            auto kind = loss_name == "bce" ? masker::LossKind::bce : masker::LossKind::soft_iou;
            auto log = masker::train(model, {batch}, steps, lr, kind);
            masker::save_model(model, model_dir);
            if (!log_path.empty()) {
                std::ofstream f(log_path, std::ios::trunc);
                if (!f) throw IoError("cannot write training log", log_path);
                f << "step,loss\n";
                for (std::size_t i = 0; i < log.loss.size(); ++i) f << i << "," << std::setprecision(9) << log.loss[i] << "\n";
            }
            out << json{{"steps", steps}, {"final_loss", log.loss.back()}}.dump() << "\n";
        } else if (predict->parsed()) {
            auto model = masker::load_model(model_dir);
            auto const& config = model.config;
            struct Item {
                std::string id;
                ImageRGB8 image;
                std::vector<text::HateSpan> spans;
            };
            std::vector<Item> items;
            if (synthetic > 0) {
                for (auto& inst : masker::synthetic::make_instances(static_cast<std::size_t>(synthetic), config.image_size, seed,
                                                                    config.patch_size))
                    items.push_back({inst.id, std::move(inst.image), std::move(inst.spans)});
            } else if (!manifest_path.empty()) {
                auto m = load_manifest(manifest_path);
                for (auto const& row : select_split(m.rows, split))
                    items.push_back({row.id, png_io::read_rgb(m.resolve(row.image)), row_spans(row)});
            } else {
                throw UsageError("predict needs --manifest or --synthetic");
            }
            fs::create_directories(pred_out);
            auto mg = masker::build_graph(model);
            parallel_for(items.size(), [&](std::size_t i) {
                auto p = masker::predict_embedded(model, mg, items[i].image, masker::embed_spans(items[i].spans, config), pred_tau);
                write_mask_png(fs::path(pred_out) / (items[i].id + ".png"), p.mask);
            });
        } else if (gcheck->parsed()) {
            if (graphs < 0) throw UsageError("--graphs must be >= 0");
            auto g = gradcheck::check_random_graphs(static_cast<std::size_t>(graphs), seed);
            auto m = gradcheck::check_masker(seed);
            bool ok = g.max_relative_error < tolerance && m.max_relative_error < tolerance;
            out << json{{"graphs", graphs},
                        {"graph_max_rel_error", g.max_relative_error},
                        {"graph_coordinates", g.coordinates},
                        {"masker_max_rel_error", m.max_relative_error},
                        {"masker_coordinates", m.coordinates},
                        {"skipped_at_kinks", g.skipped + m.skipped},
                        {"passed", ok}}
                       .dump()
                << "\n";
            if (!ok) {
                err << "gradient check failed (tolerance " << tolerance << ")\n";
                return exit_data;
            }
        } else if (validate->parsed()) {
            auto m = load_manifest(manifest_path);
            auto s = summarize(m.rows);
            if (expect_train && *expect_train != s.train)
                s.problems.push_back("expected " + std::to_string(*expect_train) + " train rows, found " + std::to_string(s.train));
            if (expect_test && *expect_test != s.test)
                s.problems.push_back("expected " + std::to_string(*expect_test) + " test rows, found " + std::to_string(s.test));
            out << json{{"train", s.train}, {"test", s.test}, {"total", s.total()}, {"valid", s.valid()}}.dump() << "\n";
            for (auto const& p : s.problems) err << "invalid: " << p << "\n";
            if (!s.valid()) return exit_data;
        }
    } catch (UsageError const& e) {
        err << "usage error: " << e.what() << "\n";
        return exit_usage;
    } catch (Error const& e) {
        err << "error: " << e.what() << "\n";
        return exit_data;
    } catch (nlohmann::json::exception const& e) {
        err << "error: " << e.what() << "\n";
        return exit_data;
    } catch (std::filesystem::filesystem_error const& e) {
        err << "error: " << e.what() << "\n";
        return exit_data;
    }
    return exit_ok;
}

} // namespace dehate::cli
