#include "support.hpp"

#include <dehate/evaluate.hpp>

#include <gtest/gtest.h>

#include <fstream>

namespace dehate::eval {
namespace {

BinaryMask from_rows(std::vector<std::string> const& rows) {
    BinaryMask m(rows.size(), rows[0].size());
    for (std::size_t y = 0; y < rows.size(); ++y)
        for (std::size_t x = 0; x < rows[y].size(); ++x) m.set(y, x, rows[y][x] == '#');
    return m;
}

double oracle_iou(BinaryMask const& a, BinaryMask const& b) {
    double i = 0, u = 0;
    for (std::size_t y = 0; y < a.height(); ++y)
        for (std::size_t x = 0; x < a.width(); ++x) {
            i += a.get(y, x) && b.get(y, x);
            u += a.get(y, x) || b.get(y, x);
        }
    return u == 0 ? 1.0 : i / u;
}

TEST(Iou, WorkedExamples) {
    auto truth = from_rows({"##..", "##..", "....", "...."});
    EXPECT_EQ(iou(truth, truth), 1.0);
    EXPECT_EQ(iou(from_rows({"....", "....", "..##", "..##"}), truth), 0.0);
    // 2 shared pixels out of 6 in the union
    EXPECT_DOUBLE_EQ(iou(from_rows({"....", "####", "....", "...."}), truth), 2.0 / 6.0);
    EXPECT_EQ(iou(BinaryMask(4, 4), BinaryMask(4, 4)), 1.0);
    EXPECT_EQ(iou(BinaryMask(4, 4), truth), 0.0);
}

TEST(Iou, DimsMismatch) { EXPECT_THROW(iou(BinaryMask(3, 4), BinaryMask(4, 3)), ArgumentError); }

TEST(Iou, PropertiesOnRandomMasks) {
    std::mt19937 rng(21);
    for (int t = 0; t < 200; ++t) {
        std::size_t h = 1 + rng() % 20, w = 1 + rng() % 20;
        auto a = testing::random_mask(rng, h, w, rng() % 101), b = testing::random_mask(rng, h, w, rng() % 101);
        double v = iou(a, b);
        EXPECT_DOUBLE_EQ(v, oracle_iou(a, b));
        EXPECT_EQ(v, iou(b, a));
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
        // adding truth pixels to the prediction never lowers IoU
        auto grown = a;
        for (std::size_t i = 0; i < grown.size(); ++i)
            if (b[i] && rng() % 2) grown.set_index(i);
        EXPECT_GE(iou(grown, b), v - 1e-15);
    }
}

struct Fixture {
    testing::TempDir dir;
    Manifest manifest;
    std::vector<BinaryMask> truths;

    explicit Fixture(std::size_t n, std::uint32_t seed = 1) {
        std::mt19937 rng(seed);
        std::filesystem::create_directories(dir / "mask");
        std::filesystem::create_directories(dir / "pred");
        manifest.base_dir = dir.path();
        for (std::size_t i = 0; i < n; ++i) {
            auto id = "m" + std::to_string(1000 + i);
            truths.push_back(testing::random_mask(rng, 16, 16, 30));
            write_mask_png(dir / ("mask/" + id + ".png"), truths.back());
            ManifestRow r;
            r.id = id;
            r.text = "x";
            r.image = "img/" + id + ".png";
            r.mask = "mask/" + id + ".png";
            r.split = Split::test;
            manifest.rows.push_back(r);
        }
    }
    std::filesystem::path pred() const { return dir / "pred"; }
};

TEST(Score, TruthAsPredictionIsOne) {
    Fixture f(12);
    for (std::size_t i = 0; i < f.truths.size(); ++i)
        write_mask_png(f.pred() / (f.manifest.rows[i].id + ".png"), f.truths[i]);
    auto r = score(f.pred(), f.manifest);
    EXPECT_EQ(r.mean, 1.0);
    EXPECT_TRUE(r.missing.empty());
    EXPECT_EQ(r.per_instance.size(), 12u);
}

TEST(Score, EmptyDirectoryIsZero) {
    Fixture f(5);
    auto r = score(f.pred(), f.manifest);
    EXPECT_EQ(r.mean, 0.0);
    EXPECT_EQ(r.missing.size(), 5u);
}

TEST(Score, MissingAndUnreadableCountAsZero) {
    Fixture f(4);
    write_mask_png(f.pred() / "m1000.png", f.truths[0]);
    write_mask_png(f.pred() / "m1001.png", f.truths[1]);
    std::ofstream(f.pred() / "m1002.png") << "not a png";
    auto r = score(f.pred(), f.manifest);
    EXPECT_DOUBLE_EQ(r.mean, 0.5);
    EXPECT_EQ(r.missing, std::vector<std::string>{"m1003"});
    EXPECT_EQ(r.errors.count("m1002"), 1u);
    EXPECT_EQ(r.per_instance.at("m1002"), 0.0);
}

TEST(Score, MeanIsMacroAverage) {
    Fixture f(3);
    std::vector<double> expect;
    std::mt19937 rng(9);
    for (std::size_t i = 0; i < 3; ++i) {
        auto p = testing::random_mask(rng, 16, 16);
        expect.push_back(oracle_iou(p, f.truths[i]));
        write_mask_png(f.pred() / (f.manifest.rows[i].id + ".png"), p);
    }
    auto r = score(f.pred(), f.manifest);
    EXPECT_DOUBLE_EQ(r.mean, (expect[0] + expect[1] + expect[2]) / 3.0);
}

TEST(Score, TruthFromBlurredPair) {
    testing::TempDir dir;
    std::mt19937 rng(4);
    auto img = testing::random_image(rng, 10, 10);
    auto blurred = img;
    blurred.set(3, 4, {0, 0, 0});
    if (img.get(3, 4) == Rgb{0, 0, 0}) blurred.set(3, 4, {1, 0, 0});
    png_io::write_rgb(dir / "a.png", img);
    png_io::write_rgb(dir / "b.png", blurred);
    Manifest m{dir.path(), {}};
    ManifestRow r;
    r.id = "p";
    r.text = "t";
    r.image = "a.png";
    r.blurred = "b.png";
    r.split = Split::test;
    m.rows.push_back(r);
    BinaryMask truth(10, 10);
    truth.set(4, 3);
    std::filesystem::create_directories(dir / "pred");
    write_mask_png(dir / "pred/p.png", truth);
    EXPECT_EQ(score(dir / "pred", m).mean, 1.0);
}

TEST(Score, ReportJsonRoundtrip) {
    IoUReport r;
    r.per_instance = {{"a", 0.25}, {"b", 1.0}};
    r.mean = 0.625;
    r.missing = {"c"};
    r.errors = {{"d", "bad"}};
    auto back = report_from_json(nlohmann::json::parse(to_json(r).dump()));
    EXPECT_EQ(back.per_instance, r.per_instance);
    EXPECT_EQ(back.mean, r.mean);
    EXPECT_EQ(back.missing, r.missing);
    EXPECT_EQ(back.errors, r.errors);
    EXPECT_THROW(report_from_json(nlohmann::json::object()), FormatError);
}

IoUReport with_mean(double v) {
    IoUReport r;
    r.mean = v;
    return r;
}

TEST(Leaderboard, OrdersByMeanDescending) {
    std::map<std::string, IoUReport> reports{{"Baseline", with_mean(0.49)},   {"Markans", with_mean(0.48)},
                                             {"PaulJane", with_mean(0.51)},   {"rachitmodi", with_mean(0.44)},
                                             {"Sanskarfc", with_mean(0.47)},  {"UniteToModerate", with_mean(0.55)}};
    EXPECT_EQ(to_csv(leaderboard(reports)), "rank,team,iou\n"
                                            "1,UniteToModerate,0.55\n"
                                            "2,PaulJane,0.51\n"
                                            "3,Baseline,0.49\n"
                                            "4,Markans,0.48\n"
                                            "5,Sanskarfc,0.47\n"
                                            "6,rachitmodi,0.44\n");
}

TEST(Leaderboard, TiesBrokenByName) {
    auto b = leaderboard({{"zeta", with_mean(0.5)}, {"alpha", with_mean(0.5)}, {"mid", with_mean(0.7)}});
    EXPECT_EQ(b[0].team, "mid");
    EXPECT_EQ(b[1].team, "alpha");
    EXPECT_EQ(b[2].team, "zeta");
    EXPECT_EQ(b[2].rank, 3);
}

TEST(Leaderboard, SingleTeamAndEmpty) {
    EXPECT_EQ(to_csv(leaderboard({{"solo", with_mean(1.0)}})), "rank,team,iou\n1,solo,1.00\n");
    EXPECT_THROW(leaderboard({}), ArgumentError);
}

TEST(Leaderboard, FormatScore) {
    EXPECT_EQ(format_score(0.0), "0.00");
    EXPECT_EQ(format_score(0.554), "0.55");
    EXPECT_EQ(format_score(0.556), "0.56");
    EXPECT_EQ(format_score(0.125), "0.13");
    EXPECT_EQ(format_score(1.0), "1.00");
}

} // namespace
} // namespace dehate::eval
