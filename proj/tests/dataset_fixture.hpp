#pragma once

// A tiny on-disk dataset: 32x32 images with masks, attention stacks and a
// manifest whose rows alternate between train and test.

#include "support.hpp"

#include <dehate/attention.hpp>
#include <dehate/manifest.hpp>
#include <dehate/masker.hpp>

#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace dehate::testing {

struct Dataset {
    std::filesystem::path manifest;
    std::vector<ManifestRow> rows;
    std::vector<std::string> images;  // absolute image paths, row order
    std::vector<std::string> stacks;  // absolute attention tensor paths
    std::vector<std::string> metas;
};

inline Dataset write_dataset(std::filesystem::path const& root, std::size_t count, std::uint32_t seed) {
    namespace fs = std::filesystem;
    for (auto d : {"img", "mask", "att"}) fs::create_directories(root / d);
    std::mt19937 rng(seed);
    auto inst = masker::synthetic::make_instances(count, 32, seed, 4);
    static char const* const texts[][2] = {
        {"get those red vermin out of here", "get those people out of here"},
        {"the green ones are disgusting animals", "the green ones are people"},
        {"blue idiots ruin everything always", "blue people change everything"},
        {"yellow filth should be banned now", "yellow people should be welcome now"},
    };
    Dataset ds;
    ds.manifest = root / "manifest.jsonl";
    for (std::size_t i = 0; i < count; ++i) {
        auto const& id = inst[i].id;
        png_io::write_rgb(root / ("img/" + id + ".png"), inst[i].image);
        write_mask_png(root / ("mask/" + id + ".png"), inst[i].truth);

        attention::AttentionStack s;
        s.tokens = {"a", "photo", "of", "hate"};
        s.image_h = 32;
        s.image_w = 32;
        s.maps = Tensor({4, 1, 2, 2, 8, 8});
        std::uniform_real_distribution<float> u(0.0f, 1.0f);
        for (auto& v : s.maps.data()) v = u(rng);
        attention::save_stack(s, root / ("att/" + id + ".dht"), root / ("att/" + id + ".json"));

        ManifestRow r;
        r.id = id;
        r.text = texts[i % 4][0];
        r.normalized_text = texts[i % 4][1];
        r.image = "img/" + id + ".png";
        r.mask = "mask/" + id + ".png";
        r.attention = AttentionRef{"att/" + id + ".dht", "att/" + id + ".json"};
        r.split = i % 2 ? Split::test : Split::train;
        ds.rows.push_back(r);
        ds.images.push_back((root / r.image).string());
        ds.stacks.push_back((root / r.attention->tensor).string());
        ds.metas.push_back((root / r.attention->meta).string());
    }
    write_manifest(ds.manifest, ds.rows);
    return ds;
}

} // namespace dehate::testing
