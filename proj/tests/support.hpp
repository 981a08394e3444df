#pragma once

#include <dehate/image.hpp>
#include <dehate/tensor.hpp>

#include <filesystem>
#include <random>
#include <string>

namespace dehate::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
  public:
    explicit TempDir(std::string const& tag = "dehate") {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / (tag + "-" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(TempDir const&) = delete;
    TempDir& operator=(TempDir const&) = delete;

    std::filesystem::path const& path() const { return path_; }
    std::filesystem::path operator/(std::string const& name) const { return path_ / name; }

  private:
    std::filesystem::path path_;
};

inline ImageRGB8 random_image(std::mt19937& rng, std::size_t w, std::size_t h) {
    ImageRGB8 img(w, h);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            img.set(x, y, {static_cast<std::uint8_t>(rng()), static_cast<std::uint8_t>(rng()), static_cast<std::uint8_t>(rng())});
    return img;
}

/// Heatmap with values drawn from {0, 0.25, 0.5, 0.75, 1} plus uniform noise,
/// so thresholds land on both sides of typical taus.
inline Heatmap random_heatmap(std::mt19937& rng, std::size_t h, std::size_t w) {
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    Tensor t({h, w});
    for (auto& v : t.data()) v = (rng() % 3 == 0) ? static_cast<float>(rng() % 5) / 4.0f : u(rng);
    return Heatmap(std::move(t));
}

inline BinaryMask random_mask(std::mt19937& rng, std::size_t h, std::size_t w, unsigned percent = 50) {
    BinaryMask m(h, w);
    for (std::size_t i = 0; i < m.size(); ++i) m.set_index(i, rng() % 100 < percent);
    return m;
}

} // namespace dehate::testing
