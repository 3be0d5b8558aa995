#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cpgd/tensor.hpp"

namespace cpgd {

// Seeded source for parameter init and sampler noise. The engine is
// mt19937_64; the value mappings are fixed here so streams are identical
// across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Uniform in [0, 1) with 24 bits of resolution.
    float uniform() { return static_cast<float>(engine_() >> 40) * 0x1.0p-24f; }
    float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }
    // Standard normal via Box-Muller on two uniforms.
    float normal();

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    float spare_ = 0.0f;
};

// Ordered collection of named tensors stored in a tagged binary container:
// magic (4 bytes), u32 version, u64 seed, then per layer
// u32 name length, name bytes, u32 rank, rank x u32 dims, f32 payload.
class ParamSet {
public:
    static constexpr std::uint32_t kVersion = 1;

    ParamSet() = default;
    ParamSet(std::string magic, std::uint64_t seed) : magic_(std::move(magic)), seed_(seed) {}

    const std::string& magic() const noexcept { return magic_; }
    std::uint64_t seed() const noexcept { return seed_; }
    std::uint32_t version() const noexcept { return version_; }

    void add(std::string name, Tensor value);
    bool contains(const std::string& name) const;
    // Throws std::out_of_range naming the missing layer.
    const Tensor& get(const std::string& name) const;
    Tensor& get(const std::string& name);
    const std::vector<std::pair<std::string, Tensor>>& layers() const noexcept { return layers_; }

    std::vector<std::uint8_t> serialize() const;
    // Throws FormatError on a magic mismatch or malformed payload.
    static ParamSet deserialize(std::span<const std::uint8_t> bytes, const std::string& expected_magic);

    void save(const std::filesystem::path& path) const;
    static ParamSet load(const std::filesystem::path& path, const std::string& expected_magic);

    bool operator==(const ParamSet&) const = default;

private:
    std::string magic_;
    std::uint32_t version_ = kVersion;
    std::uint64_t seed_ = 0;
    std::vector<std::pair<std::string, Tensor>> layers_;
};

// Uniform(-s, s) with s = 1 / sqrt(fan_in).
Tensor seeded_uniform(std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng);

}  // namespace cpgd
