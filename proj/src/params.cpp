#include "cpgd/params.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "cpgd/bytes.hpp"
#include "cpgd/frame_io.hpp"

namespace cpgd {

float Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // u1 in (0, 1] keeps the log finite.
    const double u1 = 1.0 - static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    const double u2 = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = static_cast<float>(r * std::sin(theta));
    has_spare_ = true;
    return static_cast<float>(r * std::cos(theta));
}

void ParamSet::add(std::string name, Tensor value) {
    if (contains(name)) throw std::invalid_argument("duplicate parameter layer '" + name + "'");
    layers_.emplace_back(std::move(name), std::move(value));
}

bool ParamSet::contains(const std::string& name) const {
    for (const auto& [n, t] : layers_) {
        if (n == name) return true;
    }
    return false;
}

const Tensor& ParamSet::get(const std::string& name) const {
    for (const auto& [n, t] : layers_) {
        if (n == name) return t;
    }
    throw std::out_of_range("parameter layer '" + name + "' not found in " + magic_ + " set");
}

Tensor& ParamSet::get(const std::string& name) {
    return const_cast<Tensor&>(static_cast<const ParamSet&>(*this).get(name));
}

std::vector<std::uint8_t> ParamSet::serialize() const {
    if (magic_.size() != 4) throw std::invalid_argument("parameter magic must be 4 bytes");
    ByteWriter w;
    w.bytes(std::span(reinterpret_cast<const std::uint8_t*>(magic_.data()), 4));
    w.u32(version_);
    w.u64(seed_);
    for (const auto& [name, t] : layers_) {
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.bytes(std::span(reinterpret_cast<const std::uint8_t*>(name.data()), name.size()));
        w.u32(static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
        for (float v : t.values()) w.f32(v);
    }
    return w.take();
}

ParamSet ParamSet::deserialize(std::span<const std::uint8_t> bytes, const std::string& expected_magic) {
    ByteReader in(bytes, "parameter file");
    auto magic = in.bytes(4);
    const std::string got(magic.begin(), magic.end());
    if (got != expected_magic) {
        throw FormatError("parameter file: bad magic, expected \"" + expected_magic + "\"", 0);
    }
    ParamSet p(got, 0);
    const std::size_t version_at = in.offset();
    p.version_ = in.u32();
    if (p.version_ != kVersion) {
        in.fail("unsupported version " + std::to_string(p.version_), version_at);
    }
    p.seed_ = in.u64();
    while (!in.at_end()) {
        const std::size_t layer_at = in.offset();
        const std::uint32_t len = in.u32();
        auto name_bytes = in.bytes(len);
        std::string name(name_bytes.begin(), name_bytes.end());
        in.set_context("parameter layer '" + name + "'");
        const std::uint32_t rank = in.u32();
        if (rank == 0 || rank > 8) in.fail("implausible rank " + std::to_string(rank), layer_at);
        std::vector<std::size_t> shape(rank);
        std::size_t count = 1;
        for (auto& d : shape) {
            d = in.u32();
            count *= d;
        }
        in.need(count * 4);
        std::vector<float> data(count);
        for (auto& v : data) v = in.f32();
        if (p.contains(name)) in.fail("duplicate layer", layer_at);
        p.layers_.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    return p;
}

void ParamSet::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

ParamSet ParamSet::load(const std::filesystem::path& path, const std::string& expected_magic) {
    if (!std::filesystem::exists(path)) throw DataError("parameter file not found: " + path.string());
    return deserialize(read_file(path), expected_magic);
}

Tensor seeded_uniform(std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const float s = 1.0f / std::sqrt(static_cast<float>(fan_in));
    for (float& v : t.values()) v = rng.uniform(-s, s);
    return t;
}

}  // namespace cpgd
