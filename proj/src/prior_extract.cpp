#include "cpgd/prior_extract.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <json.hpp>

#include "cpgd/bytes.hpp"
#include "cpgd/frame_io.hpp"
#include "cpgd/parallel.hpp"

namespace cpgd {

namespace fs = std::filesystem;

namespace {

constexpr char kMvfMagic[5] = "MVF1";
constexpr char kCrfMagic[5] = "CRF1";

const char* direction_tag(Direction d) { return d == Direction::Forward ? "fwd" : "bwd"; }

void check_direction(ByteReader& in, Direction expected) {
    const std::size_t at = in.offset();
    const std::uint8_t d = in.u8();
    if (d > 1) in.fail("direction byte " + std::to_string(d) + " is neither 0 nor 1", at);
    if (static_cast<Direction>(d) != expected) {
        in.fail(std::string("direction is ") + direction_tag(static_cast<Direction>(d)) + ", expected " +
                    direction_tag(expected),
                at);
    }
}

void check_payload(ByteReader& in, std::size_t expected) {
    if (in.remaining() != expected) {
        in.fail("payload size mismatch: expected " + std::to_string(expected) + " bytes, got " +
                    std::to_string(in.remaining()),
                in.offset());
    }
}

FramePriors zero_priors(int width, int height, int block_size) {
    return {MvGrid(width, height, block_size),
            ResidualMap::zeros(static_cast<std::size_t>(height), static_cast<std::size_t>(width))};
}

FramePriors match_pair(const FramePlane& reference, const FramePlane& current, const CodecConfig& cfg) {
    BlockSearchResult s = search_blocks(reference, current, cfg, 1);
    const FramePlane pred = motion_compensate(reference, s.mvs);
    const ResidualPlane res = compute_residual(current, pred, cfg.quant);
    return {std::move(s.mvs), normalize_residual(res)};
}

}  // namespace

DenseMotionField densify_mv(const MvGrid& mv, int width, int height) {
    if (mv.block_size <= 0 || mv.blocks_x != (width + mv.block_size - 1) / mv.block_size ||
        mv.blocks_y != (height + mv.block_size - 1) / mv.block_size) {
        throw std::invalid_argument("densify_mv: grid " + std::to_string(mv.blocks_x) + "x" +
                                    std::to_string(mv.blocks_y) + " does not tile a " + std::to_string(width) + "x" +
                                    std::to_string(height) + " frame");
    }
    auto f = DenseMotionField::zeros(static_cast<std::size_t>(height), static_cast<std::size_t>(width));
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const MotionVector& v = mv.at(y / mv.block_size, x / mv.block_size);
            f.field.at(0, y, x) = static_cast<float>(v.dy);
            f.field.at(1, y, x) = static_cast<float>(v.dx);
        }
    }
    return f;
}

ResidualMap normalize_residual(const ResidualPlane& res) {
    auto m = ResidualMap::zeros(static_cast<std::size_t>(res.height), static_cast<std::size_t>(res.width));
    for (std::size_t i = 0; i < res.values.size(); ++i) {
        const int mag = std::min(std::abs(res.reconstructed(i)), 255);
        m.map[i] = static_cast<float>(mag) / 255.0f;
    }
    return m;
}

fs::path mvf_path(const fs::path& dir, std::size_t frame_index, Direction d) {
    return dir / frame_name(frame_index, std::string(".") + direction_tag(d) + ".mvf");
}

fs::path crf_path(const fs::path& dir, std::size_t frame_index, Direction d) {
    return dir / frame_name(frame_index, std::string(".") + direction_tag(d) + ".crf");
}

std::vector<std::uint8_t> encode_mvf(const MvGrid& mv, Direction d) {
    ByteWriter w;
    w.tag(kMvfMagic);
    w.u16(static_cast<std::uint16_t>(mv.blocks_x));
    w.u16(static_cast<std::uint16_t>(mv.blocks_y));
    w.u8(static_cast<std::uint8_t>(mv.block_size));
    w.u8(static_cast<std::uint8_t>(d));
    for (const auto& v : mv.vectors) {
        w.i8(static_cast<std::int8_t>(v.dy));
        w.i8(static_cast<std::int8_t>(v.dx));
    }
    return w.take();
}

std::vector<std::uint8_t> encode_crf(const ResidualMap& res, Direction d) {
    ByteWriter w;
    w.tag(kCrfMagic);
    w.u16(static_cast<std::uint16_t>(res.width()));
    w.u16(static_cast<std::uint16_t>(res.height()));
    w.u8(static_cast<std::uint8_t>(d));
    for (float v : res.map.values()) w.f32(v);
    return w.take();
}

MvGrid decode_mvf(std::span<const std::uint8_t> bytes, Direction expected, const std::string& name) {
    ByteReader in(bytes, name);
    in.expect_tag(kMvfMagic);
    MvGrid mv;
    mv.blocks_x = in.u16();
    mv.blocks_y = in.u16();
    const std::size_t bs_at = in.offset();
    mv.block_size = in.u8();
    if (mv.block_size == 0) in.fail("block size 0", bs_at);
    check_direction(in, expected);
    const std::size_t count = static_cast<std::size_t>(mv.blocks_x) * mv.blocks_y;
    check_payload(in, count * 2);
    mv.vectors.resize(count);
    for (auto& v : mv.vectors) {
        v.dy = in.i8();
        v.dx = in.i8();
    }
    return mv;
}

ResidualMap decode_crf(std::span<const std::uint8_t> bytes, Direction expected, const std::string& name) {
    ByteReader in(bytes, name);
    in.expect_tag(kCrfMagic);
    const std::size_t w = in.u16();
    const std::size_t h = in.u16();
    check_direction(in, expected);
    check_payload(in, w * h * 4);
    auto m = ResidualMap::zeros(h, w);
    for (std::size_t i = 0; i < w * h; ++i) {
        const std::size_t at = in.offset();
        const float v = in.f32();
        if (!(v >= 0.0f && v <= 1.0f)) in.fail("residual value outside [0, 1]", at);
        m.map[i] = v;
    }
    return m;
}

void write_sidecars(const fs::path& dir, std::size_t frame_index, Direction d, const MvGrid& mv,
                    const ResidualMap& res) {
    write_file(mvf_path(dir, frame_index, d), encode_mvf(mv, d));
    write_file(crf_path(dir, frame_index, d), encode_crf(res, d));
}

FramePriors read_sidecars(const fs::path& dir, std::size_t frame_index, Direction d) {
    const fs::path mp = mvf_path(dir, frame_index, d), cp = crf_path(dir, frame_index, d);
    for (const auto& p : {mp, cp}) {
        if (!fs::exists(p)) throw DataError("missing prior sidecar: " + p.string());
    }
    FramePriors out;
    out.mv = decode_mvf(read_file(mp), d, mp.string());
    out.residual = decode_crf(read_file(cp), d, cp.string());
    const int w = static_cast<int>(out.residual.width()), h = static_cast<int>(out.residual.height());
    const int bs = out.mv.block_size;
    if (out.mv.blocks_x != (w + bs - 1) / bs || out.mv.blocks_y != (h + bs - 1) / bs) {
        throw FormatError(mp.string() + ": " + std::to_string(out.mv.blocks_x) + "x" +
                              std::to_string(out.mv.blocks_y) + " grid of " + std::to_string(bs) +
                              "-pixel blocks does not match the " + std::to_string(w) + "x" + std::to_string(h) +
                              " residual map",
                          4);
    }
    return out;
}

DensePriors to_dense(const FramePriors& p) {
    const int w = static_cast<int>(p.residual.width()), h = static_cast<int>(p.residual.height());
    return {densify_mv(p.mv, w, h), p.residual};
}

PriorSet compute_priors(std::span<const FramePlane> frames, const CodecConfig& cfg, bool backward) {
    cfg.validate();
    if (frames.empty()) throw std::invalid_argument("compute_priors: no frames");
    PriorSet set;
    set.width = frames[0].width;
    set.height = frames[0].height;
    set.config = cfg;
    for (std::size_t t = 1; t < frames.size(); ++t) {
        if (frames[t].width != set.width || frames[t].height != set.height) {
            throw DataError("frame " + std::to_string(t) + " dimensions differ from frame 0");
        }
    }
    const std::size_t T = frames.size();
    set.forward.assign(T, zero_priors(set.width, set.height, cfg.block_size));
    if (backward) set.backward.assign(T, zero_priors(set.width, set.height, cfg.block_size));

    // Job j < T-1 is forward pair (j -> j+1); the rest are backward pairs.
    const std::size_t pairs = T - 1;
    parallel_for(0, backward ? 2 * pairs : pairs, [&](std::size_t j) {
        if (j < pairs) {
            set.forward[j + 1] = match_pair(frames[j], frames[j + 1], cfg);
        } else {
            const std::size_t t = j - pairs;
            set.backward[t] = match_pair(frames[t + 1], frames[t], cfg);
        }
    });
    return set;
}

PriorSet priors_from_stream(const DecodedSequence& dec) {
    PriorSet set;
    set.width = dec.width;
    set.height = dec.height;
    set.config = dec.config;
    for (std::size_t t = 0; t < dec.frames.size(); ++t) {
        set.forward.push_back({dec.mvs[t], normalize_residual(dec.residuals[t])});
    }
    return set;
}

void write_prior_set(const fs::path& dir, const PriorSet& set) {
    fs::create_directories(dir);
    parallel_for(0, set.forward.size(), [&](std::size_t t) {
        write_sidecars(dir, t, Direction::Forward, set.forward[t].mv, set.forward[t].residual);
        // the last frame has no successor, so its (zero) backward priors are implied
        if (!set.backward.empty() && t + 1 < set.backward.size()) {
            write_sidecars(dir, t, Direction::Backward, set.backward[t].mv, set.backward[t].residual);
        }
    });

    nlohmann::ordered_json m;
    m["frame_count"] = set.forward.size();
    m["width"] = set.width;
    m["height"] = set.height;
    m["block_size"] = set.config.block_size;
    m["search_radius"] = set.config.search_radius;
    m["quant"] = set.config.quant;
    m["directions"] = set.backward.empty() ? nlohmann::ordered_json::array({"forward"})
                                           : nlohmann::ordered_json::array({"forward", "backward"});
    m["boundary"] = "forward priors of frame 0 and backward priors of the last frame are zero";
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    if (!out) throw DataError("cannot write " + (dir / "manifest.json").string());
    out << m.dump(2) << '\n';
}

PriorSet augment_dataset(const fs::path& frames_dir, const CodecConfig& cfg, const fs::path& out_dir) {
    std::vector<FramePlane> luma;
    for (const auto& img : read_frames(frames_dir)) luma.push_back(to_luma(img));
    PriorSet set = compute_priors(luma, cfg, true);
    write_prior_set(out_dir, set);
    return set;
}

Manifest read_manifest(const fs::path& dir) {
    const fs::path p = dir / "manifest.json";
    std::ifstream in(p);
    if (!in) throw DataError("missing manifest: " + p.string());
    nlohmann::json j;
    try {
        in >> j;
        Manifest m;
        m.frame_count = j.at("frame_count").get<std::size_t>();
        m.width = j.at("width").get<int>();
        m.height = j.at("height").get<int>();
        m.config.block_size = j.at("block_size").get<int>();
        m.config.search_radius = j.at("search_radius").get<int>();
        m.config.quant = j.at("quant").get<int>();
        if (j.contains("directions")) {
            for (const auto& d : j["directions"]) m.has_backward |= d.get<std::string>() == "backward";
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(p.string() + ": " + e.what());
    }
}

}  // namespace cpgd
