#include "cpgd/codec.hpp"

#include <algorithm>
#include <cstdlib>
#include <limits>
#include <stdexcept>

#include "cpgd/parallel.hpp"

namespace cpgd {

namespace {

constexpr char kMagic[5] = "CPV1";
constexpr std::uint8_t kTokenZeros = 0x00;
constexpr std::uint8_t kTokenLiteral = 0x01;

int ceil_div(int a, int b) { return (a + b - 1) / b; }

void require_same_size(const FramePlane& a, const FramePlane& b, const char* op) {
    if (a.width != b.width || a.height != b.height) {
        throw std::invalid_argument(std::string(op) + ": frame dimensions differ (" + std::to_string(a.width) +
                                    "x" + std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                                    std::to_string(b.height) + ")");
    }
}

// Reference plane extended by `pad` replicated samples on every side, so
// clamped reads inside the search window become plain indexing.
struct PaddedPlane {
    int pad;
    int stride;
    std::vector<std::uint8_t> data;

    PaddedPlane(const FramePlane& src, int pad_) : pad(pad_), stride(src.width + 2 * pad_) {
        const int rows = src.height + 2 * pad;
        data.resize(static_cast<std::size_t>(rows) * stride);
        for (int y = 0; y < rows; ++y) {
            for (int x = 0; x < stride; ++x) {
                data[static_cast<std::size_t>(y) * stride + x] = src.clamped(y - pad, x - pad);
            }
        }
    }
    const std::uint8_t* row(int y, int x) const {
        return data.data() + static_cast<std::size_t>(y + pad) * stride + (x + pad);
    }
};

// Candidate displacements in tie-break order: |dy|+|dx|, then dy, then dx.
std::vector<MotionVector> candidate_order(int radius) {
    std::vector<MotionVector> c;
    c.reserve(static_cast<std::size_t>(2 * radius + 1) * (2 * radius + 1));
    for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) c.push_back({dy, dx});
    }
    std::stable_sort(c.begin(), c.end(), [](const MotionVector& a, const MotionVector& b) {
        const int la = std::abs(a.dy) + std::abs(a.dx), lb = std::abs(b.dy) + std::abs(b.dx);
        if (la != lb) return la < lb;
        if (a.dy != b.dy) return a.dy < b.dy;
        return a.dx < b.dx;
    });
    return c;
}

std::int16_t round_half_away(int diff, int quant) {
    const int mag = (std::abs(diff) + quant / 2) / quant;
    return static_cast<std::int16_t>(diff < 0 ? -mag : mag);
}

void write_residual(ByteWriter& w, const ResidualPlane& r, bool rle) {
    if (rle) {
        w.bytes(rle0_encode(r.values));
    } else {
        for (std::int16_t v : r.values) w.i16(v);
    }
}

// Appends one token's values to `out`, refusing to grow past `limit` values.
void rle0_token(ByteReader& in, std::vector<std::int16_t>& out, std::size_t limit) {
    const std::size_t at = in.offset();
    const std::uint8_t token = in.u8();
    if (token == kTokenZeros) {
        const std::uint8_t run = in.u8();
        if (run == 0) in.fail("zero-run token with run length 0", at);
        if (out.size() + run > limit) {
            in.fail("zero run of " + std::to_string(run) + " overflows the " + std::to_string(limit) +
                        "-value plane",
                    at);
        }
        out.insert(out.end(), run, 0);
    } else if (token == kTokenLiteral) {
        const std::uint16_t n = in.u16();
        if (n == 0) in.fail("literal token with count 0", at);
        if (out.size() + n > limit) {
            in.fail("literal run of " + std::to_string(n) + " overflows the " + std::to_string(limit) +
                        "-value plane",
                    at);
        }
        in.need(static_cast<std::size_t>(n) * 2);
        for (std::uint16_t i = 0; i < n; ++i) out.push_back(in.i16());
    } else {
        in.fail("unknown residual token " + std::to_string(token), at);
    }
}

// Decodes exactly `count` values from the token stream at the reader's cursor.
std::vector<std::int16_t> rle0_read(ByteReader& in, std::size_t count) {
    std::vector<std::int16_t> out;
    out.reserve(count);
    while (out.size() < count) rle0_token(in, out, count);
    return out;
}

}  // namespace

FramePlane::FramePlane(int w, int h, std::uint8_t fill)
    : width(w), height(h), samples(static_cast<std::size_t>(std::max(w, 0)) * std::max(h, 0), fill) {
    if (w <= 0 || h <= 0) throw std::invalid_argument("FramePlane: width and height must be positive");
}

FramePlane::FramePlane(int w, int h, std::vector<std::uint8_t> data) : width(w), height(h), samples(std::move(data)) {
    if (w <= 0 || h <= 0) throw std::invalid_argument("FramePlane: width and height must be positive");
    if (samples.size() != static_cast<std::size_t>(w) * h) {
        throw std::invalid_argument("FramePlane: " + std::to_string(samples.size()) + " samples for a " +
                                    std::to_string(w) + "x" + std::to_string(h) + " plane");
    }
}

std::uint8_t FramePlane::clamped(int y, int x) const {
    return at(std::clamp(y, 0, height - 1), std::clamp(x, 0, width - 1));
}

MvGrid::MvGrid(int frame_width, int frame_height, int block_size_)
    : blocks_x(ceil_div(frame_width, block_size_)),
      blocks_y(ceil_div(frame_height, block_size_)),
      block_size(block_size_),
      vectors(static_cast<std::size_t>(blocks_x) * blocks_y) {}

ResidualPlane::ResidualPlane(int w, int h, int quant_)
    : width(w), height(h), quant(quant_), values(static_cast<std::size_t>(w) * h, 0) {}

void CodecConfig::validate() const {
    if (block_size != 8 && block_size != 16) {
        throw std::invalid_argument("block_size must be 8 or 16, got " + std::to_string(block_size));
    }
    if (search_radius < 1 || search_radius > 127) {
        throw std::invalid_argument("search_radius must be in [1, 127], got " + std::to_string(search_radius));
    }
    if (quant < 1 || quant > 255) {
        throw std::invalid_argument("quant must be in [1, 255], got " + std::to_string(quant));
    }
}

BlockSearchResult search_blocks(const FramePlane& reference, const FramePlane& current, const CodecConfig& cfg,
                                std::size_t workers) {
    cfg.validate();
    require_same_size(reference, current, "block_match_full");
    if (current.width < cfg.block_size || current.height < cfg.block_size) {
        throw std::invalid_argument("block_match_full: frame smaller than block size " +
                                    std::to_string(cfg.block_size));
    }

    const int bs = cfg.block_size, r = cfg.search_radius;
    const PaddedPlane ref(reference, r + bs);
    const auto order = candidate_order(r);

    BlockSearchResult result;
    result.mvs = MvGrid(current.width, current.height, bs);
    result.sad.assign(result.mvs.block_count(), 0);
    const int bx_count = result.mvs.blocks_x;

    parallel_for(
        0, result.mvs.block_count(),
        [&](std::size_t b) {
            const int by = static_cast<int>(b) / bx_count, bx = static_cast<int>(b) % bx_count;
            const int y0 = by * bs, x0 = bx * bs;
            const int h = std::min(bs, current.height - y0), w = std::min(bs, current.width - x0);

            std::uint32_t best = std::numeric_limits<std::uint32_t>::max();
            MotionVector best_v{};
            for (const MotionVector& v : order) {
                std::uint32_t sad = 0;
                for (int y = 0; y < h && sad < best; ++y) {
                    const std::uint8_t* cur = current.samples.data() + static_cast<std::size_t>(y0 + y) * current.width + x0;
                    const std::uint8_t* rp = ref.row(y0 + y + v.dy, x0 + v.dx);
                    for (int x = 0; x < w; ++x) sad += static_cast<std::uint32_t>(std::abs(cur[x] - rp[x]));
                }
                // Candidates arrive in tie-break order, so only a strict improvement wins.
                if (sad < best) {
                    best = sad;
                    best_v = v;
                }
            }
            result.mvs.vectors[b] = best_v;
            result.sad[b] = best;
        },
        workers);

    result.candidates = static_cast<std::uint64_t>(result.mvs.block_count()) * order.size();
    return result;
}

MvGrid block_match_full(const FramePlane& reference, const FramePlane& current, const CodecConfig& cfg) {
    return search_blocks(reference, current, cfg).mvs;
}

FramePlane motion_compensate(const FramePlane& reference, const MvGrid& mv) {
    if (mv.block_size <= 0 || mv.blocks_x != ceil_div(reference.width, mv.block_size) ||
        mv.blocks_y != ceil_div(reference.height, mv.block_size) ||
        mv.vectors.size() != static_cast<std::size_t>(mv.blocks_x) * mv.blocks_y) {
        throw std::invalid_argument("motion_compensate: " + std::to_string(mv.blocks_x) + "x" +
                                    std::to_string(mv.blocks_y) + " grid of " + std::to_string(mv.block_size) +
                                    "-pixel blocks does not tile a " + std::to_string(reference.width) + "x" +
                                    std::to_string(reference.height) + " frame");
    }
    FramePlane pred(reference.width, reference.height);
    for (int y = 0; y < reference.height; ++y) {
        for (int x = 0; x < reference.width; ++x) {
            const MotionVector& v = mv.at(y / mv.block_size, x / mv.block_size);
            pred.at(y, x) = reference.clamped(y + v.dy, x + v.dx);
        }
    }
    return pred;
}

ResidualPlane compute_residual(const FramePlane& current, const FramePlane& prediction, int quant) {
    require_same_size(current, prediction, "compute_residual");
    if (quant < 1) throw std::invalid_argument("compute_residual: quant must be >= 1");
    ResidualPlane res(current.width, current.height, quant);
    for (std::size_t i = 0; i < current.samples.size(); ++i) {
        res.values[i] = round_half_away(int{current.samples[i]} - int{prediction.samples[i]}, quant);
    }
    return res;
}

FramePlane reconstruct(const FramePlane& prediction, const ResidualPlane& residual) {
    if (prediction.width != residual.width || prediction.height != residual.height) {
        throw std::invalid_argument("reconstruct: residual plane does not match prediction dimensions");
    }
    FramePlane out(prediction.width, prediction.height);
    for (std::size_t i = 0; i < prediction.samples.size(); ++i) {
        out.samples[i] = static_cast<std::uint8_t>(std::clamp(int{prediction.samples[i]} + residual.reconstructed(i), 0, 255));
    }
    return out;
}

std::vector<std::uint8_t> rle0_encode(std::span<const std::int16_t> values) {
    ByteWriter w;
    std::size_t i = 0;
    while (i < values.size()) {
        if (values[i] == 0) {
            std::size_t run = 0;
            while (i + run < values.size() && values[i + run] == 0 && run < 255) ++run;
            w.u8(kTokenZeros);
            w.u8(static_cast<std::uint8_t>(run));
            i += run;
        } else {
            std::size_t n = 0;
            while (i + n < values.size() && values[i + n] != 0 && n < 65535) ++n;
            w.u8(kTokenLiteral);
            w.u16(static_cast<std::uint16_t>(n));
            for (std::size_t k = 0; k < n; ++k) w.i16(values[i + k]);
            i += n;
        }
    }
    return w.take();
}

std::vector<std::int16_t> rle0_decode(std::span<const std::uint8_t> bytes) {
    ByteReader in(bytes, "rle0");
    std::vector<std::int16_t> out;
    while (!in.at_end()) rle0_token(in, out, std::numeric_limits<std::size_t>::max());
    return out;
}

EncodedSequence encode_sequence_detailed(std::span<const FramePlane> frames, const CodecConfig& cfg) {
    cfg.validate();
    if (frames.empty()) throw std::invalid_argument("encode_sequence: no frames");
    const int W = frames[0].width, H = frames[0].height;
    if (W < cfg.block_size || H < cfg.block_size) {
        throw std::invalid_argument("encode_sequence: frame " + std::to_string(W) + "x" + std::to_string(H) +
                                    " is smaller than block size " + std::to_string(cfg.block_size));
    }
    if (W > 65535 || H > 65535) throw std::invalid_argument("encode_sequence: frame dimensions exceed 65535");
    for (std::size_t t = 1; t < frames.size(); ++t) {
        if (frames[t].width != W || frames[t].height != H) {
            throw std::invalid_argument("encode_sequence: frame " + std::to_string(t) + " is " +
                                        std::to_string(frames[t].width) + "x" + std::to_string(frames[t].height) +
                                        ", expected " + std::to_string(W) + "x" + std::to_string(H));
        }
    }

    EncodedSequence enc;
    ByteWriter w;
    w.tag(kMagic);
    w.u16(static_cast<std::uint16_t>(W));
    w.u16(static_cast<std::uint16_t>(H));
    w.u8(static_cast<std::uint8_t>(cfg.block_size));
    w.u8(static_cast<std::uint8_t>(cfg.search_radius));
    w.u8(static_cast<std::uint8_t>(cfg.quant));
    w.u8(cfg.rle ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(frames.size()));

    w.bytes(frames[0].samples);
    enc.reconstructed.push_back(frames[0]);
    enc.mvs.emplace_back(W, H, cfg.block_size);
    enc.residuals.emplace_back(W, H, cfg.quant);

    for (std::size_t t = 1; t < frames.size(); ++t) {
        const FramePlane& ref = enc.reconstructed.back();
        MvGrid mv = block_match_full(ref, frames[t], cfg);
        FramePlane pred = motion_compensate(ref, mv);
        ResidualPlane res = compute_residual(frames[t], pred, cfg.quant);
        for (const MotionVector& v : mv.vectors) {
            w.i8(static_cast<std::int8_t>(v.dy));
            w.i8(static_cast<std::int8_t>(v.dx));
        }
        write_residual(w, res, cfg.rle);
        enc.reconstructed.push_back(reconstruct(pred, res));
        enc.mvs.push_back(std::move(mv));
        enc.residuals.push_back(std::move(res));
    }
    enc.stream.bytes = w.take();
    return enc;
}

CodedStream encode_sequence(std::span<const FramePlane> frames, const CodecConfig& cfg) {
    return encode_sequence_detailed(frames, cfg).stream;
}

DecodedSequence decode_sequence(const CodedStream& stream) {
    ByteReader in(stream.bytes, "CPV1 header");
    in.expect_tag(kMagic);
    DecodedSequence dec;
    dec.width = in.u16();
    dec.height = in.u16();
    const std::size_t cfg_at = in.offset();
    dec.config.block_size = in.u8();
    dec.config.search_radius = in.u8();
    dec.config.quant = in.u8();
    const std::uint8_t flags = in.u8();
    dec.config.rle = (flags & 1u) != 0;
    const std::uint32_t frame_count = in.u32();

    try {
        dec.config.validate();
    } catch (const std::invalid_argument& e) {
        in.fail(e.what(), cfg_at);
    }
    if (flags & ~1u) in.fail("unknown flag bits in 0x" + std::to_string(flags), cfg_at + 3);
    if (dec.width < dec.config.block_size || dec.height < dec.config.block_size) {
        in.fail("frame " + std::to_string(dec.width) + "x" + std::to_string(dec.height) +
                    " smaller than block size",
                4);
    }
    if (frame_count == 0) in.fail("frame count is 0", cfg_at + 4);

    const int W = dec.width, H = dec.height;
    const std::size_t plane = static_cast<std::size_t>(W) * H;

    in.set_context("frame 0 intra payload", 0);
    {
        auto raw = in.bytes(plane);
        dec.frames.emplace_back(W, H, std::vector<std::uint8_t>(raw.begin(), raw.end()));
        dec.mvs.emplace_back(W, H, dec.config.block_size);
        dec.residuals.emplace_back(W, H, dec.config.quant);
    }

    for (std::uint32_t t = 1; t < frame_count; ++t) {
        const int ti = static_cast<int>(t);
        in.set_context("frame " + std::to_string(t) + " motion vectors", ti);
        MvGrid mv(W, H, dec.config.block_size);
        in.need(mv.block_count() * 2);
        for (auto& v : mv.vectors) {
            const std::size_t at = in.offset();
            v.dy = in.i8();
            v.dx = in.i8();
            if (std::abs(v.dy) > dec.config.search_radius || std::abs(v.dx) > dec.config.search_radius) {
                in.fail("vector (" + std::to_string(v.dy) + ", " + std::to_string(v.dx) +
                            ") exceeds declared search radius " + std::to_string(dec.config.search_radius),
                        at);
            }
        }

        in.set_context("frame " + std::to_string(t) + " residual", ti);
        ResidualPlane res(W, H, dec.config.quant);
        if (dec.config.rle) {
            res.values = rle0_read(in, plane);
        } else {
            in.need(plane * 2);
            for (auto& v : res.values) v = in.i16();
        }

        FramePlane pred = motion_compensate(dec.frames.back(), mv);
        dec.frames.push_back(reconstruct(pred, res));
        dec.mvs.push_back(std::move(mv));
        dec.residuals.push_back(std::move(res));
    }

    if (!in.at_end()) {
        in.set_context("CPV1 trailer");
        in.fail(std::to_string(in.remaining()) + " trailing bytes after frame " + std::to_string(frame_count - 1),
                in.offset());
    }
    return dec;
}

}  // namespace cpgd
