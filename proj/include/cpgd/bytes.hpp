#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cpgd {

// Malformed binary data. `offset` is the byte position where parsing failed.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::size_t offset, int frame = -1)
        : std::runtime_error(what), offset_(offset), frame_(frame) {}
    std::size_t offset() const noexcept { return offset_; }
    // Frame index the error belongs to, or -1 when not frame-specific.
    int frame() const noexcept { return frame_; }

private:
    std::size_t offset_;
    int frame_;
};

// Little-endian append-only buffer.
class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void i8(std::int8_t v) { buf_.push_back(static_cast<std::uint8_t>(v)); }
    void u16(std::uint16_t v) { put(v); }
    void i16(std::int16_t v) { put(static_cast<std::uint16_t>(v)); }
    void u32(std::uint32_t v) { put(v); }
    void u64(std::uint64_t v) { put(v); }
    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        put(bits);
    }
    void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
    void tag(const char (&magic)[5]) { buf_.insert(buf_.end(), magic, magic + 4); }

    std::size_t size() const noexcept { return buf_.size(); }
    std::vector<std::uint8_t>& buffer() noexcept { return buf_; }
    std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
    template <typename U>
    void put(U v) {
        for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    std::vector<std::uint8_t> buf_;
};

// Little-endian cursor. Short reads throw FormatError at the current offset,
// with `context` prefixed to the message.
class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> data, std::string context = {})
        : data_(data), context_(std::move(context)) {}

    void set_context(std::string context, int frame = -1) {
        context_ = std::move(context);
        frame_ = frame;
    }

    std::size_t offset() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return data_.size() - pos_; }
    bool at_end() const noexcept { return pos_ == data_.size(); }

    void need(std::size_t n) const {
        if (remaining() < n) {
            throw FormatError(prefix() + "truncated: need " + std::to_string(n) + " bytes, " +
                                  std::to_string(remaining()) + " available (missing " +
                                  std::to_string(n - remaining()) + ")",
                              pos_, frame_);
        }
    }

    std::uint8_t u8() { return static_cast<std::uint8_t>(get<std::uint8_t>()); }
    std::int8_t i8() { return static_cast<std::int8_t>(get<std::uint8_t>()); }
    std::uint16_t u16() { return get<std::uint16_t>(); }
    std::int16_t i16() { return static_cast<std::int16_t>(get<std::uint16_t>()); }
    std::uint32_t u32() { return get<std::uint32_t>(); }
    std::uint64_t u64() { return get<std::uint64_t>(); }
    float f32() {
        const std::uint32_t bits = get<std::uint32_t>();
        float v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }
    std::span<const std::uint8_t> bytes(std::size_t n) {
        need(n);
        auto s = data_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    // Reads four bytes and compares them to `magic`; mismatch throws at the tag offset.
    void expect_tag(const char (&magic)[5]) {
        const std::size_t at = pos_;
        need(4);
        if (std::memcmp(data_.data() + pos_, magic, 4) != 0) {
            std::string got(reinterpret_cast<const char*>(data_.data() + pos_), 4);
            throw FormatError(prefix() + "bad magic \"" + printable(got) + "\", expected \"" + magic + "\"", at,
                              frame_);
        }
        pos_ += 4;
    }

    [[noreturn]] void fail(const std::string& msg, std::size_t at) const {
        throw FormatError(prefix() + msg, at, frame_);
    }

private:
    template <typename U>
    U get() {
        need(sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(data_[pos_ + i]) << (8 * i));
        pos_ += sizeof(U);
        return v;
    }
    std::string prefix() const { return context_.empty() ? std::string{} : context_ + ": "; }
    static std::string printable(std::string s) {
        for (char& c : s) {
            if (static_cast<unsigned char>(c) < 0x20 || static_cast<unsigned char>(c) > 0x7e) c = '?';
        }
        return s;
    }

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
    std::string context_;
    int frame_ = -1;
};

}  // namespace cpgd
