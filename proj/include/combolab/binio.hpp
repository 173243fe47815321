#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "combolab/error.hpp"

namespace combolab {

// Little-endian binary reader/writer used by the dataset and checkpoint
// formats. Byte order is explicit so files are portable across hosts.

class BinWriter {
public:
    explicit BinWriter(const std::string& path)
        : out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) throw Error("cannot open " + path + " for writing");
        path_ = path;
    }

    void magic(const char (&m)[5]) { out_.write(m, 4); }

    void u32(std::uint32_t v) {
        char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
        out_.write(b, 4);
    }

    void u64(std::uint64_t v) {
        char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
        out_.write(b, 8);
    }

    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

    void f64s(const std::vector<double>& vs) {
        for (double v : vs) f64(v);
    }

    void str(const std::string& s) {
        u64(s.size());
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }

    void close() {
        out_.close();
        if (!out_) throw Error("failed writing " + path_);
    }

private:
    std::ofstream out_;
    std::string path_;
};

class BinReader {
public:
    explicit BinReader(const std::string& path) : in_(path, std::ios::binary) {
        if (!in_) throw Error("cannot open " + path);
    }

    std::size_t offset() const { return offset_; }

    void expect_magic(const char (&m)[5]) {
        char b[4];
        take(b, 4, "magic bytes");
        if (std::memcmp(b, m, 4) != 0)
            throw FormatError(std::string("bad magic, expected '") + m + "'",
                              offset_ - 4);
    }

    std::uint32_t u32() {
        unsigned char b[4];
        take(reinterpret_cast<char*>(b), 4, "u32");
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
        return v;
    }

    std::uint64_t u64() {
        unsigned char b[8];
        take(reinterpret_cast<char*>(b), 8, "u64");
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
        return v;
    }

    double f64() { return std::bit_cast<double>(u64()); }

    std::vector<double> f64s(std::size_t n) {
        std::vector<double> vs(n);
        for (double& v : vs) v = f64();
        return vs;
    }

    std::string str(std::size_t max_len = 1 << 20) {
        std::uint64_t n = u64();
        if (n > max_len)
            throw FormatError("string length " + std::to_string(n) +
                              " exceeds limit", offset_ - 8);
        std::string s(n, '\0');
        take(s.data(), n, "string payload");
        return s;
    }

    void expect_eof() {
        char c;
        if (in_.read(&c, 1))
            throw FormatError("trailing bytes after payload", offset_);
    }

private:
    void take(char* dst, std::size_t n, const char* what) {
        in_.read(dst, static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n)
            throw FormatError(std::string("truncated while reading ") + what, offset_);
        offset_ += n;
    }

    std::ifstream in_;
    std::size_t offset_ = 0;
};

}  // namespace combolab
