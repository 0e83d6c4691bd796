// Copyright 2026 The kdlab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kdlab/common.hpp"

namespace kdlab::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian and written from native memory");

/// Append-only little-endian byte buffer.
class ByteWriter {
public:
    void put_bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        buf_.insert(buf_.end(), p, p + n);
    }
    void put_magic(std::string_view magic) { put_bytes(magic.data(), magic.size()); }
    template <typename U>
    void put(U v) {
        static_assert(std::is_trivially_copyable_v<U>);
        put_bytes(&v, sizeof(U));
    }
    template <typename U>
    void put_array(std::span<const U> values) {
        put_bytes(values.data(), values.size_bytes());
    }

    const std::vector<std::uint8_t>& bytes() const { return buf_; }
    std::vector<std::uint8_t>& bytes() { return buf_; }
    std::size_t size() const { return buf_.size(); }

private:
    std::vector<std::uint8_t> buf_;
};

/// Bounds-checked reader over a byte buffer.
class ByteReader {
public:
    ByteReader(std::span<const std::uint8_t> data, std::string context)
        : data_(data), context_(std::move(context)) {}

    void get_bytes(void* out, std::size_t n) {
        if (pos_ + n > data_.size()) {
            throw IoError(context_ + ": truncated (need " + std::to_string(n) + " bytes at offset " +
                          std::to_string(pos_) + ", have " + std::to_string(data_.size() - pos_) +
                          ")");
        }
        std::memcpy(out, data_.data() + pos_, n);
        pos_ += n;
    }
    void expect_magic(std::string_view magic) {
        std::string got(magic.size(), '\0');
        get_bytes(got.data(), got.size());
        if (got != magic) {
            throw IoError(context_ + ": bad magic, expected '" + std::string(magic) + "'");
        }
    }
    template <typename U>
    U get() {
        U v;
        get_bytes(&v, sizeof(U));
        return v;
    }
    template <typename U>
    std::vector<U> get_array(std::size_t count) {
        std::vector<U> v(count);
        get_bytes(v.data(), count * sizeof(U));
        return v;
    }

    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }
    const std::string& context() const { return context_; }

private:
    std::span<const std::uint8_t> data_;
    std::string context_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

/// Writes to a sibling temporary and renames into place.
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

/// One gzip member (RFC 1952) with a zeroed header timestamp, so output is a
/// pure function of the input and level.
std::vector<std::uint8_t> gzip_compress(std::span<const std::uint8_t> bytes, int level = 6);

/// Inflates exactly one gzip member; the trailer CRC and length are checked.
/// Throws IoError mentioning `context` on corrupt or truncated input.
std::vector<std::uint8_t> gzip_decompress(std::span<const std::uint8_t> bytes,
                                          const std::string& context);

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

}  // namespace kdlab::io
