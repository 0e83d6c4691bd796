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

#include "kdlab/model/checkpoint.hpp"

#include "kdlab/io.hpp"

namespace kdlab::model {

namespace {

nlohmann::json tensor_table(const ModelParams<float>& params) {
    nlohmann::json table = nlohmann::json::array();
    params.visit([&](const std::string& name, const Tensor<float>& t) {
        table.push_back({{"name", name}, {"shape", t.shape()}});
    });
    return table;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ModelParams<float>& params,
                                            const nlohmann::json& meta,
                                            std::span<const Tensor<float>> extra) {
    nlohmann::json header;
    header["config"] = params.config;
    header["meta"] = meta;
    header["tensors"] = tensor_table(params);
    nlohmann::json extra_shapes = nlohmann::json::array();
    for (const auto& t : extra) {
        extra_shapes.push_back(t.shape());
    }
    header["extra"] = extra_shapes;
    const std::string text = header.dump();

    io::ByteWriter w;
    w.put_magic("KDFC");
    w.put<std::uint32_t>(kCheckpointVersion);
    w.put<std::uint64_t>(text.size());
    w.put_bytes(text.data(), text.size());
    params.visit([&](const std::string&, const Tensor<float>& t) { w.put_array(t.span()); });
    for (const auto& t : extra) {
        w.put_array(t.span());
    }
    return std::move(w.bytes());
}

namespace {

nlohmann::json read_header(io::ByteReader& r) {
    r.expect_magic("KDFC");
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw IoError(r.context() + ": unsupported checkpoint version " + std::to_string(version));
    }
    const auto len = r.get<std::uint64_t>();
    std::string text(len, '\0');
    r.get_bytes(text.data(), len);
    return nlohmann::json::parse(text);
}

}  // namespace

CheckpointFile decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& context) {
    io::ByteReader r(bytes, context);
    const nlohmann::json header = read_header(r);
    CheckpointFile out;
    out.params = allocate_params<float>(header.at("config").get<ModelConfig>());
    out.meta = header.value("meta", nlohmann::json::object());
    const auto& table = header.at("tensors");
    std::size_t idx = 0;
    out.params.visit([&](const std::string& name, Tensor<float>& t) {
        if (idx >= table.size() || table[idx].at("name").get<std::string>() != name ||
            table[idx].at("shape").get<numerics::Shape>() != t.shape()) {
            throw IoError(context + ": tensor table does not match config at '" + name + "'");
        }
        ++idx;
        r.get_bytes(t.data(), t.size() * sizeof(float));
    });
    for (const auto& shape : header.value("extra", nlohmann::json::array())) {
        Tensor<float> t(shape.get<numerics::Shape>());
        r.get_bytes(t.data(), t.size() * sizeof(float));
        out.extra.push_back(std::move(t));
    }
    if (r.remaining() != 0) {
        throw IoError(context + ": " + std::to_string(r.remaining()) + " trailing bytes");
    }
    return out;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params,
                     const nlohmann::json& meta, std::span<const Tensor<float>> extra) {
    io::write_file(path, encode_checkpoint(params, meta, extra));
}

CheckpointFile load_checkpoint(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    return decode_checkpoint(bytes, path.string());
}

nlohmann::json read_checkpoint_header(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    io::ByteReader r(bytes, path.string());
    return read_header(r);
}

}  // namespace kdlab::model
