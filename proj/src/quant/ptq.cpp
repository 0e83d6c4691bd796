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

#include "kdlab/quant/ptq.hpp"

#include <exception>
#include <numeric>

#include "kdlab/common.hpp"
#include "kdlab/io.hpp"
#include "kdlab/model/transformer.hpp"

namespace kdlab::quant {

namespace {

std::map<std::string, Tensor<float>*> tensors_by_name(model::ModelParams<float>& p) {
    std::map<std::string, Tensor<float>*> out;
    p.visit([&](const std::string& name, Tensor<float>& t) { out[name] = &t; });
    return out;
}

std::string site_tensor_name(model::LinearSite site, std::size_t layer) {
    return "layers." + std::to_string(layer) + "." + model::site_name(site);
}

QuantizedModel assemble(const model::ModelParams<float>& params, const QuantFormat& format,
                        std::map<std::string, QuantizedTensor> tensors) {
    QuantizedModel m{format, params, std::move(tensors)};
    m.params.visit([&](const std::string& name, Tensor<float>& t) {
        const auto it = m.tensors.find(name);
        if (it != m.tensors.end()) {
            t = dequantize(it->second);
        } else {
            for (float& v : t.span()) v = round_to_bf16(v);
        }
    });
    return m;
}

template <typename F>
std::map<std::string, QuantizedTensor> per_tensor(const model::ModelParams<float>& params, F&& quantize) {
    const auto names = quantized_tensor_names(params.config);
    auto copy = params;
    const auto by_name = tensors_by_name(copy);
    std::vector<QuantizedTensor> out(names.size());
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 1)
    for (std::size_t i = 0; i < names.size(); ++i) {
        try {
            out[i] = quantize(names[i], *by_name.at(names[i]));
        } catch (...) {
#pragma omp critical
            if (!failure) failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);
    std::map<std::string, QuantizedTensor> result;
    for (std::size_t i = 0; i < names.size(); ++i) result.emplace(names[i], std::move(out[i]));
    return result;
}

}  // namespace

std::vector<std::string> quantized_tensor_names(const model::ModelConfig& config) {
    std::vector<std::string> names;
    for (std::size_t l = 0; l < config.layers; ++l) {
        for (auto site : {model::LinearSite::qkv, model::LinearSite::attn_out, model::LinearSite::up,
                          model::LinearSite::down}) {
            names.push_back(site_tensor_name(site, l));
        }
    }
    return names;
}

HessianMap calibration_hessians(const model::ModelParams<float>& params,
                                std::span<const logitstore::TokenChunk> chunks, double damping) {
    if (chunks.empty()) {
        throw Error("calibration_hessians: empty calibration set");
    }
    std::map<std::string, HessianAccumulator> acc;
    model::ForwardHooks<float> hooks;
    hooks.capture = [&](const numerics::Tape<float>& tape, numerics::Var x, model::LinearSite site,
                        std::size_t layer) {
        const auto& v = tape.value(x);
        auto [it, fresh] = acc.try_emplace(site_tensor_name(site, layer), v.cols());
        it->second.add(v);
    };
    for (const auto& chunk : chunks) {
        numerics::Tape<float> tape;
        const auto vars = model::bind_params(tape, params, false);
        model::forward(tape, vars, params.config, model::pack_input(chunk.tokens, chunk.doc_boundaries),
                       &hooks);
    }
    HessianMap out;
    for (const auto& [name, a] : acc) out.emplace(name, a.finalize(damping));
    return out;
}

QuantizedModel quantize_model_rtn(const model::ModelParams<float>& params, const QuantFormat& format) {
    return assemble(params, format, per_tensor(params, [&](const std::string&, const Tensor<float>& w) {
                        return quantize_rtn(w, format);
                    }));
}

QuantizedModel quantize_model_gptq(const model::ModelParams<float>& params, const QuantFormat& format,
                                   const HessianMap& hessians) {
    return assemble(params, format, per_tensor(params, [&](const std::string& name, const Tensor<float>& w) {
                        const auto it = hessians.find(name);
                        if (it == hessians.end()) {
                            throw Error("gptq: no calibration Hessian for " + name);
                        }
                        return gptq(w, it->second, format);
                    }));
}

std::uint64_t model_storage_bytes(const QuantizedModel& m) {
    std::uint64_t bytes = 0;
    m.params.visit([&](const std::string& name, const Tensor<float>& t) {
        const auto it = m.tensors.find(name);
        bytes += it == m.tensors.end() ? 2 * t.size() : storage_bytes(it->second);
    });
    return bytes;
}

std::uint64_t dense_storage_bytes(const model::ModelParams<float>& params) {
    return 2 * params.element_count();
}

void save_quantized(const std::filesystem::path& path, const QuantizedModel& m, const nlohmann::json& meta) {
    const QuantFormat& f = m.format;
    nlohmann::json table = nlohmann::json::array();
    io::ByteWriter body;
    m.params.visit([&](const std::string& name, const Tensor<float>& t) {
        const auto it = m.tensors.find(name);
        if (it == m.tensors.end()) {
            table.push_back({{"name", name}, {"shape", t.shape()}, {"quantized", false}});
            for (float v : t.span()) body.put<std::uint16_t>(bf16_bits(v));
            return;
        }
        const QuantizedTensor& q = it->second;
        const auto packed = pack_codes(q.codes, f.code_bits());
        table.push_back({{"name", name},
                         {"shape", t.shape()},
                         {"quantized", true},
                         {"code_bytes", packed.size()},
                         {"scales", q.params.scales.size()},
                         {"offsets", q.params.offsets.size()}});
        body.put_array(std::span<const std::uint8_t>(packed));
        switch (f.kind) {
        case QuantKind::integer:
            for (float s : q.params.scales) body.put<std::uint16_t>(fp16_bits(s));
            for (float o : q.params.offsets) body.put<std::uint16_t>(fp16_bits(o));
            break;
        case QuantKind::fp8_e4m3:
            body.put_array(std::span<const float>(q.params.scales));
            break;
        case QuantKind::nvfp4:
            for (float s : q.params.scales) body.put<std::uint8_t>(e4m3::encode(s));
            body.put<float>(q.params.global_scale);
            break;
        case QuantKind::bf16:
            break;
        }
    });
    nlohmann::json header{{"config", m.params.config},
                          {"meta", meta},
                          {"format", format_name(f)},
                          {"clip_ratio", f.clip_ratio},
                          {"tensors", table}};
    const std::string text = header.dump();
    io::ByteWriter w;
    w.put_magic("KDFC");
    w.put<std::uint32_t>(kQuantCheckpointVersion);
    w.put<std::uint64_t>(text.size());
    w.put_bytes(text.data(), text.size());
    w.put_bytes(body.bytes().data(), body.bytes().size());
    io::write_file(path, w.bytes());
}

QuantizedModel load_quantized(const std::filesystem::path& path, nlohmann::json* meta) {
    const auto bytes = io::read_file(path);
    const std::string ctx = path.string();
    io::ByteReader r(bytes, ctx);
    r.expect_magic("KDFC");
    const auto version = r.get<std::uint32_t>();
    if (version != kQuantCheckpointVersion) {
        throw IoError(ctx + ": not a quantized checkpoint (version " + std::to_string(version) + ")");
    }
    std::string text(r.get<std::uint64_t>(), '\0');
    r.get_bytes(text.data(), text.size());
    const auto header = nlohmann::json::parse(text);
    QuantizedModel m;
    m.format = parse_format(header.at("format").get<std::string>());
    m.format.clip_ratio = header.value("clip_ratio", 1.0);
    m.params = model::allocate_params<float>(header.at("config").get<model::ModelConfig>());
    if (meta) *meta = header.value("meta", nlohmann::json::object());
    const auto& table = header.at("tensors");
    std::size_t idx = 0;
    m.params.visit([&](const std::string& name, Tensor<float>& t) {
        if (idx >= table.size() || table[idx].at("name") != name ||
            table[idx].at("shape").get<numerics::Shape>() != t.shape()) {
            throw IoError(ctx + ": tensor table does not match config at '" + name + "'");
        }
        const auto& e = table[idx++];
        if (!e.at("quantized").get<bool>()) {
            for (float& v : t.span()) v = bf16_from_bits(r.get<std::uint16_t>());
            return;
        }
        const auto packed = r.get_array<std::uint8_t>(e.at("code_bytes").get<std::size_t>());
        const std::size_t ns = e.at("scales").get<std::size_t>(), no = e.at("offsets").get<std::size_t>();
        std::vector<float> scales, offsets;
        float global = 1.0f;
        switch (m.format.kind) {
        case QuantKind::integer:
            for (std::size_t i = 0; i < ns; ++i) scales.push_back(static_cast<float>(fp16_from_bits(r.get<std::uint16_t>())));
            for (std::size_t i = 0; i < no; ++i) offsets.push_back(static_cast<float>(fp16_from_bits(r.get<std::uint16_t>())));
            break;
        case QuantKind::fp8_e4m3:
            scales = r.get_array<float>(ns);
            break;
        case QuantKind::nvfp4:
            for (std::size_t i = 0; i < ns; ++i) scales.push_back(e4m3::decode(r.get<std::uint8_t>()));
            global = r.get<float>();
            break;
        case QuantKind::bf16:
            break;
        }
        QuantizedTensor q{QuantParams::from_parts(m.format, t.rows(), t.cols(), std::move(scales),
                                                  std::move(offsets), global),
                          unpack_codes(packed, m.format.code_bits(), t.size())};
        t = dequantize(q);
        m.tensors.emplace(name, std::move(q));
    });
    if (r.remaining() != 0) {
        throw IoError(ctx + ": " + std::to_string(r.remaining()) + " trailing bytes");
    }
    return m;
}

std::uint64_t quantized_payload_bytes(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    io::ByteReader r(bytes, path.string());
    r.expect_magic("KDFC");
    if (r.get<std::uint32_t>() != kQuantCheckpointVersion) {
        throw IoError(path.string() + ": not a quantized checkpoint");
    }
    const auto header = r.get<std::uint64_t>();
    if (header > r.remaining()) {
        throw IoError(path.string() + ": truncated header");
    }
    return r.remaining() - header;
}

double recovery(std::span<const double> baseline, std::span<const double> quant) {
    if (baseline.size() != quant.size() || baseline.empty()) {
        throw Error("recovery: score lists differ in length or are empty");
    }
    const double b = std::accumulate(baseline.begin(), baseline.end(), 0.0) / static_cast<double>(baseline.size());
    const double q = std::accumulate(quant.begin(), quant.end(), 0.0) / static_cast<double>(quant.size());
    if (b == 0.0) {
        throw Error("recovery: baseline mean is zero");
    }
    return 100.0 * q / b;
}

}  // namespace kdlab::quant
