#pragma once

/// \file checkpoint.hpp
/// \brief Named 64-bit arrays stored as `<prefix>.bin` (raw little-endian
/// doubles, concatenated) plus `<prefix>.json` (manifest of name, shape and
/// element offset, and a free-form "meta" object).

#include <bit>
#include <cstring>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ciea/errors.hpp"
#include "ciea/tensor.hpp"

namespace ciea {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

/// Random N(0, stddev^2) trainable matrix.
inline Tensor random_param(std::mt19937_64& rng, Shape shape, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> v(shape_size(shape));
    for (double& x : v) x = dist(rng);
    return Tensor::from(std::move(v), std::move(shape), true);
}

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

using ParamList = std::vector<NamedTensor>;

struct ArrayFile {
    ParamList arrays;
    nlohmann::json meta;
};

inline void save_arrays(const std::string& prefix, const ParamList& arrays, const nlohmann::json& meta) {
    nlohmann::json manifest;
    manifest["format"] = "ciea-arrays-v1";
    manifest["meta"] = meta;
    manifest["arrays"] = nlohmann::json::array();
    std::ofstream bin(prefix + ".bin", std::ios::binary);
    if (!bin) throw IoError("cannot write " + prefix + ".bin");
    std::size_t offset = 0;
    for (const auto& a : arrays) {
        manifest["arrays"].push_back({{"name", a.name}, {"shape", a.tensor.shape()}, {"offset", offset}});
        auto v = a.tensor.values();
        bin.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
        offset += v.size();
    }
    if (!bin) throw IoError("short write to " + prefix + ".bin");
    std::ofstream js(prefix + ".json", std::ios::binary);
    if (!js) throw IoError("cannot write " + prefix + ".json");
    js << manifest.dump(2) << '\n';
}

inline ArrayFile load_arrays(const std::string& prefix) {
    std::ifstream js(prefix + ".json", std::ios::binary);
    if (!js) throw IoError("cannot read " + prefix + ".json");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(js);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(prefix + ".json: " + e.what(), 0);
    }
    std::ifstream bin(prefix + ".bin", std::ios::binary | std::ios::ate);
    if (!bin) throw IoError("cannot read " + prefix + ".bin");
    const auto bytes = static_cast<std::size_t>(bin.tellg());
    bin.seekg(0);
    std::vector<double> flat(bytes / sizeof(double));
    bin.read(reinterpret_cast<char*>(flat.data()), static_cast<std::streamsize>(flat.size() * sizeof(double)));

    ArrayFile out;
    out.meta = manifest.value("meta", nlohmann::json::object());
    for (const auto& a : manifest.at("arrays")) {
        Shape shape = a.at("shape").get<Shape>();
        const auto offset = a.at("offset").get<std::size_t>();
        const std::size_t n = shape_size(shape);
        if (offset + n > flat.size()) throw ParseError(prefix + ".bin is shorter than its manifest", 0);
        std::vector<double> v(flat.begin() + static_cast<std::ptrdiff_t>(offset),
                              flat.begin() + static_cast<std::ptrdiff_t>(offset + n));
        out.arrays.push_back({a.at("name").get<std::string>(), Tensor::from(std::move(v), std::move(shape))});
    }
    return out;
}

/// Copies values from `source` into same-named tensors of `target`.
inline void assign_arrays(const ParamList& target, const ParamList& source) {
    for (const auto& t : target) {
        auto it = std::find_if(source.begin(), source.end(), [&](const NamedTensor& s) { return s.name == t.name; });
        if (it == source.end()) throw ContractError("checkpoint lacks array \"" + t.name + "\"");
        if (it->tensor.shape() != t.tensor.shape()) {
            throw DimensionError("checkpoint array \"" + t.name + "\" has shape " + shape_string(it->tensor.shape()) +
                                 ", expected " + shape_string(t.tensor.shape()));
        }
        auto dst = Tensor(t.tensor).mutable_values();
        auto src = it->tensor.values();
        std::copy(src.begin(), src.end(), dst.begin());
    }
}

}  // namespace ciea
