#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "veli4sbr/model.hpp"

namespace veli4sbr {

inline constexpr char kCheckpointMagic[8] = {'V', 'L', '4', 'S', 'B', 'R', 'C', '1'};

/// Layout: 8-byte magic, uint64 header length, JSON header, then every
/// tensor as row-major float32 in header order.
template <SessionEncoder Encoder>
void save_checkpoint(const std::string& path, const ModelState<Encoder>& state, const std::string& pool_hash,
                     const std::string& run_config) {
    auto s = state;
    nlohmann::ordered_json header;
    header["format"] = 1;
    header["pool_hash"] = pool_hash;
    header["config"] = run_config;
    header["d"] = s.d;
    header["tau"] = s.tau;
    header["dropout_rate"] = s.dropout_rate;
    header["ln_eps"] = s.ln_eps;
    header["use_fusion"] = s.use_fusion;
    auto tensors = nlohmann::ordered_json::array();
    for (auto& [name, m] : s.tensors()) tensors.push_back({{"name", name}, {"rows", m->rows()}, {"cols", m->cols()}});
    header["tensors"] = tensors;
    const auto text = header.dump();

    std::string blob(kCheckpointMagic, sizeof kCheckpointMagic);
    const std::uint64_t len = text.size();
    blob.append(reinterpret_cast<const char*>(&len), sizeof len);
    blob += text;
    for (auto& [name, m] : s.tensors())
        for (Eigen::Index r = 0; r < m->rows(); ++r)
            for (Eigen::Index c = 0; c < m->cols(); ++c) {
                const auto f = static_cast<float>((*m)(r, c));
                blob.append(reinterpret_cast<const char*>(&f), sizeof f);
            }
    util::write_file(path, blob);
}

template <SessionEncoder Encoder>
struct LoadedCheckpoint {
    ModelState<Encoder> state;
    std::string pool_hash;
    std::string run_config;
};

/// Refuses to load when `expected_pool_hash` is non-empty and differs from the stored one.
template <SessionEncoder Encoder = GruEncoder>
LoadedCheckpoint<Encoder> load_checkpoint(const std::string& path, const std::string& expected_pool_hash) {
    const auto blob = util::read_file(path);
    if (blob.size() < 16 || std::memcmp(blob.data(), kCheckpointMagic, 8) != 0)
        throw DataError(path + ": not a checkpoint file");
    std::uint64_t len = 0;
    std::memcpy(&len, blob.data() + 8, sizeof len);
    if (16 + len > blob.size()) throw DataError(path + ": truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(blob.substr(16, len));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": bad header: " + e.what());
    }
    LoadedCheckpoint<Encoder> out;
    out.pool_hash = header.at("pool_hash").get<std::string>();
    out.run_config = header.at("config").get<std::string>();
    if (!expected_pool_hash.empty() && expected_pool_hash != out.pool_hash)
        throw DataError("checkpoint was trained against a different intent pool (hash " + out.pool_hash + ", current " +
                        expected_pool_hash + ")");

    auto& s = out.state;
    s.d = header.at("d").get<std::size_t>();
    s.tau = header.at("tau").get<double>();
    s.dropout_rate = header.at("dropout_rate").get<double>();
    s.ln_eps = header.at("ln_eps").get<double>();
    s.use_fusion = header.at("use_fusion").get<bool>();
    auto list = s.tensors();
    const auto& specs = header.at("tensors");
    if (specs.size() != list.size()) throw DataError(path + ": tensor count mismatch");
    std::size_t off = 16 + len;
    for (std::size_t i = 0; i < list.size(); ++i) {
        const auto& t = specs[i];
        if (t.at("name").get<std::string>() != list[i].first)
            throw DataError(path + ": unexpected tensor " + t.at("name").get<std::string>());
        const auto rows = t.at("rows").get<Eigen::Index>(), cols = t.at("cols").get<Eigen::Index>();
        const auto bytes = static_cast<std::size_t>(rows * cols) * sizeof(float);
        if (off + bytes > blob.size()) throw DataError(path + ": truncated tensor data");
        Mat& m = *list[i].second;
        m.resize(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c) {
                float f;
                std::memcpy(&f, blob.data() + off, sizeof f);
                off += sizeof f;
                m(r, c) = f;
            }
    }
    if (off != blob.size()) throw DataError(path + ": trailing bytes");
    return out;
}

}  // namespace veli4sbr
