#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "jetlab/model.hpp"
#include "jetlab/params.hpp"

namespace jetlab {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

inline constexpr char kCheckpointMagic[9] = "JLCKPT01";

/// Binary checkpoint: magic, JSON header (schema tag, model config, layout
/// table), then the raw double-precision parameter array.
inline void save_checkpoint(const std::filesystem::path& path, const ParamVector& w,
                            const ModelConfig& mc) {
    nlohmann::json header;
    header["schema"] = "jetlab-checkpoint-v1";
    header["model"] = mc.to_json();
    nlohmann::json layout = nlohmann::json::array();
    for (const auto& e : w.layout->entries)
        layout.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", e.offset}});
    header["layout"] = layout;
    const std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out.write(kCheckpointMagic, 8);
    const std::uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    const std::uint64_t n = w.values.size();
    out.write(reinterpret_cast<const char*>(&n), sizeof(n));
    out.write(reinterpret_cast<const char*>(w.values.data()),
              static_cast<std::streamsize>(n * sizeof(double)));
    if (!out) throw DataError("write failed: " + path.string());
}

struct Checkpoint {
    ParamVector params;
    ModelConfig model;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw DataError("not a jetlab checkpoint: " + path.string());
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    nlohmann::json header = nlohmann::json::parse(hs);
    if (header.value("schema", "") != std::string("jetlab-checkpoint-v1"))
        throw DataError("unsupported checkpoint schema in " + path.string());

    Checkpoint ck;
    ck.model = ModelConfig::from_json(header.at("model"));
    ck.params = ParamVector(make_layout(ck.model));
    std::uint64_t n = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof(n));
    if (static_cast<long>(n) != ck.params.size())
        throw DataError("checkpoint parameter count does not match its config: " + path.string());
    in.read(reinterpret_cast<char*>(ck.params.values.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw DataError("truncated checkpoint: " + path.string());

    // layout table is informative; verify it matches the config-derived layout
    const auto& tbl = header.at("layout");
    if (tbl.size() != ck.params.layout->entries.size())
        throw DataError("checkpoint layout table mismatch: " + path.string());
    for (std::size_t i = 0; i < tbl.size(); ++i)
        if (tbl[i].at("name").get<std::string>() != ck.params.layout->entries[i].name)
            throw DataError("checkpoint layout entry mismatch: " + path.string());
    return ck;
}

} // namespace jetlab
