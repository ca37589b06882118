#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "jetlab/errors.hpp"
#include "jetlab/hash.hpp"

namespace jetlab {

/// Shortest round-trip decimal form; keeps CSV artifacts byte-stable.
inline std::string double_str(double v) {
    char buf[32];
    auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out << text;
    if (!out) throw DataError("write failed: " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
    try {
        return nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

/// CSV with a `# config_hash=` comment line so merges can detect mixed runs.
class CsvWriter {
public:
    CsvWriter(std::string config_hash, std::vector<std::string> columns)
        : columns_(std::move(columns)) {
        text_ += "# config_hash=" + config_hash + "\n";
        for (std::size_t i = 0; i < columns_.size(); ++i) {
            if (i) text_ += ',';
            text_ += columns_[i];
        }
        text_ += '\n';
    }

    void row(const std::vector<std::string>& cells) {
        if (cells.size() != columns_.size()) throw ContractError("CsvWriter: column count mismatch");
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) text_ += ',';
            text_ += cells[i];
        }
        text_ += '\n';
    }

    void save(const std::filesystem::path& path) const { write_text_file(path, text_); }
    const std::string& text() const { return text_; }

private:
    std::vector<std::string> columns_;
    std::string text_;
};

inline std::string csv_config_hash(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open: " + path.string());
    std::string line;
    std::getline(in, line);
    const std::string prefix = "# config_hash=";
    if (line.rfind(prefix, 0) != 0) return "";
    return line.substr(prefix.size());
}

inline constexpr char kVectorMagic[9] = "JLVEC001";

/// Raw little-endian double vector with a small magic header (eigenvectors).
inline void save_vector(const std::filesystem::path& path, const std::vector<double>& v) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out.write(kVectorMagic, 8);
    const std::uint64_t n = v.size();
    out.write(reinterpret_cast<const char*>(&n), sizeof(n));
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!out) throw DataError("write failed: " + path.string());
}

inline std::vector<double> load_vector(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::string(magic, 8) != std::string(kVectorMagic, 8))
        throw DataError("not a jetlab vector file: " + path.string());
    std::uint64_t n = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof(n));
    std::vector<double> v(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw DataError("truncated vector file: " + path.string());
    return v;
}

} // namespace jetlab
