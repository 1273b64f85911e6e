#pragma once

// manifest.json bookkeeping: one per output directory, updated by every stage
// that writes into it. Records the command, config echo, seeds and SHA-256 of
// each produced file.

#include <json.hpp>
#include <openssl/evp.h>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace headforge::cli {

inline std::string sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot hash " + path);
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) throw std::runtime_error("sha256 init failed");
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return os.str();
}

inline std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

inline constexpr const char* kToolVersion = "0.1.0";

struct StageRecord {
    std::string stage;
    std::vector<std::string> argv;
    std::map<std::string, std::string> config;
    std::map<std::string, std::uint64_t> seeds;
    std::vector<std::string> outputs;  // paths of files written into the directory
    std::vector<std::string> inputs;   // files read (hashed for provenance)
};

// Merges the stage into <dir>/manifest.json, rehashing every listed output.
inline void update_manifest(const std::string& dir, const StageRecord& rec) {
    namespace fs = std::filesystem;
    const auto path = (fs::path(dir) / "manifest.json").string();
    nlohmann::json m;
    if (fs::exists(path)) {
        std::ifstream in(path);
        m = nlohmann::json::parse(in, nullptr, false);
        if (m.is_discarded()) m = nlohmann::json::object();
    }
    if (!m.contains("created")) m["created"] = utc_now();
    m["tool"] = "headforge";
    m["tool_version"] = kToolVersion;
    m["updated"] = utc_now();
    nlohmann::json st;
    st["argv"] = rec.argv;
    st["config"] = rec.config;
    st["seeds"] = rec.seeds;
    st["timestamp"] = utc_now();
    nlohmann::json ins = nlohmann::json::object();
    for (const auto& f : rec.inputs)
        if (fs::is_regular_file(f)) ins[f] = sha256_file(f);
    st["inputs"] = ins;
    m["stages"][rec.stage] = st;
    for (const auto& f : rec.outputs) {
        const auto name = fs::path(f).filename().string();
        m["files"][name] = {{"sha256", sha256_file(f)}, {"bytes", fs::file_size(f)}, {"stage", rec.stage}};
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << m.dump(2) << '\n';
}

}  // namespace headforge::cli
