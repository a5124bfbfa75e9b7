#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "voldiff/errors.hpp"
#include "voldiff/volume.hpp"

namespace voldiff {

// VVOL: one UTF-8 JSON header line, a newline, then D*H*W IEEE-754 float32
// little-endian values, x-fastest.
inline void write_vvol(const Volume& v, const std::string& path) {
    nlohmann::ordered_json header;
    header["magic"] = "VVOL1";
    header["shape"] = {v.shape.d, v.shape.h, v.shape.w};
    header["spacing"] = {v.spacing.z, v.spacing.y, v.spacing.x};
    header["window"] = {{"level", v.window.level}, {"width", v.window.width}};
    header["region"] = region_name(v.region);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open for writing: " + path);
    out << header.dump() << '\n';

    std::vector<float> buf(v.data.size());
    for (size_t i = 0; i < v.data.size(); ++i) buf[i] = static_cast<float>(v.data[i]);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!out) throw FormatError("short write: " + path);
}

inline Volume read_vvol(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open: " + path);

    std::string line;
    if (!std::getline(in, line)) throw FormatError("missing VVOL header: " + path);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bad VVOL header in " + path + ": " + e.what());
    }
    if (header.value("magic", "") != std::string("VVOL1"))
        throw FormatError("bad VVOL magic in " + path);

    Volume v;
    try {
        const auto& sh = header.at("shape");
        v.shape = {sh.at(0).get<int64_t>(), sh.at(1).get<int64_t>(), sh.at(2).get<int64_t>()};
        const auto& sp = header.at("spacing");
        v.spacing = {sp.at(0).get<double>(), sp.at(1).get<double>(), sp.at(2).get<double>()};
        v.window = {header.at("window").at("level").get<double>(), header.at("window").at("width").get<double>()};
        v.region = region_from_name(header.at("region").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("incomplete VVOL header in " + path + ": " + e.what());
    }
    if (v.shape.d < 1 || v.shape.h < 1 || v.shape.w < 1 || !(v.spacing.z > 0) || !(v.spacing.y > 0) ||
        !(v.spacing.x > 0) || !(v.window.width > 0))
        throw FormatError("invalid VVOL header fields in " + path);

    const size_t n = static_cast<size_t>(v.shape.voxels());
    std::vector<float> buf(n);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (static_cast<size_t>(in.gcount()) != n * sizeof(float))
        throw FormatError("truncated VVOL payload in " + path);

    v.data.resize(n);
    for (size_t i = 0; i < n; ++i) v.data[i] = static_cast<double>(buf[i]);
    return v;
}

}  // namespace voldiff
