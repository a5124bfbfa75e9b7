#pragma once

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "voldiff/errors.hpp"
#include "voldiff/toy_unet.hpp"

namespace voldiff {

// VDCK1 checkpoint: one JSON header line (magic, kind, layout descriptor,
// schedule parameters, named-array table with element offsets), a newline,
// then the concatenated float32 little-endian arrays.

namespace detail {

inline void write_param_arrays(std::ofstream& out, const ParamSet& params) {
    params.for_each([&](const std::string&, const std::vector<double>& v) {
        std::vector<float> buf(v.size());
        for (size_t i = 0; i < v.size(); ++i) buf[i] = static_cast<float>(v[i]);
        out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    });
}

inline nlohmann::ordered_json array_table(const ParamSet& params, const std::string& prefix, size_t& offset) {
    nlohmann::ordered_json arrays = nlohmann::ordered_json::array();
    params.for_each([&](const std::string& name, const std::vector<double>& v) {
        arrays.push_back({{"name", prefix + name}, {"offset", offset}, {"count", v.size()}});
        offset += v.size();
    });
    return arrays;
}

inline void read_param_arrays(std::ifstream& in, std::streampos data_start, const nlohmann::json& arrays,
                              const std::string& prefix, ParamSet& params, const std::string& path) {
    size_t seen = 0;
    for (const auto& entry : arrays) {
        const std::string full = entry.at("name").get<std::string>();
        if (full.rfind(prefix, 0) != 0) continue;
        const std::string name = full.substr(prefix.size());
        const size_t count = entry.at("count").get<size_t>();
        const size_t offset = entry.at("offset").get<size_t>();
        if (!params.has(name) || params.get(name).size() != count)
            throw FormatError("checkpoint array does not fit the declared layout: " + full);
        in.clear();
        in.seekg(data_start + static_cast<std::streamoff>(offset * sizeof(float)));
        std::vector<float> buf(count);
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count * sizeof(float)));
        if (static_cast<size_t>(in.gcount()) != count * sizeof(float))
            throw FormatError("truncated checkpoint payload: " + path);
        auto& dst = params.get(name);
        for (size_t i = 0; i < count; ++i) dst[i] = static_cast<double>(buf[i]);
        ++seen;
    }
    if (seen != params.names().size())
        throw FormatError("checkpoint is missing parameter arrays: " + path);
}

inline nlohmann::ordered_json model_json(const ToyUNetConfig& cfg) {
    return {{"base_channels", cfg.base_channels},
            {"emb_width", cfg.emb_width},
            {"input_shortcut", "sqrt_one_minus_alpha_bar"}};
}

inline ToyUNetConfig config_from_header(const nlohmann::json& h) {
    ToyUNetConfig cfg;
    cfg.layout = ChannelLayout::from_json(h.at("layout"));
    cfg.base_channels = h.at("model").at("base_channels").get<int>();
    cfg.emb_width = h.at("model").at("emb_width").get<int>();
    cfg.schedule_T = h.at("schedule").at("T").get<int>();
    return cfg;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ToyUNet& net, const NoiseSchedule& schedule) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open for writing: " + path);

    size_t offset = 0;
    nlohmann::ordered_json header;
    header["magic"] = "VDCK1";
    header["version"] = 1;
    header["kind"] = "unet";
    header["layout"] = net.config().layout.to_json();
    header["model"] = detail::model_json(net.config());
    header["schedule"] = {{"kind", "cosine"}, {"T", schedule.T}};
    header["arrays"] = detail::array_table(net.params(), "", offset);
    out << header.dump() << '\n';
    detail::write_param_arrays(out, net.params());
    if (!out) throw FormatError("short write: " + path);
}

struct LoadedCheckpoint {
    std::string kind;
    ToyUNetConfig config;
    NoiseSchedule schedule;
    ParamSet params;          // unet parameters (or the frozen base for adapters)
    ParamSet adapter_params;  // empty unless kind == "control_adapter"
};

namespace detail {

inline nlohmann::json open_checkpoint(std::ifstream& in, const std::string& path) {
    if (!in) throw FormatError("cannot open: " + path);
    std::string line;
    if (!std::getline(in, line)) throw FormatError("missing checkpoint header: " + path);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bad checkpoint header in " + path + ": " + e.what());
    }
    if (header.value("magic", "") != std::string("VDCK1")) throw FormatError("bad checkpoint magic in " + path);
    if (header.value("version", 0) != 1) throw FormatError("unsupported checkpoint version in " + path);
    return header;
}

}  // namespace detail

// Loads a checkpoint of either kind. When expected_layout is given, a layout
// mismatch is rejected before any parameter data is read.
inline LoadedCheckpoint load_checkpoint(const std::string& path,
                                        const std::optional<ChannelLayout>& expected_layout = std::nullopt) {
    std::ifstream in(path, std::ios::binary);
    const nlohmann::json header = detail::open_checkpoint(in, path);

    LoadedCheckpoint ck;
    ck.kind = header.value("kind", "unet");
    try {
        ck.config = detail::config_from_header(header);
        const auto& sj = header.at("schedule");
        if (sj.at("kind").get<std::string>() != "cosine") throw FormatError("unknown schedule kind in " + path);
        ck.schedule = cosine_schedule(sj.at("T").get<int>());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("incomplete checkpoint header in " + path + ": " + e.what());
    }
    if (expected_layout && !(ck.config.layout == *expected_layout))
        throw FormatError("checkpoint layout does not match the requested configuration: " + path);

    ToyUNet proto(ck.config);
    ck.params = proto.params().zeros_like();
    const std::streampos data_start = in.tellg();
    detail::read_param_arrays(in, data_start, header.at("arrays"), ck.kind == "control_adapter" ? "base." : "",
                              ck.params, path);
    return ck;
}

inline ToyUNet make_unet(const LoadedCheckpoint& ck) {
    ToyUNet net(ck.config);
    ck.params.for_each([&](const std::string& name, const std::vector<double>& v) {
        net.mutable_params().get(name) = v;
    });
    return net;
}

}  // namespace voldiff
