#include "aptlab/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace aptlab {

using nlohmann::json;

static void write_u32(std::ostream& os, uint32_t x) { os.write(reinterpret_cast<const char*>(&x), 4); }
static uint32_t read_u32(std::istream& is) {
    uint32_t x = 0;
    is.read(reinterpret_cast<char*>(&x), 4);
    if (!is) throw IoError("checkpoint: truncated file");
    return x;
}

Checkpoint Checkpoint::from_params(const ParamList& params, const ModelConfig& cfg,
                                   const std::string& stage, int64_t step, uint64_t seed) {
    Checkpoint ck;
    ck.config = cfg;
    ck.stage = stage;
    ck.step = step;
    ck.seed = seed;
    for (const auto& [name, p] : params) ck.arrays[name] = p->val;
    return ck;
}

void Checkpoint::load_into(ParamList& params) const {
    for (auto& [name, p] : params) {
        auto it = arrays.find(name);
        if (it == arrays.end()) throw ConfigError("checkpoint: missing array " + name);
        if (!it->second.same_shape(p->val)) throw ConfigError("checkpoint: shape mismatch for " + name);
        p->val = it->second;
    }
}

void Checkpoint::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("checkpoint: cannot open for writing: " + path);
    os.write("APTK", 4);
    write_u32(os, kVersion);
    json hdr = {
        {"stage", stage},
        {"step", step},
        {"seed", seed},
        {"config",
         {{"depth", config.depth},
          {"width", config.width},
          {"heads", config.heads},
          {"patch_size", config.patch_size},
          {"num_classes", config.num_classes},
          {"data_shape", config.data_shape}}},
    };
    std::string h = hdr.dump();
    write_u32(os, static_cast<uint32_t>(h.size()));
    os.write(h.data(), static_cast<std::streamsize>(h.size()));
    write_u32(os, static_cast<uint32_t>(arrays.size()));
    for (const auto& [name, t] : arrays) {
        write_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(os, static_cast<uint32_t>(t.rows));
        write_u32(os, static_cast<uint32_t>(t.cols));
        std::vector<float> buf(t.size());
        for (size_t i = 0; i < t.size(); ++i) buf[i] = static_cast<float>(t.v[i]);
        os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
    }
    if (!os) throw IoError("checkpoint: write failed: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "APTK", 4) != 0) throw IoError("checkpoint: bad magic");
    uint32_t version = read_u32(is);
    if (version != kVersion) throw IoError("checkpoint: unsupported version " + std::to_string(version));
    uint32_t hlen = read_u32(is);
    std::string h(hlen, '\0');
    is.read(h.data(), hlen);
    if (!is) throw IoError("checkpoint: truncated header");
    json hdr;
    try {
        hdr = json::parse(h);
    } catch (const json::exception& e) {
        throw IoError(std::string("checkpoint: bad header json: ") + e.what());
    }
    Checkpoint ck;
    ck.stage = hdr.at("stage").get<std::string>();
    ck.step = hdr.at("step").get<int64_t>();
    ck.seed = hdr.at("seed").get<uint64_t>();
    auto c = hdr.at("config");
    ck.config.depth = c.at("depth").get<int>();
    ck.config.width = c.at("width").get<int>();
    ck.config.heads = c.at("heads").get<int>();
    ck.config.patch_size = c.at("patch_size").get<int>();
    ck.config.num_classes = c.at("num_classes").get<int>();
    auto ds = c.at("data_shape").get<std::vector<int>>();
    if (ds.size() != 4) throw IoError("checkpoint: bad data_shape");
    for (int i = 0; i < 4; ++i) ck.config.data_shape[i] = ds[i];
    uint32_t count = read_u32(is);
    for (uint32_t a = 0; a < count; ++a) {
        uint32_t nlen = read_u32(is);
        std::string name(nlen, '\0');
        is.read(name.data(), nlen);
        uint32_t rows = read_u32(is), cc = read_u32(is);
        Tensor t(static_cast<int>(rows), static_cast<int>(cc));
        std::vector<float> buf(t.size());
        is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
        if (!is) throw IoError("checkpoint: truncated array payload for " + name);
        for (size_t i = 0; i < t.size(); ++i) t.v[i] = buf[i];
        ck.arrays[name] = std::move(t);
    }
    return ck;
}

}  // namespace aptlab
