#include "chaintok/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace chaintok {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian; big-endian hosts need a swap pass");

namespace {
constexpr char kMagic[8] = {'C', 'T', 'K', 'T', 'E', 'N', 'S', '\x01'};
constexpr uint32_t kVersion = 1;
}  // namespace

const Tensor& Checkpoint::get(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
        throw std::invalid_argument("checkpoint: missing tensor '" + name + "'");
    }
    return it->second;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    nlohmann::json header;
    header["tensors"] = nlohmann::json::array();
    uint64_t offset = 0;
    for (const auto& [name, t] : ckpt.tensors) {
        nlohmann::json e;
        e["name"] = name;
        e["shape"] = t.shape();
        e["dtype"] = "f32";
        e["offset"] = offset;
        header["tensors"].push_back(e);
        offset += static_cast<uint64_t>(t.numel()) * sizeof(float);
    }
    header["meta"] = ckpt.meta.is_null() ? nlohmann::json::object() : ckpt.meta;
    const std::string hs = header.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    f.write(kMagic, sizeof(kMagic));
    uint32_t ver = kVersion;
    f.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
    uint64_t hlen = hs.size();
    f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        f.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.numel() * sizeof(float)));
    }
    if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("checkpoint: bad magic in " + path);
    }
    uint32_t ver = 0;
    f.read(reinterpret_cast<char*>(&ver), sizeof(ver));
    if (ver != kVersion) {
        throw std::runtime_error("checkpoint: unsupported format version " +
                                 std::to_string(ver));
    }
    uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string hs(hlen, '\0');
    f.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!f) throw std::runtime_error("checkpoint: truncated header in " + path);
    nlohmann::json header = nlohmann::json::parse(hs);

    Checkpoint ckpt;
    ckpt.meta = header.value("meta", nlohmann::json::object());
    const std::streampos payload_start = f.tellg();
    for (const auto& e : header["tensors"]) {
        const std::string name = e["name"];
        Shape shape = e["shape"].get<Shape>();
        if (e["dtype"] != "f32") {
            throw std::runtime_error("checkpoint: unsupported dtype for '" + name + "'");
        }
        const uint64_t off = e["offset"];
        std::vector<float> vals(static_cast<size_t>(shape_numel(shape)));
        f.seekg(payload_start + static_cast<std::streamoff>(off));
        f.read(reinterpret_cast<char*>(vals.data()),
               static_cast<std::streamsize>(vals.size() * sizeof(float)));
        if (!f) throw std::runtime_error("checkpoint: truncated payload for '" + name + "'");
        ckpt.tensors[name] = Tensor::from(shape, std::move(vals));
    }
    return ckpt;
}

}  // namespace chaintok
