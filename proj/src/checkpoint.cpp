#include "sidlab/checkpoint.hpp"

#include <stdexcept>

#include "sidlab/io.hpp"

namespace sidlab {

using nlohmann::json;

namespace {

std::string tensor_filename(const std::string& name) {
    std::string file = name;
    for (char& c : file)
        if (c == '/' || c == '\\') c = '_';
    return file + ".f32";
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    json tensors = json::array();
    for (size_t i = 0; i < ckpt.params.names.size(); ++i) {
        const auto& name = ckpt.params.names[i];
        tensors.push_back({{"name", name},
                           {"shape", ckpt.params.tensors[i].shape},
                           {"weight", static_cast<bool>(ckpt.params.is_weight[i])},
                           {"file", tensor_filename(name)}});
        write_f32(dir / tensor_filename(name), ckpt.params.tensors[i].data);
    }
    json aux = json::array();
    for (const auto& [name, data] : ckpt.aux) {
        aux.push_back({{"name", name},
                       {"size", data.size()},
                       {"file", tensor_filename(name)}});
        write_f32(dir / tensor_filename(name), data);
    }
    json manifest = {{"format_version", ckpt.format_version},
                     {"kind", ckpt.kind},
                     {"arch", ckpt.arch},
                     {"init_seed", ckpt.params.init_seed},
                     {"train_config", ckpt.train_config},
                     {"extra", ckpt.extra},
                     {"tensors", tensors},
                     {"aux", aux}};
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    const json manifest = json::parse(read_text(dir / "manifest.json"));
    Checkpoint ckpt;
    ckpt.format_version = manifest.at("format_version").get<int>();
    if (ckpt.format_version != 1)
        throw std::runtime_error("unsupported checkpoint format version");
    ckpt.kind = manifest.at("kind").get<std::string>();
    ckpt.arch = manifest.at("arch");
    ckpt.train_config = manifest.at("train_config");
    ckpt.extra = manifest.at("extra");
    ckpt.params.init_seed = manifest.at("init_seed").get<uint64_t>();
    for (const auto& tj : manifest.at("tensors")) {
        const auto shape = tj.at("shape").get<std::vector<int>>();
        auto data = read_f32(dir / tj.at("file").get<std::string>());
        nn::Tensor t(shape, std::move(data));
        ckpt.params.add(tj.at("name").get<std::string>(), std::move(t),
                        tj.at("weight").get<bool>());
    }
    for (const auto& aj : manifest.at("aux")) {
        auto data = read_f32(dir / aj.at("file").get<std::string>());
        if (data.size() != aj.at("size").get<size_t>())
            throw std::runtime_error("aux tensor size mismatch in checkpoint");
        ckpt.aux.emplace_back(aj.at("name").get<std::string>(), std::move(data));
    }
    return ckpt;
}

}  // namespace sidlab
