#include "langlab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "langlab/error.hpp"

namespace langlab {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian; big-endian hosts need byte swaps");

namespace {

std::string hex64(uint64_t v) {
    std::ostringstream s;
    s << std::hex << std::setw(16) << std::setfill('0') << v;
    return s.str();
}

json config_to_json(const ModelConfig& c) {
    return json{{"n_layers", c.n_layers},         {"n_heads", c.n_heads},
                {"d_model", c.d_model},           {"d_ffn", c.d_ffn},
                {"vocab_size", c.vocab_size},     {"max_positions", c.max_positions},
                {"seed", c.seed}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.n_layers = j.at("n_layers").get<size_t>();
    c.n_heads = j.at("n_heads").get<size_t>();
    c.d_model = j.at("d_model").get<size_t>();
    c.d_ffn = j.at("d_ffn").get<size_t>();
    c.vocab_size = j.at("vocab_size").get<size_t>();
    c.max_positions = j.at("max_positions").get<size_t>();
    c.seed = j.at("seed").get<uint64_t>();
    return c;
}

}  // namespace

void save_checkpoint(const Model& model, int64_t step, const std::string& dir) {
    const auto tensors = model.named();

    json manifest;
    manifest["format"] = "ckpt-v1";
    manifest["pretrain_step"] = step;
    manifest["config"] = config_to_json(model.config);
    if (model.adapters) {
        const AdapterConfig& a = model.adapters->config;
        manifest["adapters"] = json{{"reduction", a.reduction},
                                    {"inv_reduction", a.inv_reduction},
                                    {"invertible", a.invertible},
                                    {"language", a.language},
                                    {"language_tag", model.adapters->language_tag}};
    } else {
        manifest["adapters"] = nullptr;
    }

    json table = json::array();
    size_t offset = 0;
    for (const auto& [name, t] : tensors) {
        json row;
        row["name"] = name;
        row["dtype"] = "f32";
        row["shape"] = t.shape();
        row["offset"] = offset;
        row["checksum"] = hex64(tensor_checksum(t));
        table.push_back(std::move(row));
        offset += t.numel() * sizeof(float);
    }
    manifest["tensors"] = std::move(table);

    const fs::path final_dir(dir);
    const fs::path tmp_dir(dir + ".tmp");
    std::error_code ec;
    fs::remove_all(tmp_dir, ec);
    fs::create_directories(tmp_dir);
    {
        std::ofstream mf(tmp_dir / "manifest.json", std::ios::binary);
        if (!mf) throw DataError("save_checkpoint: cannot write manifest in '" + dir + "'");
        mf << manifest.dump(2) << '\n';
        if (!mf.good()) throw DataError("save_checkpoint: manifest write failed");
    }
    {
        std::ofstream wf(tmp_dir / "weights.bin", std::ios::binary);
        if (!wf) throw DataError("save_checkpoint: cannot write weights in '" + dir + "'");
        for (const auto& [name, t] : tensors) {
            (void)name;
            wf.write(reinterpret_cast<const char*>(t.data()),
                     static_cast<std::streamsize>(t.numel() * sizeof(float)));
        }
        if (!wf.good()) throw DataError("save_checkpoint: weights write failed");
    }
    fs::remove_all(final_dir, ec);
    fs::create_directories(final_dir.parent_path().empty() ? "." : final_dir.parent_path());
    fs::rename(tmp_dir, final_dir);
}

LoadedCheckpoint load_checkpoint(const std::string& dir) {
    const fs::path p(dir);
    std::ifstream mf(p / "manifest.json", std::ios::binary);
    if (!mf) throw DataError("load_checkpoint: cannot open '" + dir + "/manifest.json'");
    json manifest;
    try {
        mf >> manifest;
    } catch (const json::exception& e) {
        throw FormatError(std::string("load_checkpoint: bad manifest: ") + e.what());
    }

    LoadedCheckpoint out;
    try {
        if (manifest.at("format").get<std::string>() != "ckpt-v1") {
            throw FormatError("load_checkpoint: unsupported format tag '" +
                              manifest.at("format").get<std::string>() + "'");
        }
        out.step = manifest.at("pretrain_step").get<int64_t>();
        out.model = build_model(config_from_json(manifest.at("config")));
        if (!manifest.at("adapters").is_null()) {
            const json& a = manifest.at("adapters");
            AdapterConfig ac;
            ac.reduction = a.at("reduction").get<size_t>();
            ac.inv_reduction = a.at("inv_reduction").get<size_t>();
            ac.invertible = a.at("invertible").get<bool>();
            ac.language = a.at("language").get<bool>();
            inject_adapters(out.model, ac, 0);
            out.model.adapters->language_tag = a.at("language_tag").get<std::string>();
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("load_checkpoint: bad manifest: ") + e.what());
    }

    std::ifstream wf(p / "weights.bin", std::ios::binary | std::ios::ate);
    if (!wf) throw DataError("load_checkpoint: cannot open '" + dir + "/weights.bin'");
    const auto blob_size = static_cast<size_t>(wf.tellg());
    wf.seekg(0);

    auto by_name = out.model.named_map();
    size_t covered = 0;
    size_t expected_end = 0;
    try {
        for (const json& row : manifest.at("tensors")) {
            const auto name = row.at("name").get<std::string>();
            auto it = by_name.find(name);
            if (it == by_name.end()) {
                throw FormatError("load_checkpoint: unknown tensor name '" + name + "'");
            }
            Tensor t = it->second;
            if (row.at("dtype").get<std::string>() != "f32") {
                throw FormatError("load_checkpoint: tensor '" + name + "' has unsupported dtype");
            }
            if (row.at("shape").get<std::vector<size_t>>() != t.shape()) {
                throw FormatError("load_checkpoint: tensor '" + name + "' shape mismatch");
            }
            const auto offset = row.at("offset").get<size_t>();
            const size_t nbytes = t.numel() * sizeof(float);
            if (offset + nbytes > blob_size) {
                throw FormatError("load_checkpoint: blob truncated at tensor '" + name + "'");
            }
            wf.seekg(static_cast<std::streamoff>(offset));
            wf.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(nbytes));
            if (!wf.good()) {
                throw FormatError("load_checkpoint: read failed for tensor '" + name + "'");
            }
            if (hex64(tensor_checksum(t)) != row.at("checksum").get<std::string>()) {
                throw FormatError("load_checkpoint: checksum mismatch for tensor '" + name + "'");
            }
            expected_end = std::max(expected_end, offset + nbytes);
            ++covered;
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("load_checkpoint: bad tensor table: ") + e.what());
    }
    if (covered != by_name.size()) {
        throw FormatError("load_checkpoint: manifest covers " + std::to_string(covered) +
                          " tensors, model has " + std::to_string(by_name.size()));
    }
    if (expected_end != blob_size) {
        throw FormatError("load_checkpoint: blob has trailing bytes");
    }
    return out;
}

}  // namespace langlab
