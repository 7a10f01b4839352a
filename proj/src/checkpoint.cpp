#include "resformer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace fs = std::filesystem;

namespace resformer {

namespace {

constexpr char kMagic[8] = {'R', 'S', 'F', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename S>
struct Entry {
    std::string name;
    Shape shape;
    std::span<S> data;
};

template <typename S>
std::vector<Entry<S>> collect_entries(MtlModel<S>& model, AdamW<S>* optimizer) {
    ParameterCollector<S> c;
    model.visit(c, "");
    std::vector<Entry<S>> out;
    for (auto& p : c.params) out.push_back({"param." + p.name, p.tensor.shape(), p.tensor.mutable_values()});
    for (auto& b : c.buffers) out.push_back({"buffer." + b.name, Shape{static_cast<Index>(b.values->size())}, *b.values});
    if (optimizer) {
        auto& params = optimizer->params();
        for (std::size_t i = 0; i < params.size(); ++i) {
            out.push_back({"adam_m." + params[i].name, params[i].tensor.shape(), optimizer->first_moments()[i]});
            out.push_back({"adam_v." + params[i].name, params[i].tensor.shape(), optimizer->second_moments()[i]});
        }
    }
    return out;
}

struct Header {
    nlohmann::json json;
    std::uint64_t payload_start = 0;
};

Header read_header(std::ifstream& in, const fs::path& file) {
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw CheckpointError(file.string() + ": not a checkpoint file");
    std::uint64_t len = 0;
    if (!in.read(reinterpret_cast<char*>(&len), sizeof len)) throw CheckpointError(file.string() + ": truncated header");
    std::string text(len, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw CheckpointError(file.string() + ": truncated header");
    Header h;
    try {
        h.json = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(file.string() + ": malformed header: " + e.what());
    }
    h.payload_start = 16 + len;
    return h;
}

CheckpointMeta meta_from_json(const nlohmann::json& j) {
    CheckpointMeta m;
    m.model = j.at("model").get<ModelConfig>();
    m.epoch = j.at("epoch").get<std::int64_t>();
    // JSON has no infinity; null stands for "no validation loss yet".
    m.best_val_loss = j.at("best_val_loss").is_null() ? std::numeric_limits<double>::infinity() : j.at("best_val_loss").get<double>();
    m.dtype = j.at("dtype").get<std::string>();
    m.train_config = j.value("train_config", nlohmann::json());
    return m;
}

}  // namespace

template <> std::string dtype_name<float>() { return "float32"; }
template <> std::string dtype_name<double>() { return "float64"; }

template <typename S>
void save_checkpoint(const fs::path& file, MtlModel<S>& model, const AdamW<S>* optimizer, const CheckpointMeta& meta) {
    auto entries = collect_entries(model, const_cast<AdamW<S>*>(optimizer));
    nlohmann::json tensors = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& e : entries) {
        tensors.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", offset}});
        offset += e.data.size() * sizeof(S);
    }
    nlohmann::json h = {{"format", "resformer-checkpoint"},
                        {"version", 1},
                        {"dtype", dtype_name<S>()},
                        {"model", model.config},
                        {"epoch", meta.epoch},
                        {"best_val_loss", std::isfinite(meta.best_val_loss) ? nlohmann::json(meta.best_val_loss) : nlohmann::json()},
                        {"optimizer_step", optimizer ? optimizer->steps() : 0},
                        {"has_optimizer", optimizer != nullptr},
                        {"train_config", meta.train_config},
                        {"tensors", tensors}};
    const std::string text = h.dump();

    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    const fs::path tmp = file.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError("cannot write " + tmp.string());
        const std::uint64_t len = text.size();
        out.write(kMagic, 8);
        out.write(reinterpret_cast<const char*>(&len), sizeof len);
        out.write(text.data(), static_cast<std::streamsize>(len));
        for (const auto& e : entries)
            out.write(reinterpret_cast<const char*>(e.data.data()), static_cast<std::streamsize>(e.data.size() * sizeof(S)));
        if (!out) throw CheckpointError("write failed for " + tmp.string());
    }
    fs::rename(tmp, file);
}

CheckpointMeta read_checkpoint_meta(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + file.string());
    return meta_from_json(read_header(in, file).json);
}

template <typename S>
CheckpointMeta load_checkpoint(const fs::path& file, MtlModel<S>& model, AdamW<S>* optimizer) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + file.string());
    const Header h = read_header(in, file);
    CheckpointMeta meta = meta_from_json(h.json);
    const bool stored_double = meta.dtype == "float64";
    if (!stored_double && meta.dtype != "float32") throw CheckpointError(file.string() + ": unsupported dtype " + meta.dtype);
    const std::size_t elem = stored_double ? sizeof(double) : sizeof(float);

    std::map<std::string, std::pair<Shape, std::uint64_t>> stored;
    for (const auto& t : h.json.at("tensors"))
        stored[t.at("name").get<std::string>()] = {t.at("shape").get<Shape>(), t.at("offset").get<std::uint64_t>()};

    if (optimizer && !h.json.value("has_optimizer", false))
        throw CheckpointError(file.string() + ": no optimizer state stored");
    auto entries = collect_entries(model, optimizer);
    for (auto& e : entries) {
        auto it = stored.find(e.name);
        if (it == stored.end()) throw CheckpointError(file.string() + ": missing tensor " + e.name);
        if (it->second.first != e.shape)
            throw CheckpointError(file.string() + ": tensor " + e.name + " has shape " + shape_str(it->second.first) +
                                  ", model expects " + shape_str(e.shape));
        in.seekg(static_cast<std::streamoff>(h.payload_start + it->second.second));
        if (stored_double == std::is_same_v<S, double>) {
            in.read(reinterpret_cast<char*>(e.data.data()), static_cast<std::streamsize>(e.data.size() * elem));
        } else if (stored_double) {
            std::vector<double> buf(e.data.size());
            in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * elem));
            for (std::size_t k = 0; k < buf.size(); ++k) e.data[k] = S(buf[k]);
        } else {
            std::vector<float> buf(e.data.size());
            in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * elem));
            for (std::size_t k = 0; k < buf.size(); ++k) e.data[k] = S(buf[k]);
        }
        if (!in) throw CheckpointError(file.string() + ": truncated payload at " + e.name);
        stored.erase(it);
    }
    for (const auto& [name, _] : stored)
        if (name.rfind("param.", 0) == 0 || name.rfind("buffer.", 0) == 0)
            throw CheckpointError(file.string() + ": unexpected tensor " + name + " (model configuration differs)");
    if (optimizer) optimizer->set_steps(h.json.value("optimizer_step", std::int64_t(0)));
    return meta;
}

template void save_checkpoint<float>(const fs::path&, MtlModel<float>&, const AdamW<float>*, const CheckpointMeta&);
template void save_checkpoint<double>(const fs::path&, MtlModel<double>&, const AdamW<double>*, const CheckpointMeta&);
template CheckpointMeta load_checkpoint<float>(const fs::path&, MtlModel<float>&, AdamW<float>*);
template CheckpointMeta load_checkpoint<double>(const fs::path&, MtlModel<double>&, AdamW<double>*);

}  // namespace resformer
