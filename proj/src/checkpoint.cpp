#include "elastron/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace elastron {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs are little-endian");

namespace {

constexpr const char* kMagic = "ELASTRON1";

using ojson = nlohmann::ordered_json;

void fail(const std::string& path, const std::string& why) {
    throw TensorError("checkpoint " + path + ": " + why);
}

}  // namespace

void save_tensor_file(const std::string& path, const std::string& kind,
                      const std::vector<NamedTensor>& tensors, const ojson& meta) {
    ojson manifest;
    manifest["format"] = kMagic;
    manifest["kind"] = kind;
    manifest["meta"] = meta.is_null() ? ojson::object() : meta;
    ojson entries = ojson::array();
    std::int64_t offset = 0;
    for (const NamedTensor& t : tensors) {
        ojson e;
        e["name"] = t.name;
        e["shape"] = t.tensor.shape;
        e["offset"] = offset;
        entries.push_back(e);
        offset += t.tensor.numel();
    }
    manifest["tensors"] = entries;

    const std::string text = manifest.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(path, "cannot open for writing");
    out << kMagic << "\n" << text.size() << "\n" << text;
    for (const NamedTensor& t : tensors) {
        out.write(reinterpret_cast<const char*>(t.tensor.data.data()),
                  static_cast<std::streamsize>(t.tensor.data.size() * sizeof(double)));
    }
    if (!out) fail(path, "write failed");
}

std::vector<NamedTensor> load_tensor_file(const std::string& path, std::string* kind, ojson* meta) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(path, "cannot open");
    std::string magic;
    std::getline(in, magic);
    if (magic != kMagic) fail(path, "bad magic '" + magic + "'");
    std::string len_line;
    std::getline(in, len_line);
    std::size_t manifest_len = 0;
    try {
        manifest_len = static_cast<std::size_t>(std::stoull(len_line));
    } catch (...) {
        fail(path, "bad manifest length");
    }
    std::string text(manifest_len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(manifest_len));
    if (!in) fail(path, "truncated manifest");
    ojson manifest;
    try {
        manifest = ojson::parse(text);
    } catch (const std::exception& e) {
        fail(path, std::string("manifest parse: ") + e.what());
    }
    if (manifest.value("format", "") != kMagic) fail(path, "manifest format mismatch");
    if (kind) *kind = manifest.value("kind", "");
    if (meta) *meta = manifest.contains("meta") ? manifest["meta"] : ojson::object();

    std::vector<NamedTensor> tensors;
    for (const auto& e : manifest["tensors"]) {
        NamedTensor t;
        t.name = e["name"].get<std::string>();
        std::vector<int> shape = e["shape"].get<std::vector<int>>();
        const auto n = shape_numel(shape);
        t.tensor = Tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0));
        in.read(reinterpret_cast<char*>(t.tensor.data.data()),
                static_cast<std::streamsize>(static_cast<std::size_t>(n) * sizeof(double)));
        if (!in) fail(path, "truncated blob at tensor '" + t.name + "'");
        tensors.push_back(std::move(t));
    }
    return tensors;
}

void save_model(const std::string& path, const ElasticModel& model, const ojson& meta) {
    ojson m = meta.is_null() ? ojson::object() : meta;
    ojson cfg;
    cfg["vocab_size"] = model.config.vocab_size;
    cfg["embed_dim"] = model.config.embed_dim;
    cfg["num_layers"] = model.config.num_layers;
    cfg["num_heads"] = model.config.num_heads;
    cfg["head_dim"] = model.config.head_dim;
    cfg["mlp_hidden"] = model.config.mlp_hidden;
    cfg["context_len"] = model.config.context_len;
    cfg["mlp_widths"] = model.config.mlp_widths;
    cfg["head_counts"] = model.config.head_counts;
    m["model_config"] = cfg;
    ojson shapes = ojson::array();
    for (const LayerShape& s : model.layer_shapes) {
        ojson e;
        e["heads"] = s.heads;
        e["mlp_hidden"] = s.mlp_hidden;
        e["head_menu"] = s.head_menu;
        e["mlp_menu"] = s.mlp_menu;
        shapes.push_back(e);
    }
    m["layer_shapes"] = shapes;

    std::vector<NamedTensor> tensors;
    for (const auto& [name, value] : model.named_parameters()) {
        tensors.push_back({name, value->value});
    }
    save_tensor_file(path, "model", tensors, m);
}

ElasticModel load_model(const std::string& path, ojson* meta) {
    std::string kind;
    ojson m;
    std::vector<NamedTensor> tensors = load_tensor_file(path, &kind, &m);
    if (kind != "model") fail(path, "expected a model checkpoint, found kind '" + kind + "'");
    if (!m.contains("model_config")) fail(path, "missing model_config");

    ElasticModel model;
    const ojson& cfg = m["model_config"];
    model.config.vocab_size = cfg["vocab_size"].get<int>();
    model.config.embed_dim = cfg["embed_dim"].get<int>();
    model.config.num_layers = cfg["num_layers"].get<int>();
    model.config.num_heads = cfg["num_heads"].get<int>();
    model.config.head_dim = cfg["head_dim"].get<int>();
    model.config.mlp_hidden = cfg["mlp_hidden"].get<int>();
    model.config.context_len = cfg["context_len"].get<int>();
    model.config.mlp_widths = cfg["mlp_widths"].get<std::vector<int>>();
    model.config.head_counts = cfg["head_counts"].get<std::vector<int>>();
    for (const auto& e : m["layer_shapes"]) {
        LayerShape s;
        s.heads = e["heads"].get<int>();
        s.mlp_hidden = e["mlp_hidden"].get<int>();
        s.head_menu = e["head_menu"].get<std::vector<int>>();
        s.mlp_menu = e["mlp_menu"].get<std::vector<int>>();
        model.layer_shapes.push_back(std::move(s));
    }
    if (static_cast<int>(model.layer_shapes.size()) != model.config.num_layers) {
        fail(path, "layer_shapes count does not match num_layers");
    }

    std::map<std::string, Tensor> by_name;
    for (NamedTensor& t : tensors) by_name.emplace(t.name, std::move(t.tensor));
    auto take = [&](const std::string& name) -> Value {
        auto it = by_name.find(name);
        if (it == by_name.end()) fail(path, "missing tensor '" + name + "'");
        return parameter(std::move(it->second));
    };

    model.tok_embed = take("tok_embed");
    model.pos_embed = take("pos_embed");
    for (int i = 0; i < model.config.num_layers; ++i) {
        const std::string p = "layer" + std::to_string(i) + ".";
        LayerWeights w;
        w.w_q = take(p + "w_q");
        w.w_k = take(p + "w_k");
        w.w_v = take(p + "w_v");
        w.w_o = take(p + "w_o");
        w.w_mlp1 = take(p + "w_mlp1");
        w.w_mlp2 = take(p + "w_mlp2");
        w.ln1_gain = take(p + "ln1_gain");
        w.ln1_bias = take(p + "ln1_bias");
        w.ln2_gain = take(p + "ln2_gain");
        w.ln2_bias = take(p + "ln2_bias");
        model.layers.push_back(std::move(w));
    }
    model.final_gain = take("final_gain");
    model.final_bias = take("final_bias");
    if (meta) *meta = m;
    return model;
}

}  // namespace elastron
