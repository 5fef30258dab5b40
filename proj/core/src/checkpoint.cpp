#include "anyctl/checkpoint.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "anyctl/config_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace anyctl {

std::string checkpoint_dir_name(int64_t step) {
    std::string s = std::to_string(step);
    while (s.size() < 6) s.insert(s.begin(), '0');
    return "step_" + s;
}

void save_checkpoint(const std::string& dir, const ParamStore& store,
                     const ModelConfig& model, int64_t phase, int64_t step,
                     const Adam* opt) {
    const fs::path root(dir);
    fs::create_directories(root / "params");

    json params = json::array();
    for (const auto& [name, p] : store) {
        write_tnsr((root / "params" / (name + ".tnsr")).string(), p->value);
        params.push_back({{"name", name},
                          {"shape", p->value.shape()},
                          {"frozen", p->frozen()}});
    }

    json manifest{{"format", "anyctl-checkpoint"},
                  {"version", 1},
                  {"phase", phase},
                  {"step", step},
                  {"model", model_config_to_json(model)},
                  {"params", params}};

    if (opt) {
        fs::create_directories(root / "opt" / "m");
        fs::create_directories(root / "opt" / "v");
        json names = json::array();
        for (const auto& [name, m] : opt->first_moments()) {
            write_tnsr((root / "opt" / "m" / (name + ".tnsr")).string(), m);
            write_tnsr((root / "opt" / "v" / (name + ".tnsr")).string(),
                       opt->second_moments().at(name));
            names.push_back(name);
        }
        manifest["optimizer"] = {{"step", opt->step_count()},
                                 {"lr", opt->lr()},
                                 {"params", names}};
    }

    // Manifest last: its presence marks the directory as complete.
    const fs::path tmp = root / "manifest.json.tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw IoError("cannot write " + tmp.string());
        out << manifest.dump(2) << "\n";
    }
    fs::rename(tmp, root / "manifest.json");
}

namespace {

json read_manifest(const std::string& dir) {
    const fs::path path = fs::path(dir) / "manifest.json";
    std::ifstream in(path);
    if (!in) throw IoError("cannot read checkpoint manifest " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

CheckpointInfo info_from(const json& m, const std::string& dir) {
    if (m.value("format", "") != "anyctl-checkpoint")
        throw IoError(dir + ": not a checkpoint manifest");
    CheckpointInfo info;
    info.phase = m.at("phase").get<int64_t>();
    info.step = m.at("step").get<int64_t>();
    info.model = model_config_from_json(m.at("model"));
    info.has_optimizer = m.contains("optimizer");
    return info;
}

}  // namespace

CheckpointInfo read_checkpoint_info(const std::string& dir) {
    return info_from(read_manifest(dir), dir);
}

CheckpointInfo load_checkpoint(const std::string& dir, ParamStore& store,
                               Adam* opt) {
    const json m = read_manifest(dir);
    const CheckpointInfo info = info_from(m, dir);

    size_t matched = 0;
    for (const auto& entry : m.at("params")) {
        const auto name = entry.at("name").get<std::string>();
        Parameter* p = store.find(name);
        if (!p)
            throw IoError("checkpoint parameter " + name +
                          " does not exist in this model");
        const Tensor t = read_tnsr(dir + "/params/" + name + ".tnsr");
        if (t.shape() != p->value.shape())
            throw IoError("checkpoint shape mismatch for " + name);
        std::copy(t.data().begin(), t.data().end(), p->value.data().begin());
        p->set_frozen(entry.at("frozen").get<bool>());
        ++matched;
    }
    if (matched != store.size())
        throw IoError("checkpoint covers " + std::to_string(matched) +
                      " of " + std::to_string(store.size()) +
                      " model parameters");

    if (opt && info.has_optimizer) {
        const auto& o = m.at("optimizer");
        std::map<std::string, Tensor> mm, vv;
        for (const auto& jn : o.at("params")) {
            const auto name = jn.get<std::string>();
            mm.emplace(name, read_tnsr(dir + "/opt/m/" + name + ".tnsr"));
            vv.emplace(name, read_tnsr(dir + "/opt/v/" + name + ".tnsr"));
        }
        opt->restore(o.at("step").get<int64_t>(), std::move(mm),
                     std::move(vv));
    }
    return info;
}

std::optional<std::string> latest_checkpoint(const std::string& root) {
    if (!fs::is_directory(root)) return std::nullopt;
    std::optional<std::string> best;
    int64_t best_step = -1;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (!entry.is_directory()) continue;
        const std::string name = entry.path().filename().string();
        if (name.rfind("step_", 0) != 0) continue;
        if (!fs::exists(entry.path() / "manifest.json")) continue;
        const int64_t step = std::atoll(name.c_str() + 5);
        if (step > best_step) {
            best_step = step;
            best = entry.path().string();
        }
    }
    return best;
}

}  // namespace anyctl
