#include "isd/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "isd/isdt_io.hpp"

namespace isd {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw io::FormatError("config: bad numeric value for " + key + ": '" + v + "'");
    }
}

std::size_t parse_size(const std::string& key, const std::string& v) {
    const double x = parse_double(key, v);
    if (x < 0 || x != std::floor(x)) throw io::FormatError("config: " + key + " must be a non-negative integer");
    return std::size_t(x);
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw io::FormatError("config: " + key + " must be true/false");
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    if (key == "input_channels") model.input_channels = parse_size(key, value);
    else if (key == "input_size") model.input_size = parse_size(key, value);
    else if (key == "num_stages") model.num_stages = parse_size(key, value);
    else if (key == "stage_channels") {
        std::vector<std::size_t> chans;
        std::istringstream ss(value);
        std::string item;
        while (std::getline(ss, item, ',')) chans.push_back(parse_size(key, trim(item)));
        if (chans.empty()) throw io::FormatError("config: stage_channels is empty");
        model.stage_channels = std::move(chans);
    }
    else if (key == "decoder_channels") model.decoder_channels = parse_size(key, value);
    else if (key == "embed_dim") model.embed_dim = parse_size(key, value);
    else if (key == "attention_enabled") model.attention_enabled = parse_bool(key, value);
    else if (key == "p_flip_h") augment.p_flip_h = parse_double(key, value);
    else if (key == "p_flip_v") augment.p_flip_v = parse_double(key, value);
    else if (key == "p_rot_scale") augment.p_rot_scale = parse_double(key, value);
    else if (key == "rot_max_deg") augment.rot_max_deg = parse_double(key, value);
    else if (key == "scale_min") augment.scale_min = parse_double(key, value);
    else if (key == "scale_max") augment.scale_max = parse_double(key, value);
    else if (key == "pretrain_base_lr") pretrain_sched.base_lr = parse_double(key, value);
    else if (key == "pretrain_gamma") pretrain_sched.gamma = parse_double(key, value);
    else if (key == "pretrain_step_size") pretrain_sched.step_size = parse_size(key, value);
    else if (key == "finetune_base_lr") finetune_sched.base_lr = parse_double(key, value);
    else if (key == "finetune_gamma") finetune_sched.gamma = parse_double(key, value);
    else if (key == "finetune_step_size") finetune_sched.step_size = parse_size(key, value);
    else if (key == "beta1") adamw.beta1 = parse_double(key, value);
    else if (key == "beta2") adamw.beta2 = parse_double(key, value);
    else if (key == "eps") adamw.eps = parse_double(key, value);
    else if (key == "weight_decay") adamw.weight_decay = parse_double(key, value);
    else if (key == "k_bins") k_bins = parse_size(key, value);
    else if (key == "intensity_ratio") intensity_ratio = parse_double(key, value);
    else if (key == "spatial_patch") spatial_patch = parse_size(key, value);
    else if (key == "spatial_ratio") spatial_ratio = parse_double(key, value);
    else if (key == "ssim_windowed") ssim_windowed = parse_bool(key, value);
    else if (key == "batch_size_pretrain") batch_size_pretrain = parse_size(key, value);
    else if (key == "batch_size_finetune") batch_size_finetune = parse_size(key, value);
    else throw io::FormatError("config: unknown key '" + key + "'");
}

RunConfig default_config() { return RunConfig{}; }

RunConfig load_config(const std::filesystem::path& path) {
    RunConfig cfg;
    if (path.empty()) return cfg;
    std::ifstream f(path);
    if (!f) throw io::IoError("cannot open config " + path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw io::FormatError("config line " + std::to_string(lineno) + ": expected key = value");
        cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return cfg;
}

}  // namespace isd
