#include "cdsr/config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace cdsr {

namespace {

bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ParameterError("invalid boolean value: " + v);
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
using Field = T TrainConfig::*;

struct Setter {
    std::function<void(TrainConfig&, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
};

std::map<std::string, Setter>& field_table() {
    static std::map<std::string, Setter> table = [] {
        std::map<std::string, Setter> t;
        auto add_int = [&t](const std::string& k, Field<int> f) {
            t[k] = {[f](TrainConfig& c, const std::string& v) { c.*f = std::stoi(v); },
                    [f](const TrainConfig& c) { return std::to_string(c.*f); }};
        };
        auto add_double = [&t](const std::string& k, Field<double> f) {
            t[k] = {[f](TrainConfig& c, const std::string& v) { c.*f = std::stod(v); },
                    [f](const TrainConfig& c) {
                        std::ostringstream os;
                        os.precision(17);
                        os << c.*f;
                        return os.str();
                    }};
        };
        auto add_bool = [&t](const std::string& k, Field<bool> f) {
            t[k] = {[f](TrainConfig& c, const std::string& v) { c.*f = parse_bool(v); },
                    [f](const TrainConfig& c) { return c.*f ? "true" : "false"; }};
        };
        auto add_string = [&t](const std::string& k, Field<std::string> f) {
            t[k] = {[f](TrainConfig& c, const std::string& v) { c.*f = v; },
                    [f](const TrainConfig& c) { return c.*f; }};
        };
        add_int("batch_size", &TrainConfig::batch_size);
        add_double("lr0", &TrainConfig::lr0);
        add_double("adam_beta1", &TrainConfig::adam_beta1);
        add_double("adam_beta2", &TrainConfig::adam_beta2);
        add_int("epochs", &TrainConfig::epochs);
        add_int("lr_halving_period", &TrainConfig::lr_halving_period);
        add_int("iters_per_epoch", &TrainConfig::iters_per_epoch);
        add_int("pretrain_encoder_epochs", &TrainConfig::pretrain_encoder_epochs);
        add_int("scale", &TrainConfig::scale);
        add_double("noise_max", &TrainConfig::noise_max);
        add_string("positive_strategy", &TrainConfig::positive_strategy);
        add_int("lr_patch", &TrainConfig::lr_patch);
        add_int("kernel_size", &TrainConfig::kernel_size);
        add_bool("use_LPE_P", &TrainConfig::use_LPE_P);
        add_bool("use_LPE_L", &TrainConfig::use_LPE_L);
        add_bool("use_DQA", &TrainConfig::use_DQA);
        add_bool("use_CSC", &TrainConfig::use_CSC);
        add_int("codebook_length", &TrainConfig::codebook_length);
        add_bool("include_positive_in_denominator",
                 &TrainConfig::include_positive_in_denominator);
        add_int("queue_size", &TrainConfig::queue_size);
        add_double("tau", &TrainConfig::tau);
        add_double("momentum", &TrainConfig::momentum);
        add_int("embed_dim", &TrainConfig::embed_dim);
        add_int("trunk_channels", &TrainConfig::trunk_channels);
        add_int("growth_channels", &TrainConfig::growth_channels);
        add_int("num_blocks", &TrainConfig::num_blocks);
        add_int("patch_size", &TrainConfig::patch_size);
        add_int("patch_channels", &TrainConfig::patch_channels);
        add_int("pixel_channels", &TrainConfig::pixel_channels);
        add_int("depth_patch", &TrainConfig::depth_patch);
        add_int("depth_pixel", &TrainConfig::depth_pixel);
        add_int("dyn_kernel_size", &TrainConfig::dyn_kernel_size);
        add_int("filter_hidden", &TrainConfig::filter_hidden);
        add_int("ca_hidden", &TrainConfig::ca_hidden);
        add_string("fusion", &TrainConfig::fusion);
        t["seed"] = {[](TrainConfig& c, const std::string& v) { c.seed = std::stoull(v); },
                     [](const TrainConfig& c) { return std::to_string(c.seed); }};
        add_int("workers", &TrainConfig::workers);
        return t;
    }();
    return table;
}

}  // namespace

std::vector<std::string> config_field_names() {
    std::vector<std::string> names;
    for (const auto& [key, setter] : field_table()) names.push_back(key);
    return names;
}

void TrainConfig::validate() const {
    CDSR_REQUIRE(batch_size >= 1, "batch_size must be >= 1");
    CDSR_REQUIRE(lr0 >= 0.0, "lr0 must be non-negative");
    CDSR_REQUIRE(epochs >= 0 && iters_per_epoch >= 1, "invalid epoch counts");
    CDSR_REQUIRE(lr_halving_period >= 1, "lr_halving_period must be >= 1");
    CDSR_REQUIRE(scale == 2 || scale == 3 || scale == 4, "scale must be in {2,3,4}");
    CDSR_REQUIRE(noise_max >= 0.0 && noise_max <= 15.0, "noise_max must lie in [0,15]");
    CDSR_REQUIRE(tau > 0.0, "tau must be positive");
    CDSR_REQUIRE(momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0,1)");
    CDSR_REQUIRE(queue_size >= 1, "queue_size must be >= 1");
    CDSR_REQUIRE(use_LPE_P || use_LPE_L, "at least one encoder branch must stay enabled");
    CDSR_REQUIRE(lr_patch % patch_size == 0,
                 "lr_patch must be divisible by the patch size");
    strategy();
    fusion_from_string(fusion);
    sr_config().validate();
}

LpeConfig TrainConfig::lpe_config() const {
    LpeConfig c;
    c.embed_dim = embed_dim;
    c.patch_size = patch_size;
    c.patch_channels = patch_channels;
    c.pixel_channels = pixel_channels;
    c.depth_patch = depth_patch;
    c.depth_pixel = depth_pixel;
    return c;
}

SRNetConfig TrainConfig::sr_config() const {
    SRNetConfig c;
    c.num_blocks = num_blocks;
    c.trunk_channels = trunk_channels;
    c.growth_channels = growth_channels;
    c.dyn_kernel_size = dyn_kernel_size;
    c.fusion = effective_fusion();
    c.scale = scale;
    c.embed_dim = embed_dim;
    c.filter_hidden = filter_hidden;
    c.ca_hidden = ca_hidden;
    return c;
}

void TrainConfig::apply_desk_preset() {
    trunk_channels = 32;
    growth_channels = 8;
    num_blocks = 2;
    embed_dim = 64;
    codebook_length = 128;
    queue_size = 512;
    batch_size = 8;
    lr_patch = 32;
    patch_channels = 32;
    pixel_channels = 32;
    filter_hidden = 128;
    ca_hidden = 64;
    iters_per_epoch = 50;
    lr0 = 5e-4;
}

void TrainConfig::set_field(const std::string& key, const std::string& value) {
    auto& table = field_table();
    auto it = table.find(key);
    if (it == table.end()) throw ParameterError("unknown config key: " + key);
    it->second.set(*this, value);
}

std::string TrainConfig::serialize() const {
    std::ostringstream os;
    for (const auto& [key, setter] : field_table()) os << key << " = " << setter.get(*this) << "\n";
    return os.str();
}

TrainConfig parse_config_text(const std::string& text) {
    TrainConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        CDSR_REQUIRE(eq != std::string::npos,
                     "config line " + std::to_string(lineno) + " is not key = value");
        cfg.set_field(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

TrainConfig read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

TrainConfig run_ablation(int model_id, TrainConfig cfg) {
    CDSR_REQUIRE(model_id >= 1 && model_id <= 5, "ablation model id must be in 1..5");
    cfg.use_LPE_P = cfg.use_LPE_L = cfg.use_DQA = cfg.use_CSC = true;
    switch (model_id) {
        case 1: break;
        case 2: cfg.use_CSC = false; break;
        case 3: cfg.use_DQA = false; break;
        case 4: cfg.use_LPE_P = false; break;
        case 5: cfg.use_LPE_L = false; break;
    }
    return cfg;
}

double lr_schedule(int epoch, double lr0, int period) {
    CDSR_REQUIRE(epoch >= 0, "epoch must be >= 0");
    CDSR_REQUIRE(period >= 1, "halving period must be >= 1");
    return lr0 * std::pow(0.5, static_cast<double>(epoch / period));
}

}  // namespace cdsr
