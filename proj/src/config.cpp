// SPDX-License-Identifier: Apache-2.0
#include "dualvae/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace dualvae::inline DUALVAE_ABI {

bool operator==(const VqSettings& a, const VqSettings& b) {
    return a.decay == b.decay && a.epsilon == b.epsilon && a.data_init == b.data_init;
}

bool operator==(const LossWeights& a, const LossWeights& b) {
    return a.w_F == b.w_F && a.w_z == b.w_z && a.w_vq == b.w_vq && a.w_kl == b.w_kl && a.beta == b.beta;
}

bool operator==(const AdamSettings& a, const AdamSettings& b) {
    return a.lr == b.lr && a.beta1 == b.beta1 && a.beta2 == b.beta2 && a.eps == b.eps;
}

bool operator==(const TrainConfig& a, const TrainConfig& b) {
    return a.model == b.model && a.vq == b.vq && a.loss == b.loss && a.extra_recon == b.extra_recon &&
           a.optim == b.optim && a.train == b.train && a.prior == b.prior && a.data == b.data && a.eval == b.eval &&
           a.seed == b.seed;
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError(msg); };
    try {
        model.validate();
        prior.validate();
    } catch (const ContractViolation& e) {
        fail(e.what());
    }
    if (!(vq.decay >= 0.0 && vq.decay < 1.0)) fail("vq.decay must lie in [0, 1)");
    if (!(vq.epsilon > 0.0)) fail("vq.epsilon must be positive");
    if (loss.w_F < 0 || loss.w_z < 0 || loss.w_vq < 0 || loss.w_kl < 0 || loss.beta < 0) {
        fail("loss weights must be non-negative");
    }
    if (!extra_recon.empty()) fail("loss.extra_recon: no extra reconstruction terms are available");
    if (!(optim.lr > 0.0) || !(optim.beta1 >= 0.0 && optim.beta1 < 1.0) || !(optim.beta2 >= 0.0 && optim.beta2 < 1.0) ||
        !(optim.eps > 0.0)) {
        fail("invalid optimiser settings");
    }
    if (train.steps < 0 || train.batch < 1 || train.log_every < 1 || train.checkpoint_every < 1 ||
        train.keep_checkpoints < 1) {
        fail("invalid train settings");
    }
    if (data.count < 1 || data.shapes < 1 || data.shapes > 8 || data.colours < 1 || data.colours > 8) {
        fail("data.count must be positive; data.shapes and data.colours must lie in [1, 8]");
    }
    if (eval.histogram_bins < 1 || eval.samples_per_exemplar < 1 || eval.exemplars < 1 || eval.baseline_pairs < 1 ||
        !(eval.temperature > 0.0)) {
        fail("invalid eval settings");
    }
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const char* end = text.data() + text.size();
    const auto r = std::from_chars(text.data(), end, value);
    if (r.ec != std::errc() || r.ptr != end) throw ConfigError(key + ": cannot parse '" + text + "'");
    return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_number<int>(key, trim(item)));
    if (out.empty()) throw ConfigError(key + ": expected a comma-separated list");
    return out;
}

struct Field {
    std::function<void(TrainConfig&, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
};

template <typename T, typename Access>
Field number_field(const std::string& key, Access access) {
    Field f;
    f.set = [key, access](TrainConfig& c, const std::string& v) { access(c) = parse_number<T>(key, v); };
    f.get = [access](const TrainConfig& c) {
        if constexpr (std::is_floating_point_v<T>) {
            return format_double(access(const_cast<TrainConfig&>(c)));
        } else {
            return std::to_string(access(const_cast<TrainConfig&>(c)));
        }
    };
    return f;
}

using FieldList = std::vector<std::pair<std::string, Field>>;

const FieldList& fields() {
    static const FieldList list = [] {
        FieldList l;
        auto add_int = [&l](const std::string& key, auto access) { l.emplace_back(key, number_field<int>(key, access)); };
        auto add_double = [&l](const std::string& key, auto access) {
            l.emplace_back(key, number_field<double>(key, access));
        };
        add_int("model.image_size", [](TrainConfig& c) -> int& { return c.model.image_size; });
        add_int("model.downsample", [](TrainConfig& c) -> int& { return c.model.downsample; });
        add_int("model.embed_dim", [](TrainConfig& c) -> int& { return c.model.embed_dim; });
        add_int("model.n_embed", [](TrainConfig& c) -> int& { return c.model.n_embed; });
        add_int("model.colour_dim", [](TrainConfig& c) -> int& { return c.model.colour_dim; });
        {
            Field f;
            f.set = [](TrainConfig& c, const std::string& v) { c.model.widths = parse_int_list("model.widths", v); };
            f.get = [](const TrainConfig& c) {
                std::string s;
                for (std::size_t i = 0; i < c.model.widths.size(); ++i) {
                    s += (i ? "," : "") + std::to_string(c.model.widths[i]);
                }
                return s;
            };
            l.emplace_back("model.widths", f);
        }
        add_int("model.geometry_layers", [](TrainConfig& c) -> int& { return c.model.geometry_layers; });
        add_int("model.geometry_channels", [](TrainConfig& c) -> int& { return c.model.geometry_channels; });
        add_int("model.colour_hidden", [](TrainConfig& c) -> int& { return c.model.colour_hidden; });
        {
            Field f;
            f.set = [](TrainConfig& c, const std::string& v) {
                try {
                    c.model.variant = parse_variant(v);
                } catch (const ContractViolation& e) {
                    throw ConfigError(std::string("model.variant: ") + e.what());
                }
            };
            f.get = [](const TrainConfig& c) { return to_string(c.model.variant); };
            l.emplace_back("model.variant", f);
        }
        add_double("vq.decay", [](TrainConfig& c) -> double& { return c.vq.decay; });
        add_double("vq.epsilon", [](TrainConfig& c) -> double& { return c.vq.epsilon; });
        {
            Field f;
            f.set = [](TrainConfig& c, const std::string& v) { c.vq.data_init = parse_bool("vq.data_init", v); };
            f.get = [](const TrainConfig& c) { return std::string(c.vq.data_init ? "true" : "false"); };
            l.emplace_back("vq.data_init", f);
        }
        add_double("loss.w_F", [](TrainConfig& c) -> double& { return c.loss.w_F; });
        add_double("loss.w_z", [](TrainConfig& c) -> double& { return c.loss.w_z; });
        add_double("loss.w_vq", [](TrainConfig& c) -> double& { return c.loss.w_vq; });
        add_double("loss.w_kl", [](TrainConfig& c) -> double& { return c.loss.w_kl; });
        add_double("loss.beta", [](TrainConfig& c) -> double& { return c.loss.beta; });
        {
            Field f;
            f.set = [](TrainConfig& c, const std::string& v) { c.extra_recon = v; };
            f.get = [](const TrainConfig& c) { return c.extra_recon; };
            l.emplace_back("loss.extra_recon", f);
        }
        add_double("optim.lr", [](TrainConfig& c) -> double& { return c.optim.lr; });
        add_double("optim.beta1", [](TrainConfig& c) -> double& { return c.optim.beta1; });
        add_double("optim.beta2", [](TrainConfig& c) -> double& { return c.optim.beta2; });
        add_double("optim.eps", [](TrainConfig& c) -> double& { return c.optim.eps; });
        add_int("train.steps", [](TrainConfig& c) -> int& { return c.train.steps; });
        add_int("train.batch", [](TrainConfig& c) -> int& { return c.train.batch; });
        add_int("train.log_every", [](TrainConfig& c) -> int& { return c.train.log_every; });
        add_int("train.checkpoint_every", [](TrainConfig& c) -> int& { return c.train.checkpoint_every; });
        add_int("train.keep_checkpoints", [](TrainConfig& c) -> int& { return c.train.keep_checkpoints; });
        add_int("prior.blocks", [](TrainConfig& c) -> int& { return c.prior.blocks; });
        add_int("prior.channels", [](TrainConfig& c) -> int& { return c.prior.channels; });
        add_int("prior.heads", [](TrainConfig& c) -> int& { return c.prior.heads; });
        add_double("prior.dropout", [](TrainConfig& c) -> double& { return c.prior.dropout; });
        add_int("prior.steps", [](TrainConfig& c) -> int& { return c.prior.steps; });
        add_int("prior.batch", [](TrainConfig& c) -> int& { return c.prior.batch; });
        add_double("prior.lr", [](TrainConfig& c) -> double& { return c.prior.lr; });
        {
            Field f;
            f.set = [](TrainConfig& c, const std::string& v) { c.data.path = v; };
            f.get = [](const TrainConfig& c) { return c.data.path; };
            l.emplace_back("data.path", f);
        }
        add_int("data.count", [](TrainConfig& c) -> int& { return c.data.count; });
        add_int("data.shapes", [](TrainConfig& c) -> int& { return c.data.shapes; });
        add_int("data.colours", [](TrainConfig& c) -> int& { return c.data.colours; });
        l.emplace_back("data.split_seed",
                       number_field<std::uint64_t>("data.split_seed",
                                                   [](TrainConfig& c) -> std::uint64_t& { return c.data.split_seed; }));
        add_int("eval.histogram_bins", [](TrainConfig& c) -> int& { return c.eval.histogram_bins; });
        add_int("eval.samples_per_exemplar", [](TrainConfig& c) -> int& { return c.eval.samples_per_exemplar; });
        add_int("eval.exemplars", [](TrainConfig& c) -> int& { return c.eval.exemplars; });
        add_int("eval.baseline_pairs", [](TrainConfig& c) -> int& { return c.eval.baseline_pairs; });
        add_double("eval.temperature", [](TrainConfig& c) -> double& { return c.eval.temperature; });
        {
            Field f;
            f.set = [](TrainConfig& c, const std::string& v) { c.eval.symmetric = parse_bool("eval.symmetric", v); };
            f.get = [](const TrainConfig& c) { return std::string(c.eval.symmetric ? "true" : "false"); };
            l.emplace_back("eval.symmetric", f);
        }
        l.emplace_back("seed", number_field<std::uint64_t>(
                                   "seed", [](TrainConfig& c) -> std::uint64_t& { return c.seed; }));
        return l;
    }();
    return list;
}

const Field* find_field(const std::string& key) {
    for (const auto& [name, field] : fields()) {
        if (name == key) return &field;
    }
    return nullptr;
}

}  // namespace

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& entry : fields()) keys.push_back(entry.first);
    return keys;
}

TrainConfig parse_config(const std::string& text) {
    TrainConfig config;
    std::istringstream in(text);
    std::string line;
    int number = 0;
    std::map<std::string, int> seen;
    while (std::getline(in, line)) {
        ++number;
        const std::string body = trim(line);
        if (body.empty() || body[0] == '#') continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(number) + ": expected 'key = value'");
        }
        const std::string key = trim(body.substr(0, eq));
        const std::string value = trim(body.substr(eq + 1));
        const Field* field = find_field(key);
        if (field == nullptr) throw ConfigError("line " + std::to_string(number) + ": unknown key '" + key + "'");
        if (seen.count(key)) {
            throw ConfigError("line " + std::to_string(number) + ": duplicate key '" + key + "' (first on line " +
                              std::to_string(seen[key]) + ")");
        }
        seen[key] = number;
        field->set(config, value);
    }
    config.validate();
    return config;
}

std::string serialize_config(const TrainConfig& config) {
    std::string out;
    for (const auto& [name, field] : fields()) out += name + " = " + field.get(config) + "\n";
    return out;
}

TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

}  // namespace dualvae
