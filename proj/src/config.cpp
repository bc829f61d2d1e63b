#include "lss/config.hpp"

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <set>
#include <sstream>

namespace lss {
namespace {

class Section {
public:
    Section(const YAML::Node& node, std::string path) : node_(node), path_(std::move(path)) {
        if (node_ && !node_.IsNull() && !node_.IsMap()) throw ConfigError(path_, "expected a mapping");
    }

    template <typename T>
    void get(const std::string& key, T& out) {
        seen_.insert(key);
        if (!node_ || node_.IsNull()) return;
        const YAML::Node v = node_[key];
        if (!v || v.IsNull()) return;
        out = convert<T>(v, key);
    }

    template <typename T>
    void require(const std::string& key, T& out) {
        if (!node_ || node_.IsNull() || !node_[key] || node_[key].IsNull()) {
            throw ConfigError(full(key), "missing required key");
        }
        get(key, out);
    }

    Section child(const std::string& key) {
        seen_.insert(key);
        if (!node_ || node_.IsNull()) return Section(YAML::Node(), full(key));
        return Section(node_[key], full(key));
    }

    void reject_unknown() const {
        if (!node_ || node_.IsNull()) return;
        for (const auto& kv : node_) {
            const auto key = kv.first.as<std::string>();
            if (!seen_.count(key)) throw ConfigError(full(key), "unknown key");
        }
    }

    std::string full(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

private:
    template <typename T>
    T convert(const YAML::Node& v, const std::string& key) const {
        try {
            if constexpr (std::is_same_v<T, std::vector<int>> || std::is_same_v<T, std::vector<double>>) {
                if (!v.IsSequence()) throw ConfigError(full(key), "expected a list");
            } else {
                if (!v.IsScalar()) throw ConfigError(full(key), "expected a scalar");
            }
            return v.as<T>();
        } catch (const YAML::Exception&) {
            throw ConfigError(full(key), std::string("expected ") + type_name<T>());
        }
    }

    template <typename T>
    static const char* type_name() {
        if constexpr (std::is_same_v<T, bool>) return "a boolean";
        else if constexpr (std::is_integral_v<T>) return "an integer";
        else if constexpr (std::is_floating_point_v<T>) return "a number";
        else if constexpr (std::is_same_v<T, std::string>) return "a string";
        else return "a list of numbers";
    }

    YAML::Node node_;
    std::string path_;
    std::set<std::string> seen_;
};

void apply_override(YAML::Node& root, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("", "override '" + assignment + "' must look like section.key=value");
    }
    const std::string path = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);
    std::vector<std::string> parts;
    std::stringstream ss(path);
    for (std::string part; std::getline(ss, part, '.');) {
        if (part.empty()) throw ConfigError(path, "empty path component in override");
        parts.push_back(part);
    }
    YAML::Node parsed;
    try {
        parsed = YAML::Load(value);
    } catch (const YAML::Exception& e) {
        throw ConfigError(path, std::string("cannot parse override value: ") + e.what());
    }
    // walk with fresh handles; yaml-cpp node assignment rebinds rather than copies
    std::vector<YAML::Node> chain{root};
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        YAML::Node next = chain.back()[parts[i]];
        if (next && !next.IsNull() && !next.IsMap()) throw ConfigError(path, "override path crosses a scalar");
        if (!next || next.IsNull()) {
            chain.back()[parts[i]] = YAML::Node(YAML::NodeType::Map);
            next = chain.back()[parts[i]];
        }
        chain.push_back(next);
    }
    chain.back()[parts.back()] = parsed;
}

template <typename Enum, typename Parse>
void get_enum(Section& s, const std::string& key, Enum& out, Parse parse) {
    std::string text;
    s.get(key, text);
    if (text.empty()) return;
    try {
        out = parse(text);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(s.full(key), e.what());
    }
}

ExperimentConfig from_yaml(const YAML::Node& root) {
    ExperimentConfig cfg;
    Section top(root, "");

    top.require("master_seed", cfg.master_seed);

    auto fed = top.child("federation");
    auto& f = cfg.federation;
    fed.require("num_clients", f.num_clients);
    fed.require("rounds", f.rounds);
    std::string strategy;
    fed.require("strategy", strategy);
    get_enum(fed, "strategy", f.strategy, strategy_from_string);
    fed.get("client_weights", f.client_weights);
    fed.get("warmup_steps", f.warmup_steps);
    fed.get("warmup_eta", f.warmup_eta);
    fed.get("warmup_batch_size", f.warmup_batch_size);
    fed.reject_unknown();
    f.master_seed = cfg.master_seed;

    auto loc = top.child("local");
    auto& l = cfg.local;
    loc.get("eta", l.eta);
    loc.get("tau", l.tau);
    loc.get("batch_size", l.batch_size);
    loc.get("lambda_a", l.lambda_a);
    loc.get("lambda_d", l.lambda_d);
    loc.get("num_pool_models", l.num_pool_models);
    loc.get("mu_prox", l.mu_prox);
    get_enum(loc, "coeff_mode", l.coeff_mode, coeff_mode_from_string);
    loc.get("dist_epsilon", l.dist_epsilon);
    loc.reject_unknown();

    auto dat = top.child("data");
    auto& d = cfg.data;
    dat.get("source", d.source);
    dat.get("num_classes", d.num_classes);
    dat.get("per_class", d.per_class);
    dat.get("input_dim", d.input_dim);
    dat.get("spread", d.spread);
    dat.get("proxy_per_class", d.proxy_per_class);
    dat.get("images", d.idx_images);
    dat.get("labels", d.idx_labels);
    dat.get("val_fraction", d.val_fraction);
    dat.get("test_fraction", d.test_fraction);
    dat.reject_unknown();

    auto part = top.child("partition");
    get_enum(part, "mode", d.partition, [](const std::string& s) {
        if (s == "dirichlet") return PartitionMode::dirichlet;
        if (s == "feature_shift") return PartitionMode::feature_shift;
        throw std::invalid_argument("unknown partition mode '" + s + "' (expected dirichlet or feature_shift)");
    });
    part.get("alpha", d.alpha);
    part.get("shift_strength", d.shift_strength);
    part.reject_unknown();

    auto mod = top.child("model");
    mod.get("hidden_dims", cfg.model.hidden_dims);
    get_enum(mod, "activation", cfg.model.activation, activation_from_string);
    mod.reject_unknown();

    auto ana = top.child("analysis");
    auto& a = cfg.analysis;
    ana.get("zeta", a.zeta);
    ana.get("sigma", a.sigma);
    ana.get("sigma_draws", a.sigma_draws);
    ana.get("bvcl", a.bvcl);
    ana.get("hessian", a.hessian);
    ana.get("hessian_iters", a.hessian_iters);
    ana.get("hessian_batch", a.hessian_batch);
    ana.reject_unknown();

    auto out = top.child("output");
    out.get("dir", cfg.output.dir);
    out.get("record_timing", cfg.output.record_timing);
    out.reject_unknown();

    top.reject_unknown();
    cfg.validate();
    return cfg;
}

// Maps a nested validation message back to its key path.
std::string key_for(const std::string& message) {
    const auto sp = message.find(' ');
    const std::string first = message.substr(0, sp);
    return first.find('.') != std::string::npos ? first : std::string();
}

}  // namespace

void ExperimentConfig::validate() const {
    auto check = [](auto&& fn) {
        try {
            fn();
        } catch (const std::invalid_argument& e) {
            const std::string msg = e.what();
            const std::string key = key_for(msg);
            throw ConfigError(key, key.empty() ? msg : msg.substr(key.size() + 1));
        }
    };
    check([&] { federation.validate(); });
    check([&] { local.validate(); });
    check([&] { data.validate(); });
    check([&] {
        for (int h : model.hidden_dims) {
            if (h <= 0) throw std::invalid_argument("model.hidden_dims entries must be positive");
        }
    });
    if (analysis.sigma_draws < 2) throw ConfigError("analysis.sigma_draws", "must be >= 2");
    if (analysis.hessian_iters < 1) throw ConfigError("analysis.hessian_iters", "must be >= 1");
    if (analysis.hessian_batch < 1) throw ConfigError("analysis.hessian_batch", "must be >= 1");
}

ExperimentConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::Exception& e) {
        throw ConfigError("", std::string("malformed config: ") + e.what());
    }
    if (!root || root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
    if (!root.IsMap()) throw ConfigError("", "config root must be a mapping");
    for (const auto& o : overrides) apply_override(root, o);
    return from_yaml(root);
}

ExperimentConfig parse_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw ConfigError("", "cannot read config file " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), overrides);
}

std::string serialize_config(const ExperimentConfig& c, bool include_output_dir) {
    YAML::Emitter e;
    e.SetDoublePrecision(17);
    e << YAML::BeginMap;
    e << YAML::Key << "master_seed" << YAML::Value << c.master_seed;

    const auto& f = c.federation;
    e << YAML::Key << "federation" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "num_clients" << YAML::Value << f.num_clients;
    e << YAML::Key << "rounds" << YAML::Value << f.rounds;
    e << YAML::Key << "strategy" << YAML::Value << to_string(f.strategy);
    e << YAML::Key << "client_weights" << YAML::Value << YAML::Flow << f.client_weights;
    e << YAML::Key << "warmup_steps" << YAML::Value << f.warmup_steps;
    e << YAML::Key << "warmup_eta" << YAML::Value << f.warmup_eta;
    e << YAML::Key << "warmup_batch_size" << YAML::Value << f.warmup_batch_size;
    e << YAML::EndMap;

    const auto& l = c.local;
    e << YAML::Key << "local" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "eta" << YAML::Value << l.eta;
    e << YAML::Key << "tau" << YAML::Value << l.tau;
    e << YAML::Key << "batch_size" << YAML::Value << l.batch_size;
    e << YAML::Key << "lambda_a" << YAML::Value << l.lambda_a;
    e << YAML::Key << "lambda_d" << YAML::Value << l.lambda_d;
    e << YAML::Key << "num_pool_models" << YAML::Value << l.num_pool_models;
    e << YAML::Key << "mu_prox" << YAML::Value << l.mu_prox;
    e << YAML::Key << "coeff_mode" << YAML::Value << to_string(l.coeff_mode);
    e << YAML::Key << "dist_epsilon" << YAML::Value << l.dist_epsilon;
    e << YAML::EndMap;

    const auto& d = c.data;
    e << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "source" << YAML::Value << d.source;
    e << YAML::Key << "num_classes" << YAML::Value << d.num_classes;
    e << YAML::Key << "per_class" << YAML::Value << d.per_class;
    e << YAML::Key << "input_dim" << YAML::Value << d.input_dim;
    e << YAML::Key << "spread" << YAML::Value << d.spread;
    e << YAML::Key << "proxy_per_class" << YAML::Value << d.proxy_per_class;
    e << YAML::Key << "images" << YAML::Value << d.idx_images;
    e << YAML::Key << "labels" << YAML::Value << d.idx_labels;
    e << YAML::Key << "val_fraction" << YAML::Value << d.val_fraction;
    e << YAML::Key << "test_fraction" << YAML::Value << d.test_fraction;
    e << YAML::EndMap;

    e << YAML::Key << "partition" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "mode" << YAML::Value
      << (d.partition == PartitionMode::dirichlet ? "dirichlet" : "feature_shift");
    e << YAML::Key << "alpha" << YAML::Value << d.alpha;
    e << YAML::Key << "shift_strength" << YAML::Value << d.shift_strength;
    e << YAML::EndMap;

    e << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "hidden_dims" << YAML::Value << YAML::Flow << c.model.hidden_dims;
    e << YAML::Key << "activation" << YAML::Value << to_string(c.model.activation);
    e << YAML::EndMap;

    const auto& a = c.analysis;
    e << YAML::Key << "analysis" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "zeta" << YAML::Value << a.zeta;
    e << YAML::Key << "sigma" << YAML::Value << a.sigma;
    e << YAML::Key << "sigma_draws" << YAML::Value << a.sigma_draws;
    e << YAML::Key << "bvcl" << YAML::Value << a.bvcl;
    e << YAML::Key << "hessian" << YAML::Value << a.hessian;
    e << YAML::Key << "hessian_iters" << YAML::Value << a.hessian_iters;
    e << YAML::Key << "hessian_batch" << YAML::Value << a.hessian_batch;
    e << YAML::EndMap;

    e << YAML::Key << "output" << YAML::Value << YAML::BeginMap;
    if (include_output_dir) e << YAML::Key << "dir" << YAML::Value << c.output.dir;
    e << YAML::Key << "record_timing" << YAML::Value << c.output.record_timing;
    e << YAML::EndMap;

    e << YAML::EndMap;
    return std::string(e.c_str()) + "\n";
}

}  // namespace lss
