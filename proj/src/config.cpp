#include "multimix/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "multimix/errors.hpp"

namespace multimix {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config: bad boolean for " + key + ": " + v);
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config: bad number for " + key + ": " + v);
    }
}

int64_t parse_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const long long d = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer for " + key + ": " + v);
    }
}

// budgets accept "full" for the whole stream
int64_t parse_budget(const std::string& key, const std::string& v) {
    if (v == "full") return -1;
    const int64_t n = parse_int(key, v);
    if (n < 0) throw ConfigError("config: budget must be >= 0 or `full`: " + key);
    return n;
}

}  // namespace

std::map<std::string, std::string> parse_kv_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open " + path.string());
    std::map<std::string, std::string> kv;
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: expected key = value at line " + std::to_string(lineno) +
                              " of " + path.string());
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("config: empty key at line " + std::to_string(lineno));
        kv[key] = value;
    }
    return kv;
}

void apply_overrides(std::map<std::string, std::string>& kv,
                     const std::vector<std::string>& overrides) {
    for (const auto& item : overrides) {
        const size_t eq = item.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects key=value, got: " + item);
        kv[trim(item.substr(0, eq))] = trim(item.substr(eq + 1));
    }
}

void TrainConfig::validate() const {
    arch.validate();
    hp.validate();
    if (lr <= 0) throw ConfigError("train.lr must be > 0");
    if (epochs < 0 || max_steps < 0) throw ConfigError("train.epochs/max_steps must be >= 0");
    if (epochs == 0 && max_steps == 0)
        throw ConfigError("one of train.epochs or train.max_steps must be positive");
    if (aug.k_min < 1 || aug.k_max < aug.k_min)
        throw ConfigError("aug.k_min/k_max out of order");
}

TrainConfig make_train_config(const std::map<std::string, std::string>& kv,
                              const std::filesystem::path& base_dir) {
    TrainConfig cfg;
    auto path_of = [&](const std::string& v) {
        std::filesystem::path p(v);
        return p.is_absolute() ? p : base_dir / p;
    };
    for (const auto& [key, v] : kv) {
        if (key == "model.extent") cfg.arch.extent = static_cast<int>(parse_int(key, v));
        else if (key == "model.width_multiplier") cfg.width_multiplier = parse_double(key, v);
        else if (key == "model.blocks") cfg.arch.blocks = static_cast<int>(parse_int(key, v));
        else if (key == "model.classes") cfg.arch.classes = static_cast<int>(parse_int(key, v));
        else if (key == "ablation.bridge") cfg.arch.bridge_enabled = parse_bool(key, v);
        else if (key == "ablation.ssl_classification")
            cfg.arch.ssl_classification_enabled = parse_bool(key, v);
        else if (key == "ablation.ssl_segmentation")
            cfg.arch.ssl_segmentation_enabled = parse_bool(key, v);
        else if (key == "hp.t") cfg.hp.t = parse_double(key, v);
        else if (key == "hp.lambda") cfg.hp.lambda = parse_double(key, v);
        else if (key == "hp.alpha") cfg.hp.alpha = parse_double(key, v);
        else if (key == "hp.beta") cfg.hp.beta = parse_double(key, v);
        else if (key == "hp.m") cfg.hp.m = static_cast<int>(parse_int(key, v));
        else if (key == "train.lr") cfg.lr = parse_double(key, v);
        else if (key == "train.lr_decay_factor") cfg.lr_decay_factor = parse_double(key, v);
        else if (key == "train.lr_decay_epochs") cfg.lr_decay_epochs = parse_int(key, v);
        else if (key == "train.epochs") cfg.epochs = parse_int(key, v);
        else if (key == "train.max_steps") cfg.max_steps = parse_int(key, v);
        else if (key == "train.seed") cfg.seed = static_cast<uint64_t>(parse_int(key, v));
        else if (key == "train.checkpoint_every") cfg.checkpoint_every = parse_int(key, v);
        else if (key == "train.strict_deterministic")
            cfg.strict_deterministic = parse_bool(key, v);
        else if (key == "data.cls_labeled") cfg.cls_labeled = path_of(v);
        else if (key == "data.cls_unlabeled") cfg.cls_unlabeled = path_of(v);
        else if (key == "data.seg_labeled") cfg.seg_labeled = path_of(v);
        else if (key == "data.seg_unlabeled") cfg.seg_unlabeled = path_of(v);
        else if (key == "data.budget_cls") cfg.budget_cls = parse_budget(key, v);
        else if (key == "data.budget_seg") cfg.budget_seg = parse_budget(key, v);
        else if (key == "out.dir") cfg.out_dir = path_of(v);
        else if (key == "aug.factor_lo") cfg.aug.factor_lo = parse_double(key, v);
        else if (key == "aug.factor_hi") cfg.aug.factor_hi = parse_double(key, v);
        else if (key == "aug.posterize_bits_lo")
            cfg.aug.posterize_bits_lo = static_cast<int>(parse_int(key, v));
        else if (key == "aug.posterize_bits_hi")
            cfg.aug.posterize_bits_hi = static_cast<int>(parse_int(key, v));
        else if (key == "aug.solarize_lo") cfg.aug.solarize_lo = parse_double(key, v);
        else if (key == "aug.solarize_hi") cfg.aug.solarize_hi = parse_double(key, v);
        else if (key == "aug.shear_max") cfg.aug.shear_max = parse_double(key, v);
        else if (key == "aug.rotate_max_deg") cfg.aug.rotate_max_deg = parse_double(key, v);
        else if (key == "aug.translate_max_frac")
            cfg.aug.translate_max_frac = parse_double(key, v);
        else if (key == "aug.k_min") cfg.aug.k_min = static_cast<int>(parse_int(key, v));
        else if (key == "aug.k_max") cfg.aug.k_max = static_cast<int>(parse_int(key, v));
        else if (key == "aug.pool") {
            cfg.aug.pool.clear();
            std::stringstream ss(v);
            std::string item;
            while (std::getline(ss, item, ','))
                if (!trim(item).empty()) cfg.aug.pool.push_back(transform_kind_from_name(trim(item)));
        } else {
            throw ConfigError("config: unknown key " + key);
        }
    }
    cfg.arch.base_width =
        std::max(1, static_cast<int>(std::lround(16.0 * cfg.width_multiplier)));
    cfg.validate();
    return cfg;
}

std::string render_config(const TrainConfig& cfg) {
    std::ostringstream os;
    os << "format.checkpoint = 1\n";
    os << "format.log = 1\n";
    os << "model.extent = " << cfg.arch.extent << "\n";
    os << "model.width_multiplier = " << cfg.width_multiplier << "\n";
    os << "model.base_width = " << cfg.arch.base_width << "\n";
    os << "model.blocks = " << cfg.arch.blocks << "\n";
    os << "model.classes = " << cfg.arch.classes << "\n";
    os << "ablation.bridge = " << (cfg.arch.bridge_enabled ? "true" : "false") << "\n";
    os << "ablation.ssl_classification = "
       << (cfg.arch.ssl_classification_enabled ? "true" : "false") << "\n";
    os << "ablation.ssl_segmentation = "
       << (cfg.arch.ssl_segmentation_enabled ? "true" : "false") << "\n";
    os << "hp.t = " << cfg.hp.t << "\n";
    os << "hp.lambda = " << cfg.hp.lambda << "\n";
    os << "hp.alpha = " << cfg.hp.alpha << "\n";
    os << "hp.beta = " << cfg.hp.beta << "\n";
    os << "hp.m = " << cfg.hp.m << "\n";
    os << "train.lr = " << cfg.lr << "\n";
    os << "train.lr_decay_factor = " << cfg.lr_decay_factor << "\n";
    os << "train.lr_decay_epochs = " << cfg.lr_decay_epochs << "\n";
    os << "train.epochs = " << cfg.epochs << "\n";
    os << "train.max_steps = " << cfg.max_steps << "\n";
    os << "train.seed = " << cfg.seed << "\n";
    os << "train.checkpoint_every = " << cfg.checkpoint_every << "\n";
    os << "train.strict_deterministic = " << (cfg.strict_deterministic ? "true" : "false")
       << "\n";
    os << "data.cls_labeled = " << cfg.cls_labeled.string() << "\n";
    os << "data.cls_unlabeled = " << cfg.cls_unlabeled.string() << "\n";
    os << "data.seg_labeled = " << cfg.seg_labeled.string() << "\n";
    os << "data.seg_unlabeled = " << cfg.seg_unlabeled.string() << "\n";
    os << "data.budget_cls = "
       << (cfg.budget_cls < 0 ? std::string("full") : std::to_string(cfg.budget_cls)) << "\n";
    os << "data.budget_seg = "
       << (cfg.budget_seg < 0 ? std::string("full") : std::to_string(cfg.budget_seg)) << "\n";
    os << "out.dir = " << cfg.out_dir.string() << "\n";
    os << "aug.factor_lo = " << cfg.aug.factor_lo << "\n";
    os << "aug.factor_hi = " << cfg.aug.factor_hi << "\n";
    os << "aug.posterize_bits_lo = " << cfg.aug.posterize_bits_lo << "\n";
    os << "aug.posterize_bits_hi = " << cfg.aug.posterize_bits_hi << "\n";
    os << "aug.solarize_lo = " << cfg.aug.solarize_lo << "\n";
    os << "aug.solarize_hi = " << cfg.aug.solarize_hi << "\n";
    os << "aug.shear_max = " << cfg.aug.shear_max << "\n";
    os << "aug.rotate_max_deg = " << cfg.aug.rotate_max_deg << "\n";
    os << "aug.translate_max_frac = " << cfg.aug.translate_max_frac << "\n";
    os << "aug.k_min = " << cfg.aug.k_min << "\n";
    os << "aug.k_max = " << cfg.aug.k_max << "\n";
    os << "aug.pool = ";
    const auto& pool = cfg.aug.effective_pool();
    for (size_t i = 0; i < pool.size(); ++i)
        os << (i ? "," : "") << transform_kind_name(pool[i]);
    os << "\n";
    return os.str();
}

}  // namespace multimix
