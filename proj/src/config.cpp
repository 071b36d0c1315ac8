#include "reflexsplit/config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>

#include "reflexsplit/common.hpp"

namespace reflexsplit {

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::reference() {
    ModelConfig c;
    c.image_size = 384;
    c.base_width = 48;
    c.lfsb_depth = {2, 2, 5, 9, 12};
    return c;
}

int channel_at(const ModelConfig& config, int level) {
    if (level < 0 || level > 5) {
        throw ConfigError("channel_at: level " + std::to_string(level) + " out of range [0,5]");
    }
    return config.base_width << level;
}

int lfsb_channels(const ModelConfig& config, int depth) {
    if (depth < 0 || depth > 5) {
        throw ConfigError("lfsb_channels: depth " + std::to_string(depth) + " out of range");
    }
    if (depth == 5) return channel_at(config, 5) / 4;
    return channel_at(config, depth);
}

ModelConfig validate_config(ModelConfig config) {
    if (config.image_size % 32 != 0) {
        throw ConfigError("image_size " + std::to_string(config.image_size) +
                          " not divisible by 32");
    }
    if (config.base_width < 2 || config.base_width % 2 != 0) {
        throw ConfigError("base_width must be a positive even number, got " +
                          std::to_string(config.base_width));
    }
    if (config.window_size <= 0) throw ConfigError("window_size must be positive");
    if (!config.window_padding) {
        // Attention runs at the spatial grids of levels 0..4 (depth-5 blocks
        // share the level-4 grid), so those are the sizes that must tile.
        for (int level = 0; level <= 4; ++level) {
            const int extent = config.image_size >> level;
            if (extent % config.window_size != 0) {
                throw ConfigError("window padding disabled and level " + std::to_string(level) +
                                  " extent " + std::to_string(extent) + " not divisible by window " +
                                  std::to_string(config.window_size));
            }
        }
    }
    for (int depth = 0; depth <= 5; ++depth) {
        const int h = config.heads[static_cast<std::size_t>(depth)];
        if (h <= 0) throw ConfigError("heads at level " + std::to_string(depth) + " must be positive");
        if (channel_at(config, depth) % h != 0) {
            throw ConfigError("heads at level " + std::to_string(depth) + " (" + std::to_string(h) +
                              ") do not divide channel count " +
                              std::to_string(channel_at(config, depth)));
        }
        if (lfsb_channels(config, depth) % h != 0) {
            throw ConfigError("heads at level " + std::to_string(depth) + " (" + std::to_string(h) +
                              ") do not divide block width " +
                              std::to_string(lfsb_channels(config, depth)));
        }
    }
    for (int level = 0; level <= 4; ++level) {
        if (config.lfsb_depth[static_cast<std::size_t>(level)] < 0) {
            throw ConfigError("lfsb depth at level " + std::to_string(level) + " negative");
        }
    }
    if (config.warmup_epochs < 1) throw ConfigError("warmup_epochs must be >= 1");
    if (config.total_epochs < 0) throw ConfigError("total_epochs must be >= 0");
    const double rsum = config.ratio_synthetic + config.ratio_real + config.ratio_nature;
    if (config.ratio_synthetic < 0 || config.ratio_real < 0 || config.ratio_nature < 0 ||
        std::abs(rsum - 1.0) > 1e-9) {
        throw ConfigError("data ratios must be non-negative and sum to 1");
    }
    if (config.loss.rec < 0 || config.loss.refl < 0 || config.loss.vgg < 0 ||
        config.loss.exclu < 0 || config.loss.recons < 0 || config.loss.color < 0) {
        throw ConfigError("loss weights must be non-negative");
    }
    if (config.charbonnier_eps <= 0) throw ConfigError("loss.charbonnier_eps must be positive");
    if (config.opt.t_max < 1) throw ConfigError("opt.tmax must be >= 1");
    if (config.opt.eta_min < 0 || config.opt.eta_min > config.opt.lr) {
        throw ConfigError("opt.eta_min must lie in [0, opt.lr]");
    }
    if (config.gfeb_backend.empty()) throw ConfigError("gfeb.backend must not be empty");
    if (config.sin_block_activation != "sin" && config.sin_block_activation != "gelu") {
        throw ConfigError("lrm.activation must be 'sin' or 'gelu'");
    }
    return config;
}

namespace {

struct Field {
    std::function<void(ModelConfig&, const std::string&)> set;
    std::function<std::string(const ModelConfig&)> get;
};

int parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const int r = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected integer, got '" + v + "'");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected number, got '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

const std::map<std::string, Field>& field_table() {
    static const std::map<std::string, Field> table = [] {
        std::map<std::string, Field> t;
        auto add_int = [&t](const std::string& key, int ModelConfig::* member) {
            t[key] = {[key, member](ModelConfig& c, const std::string& v) {
                          c.*member = parse_int(key, v);
                      },
                      [member](const ModelConfig& c) { return std::to_string(c.*member); }};
        };
        auto add_bool = [&t](const std::string& key, bool ModelConfig::* member) {
            t[key] = {[key, member](ModelConfig& c, const std::string& v) {
                          c.*member = parse_bool(key, v);
                      },
                      [member](const ModelConfig& c) { return c.*member ? "true" : "false"; }};
        };
        auto add_double = [&t](const std::string& key, double ModelConfig::* member) {
            t[key] = {[key, member](ModelConfig& c, const std::string& v) {
                          c.*member = parse_double(key, v);
                      },
                      [member](const ModelConfig& c) { return format_double(c.*member); }};
        };
        add_int("image_size", &ModelConfig::image_size);
        add_int("base_width", &ModelConfig::base_width);
        add_int("window_size", &ModelConfig::window_size);
        add_bool("window_padding", &ModelConfig::window_padding);
        add_int("warmup_epochs", &ModelConfig::warmup_epochs);
        add_int("total_epochs", &ModelConfig::total_epochs);
        add_bool("gfeb.freeze", &ModelConfig::gfeb_freeze);
        add_bool("lfsb.position_bias", &ModelConfig::position_bias);
        add_double("loss.charbonnier_eps", &ModelConfig::charbonnier_eps);
        add_int("pairs_per_epoch", &ModelConfig::pairs_per_epoch);
        add_double("data.ratio_synthetic", &ModelConfig::ratio_synthetic);
        add_double("data.ratio_real", &ModelConfig::ratio_real);
        add_double("data.ratio_nature", &ModelConfig::ratio_nature);
        add_bool("data.augment", &ModelConfig::augment);
        add_bool("data.reflection_blur", &ModelConfig::reflection_blur);
        for (int i = 0; i <= 5; ++i) {
            const std::string key = "heads." + std::to_string(i);
            t[key] = {[key, i](ModelConfig& c, const std::string& v) {
                          c.heads[static_cast<std::size_t>(i)] = parse_int(key, v);
                      },
                      [i](const ModelConfig& c) {
                          return std::to_string(c.heads[static_cast<std::size_t>(i)]);
                      }};
        }
        for (int i = 0; i <= 4; ++i) {
            const std::string key = "depth.l" + std::to_string(i);
            t[key] = {[key, i](ModelConfig& c, const std::string& v) {
                          c.lfsb_depth[static_cast<std::size_t>(i)] = parse_int(key, v);
                      },
                      [i](const ModelConfig& c) {
                          return std::to_string(c.lfsb_depth[static_cast<std::size_t>(i)]);
                      }};
        }
        t["lambda_mode"] = {[](ModelConfig& c, const std::string& v) {
                                if (v == "learnable")
                                    c.lambda_mode = LambdaMode::kLearnable;
                                else if (v == "schedule")
                                    c.lambda_mode = LambdaMode::kSchedule;
                                else
                                    throw ConfigError(
                                        "config key 'lambda_mode': expected learnable|schedule, got '" +
                                        v + "'");
                            },
                            [](const ModelConfig& c) {
                                return c.lambda_mode == LambdaMode::kLearnable
                                           ? std::string("learnable")
                                           : std::string("schedule");
                            }};
        t["gfeb.backend"] = {[](ModelConfig& c, const std::string& v) { c.gfeb_backend = v; },
                             [](const ModelConfig& c) { return c.gfeb_backend; }};
        t["lrm.activation"] = {
            [](ModelConfig& c, const std::string& v) { c.sin_block_activation = v; },
            [](const ModelConfig& c) { return c.sin_block_activation; }};
        t["loss.rec"] = {[](ModelConfig& c, const std::string& v) {
                             c.loss.rec = parse_double("loss.rec", v);
                         },
                         [](const ModelConfig& c) { return format_double(c.loss.rec); }};
        t["loss.refl"] = {[](ModelConfig& c, const std::string& v) {
                              c.loss.refl = parse_double("loss.refl", v);
                          },
                          [](const ModelConfig& c) { return format_double(c.loss.refl); }};
        t["loss.vgg"] = {[](ModelConfig& c, const std::string& v) {
                             c.loss.vgg = parse_double("loss.vgg", v);
                         },
                         [](const ModelConfig& c) { return format_double(c.loss.vgg); }};
        t["loss.exclu"] = {[](ModelConfig& c, const std::string& v) {
                               c.loss.exclu = parse_double("loss.exclu", v);
                           },
                           [](const ModelConfig& c) { return format_double(c.loss.exclu); }};
        t["loss.recons"] = {[](ModelConfig& c, const std::string& v) {
                                c.loss.recons = parse_double("loss.recons", v);
                            },
                            [](const ModelConfig& c) { return format_double(c.loss.recons); }};
        t["loss.color"] = {[](ModelConfig& c, const std::string& v) {
                               c.loss.color = parse_double("loss.color", v);
                           },
                           [](const ModelConfig& c) { return format_double(c.loss.color); }};
        t["opt.lr"] = {[](ModelConfig& c, const std::string& v) {
                           c.opt.lr = parse_double("opt.lr", v);
                       },
                       [](const ModelConfig& c) { return format_double(c.opt.lr); }};
        t["opt.weight_decay"] = {
            [](ModelConfig& c, const std::string& v) {
                c.opt.weight_decay = parse_double("opt.weight_decay", v);
            },
            [](const ModelConfig& c) { return format_double(c.opt.weight_decay); }};
        t["opt.tmax"] = {[](ModelConfig& c, const std::string& v) {
                             c.opt.t_max = parse_int("opt.tmax", v);
                         },
                         [](const ModelConfig& c) { return std::to_string(c.opt.t_max); }};
        t["opt.eta_min"] = {[](ModelConfig& c, const std::string& v) {
                                c.opt.eta_min = parse_double("opt.eta_min", v);
                            },
                            [](const ModelConfig& c) { return format_double(c.opt.eta_min); }};
        t["opt.checkpoint_every"] = {
            [](ModelConfig& c, const std::string& v) {
                c.opt.checkpoint_every = parse_int("opt.checkpoint_every", v);
            },
            [](const ModelConfig& c) { return std::to_string(c.opt.checkpoint_every); }};
        t["seed"] = {[](ModelConfig& c, const std::string& v) {
                         try {
                             c.seed = std::stoull(v);
                         } catch (const std::exception&) {
                             throw ConfigError("config key 'seed': expected integer, got '" + v +
                                               "'");
                         }
                     },
                     [](const ModelConfig& c) { return std::to_string(c.seed); }};
        return t;
    }();
    return table;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

} // namespace

ModelConfig parse_config(std::istream& in, const std::string& origin) {
    ModelConfig config;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(line_no) +
                              ": expected 'key = value', got '" + line + "'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto& table = field_table();
        const auto it = table.find(key);
        if (it == table.end()) {
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": unknown config key '" +
                              key + "'");
        }
        it->second.set(config, value);
    }
    return config;
}

ModelConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file: " + path);
    return parse_config(in, path);
}

void write_config(const ModelConfig& config, std::ostream& out) {
    for (const auto& [key, field] : field_table()) {
        out << key << " = " << field.get(config) << "\n";
    }
}

void apply_override(ModelConfig& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw ConfigError("override '" + assignment + "' is not of the form key=value");
    }
    const std::string key = trim(assignment.substr(0, eq));
    const std::string value = trim(assignment.substr(eq + 1));
    const auto& table = field_table();
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second.set(config, value);
}

} // namespace reflexsplit
