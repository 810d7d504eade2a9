#include "deshadow/config.hpp"

#include <boost/program_options.hpp>
#include <charconv>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>
#include <vector>

namespace deshadow {
namespace {

namespace po = boost::program_options;

struct Key {
    std::string name;
    std::string description;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

std::string unquote(std::string v) {
    while (!v.empty() && (v.back() == ' ' || v.back() == '\t' || v.back() == '\r')) v.pop_back();
    if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
    return v;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const char* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end) {
        throw ConfigError(fmt::format("{}: invalid value '{}'", key, text));
    }
    return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ConfigError(fmt::format("{}: expected true or false, got '{}'", key, text));
}

std::array<int, 5> parse_channels(const std::string& key, const std::string& text) {
    std::array<int, 5> out{};
    std::stringstream ss(text);
    std::string item;
    std::size_t i = 0;
    while (std::getline(ss, item, ',')) {
        if (i >= out.size()) break;
        item.erase(0, item.find_first_not_of(" ["));
        item.erase(item.find_last_not_of(" ]") + 1);
        out[i++] = parse_number<int>(key, item);
    }
    if (i != out.size() || std::getline(ss, item, ',')) {
        throw ConfigError(key + ": expected five comma-separated channel counts");
    }
    return out;
}

// Converts enum parsers' std::invalid_argument into ConfigError.
template <typename F>
auto checked(const std::string& key, F f) -> decltype(f()) {
    try {
        return f();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(key + ": " + e.what());
    }
}

std::string fmt_double(double v) { return fmt::format("{}", v); }

template <typename Int>
void add_int(std::vector<Key>& keys, const std::string& name, const std::string& desc,
             Int ExperimentConfig::*member) {
    keys.push_back({name, desc,
                    [=](ExperimentConfig& c, const std::string& v) {
                        c.*member = parse_number<Int>(name, v);
                    },
                    [=](const ExperimentConfig& c) { return std::to_string(c.*member); }});
}

void add_train_keys(std::vector<Key>& keys, const std::string& section,
                    TrainConfig ExperimentConfig::*stage) {
    auto key = [&](const std::string& k) { return section + "." + k; };
    auto add = [&](const std::string& k, const std::string& desc,
                   std::function<void(TrainConfig&, const std::string&, const std::string&)> set,
                   std::function<std::string(const TrainConfig&)> get) {
        const std::string name = key(k);
        keys.push_back({name, desc,
                        [=](ExperimentConfig& c, const std::string& v) { set(c.*stage, name, v); },
                        [=](const ExperimentConfig& c) { return get(c.*stage); }});
    };
    add("iterations", "total optimizer steps",
        [](TrainConfig& t, const std::string& k, const std::string& v) {
            t.iterations = parse_number<std::int64_t>(k, v);
        },
        [](const TrainConfig& t) { return std::to_string(t.iterations); });
    add("batch_size", "samples per step",
        [](TrainConfig& t, const std::string& k, const std::string& v) {
            t.batch_size = parse_number<int>(k, v);
        },
        [](const TrainConfig& t) { return std::to_string(t.batch_size); });
    add("learning_rate", "Adam step size",
        [](TrainConfig& t, const std::string& k, const std::string& v) {
            t.learning_rate = parse_number<double>(k, v);
        },
        [](const TrainConfig& t) { return fmt_double(t.learning_rate); });
    add("checkpoint_every", "periodic checkpoint interval (0 = final only)",
        [](TrainConfig& t, const std::string& k, const std::string& v) {
            t.checkpoint_every = parse_number<std::int64_t>(k, v);
        },
        [](const TrainConfig& t) { return std::to_string(t.checkpoint_every); });
    add("log_every", "loss-curve averaging interval",
        [](TrainConfig& t, const std::string& k, const std::string& v) {
            t.log_every = parse_number<std::int64_t>(k, v);
        },
        [](const TrainConfig& t) { return std::to_string(t.log_every); });
    const std::array<std::pair<const char*, double LossWeights::*>, 4> lambdas = {
        {{"lambda1", &LossWeights::lambda1},
         {"lambda2", &LossWeights::lambda2},
         {"lambda3", &LossWeights::lambda3},
         {"lambda4", &LossWeights::lambda4}}};
    const std::array<const char*, 4> lambda_desc = {"l1 weight", "adversarial weight",
                                                    "perceptual weight", "style weight"};
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
        const auto member = lambdas[i].second;
        add(lambdas[i].first, lambda_desc[i],
            [member](TrainConfig& t, const std::string& k, const std::string& v) {
                t.loss_weights.*member = parse_number<double>(k, v);
            },
            [member](const TrainConfig& t) { return fmt_double(t.loss_weights.*member); });
    }
    add("gan_mode", "standard | literal",
        [](TrainConfig& t, const std::string& k, const std::string& v) {
            t.gan_mode = checked(k, [&] { return gan_mode_from_string(v); });
        },
        [](const TrainConfig& t) { return to_string(t.gan_mode); });
    add("mask_coverage_min", "lower bound of free-form mask coverage (pretrain)",
        [](TrainConfig& t, const std::string& k, const std::string& v) {
            t.mask_coverage_min = parse_number<double>(k, v);
        },
        [](const TrainConfig& t) { return fmt_double(t.mask_coverage_min); });
    add("mask_coverage_max", "upper bound of free-form mask coverage (pretrain)",
        [](TrainConfig& t, const std::string& k, const std::string& v) {
            t.mask_coverage_max = parse_number<double>(k, v);
        },
        [](const TrainConfig& t) { return fmt_double(t.mask_coverage_max); });
    add("fraction", "share of training triplets used (finetune)",
        [](TrainConfig& t, const std::string& k, const std::string& v) {
            t.fraction = parse_number<double>(k, v);
        },
        [](const TrainConfig& t) { return fmt_double(t.fraction); });
    add("discriminator_channels", "discriminator base width (pretrain)",
        [](TrainConfig& t, const std::string& k, const std::string& v) {
            t.discriminator_channels = parse_number<int>(k, v);
        },
        [](const TrainConfig& t) { return std::to_string(t.discriminator_channels); });
    add("extractor_channels", "five comma-separated feature extractor widths",
        [](TrainConfig& t, const std::string& k, const std::string& v) {
            t.extractor.channels = parse_channels(k, v);
        },
        [](const TrainConfig& t) { return fmt::format("{}", fmt::join(t.extractor.channels, ",")); });
    add("extractor_seed", "seed of the fixed random feature extractor",
        [](TrainConfig& t, const std::string& k, const std::string& v) {
            t.extractor.seed = parse_number<std::uint64_t>(k, v);
        },
        [](const TrainConfig& t) { return std::to_string(t.extractor.seed); });
    add("extractor_weights", "optional extractor weight archive",
        [](TrainConfig& t, const std::string&, const std::string& v) { t.extractor_weights = v; },
        [](const TrainConfig& t) { return "\"" + t.extractor_weights + "\""; });
    add("beta1", "Adam beta1",
        [](TrainConfig& t, const std::string& k, const std::string& v) {
            t.beta1 = parse_number<double>(k, v);
        },
        [](const TrainConfig& t) { return fmt_double(t.beta1); });
    add("beta2", "Adam beta2",
        [](TrainConfig& t, const std::string& k, const std::string& v) {
            t.beta2 = parse_number<double>(k, v);
        },
        [](const TrainConfig& t) { return fmt_double(t.beta2); });
}

const std::vector<Key>& schema() {
    static const std::vector<Key> keys = [] {
        std::vector<Key> k;
        k.push_back({"seed", "master seed for every random stream",
                     [](ExperimentConfig& c, const std::string& v) {
                         c.seed = parse_number<std::uint64_t>("seed", v);
                     },
                     [](const ExperimentConfig& c) { return std::to_string(c.seed); }});
        k.push_back({"output.dir", "run directory",
                     [](ExperimentConfig& c, const std::string& v) { c.output_dir = v; },
                     [](const ExperimentConfig& c) { return "\"" + c.output_dir + "\""; }});
        auto str = [&k](const std::string& name, const std::string& desc,
                        std::string DataConfig::*member) {
            k.push_back({name, desc,
                         [=](ExperimentConfig& c, const std::string& v) { c.data.*member = v; },
                         [=](const ExperimentConfig& c) { return "\"" + c.data.*member + "\""; }});
        };
        auto num = [&k](const std::string& name, const std::string& desc, int DataConfig::*member) {
            k.push_back({name, desc,
                         [=](ExperimentConfig& c, const std::string& v) {
                             c.data.*member = parse_number<int>(name, v);
                         },
                         [=](const ExperimentConfig& c) { return std::to_string(c.data.*member); }});
        };
        str("data.shadow_root", "triplet dataset root; empty = synthetic", &DataConfig::shadow_root);
        str("data.train_split", "training split directory", &DataConfig::train_split);
        str("data.test_split", "held-out split directory", &DataConfig::test_split);
        str("data.inpaint_root", "folder of clean PNGs; empty = synthetic", &DataConfig::inpaint_root);
        num("data.image_size", "square working resolution", &DataConfig::image_size);
        num("data.synthetic_train", "synthetic training triplets", &DataConfig::synthetic_train);
        num("data.synthetic_test", "synthetic held-out triplets", &DataConfig::synthetic_test);
        num("data.synthetic_inpaint", "synthetic clean images for pretraining",
            &DataConfig::synthetic_inpaint);
        num("data.inpaint_val", "inpainting validation samples (cadence study)",
            &DataConfig::inpaint_val);
        num("data.workers", "parallel PNG decoders", &DataConfig::workers);
        k.push_back({"model.kind", "naive | fusion | concat_input",
                     [](ExperimentConfig& c, const std::string& v) {
                         c.model.kind = checked("model.kind", [&] { return model_kind_from_string(v); });
                     },
                     [](const ExperimentConfig& c) { return to_string(c.model.kind); }});
        k.push_back({"model.variant", "full or an ablation name",
                     [](ExperimentConfig& c, const std::string& v) {
                         c.model.variant =
                             checked("model.variant", [&] { return variant_from_string(v); });
                     },
                     [](const ExperimentConfig& c) { return to_string(c.model.variant); }});
        k.push_back({"model.base_channels", "width of the first encoder stage",
                     [](ExperimentConfig& c, const std::string& v) {
                         c.model.arch.base_channels = parse_number<int>("model.base_channels", v);
                     },
                     [](const ExperimentConfig& c) { return std::to_string(c.model.arch.base_channels); }});
        k.push_back({"model.res_blocks", "residual blocks in the bottleneck",
                     [](ExperimentConfig& c, const std::string& v) {
                         c.model.arch.res_blocks = parse_number<int>("model.res_blocks", v);
                     },
                     [](const ExperimentConfig& c) { return std::to_string(c.model.arch.res_blocks); }});
        k.push_back({"model.fusion_combine", "concat | sum",
                     [](ExperimentConfig& c, const std::string& v) {
                         c.model.arch.combine = checked("model.fusion_combine",
                                                        [&] { return fusion_combine_from_string(v); });
                     },
                     [](const ExperimentConfig& c) { return to_string(c.model.arch.combine); }});
        add_train_keys(k, "pretrain", &ExperimentConfig::pretrain);
        add_train_keys(k, "finetune", &ExperimentConfig::finetune);
        k.push_back({"eval.mask_source", "provided | otsu",
                     [](ExperimentConfig& c, const std::string& v) {
                         c.eval.mask_source =
                             checked("eval.mask_source", [&] { return mask_source_from_string(v); });
                     },
                     [](const ExperimentConfig& c) { return to_string(c.eval.mask_source); }});
        k.push_back({"eval.rmse", "mean_absolute | root_mean_square",
                     [](ExperimentConfig& c, const std::string& v) {
                         if (v == "mean_absolute") {
                             c.eval.rmse = RmseKind::mean_absolute;
                         } else if (v == "root_mean_square") {
                             c.eval.rmse = RmseKind::root_mean_square;
                         } else {
                             throw ConfigError("eval.rmse: unknown kind '" + v + "'");
                         }
                     },
                     [](const ExperimentConfig& c) {
                         return std::string(c.eval.rmse == RmseKind::mean_absolute ? "mean_absolute"
                                                                                   : "root_mean_square");
                     }});
        add_int<std::int64_t>(k, "cadence.every", "pretrain checkpoint cadence",
                              &ExperimentConfig::cadence);
        k.push_back({"ablate.pretrain", "pretrain trainable ablation variants",
                     [](ExperimentConfig& c, const std::string& v) {
                         c.ablate_pretrain = parse_bool("ablate.pretrain", v);
                     },
                     [](const ExperimentConfig& c) { return std::string(c.ablate_pretrain ? "true" : "false"); }});
        return k;
    }();
    return keys;
}

ExperimentConfig default_config() {
    ExperimentConfig c;
    c.pretrain.stage = Stage::pretrain;
    c.finetune.stage = Stage::finetune;
    return c;
}

}  // namespace

void ExperimentConfig::validate() const {
    try {
        pretrain.validate();
        finetune.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (data.image_size < 4 || data.image_size % 4 != 0) {
        throw ConfigError("data.image_size must be a positive multiple of 4");
    }
    if (data.synthetic_train < 1 || data.synthetic_test < 1 || data.synthetic_inpaint < 1 ||
        data.inpaint_val < 1) {
        throw ConfigError("synthetic dataset sizes must be >= 1");
    }
    if (data.workers < 1) throw ConfigError("data.workers must be >= 1");
    if (model.arch.base_channels < 1 || model.arch.res_blocks < 0) {
        throw ConfigError("model.base_channels must be >= 1 and model.res_blocks >= 0");
    }
    if (cadence < 1) throw ConfigError("cadence.every must be >= 1");
    if (pretrain.stage != Stage::pretrain || finetune.stage != Stage::finetune) {
        throw ConfigError("stage blocks are mislabelled");
    }
}

ExperimentConfig parse_experiment_config(std::istream& in) {
    po::options_description desc;
    for (const Key& k : schema()) desc.add_options()(k.name.c_str(), po::value<std::string>());
    po::variables_map vm;
    try {
        po::store(po::parse_config_file(in, desc, false), vm);
    } catch (const po::error& e) {
        throw ConfigError(e.what());
    }
    ExperimentConfig c = default_config();
    for (const Key& k : schema()) {
        if (vm.count(k.name) != 0) k.set(c, unquote(vm[k.name].as<std::string>()));
    }
    c.pretrain.seed = c.seed;
    c.finetune.seed = c.seed;
    c.validate();
    return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    try {
        return parse_experiment_config(in);
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

void print_config_schema(std::ostream& out) {
    const ExperimentConfig defaults = default_config();
    std::string section;
    for (const Key& k : schema()) {
        const auto dot = k.name.find('.');
        const std::string sec = dot == std::string::npos ? "" : k.name.substr(0, dot);
        const std::string leaf = dot == std::string::npos ? k.name : k.name.substr(dot + 1);
        if (sec != section) {
            out << "\n[" << sec << "]\n";
            section = sec;
        }
        out << fmt::format("{:<24} = {:<16} # {}\n", leaf, k.get(defaults), k.description);
    }
}

}  // namespace deshadow
