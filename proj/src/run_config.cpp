#include "cpgd/run_config.hpp"

#include <fstream>
#include <set>

#include "cpgd/frame_io.hpp"

namespace cpgd {

namespace fs = std::filesystem;

std::string mode_name(PropagationMode m) { return m == PropagationMode::Forward ? "forward" : "bidirectional"; }

PropagationMode parse_mode(const std::string& s) {
    if (s == "forward") return PropagationMode::Forward;
    if (s == "bidirectional") return PropagationMode::Bidirectional;
    throw ConfigError("mode must be \"forward\" or \"bidirectional\", got \"" + s + "\"");
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
    static const std::set<std::string> known = {
        "block_size", "search_radius", "quant", "rle",          "channels",   "mode",  "t_train", "steps",
        "seed",       "dim",           "heads", "latent_factor", "prompt_ids", "input", "output",
    };
    for (const auto& [key, value] : j.items()) {
        if (!known.count(key)) throw ConfigError("unknown configuration key \"" + key + "\"");
    }
    RunConfig c;
    try {
        auto take = [&](const char* key, auto& field) {
            if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
        };
        take("block_size", c.codec.block_size);
        take("search_radius", c.codec.search_radius);
        take("quant", c.codec.quant);
        take("rle", c.codec.rle);
        take("channels", c.channels);
        if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
        take("t_train", c.t_train);
        take("steps", c.steps);
        take("seed", c.seed);
        take("dim", c.dim);
        take("heads", c.heads);
        take("latent_factor", c.latent_factor);
        take("prompt_ids", c.prompt_ids);
        take("input", c.input);
        take("output", c.output);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("configuration: ") + e.what());
    }
    c.validate();
    return c;
}

RunConfig RunConfig::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open configuration " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return from_json(j);
}

void RunConfig::validate() const {
    try {
        codec.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (channels == 0) throw ConfigError("channels must be positive");
    if (t_train < 2) throw ConfigError("t_train must be at least 2");
    if (steps < 1 || steps > t_train) throw ConfigError("steps must be in [1, t_train]");
    if (dim == 0 || heads == 0 || dim % heads != 0) throw ConfigError("dim must be a positive multiple of heads");
    if (latent_factor == 0) throw ConfigError("latent_factor must be positive");
}

nlohmann::ordered_json RunConfig::to_json() const {
    nlohmann::ordered_json j;
    j["block_size"] = codec.block_size;
    j["search_radius"] = codec.search_radius;
    j["quant"] = codec.quant;
    j["rle"] = codec.rle;
    j["channels"] = channels;
    j["mode"] = mode_name(mode);
    j["t_train"] = t_train;
    j["steps"] = steps;
    j["seed"] = seed;
    j["dim"] = dim;
    j["heads"] = heads;
    j["latent_factor"] = latent_factor;
    j["prompt_ids"] = prompt_ids;
    j["input"] = input;
    j["output"] = output;
    return j;
}

void RunConfig::echo_to(const fs::path& dir) const {
    fs::create_directories(dir);
    std::ofstream out(dir / "config.json", std::ios::trunc);
    if (!out) throw DataError("cannot write " + (dir / "config.json").string());
    out << to_json().dump(2) << '\n';
}

}  // namespace cpgd
