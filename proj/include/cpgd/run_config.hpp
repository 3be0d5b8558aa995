#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpgd/codec.hpp"
#include "cpgd/cpfp.hpp"

namespace cpgd {

// Invalid configuration document (unknown key, wrong type, out-of-range value).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Everything a CLI run depends on. Defaults:
//   block_size 16, search_radius 16, quant 1, rle true,
//   channels 16, mode "forward", t_train 1000, steps 50, seed 0,
//   dim 16, heads 1, latent_factor 4, prompt_ids [], input "", output "".
struct RunConfig {
    CodecConfig codec;
    std::size_t channels = 16;
    PropagationMode mode = PropagationMode::Forward;
    int t_train = 1000;
    int steps = 50;
    std::uint64_t seed = 0;
    std::size_t dim = 16;
    std::size_t heads = 1;
    std::size_t latent_factor = 4;
    std::vector<std::uint32_t> prompt_ids;
    std::string input;
    std::string output;

    // Throws ConfigError on unknown keys, type mismatches or invalid values.
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::filesystem::path& path);
    nlohmann::ordered_json to_json() const;
    // Writes config.json into `dir`.
    void echo_to(const std::filesystem::path& dir) const;
    void validate() const;
};

std::string mode_name(PropagationMode m);
PropagationMode parse_mode(const std::string& s);

}  // namespace cpgd
