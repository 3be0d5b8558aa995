// cpgd: coding-prior toolkit command line.
//
// Exit codes: 0 success, 2 usage error, 3 data/format error.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cpgd/codec.hpp"
#include "cpgd/cpc.hpp"
#include "cpgd/cpfp.hpp"
#include "cpgd/frame_io.hpp"
#include "cpgd/metrics.hpp"
#include "cpgd/prior_extract.hpp"
#include "cpgd/run_config.hpp"

namespace fs = std::filesystem;
using namespace cpgd;
using nlohmann::ordered_json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Options {
    std::string config;
    bool json = false;

    // encode
    std::string input, yuv, out, stream, priors, params, stage1, reference, a, b, mode, kind;
    int width = 0, height = 0;
    std::size_t max_frames = 0;
    int steps = -1;
    long long seed = -1;
    std::vector<std::uint32_t> prompt_ids;
    bool zero_head = false;
    bool random_branches = false;
    std::size_t channels = 0;
};

RunConfig load_config(const Options& o) {
    RunConfig c = o.config.empty() ? RunConfig{} : RunConfig::load(o.config);
    if (o.steps >= 0) c.steps = o.steps;
    if (o.seed >= 0) c.seed = static_cast<std::uint64_t>(o.seed);
    if (!o.mode.empty()) c.mode = parse_mode(o.mode);
    if (o.channels) c.channels = o.channels;
    if (!o.prompt_ids.empty()) c.prompt_ids = o.prompt_ids;
    c.validate();
    return c;
}

void print_json(const ordered_json& j) { std::cout << j.dump(2) << '\n'; }

std::vector<FramePlane> luma_frames(const std::vector<RgbImage>& rgb) {
    std::vector<FramePlane> out;
    out.reserve(rgb.size());
    for (const auto& img : rgb) out.push_back(to_luma(img));
    return out;
}

void write_frames(const fs::path& dir, const std::vector<Tensor>& frames) {
    fs::create_directories(dir);
    for (std::size_t t = 0; t < frames.size(); ++t) write_ppm(dir / frame_name(t), from_tensor(frames[t]));
}

ordered_json metric_json(const MetricReport& r) {
    return {{"psnr_db", r.psnr_db}, {"ssim", r.ssim}, {"mean_psnr_db", r.mean_psnr_db}, {"mean_ssim", r.mean_ssim}};
}

ordered_json cost_json(const CostReport& r) {
    return {{"sad_ops_reused", r.sad_ops_reused}, {"sad_ops_search", r.sad_ops_search},
            {"blocks", r.blocks},                 {"seconds_reused", r.seconds_reused},
            {"seconds_search", r.seconds_search}, {"grids_identical", r.grids_identical}};
}

void write_json(const fs::path& path, const ordered_json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

int cmd_encode(const Options& o) {
    RunConfig cfg = load_config(o);
    std::vector<FramePlane> frames;
    if (!o.yuv.empty()) {
        if (o.width <= 0 || o.height <= 0) throw UsageError("--yuv needs --width and --height");
        frames = read_yuv420_luma(o.yuv, o.width, o.height, o.max_frames);
        cfg.input = o.yuv;
    } else if (!o.input.empty()) {
        frames = luma_frames(read_frames(o.input));
        cfg.input = o.input;
    } else {
        throw UsageError("encode needs --input or --yuv");
    }
    cfg.output = o.out;

    const EncodedSequence enc = encode_sequence_detailed(frames, cfg.codec);
    write_file(o.out, enc.stream.bytes);
    write_json(fs::path(o.out + ".config.json"), cfg.to_json());

    ordered_json report;
    report["width"] = frames[0].width;
    report["height"] = frames[0].height;
    report["frame_count"] = frames.size();
    report["bytes"] = enc.stream.bytes.size();
    double energy_sum = 0.0;
    ordered_json per_frame = ordered_json::array();
    for (std::size_t t = 1; t < frames.size(); ++t) {
        const MvGrid& mv = enc.mvs[t];
        double mag = 0.0;
        std::size_t nonzero = 0;
        for (const auto& v : mv.vectors) {
            mag += std::hypot(v.dy, v.dx);
            nonzero += (v.dy != 0 || v.dx != 0);
        }
        double energy = 0.0;
        const ResidualPlane& res = enc.residuals[t];
        for (std::size_t i = 0; i < res.values.size(); ++i) {
            const double r = res.reconstructed(i);
            energy += r * r;
        }
        energy /= static_cast<double>(res.values.size());
        energy_sum += energy;
        per_frame.push_back({{"frame", t},
                             {"mean_mv_magnitude", mag / static_cast<double>(mv.block_count())},
                             {"nonzero_vectors", nonzero},
                             {"blocks", mv.block_count()},
                             {"residual_energy", energy}});
    }
    report["frames"] = per_frame;
    report["mean_residual_energy"] = frames.size() > 1 ? energy_sum / static_cast<double>(frames.size() - 1) : 0.0;

    if (o.json) {
        print_json(report);
    } else {
        std::printf("encoded %zu frames %dx%d -> %s (%zu bytes)\n", frames.size(), frames[0].width, frames[0].height,
                    o.out.c_str(), enc.stream.bytes.size());
        std::printf("frame  blocks  nonzero  mean|mv|  residual energy\n");
        for (const auto& f : per_frame) {
            std::printf("%5zu  %6zu  %7zu  %8.4f  %15.4f\n", f["frame"].get<std::size_t>(),
                        f["blocks"].get<std::size_t>(), f["nonzero_vectors"].get<std::size_t>(),
                        f["mean_mv_magnitude"].get<double>(), f["residual_energy"].get<double>());
        }
        std::printf("mean residual energy: %.4f\n", report["mean_residual_energy"].get<double>());
    }
    return 0;
}

int cmd_extract(const Options& o) {
    RunConfig cfg = load_config(o);
    cfg.output = o.out;
    PriorSet set;
    if (!o.stream.empty()) {
        const DecodedSequence dec = decode_sequence(CodedStream{read_file(o.stream)});
        set = priors_from_stream(dec);
        cfg.codec = dec.config;
        cfg.input = o.stream;
        write_prior_set(o.out, set);
    } else if (!o.input.empty()) {
        cfg.input = o.input;
        set = augment_dataset(o.input, cfg.codec, o.out);
    } else {
        throw UsageError("extract needs --stream or --input");
    }
    cfg.echo_to(o.out);

    ordered_json report{{"frame_count", set.forward.size()},
                        {"width", set.width},
                        {"height", set.height},
                        {"directions", set.backward.empty() ? 1 : 2},
                        {"out", o.out}};
    if (o.json) {
        print_json(report);
    } else {
        std::printf("wrote %s priors for %zu frames (%dx%d) to %s\n", set.backward.empty() ? "forward" : "forward+backward",
                    set.forward.size(), set.width, set.height, o.out.c_str());
    }
    return 0;
}

SequencePriors load_sequence_priors(const fs::path& dir, std::size_t frames, bool backward) {
    SequencePriors p;
    for (std::size_t t = 0; t < frames; ++t) p.forward.push_back(to_dense(read_sidecars(dir, t, Direction::Forward)));
    if (backward) {
        p.backward.emplace();
        for (std::size_t t = 0; t + 1 < frames; ++t) {
            p.backward->push_back(to_dense(read_sidecars(dir, t, Direction::Backward)));
        }
        const auto& last = p.forward.back();
        p.backward->push_back({DenseMotionField::zeros(last.motion.height(), last.motion.width()),
                               ResidualMap::zeros(last.motion.height(), last.motion.width())});
    }
    return p;
}

void check_prior_size(const DensePriors& p, const RgbImage& img, std::size_t t) {
    if (static_cast<int>(p.residual.width()) != img.width || static_cast<int>(p.residual.height()) != img.height) {
        throw DataError("priors for frame " + std::to_string(t) + " are " + std::to_string(p.residual.width()) + "x" +
                        std::to_string(p.residual.height()) + " but the frame is " + std::to_string(img.width) +
                        "x" + std::to_string(img.height));
    }
}

int cmd_restore(const Options& o) {
    RunConfig cfg = load_config(o);
    cfg.input = o.input;
    cfg.output = o.out;
    const auto rgb = read_frames(o.input);
    const CpfaParams params = o.params.empty() ? CpfaParams::init({cfg.channels, cfg.seed, true, false})
                                               : CpfaParams::load(o.params);
    cfg.channels = params.channels();

    const SequencePriors priors =
        load_sequence_priors(o.priors, rgb.size(), cfg.mode == PropagationMode::Bidirectional);
    for (std::size_t t = 0; t < rgb.size(); ++t) check_prior_size(priors.forward[t], rgb[t], t);

    std::vector<Tensor> frames;
    for (const auto& img : rgb) frames.push_back(to_tensor(img));
    const auto features = propagate_sequence(frames, priors, params, cfg.mode);
    const auto restored = restore(frames, features, params);
    write_frames(o.out, restored);
    cfg.echo_to(o.out);

    ordered_json report{{"frame_count", restored.size()}, {"mode", mode_name(cfg.mode)}, {"out", o.out}};
    if (!o.reference.empty()) {
        std::vector<RgbImage> out_imgs;
        for (const auto& t : restored) out_imgs.push_back(from_tensor(t));
        const MetricReport m = evaluate(out_imgs, read_frames(o.reference));
        report["metrics"] = metric_json(m);
        write_json(fs::path(o.out) / "metrics.json", metric_json(m));
        if (!o.json) std::cout << format_metric_table(m);
    }
    if (o.json) {
        print_json(report);
    } else {
        std::printf("restored %zu frames (%s) -> %s\n", restored.size(), mode_name(cfg.mode).c_str(), o.out.c_str());
    }
    return 0;
}

int cmd_generate(const Options& o) {
    RunConfig cfg = load_config(o);
    cfg.input = o.stage1;
    cfg.output = o.out;
    const auto rgb = read_frames(o.stage1);
    const CpcParams params = o.params.empty()
                                 ? CpcParams::init({cfg.dim, cfg.heads, cfg.latent_factor, cfg.seed, false})
                                 : CpcParams::load(o.params);
    cfg.dim = params.dim();
    cfg.heads = params.heads();
    cfg.latent_factor = params.latent_factor();
    const SamplerSchedule schedule =
        cfg.steps == 1 ? single_step_schedule(cfg.t_train) : build_schedule(cfg.t_train, cfg.steps);
    const SequencePriors priors = load_sequence_priors(o.priors, rgb.size(), false);
    const NoisePredictor predictor = toy_predictor(params);

    std::vector<Tensor> outputs(rgb.size());
    for (std::size_t t = 0; t < rgb.size(); ++t) {
        check_prior_size(priors.forward[t], rgb[t], t);
        Conditioning cond{to_tensor(rgb[t]), priors.forward[t].motion, priors.forward[t].residual, cfg.prompt_ids};
        // Independent, reproducible noise stream per frame.
        Rng noise(cfg.seed * 0x9E3779B97F4A7C15ull + t);
        outputs[t] = sample(cond, schedule, params, predictor, noise);
    }
    write_frames(o.out, outputs);
    cfg.echo_to(o.out);

    ordered_json report{{"frame_count", outputs.size()},
                        {"steps", schedule.steps()},
                        {"indices_first", schedule.indices.front()},
                        {"indices_last", schedule.indices.back()},
                        {"seed", cfg.seed},
                        {"out", o.out}};
    if (o.json) {
        print_json(report);
    } else {
        std::printf("generated %zu frames with %zu sampling steps (seed %llu) -> %s\n", outputs.size(),
                    schedule.steps(), static_cast<unsigned long long>(cfg.seed), o.out.c_str());
    }
    return 0;
}

int cmd_eval(const Options& o) {
    const MetricReport m = evaluate(read_frames(o.a), read_frames(o.b));
    if (!o.out.empty()) write_json(o.out, metric_json(m));
    if (o.json) {
        print_json(metric_json(m));
    } else {
        std::cout << format_metric_table(m);
    }
    return 0;
}

int cmd_bench(const Options& o) {
    const RunConfig cfg = load_config(o);
    const auto frames = luma_frames(read_frames(o.input));
    const CostReport r = bench_alignment_cost(frames, cfg.codec);
    ordered_json j = cost_json(r);
    j["closed_form_search_ops"] = search_op_count(r.blocks, cfg.codec.search_radius, cfg.codec.block_size);
    if (!o.out.empty()) write_json(o.out, j);
    if (o.json) {
        print_json(j);
    } else {
        std::cout << format_cost_table(r);
    }
    return 0;
}

int cmd_init_params(const Options& o) {
    const RunConfig cfg = load_config(o);
    if (o.kind == "cpfp") {
        CpfaParams::init({cfg.channels, cfg.seed, !o.random_branches, o.zero_head}).save(o.out);
    } else if (o.kind == "cpca") {
        CpcParams::init({cfg.dim, cfg.heads, cfg.latent_factor, cfg.seed, false}).save(o.out);
    } else {
        throw UsageError("--kind must be cpfp or cpca");
    }
    if (!o.json) std::printf("wrote %s parameters (seed %llu) -> %s\n", o.kind.c_str(),
                             static_cast<unsigned long long>(cfg.seed), o.out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Coding-prior toolkit: motion-compensated codec priors, prior-guided alignment and sampling"};
    app.require_subcommand(1);
    Options o;
    app.add_flag("--json", o.json, "Machine-readable JSON on stdout");

    auto add_config = [&](CLI::App* sub) { sub->add_option("--config", o.config, "Run configuration (JSON)"); };

    auto* encode = app.add_subcommand("encode", "Encode frames into a CPV1 stream");
    auto* enc_in = encode->add_option("--input", o.input, "Directory of frame_NNNNNN.ppm/.pgm files");
    auto* enc_yuv = encode->add_option("--yuv", o.yuv, "Raw planar YUV 4:2:0 file");
    enc_in->excludes(enc_yuv);
    encode->add_option("--width", o.width, "YUV frame width");
    encode->add_option("--height", o.height, "YUV frame height");
    encode->add_option("--frames", o.max_frames, "Read at most this many YUV frames");
    encode->add_option("--out", o.out, "Output stream path")->required();
    add_config(encode);

    auto* extract = app.add_subcommand("extract", "Write motion-vector and residual sidecars");
    auto* ex_stream = extract->add_option("--stream", o.stream, "CPV1 stream (forward priors)");
    auto* ex_in = extract->add_option("--input", o.input, "Frame directory (forward and backward priors)");
    ex_stream->excludes(ex_in);
    extract->add_option("--out", o.out, "Prior directory")->required();
    add_config(extract);

    auto* restore_cmd = app.add_subcommand("restore", "Prior-guided propagation and stage-one restoration");
    restore_cmd->add_option("--input", o.input, "Blurred frame directory")->required();
    restore_cmd->add_option("--priors", o.priors, "Prior directory")->required();
    restore_cmd->add_option("--params", o.params, "CPFP parameter file (seeded from config if omitted)");
    restore_cmd->add_option("--mode", o.mode, "forward or bidirectional")
        ->check(CLI::IsMember({"forward", "bidirectional"}));
    restore_cmd->add_option("--reference", o.reference, "Sharp frames for PSNR/SSIM");
    restore_cmd->add_option("--out", o.out, "Output directory")->required();
    add_config(restore_cmd);

    auto* generate = app.add_subcommand("generate", "Prior-controlled spaced diffusion sampling");
    generate->add_option("--stage1", o.stage1, "Stage-one frame directory")->required();
    generate->add_option("--priors", o.priors, "Prior directory")->required();
    generate->add_option("--params", o.params, "CPCA parameter file (seeded from config if omitted)");
    generate->add_option("--steps", o.steps, "Sampling steps (default 50)")->check(CLI::PositiveNumber);
    generate->add_option("--seed", o.seed, "Noise seed")->check(CLI::NonNegativeNumber);
    generate->add_option("--prompt-ids", o.prompt_ids, "Opaque prompt token ids")->delimiter(',');
    generate->add_option("--out", o.out, "Output directory")->required();
    add_config(generate);

    auto* eval = app.add_subcommand("eval", "PSNR/SSIM between two frame directories");
    eval->add_option("--a", o.a, "First frame directory")->required();
    eval->add_option("--b", o.b, "Second frame directory")->required();
    eval->add_option("--out", o.out, "Write the JSON report here");

    auto* bench = app.add_subcommand("bench", "Cost of reusing stream MVs vs recomputing the search");
    bench->add_option("--input", o.input, "Frame directory")->required();
    bench->add_option("--out", o.out, "Write the JSON report here");
    add_config(bench);

    auto* init = app.add_subcommand("init-params", "Write seeded parameter files");
    init->add_option("--kind", o.kind, "cpfp or cpca")->required()->check(CLI::IsMember({"cpfp", "cpca"}));
    init->add_option("--out", o.out, "Parameter file")->required();
    init->add_option("--seed", o.seed, "Initialization seed")->check(CLI::NonNegativeNumber);
    init->add_option("--channels", o.channels, "CPFP channel width");
    init->add_flag("--zero-head", o.zero_head, "Zero the restoration head's last layer (identity restore)");
    init->add_flag("--random-branches", o.random_branches, "Seed the offset/mask branch finals instead of zeroing");
    add_config(init);

    for (auto* sub : app.get_subcommands({})) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (*encode) return cmd_encode(o);
        if (*extract) return cmd_extract(o);
        if (*restore_cmd) return cmd_restore(o);
        if (*generate) return cmd_generate(o);
        if (*eval) return cmd_eval(o);
        if (*bench) return cmd_bench(o);
        if (*init) return cmd_init_params(o);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const FormatError& e) {
        std::cerr << "format error at byte " << e.offset() << ": " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    }
    return kExitUsage;
}
