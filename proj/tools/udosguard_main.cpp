#include "udos/core.hpp"
#include "udos/simnet.hpp"
#include "udos/trace_io.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;
constexpr int kExitUsage = 64;

std::string default_config_path() {
    const char* env = std::getenv("UDOS_GUARD_CONFIG");
    return env ? env : "";
}

udos::PolicyConfig load_policy_or_default(const std::string& path) {
    if (path.empty()) return udos::PolicyConfig{};
    return udos::load_policy_file(path);
}

std::ofstream open_output(const std::filesystem::path& path, std::ios::openmode mode) {
    std::ofstream out(path, mode);
    if (!out) {
        throw udos::TraceError(udos::TraceError::Kind::Io, 0,
                               "cannot open output file " + path.string());
    }
    return out;
}

void write_run_outputs(const std::string& out_dir, const std::vector<udos::MetricsLogRow>& metrics,
                       const std::vector<udos::BlockEntry>& blocks,
                       const std::vector<udos::PacketRecord>& records) {
    std::filesystem::path dir(out_dir);
    std::filesystem::create_directories(dir);
    auto m = open_output(dir / "metrics.csv", std::ios::out);
    udos::write_metrics_csv(m, metrics);
    auto b = open_output(dir / "blocks.csv", std::ios::out);
    udos::write_blocks_csv(b, blocks);
    auto r = open_output(dir / "records.bin", std::ios::out | std::ios::binary);
    udos::write_records_bin(r, records);
}

int cmd_run(const std::string& scenario_path, const std::string& config_path,
            std::optional<std::uint64_t> seed, const std::string& out_dir,
            std::optional<bool> mitigation, const std::string& trace_path) {
    udos::PolicyConfig policy = load_policy_or_default(config_path);
    udos::ScenarioConfig scn = udos::load_scenario_file(scenario_path);
    if (seed) scn.seed = *seed;
    if (mitigation) scn.mitigation_enabled = *mitigation;

    udos::RunHooks hooks;
    std::optional<udos::TraceWriter> trace;
    if (!trace_path.empty()) {
        trace.emplace(trace_path);
        hooks.on_probe = [&trace](const udos::ProbeEvent& ev) { trace->write_probe(ev); };
        hooks.on_metrics = [&trace](const udos::SystemMetrics& m) { trace->write_metrics(m); };
    }

    udos::SimulationReport report =
        udos::run_scenario(scn, policy, trace ? &hooks : nullptr);
    write_run_outputs(out_dir, report.metrics, report.blocks, report.drained_records);
    std::cout << "run complete: " << report.drained_records.size() << " records, "
              << report.blocks.size() << " blocks, " << report.metrics.size() << " ticks\n";
    return kExitOk;
}

int cmd_replay(const std::string& trace_path, const std::string& config_path,
               const std::string& out_dir, double expiry_factor) {
    udos::PolicyConfig policy = load_policy_or_default(config_path);
    udos::ReplayResult result = udos::run_replay(trace_path, policy, expiry_factor);
    write_run_outputs(out_dir, result.metrics, result.blocks, result.drained_records);
    std::cout << "replay complete: " << result.drained_records.size() << " records, "
              << result.blocks.size() << " blocks\n";
    return kExitOk;
}

int cmd_qos_sweep(const std::string& scenario_path, const std::string& config_path,
                  int max_clients, const std::string& out_dir) {
    udos::PolicyConfig policy = load_policy_or_default(config_path);
    udos::ScenarioConfig scn = udos::load_scenario_file(scenario_path);
    auto rows = udos::run_qos_sweep(scn, policy, max_clients);
    std::filesystem::path dir(out_dir);
    std::filesystem::create_directories(dir);
    auto out = open_output(dir / "qos.csv", std::ios::out);
    udos::write_qos_csv(out, rows);
    udos::write_qos_csv(std::cout, rows);
    return kExitOk;
}

int cmd_threshold_sweep(const std::string& scenario_path, const std::string& config_path,
                        const std::vector<std::uint64_t>& thresholds, const std::string& out_dir,
                        int repeats) {
    udos::PolicyConfig policy = load_policy_or_default(config_path);
    udos::ScenarioConfig scn = udos::load_scenario_file(scenario_path);
    auto result = udos::run_threshold_sweep(scn, policy, thresholds, repeats);
    std::filesystem::path dir(out_dir);
    std::filesystem::create_directories(dir);
    auto out = open_output(dir / "threshold.csv", std::ios::out);
    udos::write_threshold_csv(out, result);
    udos::write_threshold_csv(std::cout, result);
    return kExitOk;
}

int cmd_encode(const std::string& in_path, const std::string& out_path) {
    std::ifstream in(in_path);
    if (!in) {
        throw udos::TraceError(udos::TraceError::Kind::Io, 0, "cannot open " + in_path);
    }
    auto out = open_output(out_path, std::ios::out | std::ios::binary);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        udos::PacketRecord rec = udos::record_from_json(line, lineno);
        udos::EncodedRecord block = udos::encode_record(rec);
        out.write(reinterpret_cast<const char*>(block.data()),
                  static_cast<std::streamsize>(block.size()));
    }
    return kExitOk;
}

int cmd_decode(const std::string& in_path, const std::string& out_path) {
    std::ifstream in(in_path, std::ios::binary);
    if (!in) {
        throw udos::TraceError(udos::TraceError::Kind::Io, 0, "cannot open " + in_path);
    }
    auto out = open_output(out_path, std::ios::out);
    udos::EncodedRecord block;
    while (in.read(reinterpret_cast<char*>(block.data()),
                   static_cast<std::streamsize>(block.size()))) {
        udos::PacketRecord rec = udos::decode_record(block);
        out << udos::record_to_json(rec) << "\n";
    }
    if (in.gcount() != 0) {
        throw udos::CodecError(udos::CodecError::Kind::BadLength,
                               "trailing " + std::to_string(in.gcount()) +
                                   " bytes are not a whole record");
    }
    return kExitOk;
}

int cmd_validate_config(const std::string& config_path) {
    udos::PolicyConfig policy = load_policy_or_default(config_path);
    auto violations = udos::validate_policy(policy);
    if (violations.empty()) {
        std::cout << "ok\n";
        return kExitOk;
    }
    for (const auto& v : violations) {
        std::cout << "violation: " << v << "\n";
    }
    return kExitValidation;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"per-packet resource accounting and low-volume DoS mitigation engine"};
    app.require_subcommand(1);

    std::string scenario_path;
    std::string config_path = default_config_path();
    std::string out_dir = "out";
    std::string trace_path;
    std::string in_path;
    std::string out_path;
    std::optional<std::uint64_t> seed;
    bool force_mitigation = false;
    bool no_mitigation = false;
    int max_clients = 15;
    double expiry_factor = 2.0;
    int sweep_repeats = 5;
    std::vector<std::uint64_t> thresholds = {200'000,   400'000,   600'000,   800'000,
                                             1'000'000, 1'200'000, 1'400'000, 1'600'000,
                                             1'800'000, 2'000'000, 2'200'000};

    auto* run = app.add_subcommand("run", "run a scenario end to end");
    run->add_option("--scenario", scenario_path, "scenario file")->required();
    run->add_option("--config", config_path, "policy config file");
    run->add_option("--seed", seed, "override the scenario seed");
    run->add_option("--out", out_dir, "output directory");
    run->add_option("--export-trace", trace_path, "write a JSONL trace of the run");
    run->add_flag("--mitigation", force_mitigation, "force blocking on");
    run->add_flag("--no-mitigation", no_mitigation, "force blocking off");

    auto* replay = app.add_subcommand("replay", "re-run a trace through the pipeline");
    replay->add_option("--trace", trace_path, "JSONL trace file")->required();
    replay->add_option("--config", config_path, "policy config file");
    replay->add_option("--out", out_dir, "output directory");
    replay->add_option("--expiry-factor", expiry_factor,
                       "stuck-packet expiry as a multiple of window_time");

    auto* qos = app.add_subcommand("qos-sweep", "latency/failure sweep over client counts");
    qos->add_option("--scenario", scenario_path, "scenario file")->required();
    qos->add_option("--config", config_path, "policy config file");
    qos->add_option("--max-clients", max_clients, "largest client count");
    qos->add_option("--out", out_dir, "output directory");

    auto* thr = app.add_subcommand("threshold-sweep",
                                   "latency/drop sweep over instruction thresholds");
    thr->add_option("--scenario", scenario_path, "scenario file")->required();
    thr->add_option("--config", config_path, "policy config file");
    thr->add_option("--thresholds", thresholds, "ascending instruction thresholds")
        ->delimiter(',');
    thr->add_option("--out", out_dir, "output directory");
    thr->add_option("--repeats", sweep_repeats, "averaged runs per threshold");

    auto* enc = app.add_subcommand("encode", "JSONL records to fixed binary records");
    enc->add_option("--in", in_path, "JSONL input")->required();
    enc->add_option("--out", out_path, "binary output")->required();

    auto* dec = app.add_subcommand("decode", "fixed binary records to JSONL");
    dec->add_option("--in", in_path, "binary input")->required();
    dec->add_option("--out", out_path, "JSONL output")->required();

    auto* val = app.add_subcommand("validate-config", "check a policy config file");
    val->add_option("--config", config_path, "policy config file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    std::optional<bool> mitigation;
    if (force_mitigation) mitigation = true;
    if (no_mitigation) mitigation = false;

    try {
        if (run->parsed()) {
            return cmd_run(scenario_path, config_path, seed, out_dir, mitigation, trace_path);
        }
        if (replay->parsed()) {
            return cmd_replay(trace_path, config_path, out_dir, expiry_factor);
        }
        if (qos->parsed()) {
            return cmd_qos_sweep(scenario_path, config_path, max_clients, out_dir);
        }
        if (thr->parsed()) {
            return cmd_threshold_sweep(scenario_path, config_path, thresholds, out_dir,
                                       sweep_repeats);
        }
        if (enc->parsed()) {
            return cmd_encode(in_path, out_path);
        }
        if (dec->parsed()) {
            return cmd_decode(in_path, out_path);
        }
        if (val->parsed()) {
            return cmd_validate_config(config_path);
        }
    } catch (const udos::TraceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.kind == udos::TraceError::Kind::Io ? kExitIo : kExitValidation;
    } catch (const udos::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.line == 0 ? kExitIo : kExitValidation;
    } catch (const udos::ScenarioError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const udos::CodecError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }
    return kExitUsage;
}
