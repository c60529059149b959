#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "flowchain/commands.hpp"
#include "flowchain/numcore.hpp"

using nlohmann::json;

namespace {

void fail(const std::string& kind, const std::string& message)
{
    std::cerr << json{{"error", kind}, {"message", message}}.dump() << std::endl;
}

const std::map<std::string, std::string> kSummaries = {
    {"gen", "Generate a Simfork or unicycle dataset (TrajNet text plus JSON sidecar)"},
    {"train", "Train a model and write a checkpoint directory"},
    {"predict", "Sample per-step density maps and trajectories for each window"},
    {"eval", "Compute ADE/FDE, log-probability, KDE and EMD metrics"},
    {"bench-update", "Time predict against the fast update"},
    {"export-figure-data", "Rasterize step densities on a grid for plotting"},
};

json parse_value(const std::string& text)
{
    try {
        return json::parse(text);
    } catch (const json::parse_error&) {
        return text;
    }
}

std::vector<std::string> split_list(const std::string& text)
{
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t comma = text.find(',', pos);
        const std::string item = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        if (!item.empty()) out.push_back(item);
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

struct Options {
    std::string config;
    std::map<std::string, std::string> text;
    std::vector<std::string> sets;
};

// Flag name -> config key. Values are parsed as JSON when possible.
const std::vector<std::pair<std::string, std::string>> kFlags = {
    {"--seed", "seed"},
    {"--mode", "mode"},
    {"--samples", "samples"},
    {"--steps", "steps"},
    {"--held-out", "held_out"},
    {"--social-pooling", "social_pooling"},
    {"--out", "out"},
    {"--data", "data"},
    {"--checkpoint", "checkpoint"},
    {"--kind", "kind"},
    {"--trajectories", "trajectories"},
    {"--noise", "noise"},
    {"--epochs", "epochs"},
    {"--batch-size", "batch_size"},
    {"--learning-rate", "learning_rate"},
    {"--time-limit", "time_limit"},
    {"--repetitions", "repetitions"},
    {"--metrics", "metrics"},
    {"--window", "window"},
    {"--grid", "grid"},
    {"--format", "format"},
    {"--max-windows", "max_windows"},
};

}  // namespace

int main(int argc, char** argv)
{
    flowchain::tune_allocator();
    CLI::App app{"FlowChain trajectory density prediction"};
    app.require_subcommand(1);
    std::map<std::string, Options> options;
    for (const auto& name : flowchain::command_names()) {
        auto* sub = app.add_subcommand(name, kSummaries.count(name) ? kSummaries.at(name) : "");
        Options& o = options[name];
        sub->add_option("--config", o.config, "JSON configuration file");
        const json defaults = flowchain::default_config(name);
        for (const auto& [flag, key] : kFlags) {
            if (!defaults.contains(key)) continue;
            if (defaults[key].is_boolean()) {
                sub->add_flag_callback(flag, [&o, key = key] { o.text[key] = "true"; }, "set " + key);
            } else {
                sub->add_option_function<std::string>(flag, [&o, key = key](const std::string& v) { o.text[key] = v; },
                                                       key + " (default " + defaults[key].dump() + ")");
            }
        }
        sub->add_option("--set", o.sets, "key=value override for any configuration key");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        fail("UsageError", e.what());
        return 1;
    }

    const CLI::App* sub = app.get_subcommands().front();
    const std::string command = sub->get_name();
    const Options& o = options[command];
    try {
        json file;
        if (!o.config.empty()) {
            std::ifstream in(o.config);
            if (!in) throw flowchain::ConfigError("cannot read config file '" + o.config + "'");
            try {
                file = json::parse(in);
            } catch (const json::parse_error& e) {
                throw flowchain::ConfigError("config file '" + o.config + "' is not valid JSON: " + e.what());
            }
        }
        json overrides = json::object();
        for (const auto& [key, value] : o.text) {
            if (key == "steps") {
                json list = json::array();
                for (const auto& item : split_list(value)) list.push_back(std::stoi(item));
                overrides[key] = list;
            } else if (key == "metrics") {
                overrides[key] = split_list(value);
            } else {
                const json parsed = parse_value(value);
                overrides[key] = parsed.is_string() || parsed.is_number() || parsed.is_boolean() ? parsed : json(value);
            }
        }
        for (const auto& s : o.sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw flowchain::ConfigError("--set expects key=value, got '" + s + "'");
            overrides[s.substr(0, eq)] = parse_value(s.substr(eq + 1));
        }
        // String keys keep their literal text even when it parses as a number.
        const json defaults = flowchain::default_config(command);
        for (auto& [key, value] : overrides.items()) {
            if (defaults.contains(key) && defaults[key].is_string() && !value.is_string()) {
                const auto it = o.text.find(key);
                if (it != o.text.end()) value = it->second;
            }
        }
        const json config = flowchain::resolve_config(command, file, overrides);
        const json result = flowchain::run_command(command, config);
        std::cout << result.dump(2) << std::endl;
        return 0;
    } catch (const flowchain::ConfigError& e) {
        fail("ConfigError", e.what());
    } catch (const flowchain::FormatError& e) {
        fail("FormatError", e.what());
    } catch (const flowchain::ShapeError& e) {
        fail("ShapeError", e.what());
    } catch (const flowchain::NumericError& e) {
        fail("NumericError", e.what());
    } catch (const std::exception& e) {
        fail("Error", e.what());
    }
    return 1;
}
