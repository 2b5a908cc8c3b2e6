#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "di3cl/cli/workflows.hpp"

namespace {

// Remaining tokens must be `--section.key value` pairs.
std::vector<std::pair<std::string, std::string>> parse_overrides(const std::vector<std::string>& extras) {
    std::vector<std::pair<std::string, std::string>> out;
    for (std::size_t i = 0; i < extras.size(); ++i) {
        std::string key = extras[i];
        if (key.rfind("--", 0) != 0) throw di3cl::ConfigError("unexpected argument '" + key + "'");
        key.erase(0, 2);
        if (const auto eq = key.find('='); eq != std::string::npos) {
            out.emplace_back(key.substr(0, eq), key.substr(eq + 1));
            continue;
        }
        if (i + 1 >= extras.size()) throw di3cl::ConfigError("flag --" + key + " needs a value");
        out.emplace_back(key, extras[++i]);
    }
    return out;
}

std::string key_listing() {
    di3cl::cli::RunConfig defaults;
    di3cl::cli::Registry reg(defaults);
    std::string s = "\nConfig keys (file `key = value` or flag `--key value`):\n";
    for (const auto& k : reg.keys()) s += "  " + k.key + " (default " + (k.get().empty() ? "unset" : k.get()) + "): " + k.doc + '\n';
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Contrastive pre-training, fine-tuning and scene inference for single-channel imagery"};
    app.require_subcommand(1);
    app.footer(key_listing());
    std::string config_path;
    for (const char* mode : {"pretrain", "finetune", "evaluate", "infer-scene", "synth"}) {
        auto* sub = app.add_subcommand(mode);
        sub->add_option("--config", config_path, "config file (line-oriented `section.key = value`)");
        sub->allow_extras();
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : di3cl::cli::config_error;
    }
    auto* sub = app.get_subcommands().front();
    try {
        const std::string text = config_path.empty() ? std::string() : di3cl::cli::read_text_file(config_path);
        const auto cfg = di3cl::cli::parse_config(text, parse_overrides(sub->remaining()), sub->get_name());
        return di3cl::cli::run_guarded(cfg);
    } catch (const di3cl::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return di3cl::cli::exit_code_for(e.kind());
    }
}
