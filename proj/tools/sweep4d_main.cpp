/*
 * sweep4d: respiratory-resolved 4D reconstruction of SWEEP slice stacks
 *
 * Copyright 2026 The sweep4d Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// sweep4d command-line tool.
//
//   sweep4d phantom     --config C --out DIR
//   sweep4d pseudolabel --config C --stack S --out DIR
//   sweep4d train       --config C --stack S --labels L --out DIR
//   sweep4d predict     --config C --stack S --checkpoint P --out DIR
//   sweep4d reconstruct --config C --stack S --labels L --out DIR
//   sweep4d evaluate    --config C --truth T [--labels L ...] [--stack S --recon DIR] --out DIR
//   sweep4d pipeline    --config C --out DIR [--keep-going]
//
// Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sweep4d/error.hpp"
#include "sweep4d/pipeline.hpp"

namespace fs = std::filesystem;
using namespace sweep4d;

namespace {

int report_error(const std::string& stage, const std::string& kind, const std::string& message, int code)
{
    nlohmann::json e = {{"error", {{"stage", stage}, {"kind", kind}, {"message", message}, {"exit_code", code}}}};
    std::cerr << e.dump() << "\n";
    return code;
}

const char* kind_name(ErrorKind k)
{
    switch (k) {
    case ErrorKind::Config: return "config";
    case ErrorKind::Data: return "data";
    case ErrorKind::Numeric: return "numeric";
    }
    return "error";
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"sweep4d: respiratory-resolved 4D reconstruction of SWEEP slice stacks"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    std::string config_path;
    std::string out = "out";
    int threads = 0;
    bool deterministic = false;
    bool keep_going = false;
    bool quiet = false;
    app.add_option("--config", config_path, "JSON config (defaults for every missing key)");
    app.add_option("--out", out, "output directory");
    app.add_option("--threads", threads, "cap on worker threads")->check(CLI::NonNegativeNumber);
    app.add_flag("--deterministic", deterministic, "single-threaded numeric paths, no wall times");
    app.add_flag("--keep-going", keep_going, "continue the pipeline after a failing stage");
    app.add_flag("-q,--quiet", quiet, "no progress output");

    std::string stack, labels, checkpoint, truth, recon;
    std::vector<std::string> predicted;

    auto* phantom = app.add_subcommand("phantom", "generate a phantom sweep with ground truth");
    auto* pseudolabel = app.add_subcommand("pseudolabel", "correlation signal and pseudo labels");
    pseudolabel->add_option("--stack", stack, "slice stack")->required();
    auto* train = app.add_subcommand("train", "train the SRNN classifier");
    train->add_option("--stack", stack, "slice stack")->required();
    train->add_option("--labels", labels, "training labels")->required();
    auto* predict = app.add_subcommand("predict", "label every slice with the SRNN");
    predict->add_option("--stack", stack, "slice stack")->required();
    predict->add_option("--checkpoint", checkpoint, "SRNN checkpoint")->required();
    auto* reconstruct = app.add_subcommand("reconstruct", "super-resolve every respiratory state");
    reconstruct->add_option("--stack", stack, "slice stack")->required();
    reconstruct->add_option("--labels", labels, "state labels")->required();
    auto* evaluate = app.add_subcommand("evaluate", "accuracy, PSNR and SSIM reports");
    evaluate->add_option("--labels", predicted, "labelings to score (repeatable)");
    evaluate->add_option("--truth", truth, "reference labels");
    evaluate->add_option("--stack", stack, "slice stack used for the reconstruction");
    evaluate->add_option("--recon", recon, "reconstruction directory");
    auto* pipeline = app.add_subcommand("pipeline", "run every stage from the config");

    for (CLI::App* sub : app.get_subcommands({}))
        sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return report_error("cli", "config", e.what(), 2);
    }

    const std::string stage = app.get_subcommands().front()->get_name();
    try {
        const PipelineConfig config = config_path.empty() ? PipelineConfig::from_json(nlohmann::json::object())
                                                          : PipelineConfig::load(config_path);
        RunOptions opt;
        opt.deterministic = deterministic;
        opt.keep_going = keep_going;
        opt.threads = threads;
        if (!quiet)
            opt.log = [](const std::string& s) { std::clog << s << "\n"; };
        const fs::path dir(out);
        fs::create_directories(dir);

        if (*phantom)
            stage_phantom(config, opt, dir);
        else if (*pseudolabel)
            stage_pseudolabel(config, opt, stack, dir);
        else if (*train)
            stage_train(config, opt, stack, labels, dir);
        else if (*predict)
            stage_predict(config, opt, stack, checkpoint, dir);
        else if (*reconstruct)
            stage_reconstruct(config, opt, stack, labels, dir);
        else if (*evaluate) {
            EvaluateInputs in;
            for (const std::string& p : predicted)
                in.predicted.emplace_back(p);
            if (!truth.empty())
                in.truth = truth;
            if (!stack.empty())
                in.stack = stack;
            if (!recon.empty())
                in.recon_dir = recon;
            stage_evaluate(config, opt, in, dir);
        } else if (*pipeline) {
            const int code = run_pipeline(config, opt, dir);
            if (code != 0)
                return report_error(stage, "stage", "pipeline finished with failures; see pipeline.json", code);
        }
    } catch (const Error& e) {
        return report_error(stage, kind_name(e.kind()), e.what(), e.exit_code());
    } catch (const std::exception& e) {
        return report_error(stage, "internal", e.what(), 1);
    }
    return 0;
}
