#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "capgan/checkpoint.hpp"
#include "capgan/evaluator.hpp"
#include "capgan/generator.hpp"

namespace capgan {

/// Header: {"kind": "generator", "seed", "vocab_hash", "dims", "config"}.
Checkpoint generator_checkpoint(const GeneratorParams& gen, const std::string& vocab_hash,
                                const nlohmann::json& config = nlohmann::json::object());
Checkpoint evaluator_checkpoint(const EvaluatorParams& eval,
                                const nlohmann::json& config = nlohmann::json::object());

/// Throws CheckpointError on a kind mismatch, or when `vocab_hash` is given
/// and differs from the one recorded in the checkpoint.
GeneratorParams generator_from_checkpoint(const Checkpoint& ck, const std::string& vocab_hash = "");
EvaluatorParams evaluator_from_checkpoint(const Checkpoint& ck, const std::string& vocab_hash = "");

GeneratorParams load_generator(const std::filesystem::path& path, const std::string& vocab_hash = "");
EvaluatorParams load_evaluator(const std::filesystem::path& path, const std::string& vocab_hash = "");

}  // namespace capgan
