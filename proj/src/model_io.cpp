#include "capgan/model_io.hpp"

namespace capgan {

namespace {

void require_kind(const Checkpoint& ck, const char* kind) {
  if (!ck.header.contains("kind") || ck.header.at("kind") != kind) {
    throw CheckpointError(std::string("checkpoint is not a ") + kind + " checkpoint");
  }
}

void require_vocab_hash(const Checkpoint& ck, const std::string& vocab_hash) {
  if (vocab_hash.empty()) return;
  const std::string have = ck.header.value("vocab_hash", std::string());
  if (have != vocab_hash) {
    throw CheckpointError("checkpoint vocabulary " + have + " does not match " + vocab_hash);
  }
}

}  // namespace

Checkpoint generator_checkpoint(const GeneratorParams& gen, const std::string& vocab_hash,
                                const nlohmann::json& config) {
  Checkpoint ck;
  ck.header = {{"kind", "generator"},
               {"seed", gen.store().seed()},
               {"vocab_hash", vocab_hash},
               {"dims", gen.dims().to_json()},
               {"config", config}};
  ck.params = gen.store();
  return ck;
}

Checkpoint evaluator_checkpoint(const EvaluatorParams& eval, const nlohmann::json& config) {
  Checkpoint ck;
  ck.header = {{"kind", "evaluator"},
               {"seed", eval.store().seed()},
               {"vocab_hash", eval.vocab_hash()},
               {"dims", eval.dims().to_json()},
               {"config", config}};
  ck.params = eval.store();
  return ck;
}

GeneratorParams generator_from_checkpoint(const Checkpoint& ck, const std::string& vocab_hash) {
  require_kind(ck, "generator");
  require_vocab_hash(ck, vocab_hash);
  return GeneratorParams(GeneratorDims::from_json(ck.header.at("dims")), ck.params);
}

EvaluatorParams evaluator_from_checkpoint(const Checkpoint& ck, const std::string& vocab_hash) {
  require_kind(ck, "evaluator");
  require_vocab_hash(ck, vocab_hash);
  EvaluatorParams e(EvaluatorDims::from_json(ck.header.at("dims")), ck.params);
  e.set_vocab_hash(ck.header.value("vocab_hash", std::string()));
  return e;
}

GeneratorParams load_generator(const std::filesystem::path& path, const std::string& vocab_hash) {
  return generator_from_checkpoint(Checkpoint::load(path), vocab_hash);
}

EvaluatorParams load_evaluator(const std::filesystem::path& path, const std::string& vocab_hash) {
  return evaluator_from_checkpoint(Checkpoint::load(path), vocab_hash);
}

}  // namespace capgan
