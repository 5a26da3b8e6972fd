// Copyright 2026 The mannflow Authors
// SPDX-License-Identifier: Apache-2.0

// Synthetic "where is X" task with analytically constructed weights.
//
// Each story states where a few distinct entities went ("e3 moved to l1");
// the question asks for one entity's location. The weights are built so that
// a single hop answers every sample correctly:
//   - address and question embeddings carry an entity one-hot (address side
//     scaled by 10, so attention on the matching fact is >= 0.99);
//   - context embeddings carry entity and location one-hots;
//   - the output layer reads the location block with a per-class gain in
//     [1, 3], and the entity block with a per-entity offset in [-1.5, 1.5]
//     shared by every class plus a per-class term of magnitude <= 0.3.
// The shared offset moves all logits of a sample together, so it never
// changes the argmax but makes "answer" and "not answer" logit distributions
// of a class overlap. Small seeded perturbations on verb and location columns
// add continuous jitter. With these bounds the answer logit beats every other
// logit by at least 0.05.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mann/babi.hpp"
#include "mann/dataset.hpp"
#include "mann/error.hpp"
#include "mann/model.hpp"
#include "mann/random.hpp"

namespace mann {

struct PlantedConfig {
  std::size_t n_entities = 5;
  std::size_t n_locations = 6;
  std::size_t facts_per_story = 4;
  std::size_t n_samples = 1000;
  std::uint64_t seed = 1;

  void validate() const {
    require(n_entities >= 1 && n_locations >= 1 && facts_per_story >= 1 && n_samples >= 1, ErrorCode::kInvalidInput,
            "planted task parameters must all be >= 1");
    require(facts_per_story <= n_entities, ErrorCode::kInvalidInput,
            "facts_per_story (" + std::to_string(facts_per_story) + ") exceeds the number of entities (" +
                std::to_string(n_entities) + "); stories use distinct entities");
  }
};

/// Word layout of the planted vocabulary.
class PlantedLayout {
 public:
  static constexpr std::size_t kVerbs = 4;
  static constexpr double kAddressScale = 10.0;

  PlantedLayout(std::size_t entities, std::size_t locations) : entities_(entities), locations_(locations) {}

  std::uint32_t entity(std::size_t e) const { return static_cast<std::uint32_t>(e); }
  std::uint32_t location(std::size_t l) const { return static_cast<std::uint32_t>(entities_ + l); }
  std::uint32_t verb(std::size_t v) const { return static_cast<std::uint32_t>(entities_ + locations_ + v); }
  std::uint32_t to() const { return verb(kVerbs); }
  std::uint32_t where() const { return verb(kVerbs) + 1; }
  std::uint32_t is() const { return verb(kVerbs) + 2; }

  std::size_t vocab_size() const { return entities_ + locations_ + kVerbs + 3; }
  std::size_t embed_dim() const { return entities_ + locations_; }
  std::size_t entity_dim(std::size_t e) const { return e; }
  std::size_t location_dim(std::size_t l) const { return entities_ + l; }

  Sentence fact(std::size_t e, std::size_t verb_id, std::size_t l) const {
    return Sentence{entity(e), verb(verb_id), to(), location(l)};
  }
  Sentence question(std::size_t e) const { return Sentence{where(), is(), entity(e)}; }

  Vocabulary vocabulary() const {
    static constexpr const char* kVerbNames[kVerbs] = {"went", "moved", "journeyed", "travelled"};
    Vocabulary v;
    for (std::size_t e = 0; e < entities_; ++e) v.add_word("e" + std::to_string(e));
    for (std::size_t l = 0; l < locations_; ++l) v.add_word("l" + std::to_string(l));
    for (const char* name : kVerbNames) v.add_word(name);
    v.add_word("to");
    v.add_word("where");
    v.add_word("is");
    for (std::size_t l = 0; l < locations_; ++l) v.add_label("l" + std::to_string(l));
    return v;
  }

 private:
  std::size_t entities_;
  std::size_t locations_;
};

struct PlantedTask {
  Dataset dataset;
  ModelWeights model;
  Vocabulary vocab;
  PlantedLayout layout;
};

inline ModelWeights planted_model(const PlantedConfig& cfg, Rng& rng) {
  const PlantedLayout lay(cfg.n_entities, cfg.n_locations);
  Dimensions d;
  d.vocab_size = lay.vocab_size();
  d.embed_dim = lay.embed_dim();
  d.output_dim = cfg.n_locations;
  d.memory_slots = cfg.facts_per_story;
  d.hops = 1;
  ModelWeights m = ModelWeights::zeros(d);

  for (std::size_t e = 0; e < cfg.n_entities; ++e) {
    m.emb_address(lay.entity_dim(e), lay.entity(e)) = PlantedLayout::kAddressScale;
    m.emb_question(lay.entity_dim(e), lay.entity(e)) = 1.0;
    m.emb_context(lay.entity_dim(e), lay.entity(e)) = 1.0;
  }
  for (std::size_t l = 0; l < cfg.n_locations; ++l) {
    m.emb_context(lay.location_dim(l), lay.location(l)) = 1.0;
    for (std::size_t e = 0; e < cfg.n_entities; ++e) m.emb_address(lay.entity_dim(e), lay.location(l)) = rng.uniform(-0.1, 0.1);
  }
  const double verb_entity_noise = 0.25 / static_cast<double>(cfg.n_entities);
  for (std::size_t v = 0; v < PlantedLayout::kVerbs; ++v) {
    for (std::size_t e = 0; e < cfg.n_entities; ++e) {
      m.emb_address(lay.entity_dim(e), lay.verb(v)) = rng.uniform(-0.1, 0.1);
      m.emb_context(lay.entity_dim(e), lay.verb(v)) = rng.uniform(-verb_entity_noise, verb_entity_noise);
    }
    for (std::size_t l = 0; l < cfg.n_locations; ++l) m.emb_context(lay.location_dim(l), lay.verb(v)) = rng.uniform(-0.05, 0.05);
  }
  std::vector<double> shared_offset(cfg.n_entities);
  for (double& o : shared_offset) o = rng.uniform(-1.5, 1.5);
  for (std::size_t c = 0; c < cfg.n_locations; ++c) {
    const double gain = rng.uniform(1.0, 3.0);
    const double spread = rng.uniform(0.02, 0.3);
    m.output(c, lay.location_dim(c)) = gain;
    for (std::size_t e = 0; e < cfg.n_entities; ++e) {
      m.output(c, lay.entity_dim(e)) = shared_offset[e] + rng.uniform(-spread, spread);
    }
  }
  return m;
}

/// Builds the dataset and its matching model. Stories use distinct entities;
/// the answer is the location of the queried entity's latest fact.
inline PlantedTask synthesize_planted(const PlantedConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const PlantedLayout lay(cfg.n_entities, cfg.n_locations);
  PlantedTask task{{}, planted_model(cfg, rng), lay.vocabulary(), lay};

  std::vector<std::size_t> entities(cfg.n_entities);
  task.dataset.reserve(cfg.n_samples);
  for (std::size_t n = 0; n < cfg.n_samples; ++n) {
    for (std::size_t e = 0; e < entities.size(); ++e) entities[e] = e;
    rng.shuffle(entities);

    QASample s;
    std::vector<std::size_t> where(cfg.n_entities, cfg.n_locations);
    std::vector<std::uint32_t> last_fact(cfg.n_entities, 0);
    for (std::size_t f = 0; f < cfg.facts_per_story; ++f) {
      const std::size_t e = entities[f];
      const std::size_t l = rng.index(cfg.n_locations);
      s.story.push_back(lay.fact(e, rng.index(PlantedLayout::kVerbs), l));
      where[e] = l;
      last_fact[e] = static_cast<std::uint32_t>(f + 1);
    }
    const std::size_t asked = entities[rng.index(cfg.facts_per_story)];
    s.question = lay.question(asked);
    s.answer = where[asked];
    s.supporting_facts = {last_fact[asked]};
    task.dataset.push_back(std::move(s));
  }
  return task;
}

}  // namespace mann
