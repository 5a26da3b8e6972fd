// Copyright 2026 The mannflow Authors
// SPDX-License-Identifier: Apache-2.0

// Streaming inference engine. Five stages exchange packets through bounded
// FIFOs in a straight line:
//
//   host -> CONTROL -> INPUT&WRITE -> MEM -> READ -> OUTPUT -> host
//
// CONTROL assembles the model from ModelChunk tokens, validates the token
// protocol and numbers the questions. INPUT&WRITE embeds every sentence by
// summing embedding columns (no multiplies). MEM owns the memory rows and
// hands an immutable snapshot to READ with each query. READ runs the hop
// recurrence internally: each hop addresses the snapshot through a
// MemoryReader (whose work is billed to MEM) and applies the controller.
// OUTPUT scans the logits sequentially, optionally with early exit.
//
// Keeping the recurrence inside READ leaves the stage graph acyclic, so any
// queue capacity >= 1 makes progress. Counters depend only on the packets a
// stage handles, never on scheduling.

#pragma once

#include <cstddef>
#include <cstdint>
#include <exception>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "mann/counters.hpp"
#include "mann/error.hpp"
#include "mann/fifo.hpp"
#include "mann/model.hpp"
#include "mann/reference.hpp"
#include "mann/thresholding.hpp"

namespace mann {

// ---------------------------------------------------------------------------
// Host-facing token stream

enum class WeightId : std::uint8_t { kHeader, kEmbAddress, kEmbContext, kEmbQuestion, kController, kOutput };

/// One row of one weight matrix, or the header carrying dimensions.
struct WeightChunk {
  WeightId id = WeightId::kHeader;
  std::size_t row = 0;
  Vector values;
  Dimensions dims;              // header only
  bool shared_embeddings = false;  // header only
};

struct Answer {
  std::uint64_t question_id = 0;
  std::size_t label = 0;
  std::size_t dot_products = 0;
  Vector logits;  // all I logits when the output layer scanned every class
};

enum class TokenKind { kModelChunk, kStorySentence, kQuestion, kEndOfInput, kAnswer, kFlush };

struct StreamToken {
  TokenKind kind = TokenKind::kEndOfInput;
  std::variant<std::monostate, WeightChunk, Sentence, Answer> payload;

  static StreamToken model_chunk(WeightChunk c) { return {TokenKind::kModelChunk, std::move(c)}; }
  static StreamToken sentence(Sentence s) { return {TokenKind::kStorySentence, std::move(s)}; }
  static StreamToken question(Sentence s) { return {TokenKind::kQuestion, std::move(s)}; }
  static StreamToken answer(Answer a) { return {TokenKind::kAnswer, std::move(a)}; }
  static StreamToken flush() { return {TokenKind::kFlush, std::monostate{}}; }
  static StreamToken end() { return {TokenKind::kEndOfInput, std::monostate{}}; }
};

/// Splits a model into a header chunk followed by one chunk per matrix row.
inline std::vector<StreamToken> model_to_tokens(const ModelWeights& model) {
  model.validate();
  std::vector<StreamToken> out;
  WeightChunk header;
  header.dims = model.dims;
  header.shared_embeddings = model.shared_embeddings;
  out.push_back(StreamToken::model_chunk(std::move(header)));
  auto emit = [&](WeightId id, const Matrix& m) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
      WeightChunk c;
      c.id = id;
      c.row = r;
      c.values.assign(m.row(r).begin(), m.row(r).end());
      out.push_back(StreamToken::model_chunk(std::move(c)));
    }
  };
  emit(WeightId::kEmbAddress, model.emb_address);
  if (!model.shared_embeddings) emit(WeightId::kEmbContext, model.emb_context);
  emit(WeightId::kEmbQuestion, model.emb_question);
  emit(WeightId::kController, model.controller);
  emit(WeightId::kOutput, model.output);
  return out;
}

// ---------------------------------------------------------------------------
// Stage-level operations

/// Per-unit tallies. Work done by the memory reader on READ's behalf is in `mem`.
struct StageCounters {
  OpCounters control;
  OpCounters input_write;
  OpCounters mem;
  OpCounters read;
  OpCounters output;

  OpCounters total() const { return control + input_write + mem + read + output; }

  StageCounters& operator+=(const StageCounters& o) {
    control += o.control;
    input_write += o.input_write;
    mem += o.mem;
    read += o.read;
    output += o.output;
    return *this;
  }

  friend bool operator==(const StageCounters&, const StageCounters&) = default;
};

struct EmbeddedSentence {
  Vector address;
  Vector context;
};

/// Embeds one story sentence for both memories. Without shared embeddings
/// the address and context halves of a word are stored side by side, so one
/// column fetch per word occurrence serves both.
inline EmbeddedSentence embed_for_write(const Sentence& s, const ModelWeights& model, OpCounters* counters) {
  EmbeddedSentence out;
  out.address = embed_sentence(model.emb_address, s, counters);
  out.context = embed_sentence(model.context_embedding(), s);
  return out;
}

inline void write_stage(const Sentence& s, MemoryState& memory, const ModelWeights& model,
                        OpCounters* counters = nullptr) {
  require(!memory.full(), ErrorCode::kCapacity,
          "memory is full (" + std::to_string(memory.capacity()) + " slots)");
  const auto row = embed_for_write(s, model, counters);
  memory.append(row.address, row.context);
}

inline MemoryState& reset(MemoryState& memory) {
  memory.clear();
  return memory;
}

struct OutputResult {
  std::size_t label = 0;
  std::size_t comparisons = 0;
  std::size_t dot_products = 0;
  Vector logits;  // empty after an early exit
};

/// Sequential output layer. Without a table every logit is computed and
/// scanned; with one, classes are visited in table order with early exit.
inline OutputResult output_stage(std::span<const double> hidden, const ModelWeights& model,
                                 const ThresholdTable* thresholding, OpCounters* counters = nullptr) {
  require(all_finite(hidden), ErrorCode::kInvalidInput, "controller output contains non-finite values");
  OutputResult out;
  if (thresholding == nullptr) {
    out.logits = output_logits(hidden, model.output, counters);
    out.label = exact_argmax(out.logits, counters);
    out.dot_products = model.output.rows();
    out.comparisons = model.output.rows() - 1;
    if (counters) counters->weight_column_reads += model.output.rows();
    return out;
  }
  OpCounters local;
  const auto r = thresholded_argmax(hidden, model.output, *thresholding, &local);
  out.label = r.label;
  out.dot_products = r.dot_products;
  out.comparisons = local.logit_comparisons;
  if (!r.early_exit) out.logits = output_logits(hidden, model.output);
  if (counters) *counters += local;
  return out;
}

/// Addressing and read-vector arithmetic against one memory snapshot.
class MemoryReader {
 public:
  MemoryReader(const MemoryState& memory, OpCounters* counters) : memory_(memory), counters_(counters) {}

  Vector read(std::span<const double> key) const {
    const Vector attention = address(memory_.address(), key, memory_.used_slots(), counters_);
    return read_vector(memory_.context(), attention, memory_.used_slots(), counters_);
  }

 private:
  const MemoryState& memory_;
  OpCounters* counters_;
};

// ---------------------------------------------------------------------------
// Inter-stage packets

namespace packet {
struct ModelReady { std::shared_ptr<const ModelWeights> model; };
struct StoryIn { Sentence sentence; };
struct QuestionIn { Sentence sentence; std::uint64_t id; };
struct WriteRow { EmbeddedSentence row; };
struct Query { Vector key; std::uint64_t id; };
struct ReadRequest { Vector key; std::shared_ptr<const MemoryState> memory; std::uint64_t id; };
struct Hidden { Vector h; std::uint64_t id; };
struct Flush {};
struct End {};
}  // namespace packet

using Packet = std::variant<packet::ModelReady, packet::StoryIn, packet::QuestionIn, packet::WriteRow, packet::Query,
                            packet::ReadRequest, packet::Hidden, packet::Flush, packet::End, Answer>;

struct PipelineConfig {
  std::size_t queue_capacity = 4;
  std::optional<std::size_t> hops;  // defaults to the model's T
  std::optional<ThresholdTable> thresholding;
  bool threaded = true;  // false: single-threaded round-robin over the stages

  void validate() const {
    require(queue_capacity >= 1, ErrorCode::kInvalidInput, "queue capacity must be >= 1");
    require(!hops || *hops >= 1, ErrorCode::kInvalidInput, "hops must be >= 1");
    if (thresholding) thresholding->validate();
  }
};

namespace detail {

class Stage {
 public:
  virtual ~Stage() = default;
  virtual void handle(Packet&& in, std::vector<Packet>& out) = 0;
  OpCounters counters;
};

template <typename... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};
template <typename... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

class ControlStage final : public Stage {
 public:
  void handle_token(StreamToken&& token, std::vector<Packet>& out) {
    switch (token.kind) {
      case TokenKind::kModelChunk: absorb_chunk(std::get<WeightChunk>(std::move(token.payload))); return;
      case TokenKind::kStorySentence:
        publish_model(out);
        ++sentences_since_flush_;
        out.emplace_back(packet::StoryIn{std::get<Sentence>(std::move(token.payload))});
        return;
      case TokenKind::kQuestion:
        publish_model(out);
        require(sentences_since_flush_ > 0, ErrorCode::kContractViolation,
                "question received before any story sentence");
        out.emplace_back(packet::QuestionIn{std::get<Sentence>(std::move(token.payload)), next_question_++});
        return;
      case TokenKind::kFlush:
        sentences_since_flush_ = 0;
        out.emplace_back(packet::Flush{});
        return;
      case TokenKind::kEndOfInput: out.emplace_back(packet::End{}); return;
      case TokenKind::kAnswer: fail(ErrorCode::kContractViolation, "answer tokens flow out of the engine, not in");
    }
  }

  void handle(Packet&&, std::vector<Packet>&) override {
    fail(ErrorCode::kContractViolation, "control stage consumes stream tokens");
  }

 private:
  void absorb_chunk(WeightChunk&& c) {
    require(!published_, ErrorCode::kContractViolation, "model chunks must precede all data tokens");
    if (c.id == WeightId::kHeader) {
      building_ = ModelWeights::zeros(c.dims, c.shared_embeddings);
      return;
    }
    require(building_.has_value(), ErrorCode::kContractViolation, "weight chunk before model header");
    Matrix* target = nullptr;
    switch (c.id) {
      case WeightId::kEmbAddress: target = &building_->emb_address; break;
      case WeightId::kEmbContext:
        require(!building_->shared_embeddings, ErrorCode::kContractViolation, "context chunk for shared model");
        target = &building_->emb_context;
        break;
      case WeightId::kEmbQuestion: target = &building_->emb_question; break;
      case WeightId::kController: target = &building_->controller; break;
      case WeightId::kOutput: target = &building_->output; break;
      case WeightId::kHeader: break;
    }
    require(c.row < target->rows() && c.values.size() == target->cols(), ErrorCode::kInvalidInput,
            "weight chunk does not fit its matrix");
    std::copy(c.values.begin(), c.values.end(), target->row(c.row).begin());
  }

  void publish_model(std::vector<Packet>& out) {
    if (published_) return;
    require(building_.has_value(), ErrorCode::kContractViolation, "data token before any model chunk");
    building_->validate();
    out.emplace_back(packet::ModelReady{std::make_shared<const ModelWeights>(std::move(*building_))});
    building_.reset();
    published_ = true;
  }

  std::optional<ModelWeights> building_;
  bool published_ = false;
  std::size_t sentences_since_flush_ = 0;
  std::uint64_t next_question_ = 0;
};

class InputWriteStage final : public Stage {
 public:
  void handle(Packet&& in, std::vector<Packet>& out) override {
    std::visit(Overloaded{
                   [&](packet::ModelReady& p) {
                     model_ = p.model;
                     out.emplace_back(std::move(p));
                   },
                   [&](packet::StoryIn& p) {
                     out.emplace_back(packet::WriteRow{embed_for_write(p.sentence, *model_, &counters)});
                   },
                   [&](packet::QuestionIn& p) {
                     out.emplace_back(packet::Query{read_key(1, &p.sentence, nullptr, model_->emb_question, &counters),
                                                    p.id});
                   },
                   [&](auto& p) { out.emplace_back(std::move(p)); },
               },
               in);
  }

 private:
  std::shared_ptr<const ModelWeights> model_;
};

class MemStage final : public Stage {
 public:
  void handle(Packet&& in, std::vector<Packet>& out) override {
    std::visit(Overloaded{
                   [&](packet::ModelReady& p) {
                     memory_ = std::make_shared<MemoryState>(p.model->dims.memory_slots, p.model->dims.embed_dim);
                     out.emplace_back(std::move(p));
                   },
                   [&](packet::WriteRow& p) {
                     detach();
                     memory_->append(p.row.address, p.row.context);
                   },
                   [&](packet::Query& p) {
                     require(memory_ && memory_->used_slots() > 0, ErrorCode::kEmptyMemory,
                             "query with no written memory slots");
                     out.emplace_back(packet::ReadRequest{std::move(p.key), memory_, p.id});
                   },
                   [&](packet::Flush& p) {
                     if (memory_) {
                       detach();
                       reset(*memory_);
                     }
                     out.emplace_back(p);
                   },
                   [&](auto& p) { out.emplace_back(std::move(p)); },
               },
               in);
  }

 private:
  // Copy-on-write: READ may still hold the previous snapshot.
  void detach() {
    if (memory_.use_count() > 1) memory_ = std::make_shared<MemoryState>(*memory_);
  }

  std::shared_ptr<MemoryState> memory_;
};

class ReadStage final : public Stage {
 public:
  explicit ReadStage(std::optional<std::size_t> hops) : hops_override_(hops) {}

  OpCounters memory_counters;

  void handle(Packet&& in, std::vector<Packet>& out) override {
    std::visit(Overloaded{
                   [&](packet::ModelReady& p) {
                     model_ = p.model;
                     out.emplace_back(std::move(p));
                   },
                   [&](packet::ReadRequest& p) {
                     const MemoryReader reader(*p.memory, &memory_counters);
                     const std::size_t hops = hops_override_.value_or(model_->dims.hops);
                     Vector key = std::move(p.key);
                     Vector h;
                     for (std::size_t t = 1; t <= hops; ++t) {
                       if (t > 1) key = read_key(t, nullptr, &h, model_->emb_question);
                       h = controller_step(reader.read(key), key, model_->controller, &counters);
                     }
                     out.emplace_back(packet::Hidden{std::move(h), p.id});
                   },
                   [&](auto& p) { out.emplace_back(std::move(p)); },
               },
               in);
  }

 private:
  std::optional<std::size_t> hops_override_;
  std::shared_ptr<const ModelWeights> model_;
};

class OutputStage final : public Stage {
 public:
  explicit OutputStage(const ThresholdTable* table) : table_(table) {}

  void handle(Packet&& in, std::vector<Packet>& out) override {
    std::visit(Overloaded{
                   [&](packet::ModelReady& p) { model_ = p.model; },
                   [&](packet::Hidden& p) {
                     auto r = output_stage(p.h, *model_, table_, &counters);
                     out.emplace_back(Answer{p.id, r.label, r.dot_products, std::move(r.logits)});
                   },
                   [&](packet::Flush&) {},
                   [&](auto& p) { out.emplace_back(std::move(p)); },
               },
               in);
  }

 private:
  const ThresholdTable* table_;
  std::shared_ptr<const ModelWeights> model_;
};

}  // namespace detail

struct RunResult {
  std::vector<Answer> answers;
  StageCounters counters;
};

/// Runs a token stream through the five stages and collects the answers.
/// The stream must end with EndOfInput.
class Pipeline {
 public:
  explicit Pipeline(PipelineConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  RunResult run(std::vector<StreamToken> tokens) {
    require(!tokens.empty() && tokens.back().kind == TokenKind::kEndOfInput, ErrorCode::kContractViolation,
            "token stream must end with EndOfInput");
    for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
      require(tokens[i].kind != TokenKind::kEndOfInput, ErrorCode::kContractViolation,
              "EndOfInput before the end of the stream");
    }
    Graph g(cfg_);
    if (cfg_.threaded) {
      run_threaded(g, std::move(tokens));
    } else {
      run_sequential(g, std::move(tokens));
    }
    RunResult r;
    r.answers = std::move(g.answers);
    r.counters.control = g.control.counters;
    r.counters.input_write = g.input.counters;
    r.counters.mem = g.mem.counters + g.read.memory_counters;
    r.counters.read = g.read.counters;
    r.counters.output = g.output.counters;
    return r;
  }

 private:
  static constexpr std::size_t kStages = 5;

  struct Graph {
    explicit Graph(const PipelineConfig& cfg)
        : read(cfg.hops), output(cfg.thresholding ? &*cfg.thresholding : nullptr) {
      for (std::size_t i = 0; i <= kStages; ++i) {
        queues.push_back(std::make_unique<BoundedQueue<Packet>>(cfg.queue_capacity));
      }
      host_in = std::make_unique<BoundedQueue<StreamToken>>(cfg.queue_capacity);
    }

    // queues[k] feeds stage k+1 (queues[0] is CONTROL's output); queues[4] is
    // OUTPUT's output to the host.
    BoundedQueue<Packet>& out_of(std::size_t stage) { return *queues[stage]; }
    BoundedQueue<Packet>& in_of(std::size_t stage) { return *queues[stage - 1]; }
    detail::Stage& stage(std::size_t k) {
      switch (k) {
        case 1: return input;
        case 2: return mem;
        case 3: return read;
        default: return output;
      }
    }

    void close_all() {
      host_in->close();
      for (auto& q : queues) q->close();
    }

    void collect(Packet&& p) {
      if (auto* a = std::get_if<Answer>(&p)) {
        answers.push_back(std::move(*a));
      } else {
        require(std::holds_alternative<packet::End>(p), ErrorCode::kContractViolation,
                "unexpected packet leaving the output stage");
        done = true;
      }
    }

    std::unique_ptr<BoundedQueue<StreamToken>> host_in;
    std::vector<std::unique_ptr<BoundedQueue<Packet>>> queues;
    detail::ControlStage control;
    detail::InputWriteStage input;
    detail::MemStage mem;
    detail::ReadStage read;
    detail::OutputStage output;
    std::vector<Answer> answers;
    bool done = false;
  };

  static bool is_end(const Packet& p) { return std::holds_alternative<packet::End>(p); }

  void run_threaded(Graph& g, std::vector<StreamToken> tokens) {
    std::mutex err_mu;
    std::exception_ptr error;
    auto guard = [&](auto&& body) {
      return [&, body] {
        try {
          body();
        } catch (...) {
          {
            std::lock_guard lock(err_mu);
            if (!error) error = std::current_exception();
          }
          g.close_all();
        }
      };
    };

    std::vector<std::jthread> workers;
    workers.emplace_back(guard([&] {
      for (auto& t : tokens) {
        if (!g.host_in->push(std::move(t))) return;
      }
    }));
    workers.emplace_back(guard([&] {
      std::vector<Packet> pending;
      while (auto tok = g.host_in->pop()) {
        const bool end = tok->kind == TokenKind::kEndOfInput;
        g.control.handle_token(std::move(*tok), pending);
        for (auto& p : pending) {
          if (!g.out_of(0).push(std::move(p))) return;
        }
        pending.clear();
        if (end) return;
      }
    }));
    for (std::size_t k = 1; k < kStages; ++k) {
      workers.emplace_back(guard([&g, k] {
        std::vector<Packet> pending;
        while (auto p = g.in_of(k).pop()) {
          const bool end = is_end(*p);
          g.stage(k).handle(std::move(*p), pending);
          for (auto& q : pending) {
            if (!g.out_of(k).push(std::move(q))) return;
          }
          pending.clear();
          if (end) return;
        }
      }));
    }
    guard([&] {
      while (!g.done) {
        auto p = g.out_of(kStages - 1).pop();
        if (!p) return;
        g.collect(std::move(*p));
      }
    })();
    workers.clear();  // joins
    if (error) std::rethrow_exception(error);
  }

  void run_sequential(Graph& g, std::vector<StreamToken> tokens) {
    std::size_t fed = 0;
    std::vector<std::vector<Packet>> pending(kStages);
    std::vector<std::size_t> cursor(kStages, 0);

    // Pushes as much of a stage's pending output as fits; true when drained.
    auto flush_pending = [&](std::size_t k) {
      auto& buf = pending[k];
      while (cursor[k] < buf.size()) {
        if (!g.out_of(k).try_push(buf[cursor[k]])) return false;
        ++cursor[k];
      }
      buf.clear();
      cursor[k] = 0;
      return true;
    };

    while (!g.done) {
      bool progressed = false;
      if (fed < tokens.size() && g.host_in->try_push(tokens[fed])) {
        ++fed;
        progressed = true;
      }
      if (flush_pending(0)) {
        if (auto tok = g.host_in->try_pop()) {
          g.control.handle_token(std::move(*tok), pending[0]);
          progressed = true;
        }
      }
      for (std::size_t k = 1; k < kStages; ++k) {
        if (!flush_pending(k)) continue;
        if (auto p = g.in_of(k).try_pop()) {
          g.stage(k).handle(std::move(*p), pending[k]);
          progressed = true;
        }
      }
      while (auto p = g.out_of(kStages - 1).try_pop()) {
        g.collect(std::move(*p));
        progressed = true;
      }
      require(progressed || g.done, ErrorCode::kContractViolation, "sequential schedule stalled");
    }
  }

  PipelineConfig cfg_;
};

struct EngineResult {
  std::size_t label = 0;
  std::size_t dot_products = 0;
  Vector logits;
  StageCounters counters;
};

/// Streams one (story, question) pair through a fresh pipeline.
inline EngineResult engine_infer(const ModelWeights& model, const Story& story, const Sentence& question,
                                 const PipelineConfig& cfg = {}) {
  require(story.size() <= model.dims.memory_slots, ErrorCode::kCapacity,
          "story has " + std::to_string(story.size()) + " sentences but memory holds " +
              std::to_string(model.dims.memory_slots));
  auto tokens = model_to_tokens(model);
  for (const auto& s : story) tokens.push_back(StreamToken::sentence(s));
  tokens.push_back(StreamToken::question(question));
  tokens.push_back(StreamToken::end());

  auto run = Pipeline(cfg).run(std::move(tokens));
  require(run.answers.size() == 1, ErrorCode::kContractViolation, "expected exactly one answer");
  EngineResult out;
  out.label = run.answers.front().label;
  out.dot_products = run.answers.front().dot_products;
  out.logits = std::move(run.answers.front().logits);
  out.counters = run.counters;
  return out;
}

/// Tokens for a batch of independent samples: each story is followed by its
/// question and a flush, all behind one copy of the model.
template <typename SampleRange>
std::vector<StreamToken> session_tokens(const ModelWeights& model, const SampleRange& samples) {
  auto tokens = model_to_tokens(model);
  for (const auto& sample : samples) {
    for (const auto& s : sample.story) tokens.push_back(StreamToken::sentence(s));
    tokens.push_back(StreamToken::question(sample.question));
    tokens.push_back(StreamToken::flush());
  }
  tokens.push_back(StreamToken::end());
  return tokens;
}

}  // namespace mann
