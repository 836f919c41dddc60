#include "docgen/sample.hpp"

#include <algorithm>
#include <cmath>

namespace docgen {

void SampleConfig::validate() const {
  if (!(temperature >= 0)) throw ConfigError("sample: temperature must be >= 0");
  if (!(top_p > 0) || top_p > 1) throw ConfigError("sample: top_p must be in (0, 1]");
  if (top_k < 0) throw ConfigError("sample: top_k must be >= 0");
  if (max_new_tokens < 0) throw ConfigError("sample: max_new_tokens must be >= 0");
}

template <typename Real>
int32_t sample_next(const std::vector<Real>& logits, const std::vector<uint8_t>& mask,
                    const SampleConfig& cfg, Rng& rng) {
  if (logits.size() != mask.size())
    throw InvalidInput("sample_next: logits/mask size mismatch");
  std::vector<int32_t> ids;
  ids.reserve(32);
  for (size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) ids.push_back(static_cast<int32_t>(i));
  if (ids.empty()) throw GenerateError("sample_next: mask allows no tokens");

  if (cfg.temperature == 0.0) {
    int32_t best = ids[0];
    for (int32_t id : ids)
      if (logits[static_cast<size_t>(id)] > logits[static_cast<size_t>(best)]) best = id;
    return best;
  }

  // softmax over the allowed ids at the configured temperature
  double mx = -std::numeric_limits<double>::infinity();
  for (int32_t id : ids)
    mx = std::max(mx, static_cast<double>(logits[static_cast<size_t>(id)]) / cfg.temperature);
  std::vector<double> probs(ids.size());
  double sum = 0;
  for (size_t i = 0; i < ids.size(); ++i) {
    const double x =
        static_cast<double>(logits[static_cast<size_t>(ids[i])]) / cfg.temperature;
    probs[i] = std::exp(x - mx);
    sum += probs[i];
  }
  for (double& p : probs) p /= sum;

  // order by probability, lowest id first among ties (ids are ascending and
  // the sort is stable), then truncate by top-k and top-p
  std::vector<size_t> order(ids.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return probs[a] > probs[b]; });
  size_t keep = order.size();
  if (cfg.top_k > 0) keep = std::min(keep, static_cast<size_t>(cfg.top_k));
  if (cfg.top_p < 1.0) {
    double cum = 0;
    size_t k = 0;
    while (k < keep) {
      cum += probs[order[k]];
      ++k;
      if (cum >= cfg.top_p) break;
    }
    keep = std::max<size_t>(1, k);
  }

  double kept_sum = 0;
  for (size_t k = 0; k < keep; ++k) kept_sum += probs[order[k]];
  const double u = rng.next_double() * kept_sum;
  double cum = 0;
  for (size_t k = 0; k < keep; ++k) {
    cum += probs[order[k]];
    if (u < cum) return ids[order[k]];
  }
  return ids[order[keep - 1]];
}

namespace {

// Removes TEXTBYTE options for layout-only decoding; the grammar guarantees
// NULL or EOT stays available in every text-slot state.
void restrict_layout_only(std::vector<uint8_t>& mask, const Vocabulary& vocab) {
  std::fill(mask.begin() + vocab.byte_offset(), mask.begin() + vocab.byte_offset() + 256,
            uint8_t{0});
}

// Lazily-fed decode session: tokens are pushed as they are emitted but only
// run through the model when logits for the next position are needed, so a
// sequence ending exactly at the context edge still completes.
class Feeder {
 public:
  explicit Feeder(const ModelParams<float>& params) : session_(params) {}

  void push(int32_t id) {
    if (pending_ >= 0) session_.step(pending_);
    pending_ = id;
  }

  const std::vector<float>& logits() {
    if (pending_ < 0) throw GenerateError("internal: no token fed before sampling");
    last_ = &session_.step(pending_);
    pending_ = -1;
    return *last_;
  }

  // Positions consumed if everything pending were fed.
  int committed_pos() const { return session_.pos() + (pending_ >= 0 ? 1 : 0); }
  int context() const { return session_.context(); }

 private:
  DecodeSession<float> session_;
  int32_t pending_ = -1;
  const std::vector<float>* last_ = nullptr;
};

}  // namespace

GenerateResult generate(const ModelParams<float>& params, const TokenSequence& prompt,
                        const Vocabulary& vocab, const SampleConfig& cfg,
                        const CodecConfig& codec_cfg) {
  cfg.validate();
  if (params.config.vocab_size != vocab.size())
    throw ConfigError("generate: model vocab_size " +
                      std::to_string(params.config.vocab_size) +
                      " does not match vocabulary size " + std::to_string(vocab.size()));
  if (prompt.ids.empty() || prompt.ids[0] != Vocabulary::kSos)
    throw GenerateError("generate: prompt must start with SOS");
  GrammarState state = grammar_initial();
  for (size_t p = 1; p < prompt.ids.size(); ++p) {
    state = grammar_step(state, prompt.ids[p], vocab, codec_cfg);
    if (state.rejected())
      throw GenerateError("generate: prompt fails grammar at position " + std::to_string(p));
  }
  GenerateResult out;
  out.tokens = prompt;
  if (state.done()) return out;
  if (static_cast<int>(prompt.ids.size()) > params.config.context)
    throw GenerateError("generate: prompt length " + std::to_string(prompt.ids.size()) +
                        " exceeds model context " + std::to_string(params.config.context));

  Feeder feeder(params);
  for (int32_t id : prompt.ids) feeder.push(id);
  Rng rng(cfg.seed);
  for (int n = 0; n < cfg.max_new_tokens; ++n) {
    if (feeder.committed_pos() >= params.config.context) break;  // no room for logits
    std::vector<uint8_t> mask = allowed_mask(state, vocab, codec_cfg);
    if (!codec_cfg.include_text) restrict_layout_only(mask, vocab);
    const int32_t id = sample_next(feeder.logits(), mask, cfg, rng);
    out.tokens.ids.push_back(id);
    state = grammar_step(state, id, vocab, codec_cfg);
    if (state.rejected())
      throw GenerateError("internal: sampled token rejected by grammar");
    if (state.done()) break;
    feeder.push(id);
  }
  out.truncated = !state.done();
  return out;
}

Document complete_document(const ModelParams<float>& params, const Document& doc, int k,
                           const Vocabulary& vocab, const SampleConfig& cfg,
                           const CodecConfig& codec_cfg) {
  Document canon = canonical_order(doc);
  if (k < 0 || k > static_cast<int>(canon.elements.size()))
    throw InvalidInput("complete_document: k out of range: " + std::to_string(k));
  canon.elements.resize(static_cast<size_t>(k));
  TokenSequence prompt = encode(canon, vocab, codec_cfg);
  prompt.ids.pop_back();  // keep the element list open: no EOS
  const GenerateResult gen = generate(params, prompt, vocab, cfg, codec_cfg);
  DecodeResult dec = decode(gen.tokens, vocab, doc.canvas_w, doc.canvas_h, codec_cfg);
  dec.doc.id = doc.id;
  return dec.doc;
}

Document place_text_boxes(const ModelParams<float>& params, const Document& doc,
                          const std::vector<int>& targets, PlacementMode mode,
                          const Vocabulary& vocab, const SampleConfig& cfg,
                          const CodecConfig& codec_cfg) {
  cfg.validate();
  if (mode == PlacementMode::Single && targets.size() != 1)
    throw InvalidInput("place_text_boxes: single mode requires exactly one target");
  for (int t : targets) {
    if (t < 0 || t >= static_cast<int>(doc.elements.size()))
      throw InvalidInput("place_text_boxes: target index out of range: " + std::to_string(t));
    const int cat = doc.elements[static_cast<size_t>(t)].category;
    if (cat < 0 || cat >= vocab.category_count())
      throw GenerateError("place_text_boxes: target category " + std::to_string(cat) +
                          " is not in the vocabulary");
    if (!vocab.categories().at(cat).textual)
      throw InvalidInput("place_text_boxes: target " + std::to_string(t) +
                         " has non-textual category '" + vocab.categories().at(cat).name +
                         "'");
  }
  if (targets.empty()) {
    Document out = quantized_canonical(doc, vocab, codec_cfg);
    return out;  // nothing to place; the document passes through the codec grid
  }
  if (params.config.vocab_size != vocab.size())
    throw ConfigError("place_text_boxes: model/vocabulary size mismatch");

  const std::vector<size_t> perm = canonical_permutation(doc);
  const Document canon = canonical_order(doc);
  std::vector<uint8_t> is_target(canon.elements.size(), 0);
  for (int t : targets) {
    for (size_t pos = 0; pos < perm.size(); ++pos) {
      if (perm[pos] == static_cast<size_t>(t)) {
        if (is_target[pos])
          throw InvalidInput("place_text_boxes: duplicate target " + std::to_string(t));
        is_target[pos] = 1;
        break;
      }
    }
  }

  Feeder feeder(params);
  Rng rng(cfg.seed);
  TokenSequence out_tokens;
  GrammarState state = grammar_initial();

  auto force = [&](int32_t id) {
    out_tokens.ids.push_back(id);
    state = grammar_step(state, id, vocab, codec_cfg);
    if (state.rejected()) throw GenerateError("internal: forced token rejected by grammar");
    if (!state.done()) feeder.push(id);
  };

  // grammar_initial() is already the post-SOS state: emit and feed SOS
  // without stepping the grammar
  out_tokens.ids.push_back(Vocabulary::kSos);
  feeder.push(Vocabulary::kSos);
  for (size_t pos = 0; pos < canon.elements.size(); ++pos) {
    Document one;
    one.canvas_w = canon.canvas_w;
    one.canvas_h = canon.canvas_h;
    one.elements.push_back(canon.elements[pos]);
    const TokenSequence run = encode(one, vocab, codec_cfg);  // SOS ... EOS
    if (!is_target[pos]) {
      for (size_t i = 1; i + 1 < run.ids.size(); ++i) force(run.ids[i]);
      continue;
    }
    force(run.ids[1]);  // the fixed category token
    while (state.phase != GrammarState::Phase::ExpectCatOrEos) {
      if (feeder.committed_pos() >= params.config.context)
        throw GenerateError("place_text_boxes: document exceeds model context");
      std::vector<uint8_t> mask = allowed_mask(state, vocab, codec_cfg);
      if (!codec_cfg.include_text) restrict_layout_only(mask, vocab);
      const int32_t id = sample_next(feeder.logits(), mask, cfg, rng);
      out_tokens.ids.push_back(id);
      state = grammar_step(state, id, vocab, codec_cfg);
      if (state.rejected())
        throw GenerateError("internal: sampled token rejected by grammar");
      feeder.push(id);
    }
  }
  force(Vocabulary::kEos);

  DecodeResult dec = decode(out_tokens, vocab, doc.canvas_w, doc.canvas_h, codec_cfg);
  dec.doc.id = doc.id;
  return dec.doc;
}

template int32_t sample_next<float>(const std::vector<float>&, const std::vector<uint8_t>&,
                                    const SampleConfig&, Rng&);
template int32_t sample_next<double>(const std::vector<double>&, const std::vector<uint8_t>&,
                                     const SampleConfig&, Rng&);

}  // namespace docgen
