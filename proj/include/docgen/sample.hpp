#pragma once

#include <cstdint>
#include <vector>

#include "docgen/codec.hpp"
#include "docgen/net.hpp"
#include "docgen/rng.hpp"

namespace docgen {

struct SampleConfig {
  double temperature = 1.0;  // 0 = argmax with lowest-id tie-break
  int top_k = 0;             // 0 = off
  double top_p = 1.0;        // 1 = off
  int max_new_tokens = 4096;
  uint64_t seed = 0;

  void validate() const;
  bool operator==(const SampleConfig&) const = default;
};

// Draws the next token: masked ids get probability 0, survivors are
// temperature-scaled, filtered by top-k then top-p, renormalized, sampled.
template <typename Real>
int32_t sample_next(const std::vector<Real>& logits, const std::vector<uint8_t>& mask,
                    const SampleConfig& cfg, Rng& rng);

struct GenerateResult {
  TokenSequence tokens;
  bool truncated = false;  // token budget or model context ran out before EOS
};

// Extends the prompt token-by-token under the grammar mask until EOS,
// max_new_tokens, or the model context runs out. The result always parses.
// With include_text=false the text slot is additionally restricted to
// NULL/EOT, matching what a layout-only model was trained on.
GenerateResult generate(const ModelParams<float>& params, const TokenSequence& prompt,
                        const Vocabulary& vocab, const SampleConfig& cfg,
                        const CodecConfig& codec_cfg = {});

// Document completion: the first k reading-order elements become the prompt
// (verbatim in the output), the model generates the rest.
Document complete_document(const ModelParams<float>& params, const Document& doc, int k,
                           const Vocabulary& vocab, const SampleConfig& cfg,
                           const CodecConfig& codec_cfg = {});

enum class PlacementMode { Single, Multiple };

// Text-box placement: targets index doc.elements. Each target keeps its
// category token but gets model-generated geometry/style/text; every other
// token is forced to ground truth. Targets are processed in reading order,
// each placement visible to the next.
Document place_text_boxes(const ModelParams<float>& params, const Document& doc,
                          const std::vector<int>& targets, PlacementMode mode,
                          const Vocabulary& vocab, const SampleConfig& cfg,
                          const CodecConfig& codec_cfg = {});

extern template int32_t sample_next<float>(const std::vector<float>&,
                                           const std::vector<uint8_t>&, const SampleConfig&,
                                           Rng&);
extern template int32_t sample_next<double>(const std::vector<double>&,
                                            const std::vector<uint8_t>&, const SampleConfig&,
                                            Rng&);

}  // namespace docgen
