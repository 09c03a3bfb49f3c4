#ifndef COSTFLOW_CODEC_HPP
#define COSTFLOW_CODEC_HPP

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "costflow/ir.hpp"

// Progressive program encoding (symbol isolation + tokenization) and
// base-D digit codes with beam decoding, losses, and confidences.

namespace costflow {

struct CodecError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct Overflow : CodecError {
  Overflow() : CodecError("Overflow: value out of representable digit range") {}
};
struct ShapeMismatch : CodecError {
  ShapeMismatch() : CodecError("ShapeMismatch: distribution/target disagree") {}
};

// Inserts spaces so every maximal digit run and every sign character is
// whitespace-separated ("-128" -> " - 128"). Idempotent.
std::string isolate_symbols(const std::string& text);

enum class TokenizerMode {
  Digitwise,  // isolation on, k-digit number -> k digit tokens
  RawNumber,  // isolation off, a whole number -> one (possibly UNK) token
};

class Vocabulary {
 public:
  Vocabulary();

  int size() const { return (int)names_.size(); }
  const std::string& version() const { return version_; }
  const std::string& name(int id) const { return names_.at(id); }
  int id(const std::string& name) const;  // -1 when absent
  int unk() const { return unk_; }

  int digit_token(int d) const { return digit0_ + d; }
  bool is_digit_token(int id) const { return id >= digit0_ && id < digit0_ + 10; }

  int segment_token(SegmentLabel l) const;

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, int> index_;
  std::string version_;
  int unk_ = 0;
  int digit0_ = 0;
};

const Vocabulary& vocabulary();  // process-wide fixed vocabulary

struct TokenStream {
  std::vector<int> tokens;
  std::string vocab_version;
};

TokenStream tokenize(const std::string& text,
                     TokenizerMode mode = TokenizerMode::Digitwise);

// Tokenizes a rendered workload piece by piece and fills in segment spans.
struct TokenizedWorkload {
  TokenStream stream;
  SegmentMap segmap;
};
TokenizedWorkload tokenize_rendered(const RenderedWorkload& r,
                                    TokenizerMode mode = TokenizerMode::Digitwise);

// ---------------------------------------------------------------------------
// digit codes

struct DigitCode {
  int base = 10;
  int width = 1;
  std::vector<int> digits;  // high-order first

  long value() const {
    long v = 0;
    for (int d : digits) v = v * base + d;
    return v;
  }
  bool operator==(const DigitCode& o) const {
    return base == o.base && width == o.width && digits == o.digits;
  }
};

DigitCode encode_value(long v, int base, int width);  // throws Overflow

struct DigitDistribution {
  int base = 10;
  std::vector<std::vector<double>> rows;  // width x base, each sums to 1

  int width() const { return (int)rows.size(); }
  // max probability of row j
  double row_confidence(int j) const;
};

DigitCode decode_greedy(const DigitDistribution& dist);

// step_fn(prefix) -> base-way probability vector for the next digit.
using DigitStepFn = std::function<std::vector<double>(const std::vector<int>&)>;

struct BeamCandidate {
  DigitCode code;
  double logprob = 0.0;
  double confidence = 0.0;  // probability of the final digit given its prefix
};

std::vector<BeamCandidate> decode_beam(const DigitStepFn& step_fn, int base,
                                       int width, int beam_width);

struct DigitLoss {
  std::vector<double> per_position;
  double total = 0.0;  // mean over positions
};

// Categorical cross-entropy per position; probabilities clamped at 1e-12.
DigitLoss digit_loss(const DigitDistribution& dist, const DigitCode& target);

// Loss straight from logits (rows of unnormalized scores), with the analytic
// gradient softmax(logits) - onehot(target), scaled by 1/width.
struct DigitLossWithGrad {
  DigitLoss loss;
  std::vector<std::vector<double>> grad_logits;
};
DigitLossWithGrad digit_loss_from_logits(
    const std::vector<std::vector<double>>& logits, const DigitCode& target);

// Sum of clamped log probabilities along a digit path; log pi(y|x).
double sequence_logprob(const std::vector<double>& step_probs);

// Per-position conditional probabilities of `code` under `step_fn`.
std::vector<double> path_probs(const DigitStepFn& step_fn, const DigitCode& code);

constexpr double kProbFloor = 1e-12;

}  // namespace costflow

#endif  // COSTFLOW_CODEC_HPP
