#include "costflow/codec.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>

namespace costflow {

// ---------------------------------------------------------------------------
// symbol isolation

std::string isolate_symbols(const std::string& text) {
  std::string out;
  out.reserve(text.size() + 8);
  size_t i = 0;
  auto pad_before = [&]() {
    if (out.empty() || out.back() != ' ') out.push_back(' ');
  };
  while (i < text.size()) {
    char c = text[i];
    if (std::isdigit((unsigned char)c)) {
      pad_before();
      while (i < text.size() && std::isdigit((unsigned char)text[i]))
        out.push_back(text[i++]);
      if (i < text.size() && text[i] != ' ') out.push_back(' ');
    } else if (c == '-' || c == '+') {
      pad_before();
      out.push_back(c);
      ++i;
      if (i < text.size() && text[i] != ' ') out.push_back(' ');
    } else {
      out.push_back(c);
      ++i;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// vocabulary

namespace {

const char* kSpecials[] = {"<UNK>", "<G>", "<OP>", "<PARAMS>", "<DATA>"};

const char* kKeywords[] = {
    "for",     "in",     "step",    "if",       "else",   "nodes",
    "edges",   "arrays", "scalars", "mem_read", "mem_write", "lanes",
    "#pragma", "clang",  "loop",    "unroll",   "full",   "omp",
    "parallel"};

const char* kPunct[] = {"[", "]", "{", "}", "(", ")", ";", ":", ",", "=",
                        "+", "-", "*", "/", "<", ">", ".",
                        "->", "..", "<=", ">=", "==", "!="};

constexpr int kRawNumberMax = 255;  // raw-mode whole-number vocabulary 0..255

}  // namespace

Vocabulary::Vocabulary() {
  version_ = "cf-vocab-2";
  auto add = [&](const std::string& n) {
    index_[n] = (int)names_.size();
    names_.push_back(n);
  };
  for (const char* s : kSpecials) add(s);
  unk_ = index_.at("<UNK>");
  digit0_ = (int)names_.size();
  for (int d = 0; d < 10; ++d) add(std::string(1, char('0' + d)));
  for (const char* s : kKeywords) add(s);
  for (const char* s : kPunct) add(s);
  for (char c = 'a'; c <= 'z'; ++c) add(std::string(1, c));
  for (char c = 'A'; c <= 'Z'; ++c) add(std::string(1, c));
  add("_");
  for (int v = 0; v <= kRawNumberMax; ++v) add("#" + std::to_string(v));
  add("#NUM");
}

int Vocabulary::id(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

int Vocabulary::segment_token(SegmentLabel l) const {
  switch (l) {
    case SegmentLabel::G: return id("<G>");
    case SegmentLabel::OP: return id("<OP>");
    case SegmentLabel::PARAMS: return id("<PARAMS>");
    case SegmentLabel::DATA: return id("<DATA>");
  }
  return unk_;
}

const Vocabulary& vocabulary() {
  static const Vocabulary v;
  return v;
}

// ---------------------------------------------------------------------------
// tokenizer

namespace {

bool is_ident_start(char c) {
  return std::isalpha((unsigned char)c) || c == '_';
}
bool is_ident_char(char c) {
  return std::isalnum((unsigned char)c) || c == '_';
}

void push_ident(const Vocabulary& v, const std::string& lexeme,
                std::vector<int>* out) {
  int kw = v.id(lexeme);
  if (kw >= 0) {
    out->push_back(kw);
    return;
  }
  for (char c : lexeme) {
    int t = v.id(std::string(1, c));
    out->push_back(t >= 0 ? t : v.unk());
  }
}

}  // namespace

TokenStream tokenize(const std::string& raw, TokenizerMode mode) {
  const Vocabulary& v = vocabulary();
  std::string text =
      mode == TokenizerMode::Digitwise ? isolate_symbols(raw) : raw;
  TokenStream out;
  out.vocab_version = v.version();
  size_t i = 0;
  const size_t n = text.size();
  while (i < n) {
    char c = text[i];
    if (std::isspace((unsigned char)c)) {
      ++i;
      continue;
    }
    if (c == '<') {
      // longest-match reserved delimiter, else the '<'/'<=' operator
      static const char* kDelims[] = {"<G>", "<OP>", "<PARAMS>", "<DATA>"};
      bool matched = false;
      for (const char* d : kDelims) {
        size_t len = std::strlen(d);
        if (text.compare(i, len, d) == 0) {
          out.tokens.push_back(v.id(d));
          i += len;
          matched = true;
          break;
        }
      }
      if (matched) continue;
    }
    if (c == '#' && i + 1 < n && is_ident_start(text[i + 1])) {
      size_t j = i + 1;
      while (j < n && is_ident_char(text[j])) ++j;
      std::string lexeme = text.substr(i, j - i);
      int t = v.id(lexeme);
      out.tokens.push_back(t >= 0 ? t : v.unk());
      i = j;
      continue;
    }
    if (std::isdigit((unsigned char)c)) {
      size_t j = i;
      while (j < n && std::isdigit((unsigned char)text[j])) ++j;
      std::string run = text.substr(i, j - i);
      if (mode == TokenizerMode::Digitwise) {
        for (char d : run) out.tokens.push_back(v.digit_token(d - '0'));
      } else {
        // whole-number token; out-of-vocabulary numbers collapse to #NUM
        long val = -1;
        if (run.size() <= 4) val = std::stol(run);
        int t = (val >= 0 && val <= kRawNumberMax)
                    ? v.id("#" + std::to_string(val))
                    : v.id("#NUM");
        out.tokens.push_back(t);
      }
      i = j;
      continue;
    }
    if (is_ident_start(c)) {
      size_t j = i;
      while (j < n && is_ident_char(text[j])) ++j;
      push_ident(v, text.substr(i, j - i), &out.tokens);
      i = j;
      continue;
    }
    // punctuation: two-char operators first
    if (i + 1 < n) {
      std::string two = text.substr(i, 2);
      int t = v.id(two);
      if (t >= 0 && two.size() == 2 && !is_ident_start(two[0]) &&
          !std::isdigit((unsigned char)two[0])) {
        out.tokens.push_back(t);
        i += 2;
        continue;
      }
    }
    int t = v.id(std::string(1, c));
    out.tokens.push_back(t >= 0 ? t : v.unk());
    ++i;
  }
  return out;
}

TokenizedWorkload tokenize_rendered(const RenderedWorkload& r,
                                    TokenizerMode mode) {
  TokenizedWorkload out;
  out.stream.vocab_version = vocabulary().version();
  for (const auto& [span, piece] : r.pieces) {
    TokenStream ts = tokenize(piece, mode);
    SegmentSpan s = span;
    s.token_begin = (int)out.stream.tokens.size();
    out.stream.tokens.insert(out.stream.tokens.end(), ts.tokens.begin(),
                             ts.tokens.end());
    s.token_end = (int)out.stream.tokens.size();
    out.segmap.spans.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// digit codes

DigitCode encode_value(long v, int base, int width) {
  double cap = std::pow((double)base, width);
  if (v < 0 || (double)v >= cap) throw Overflow();
  DigitCode c;
  c.base = base;
  c.width = width;
  c.digits.assign(width, 0);
  long rem = v;
  for (int j = width - 1; j >= 0; --j) {
    c.digits[j] = (int)(rem % base);
    rem /= base;
  }
  return c;
}

double DigitDistribution::row_confidence(int j) const {
  const auto& row = rows.at(j);
  return *std::max_element(row.begin(), row.end());
}

DigitCode decode_greedy(const DigitDistribution& dist) {
  DigitCode c;
  c.base = dist.base;
  c.width = dist.width();
  for (const auto& row : dist.rows) {
    int best = 0;
    for (int d = 1; d < dist.base; ++d)
      if (row[d] > row[best]) best = d;  // ties keep the smaller digit
    c.digits.push_back(best);
  }
  return c;
}

std::vector<BeamCandidate> decode_beam(const DigitStepFn& step_fn, int base,
                                       int width, int beam_width) {
  struct Path {
    std::vector<int> digits;
    double logprob = 0.0;
    double last_prob = 1.0;
  };
  std::vector<Path> beam{Path{}};
  for (int pos = 0; pos < width; ++pos) {
    std::vector<Path> next;
    for (const auto& p : beam) {
      std::vector<double> probs = step_fn(p.digits);
      for (int d = 0; d < base; ++d) {
        Path q = p;
        q.digits.push_back(d);
        double pr = std::max(probs[d], kProbFloor);
        q.logprob += std::log(pr);
        q.last_prob = probs[d];
        next.push_back(std::move(q));
      }
    }
    // stable ordering: higher logprob first, then lexicographically smaller
    std::sort(next.begin(), next.end(), [](const Path& a, const Path& b) {
      if (a.logprob != b.logprob) return a.logprob > b.logprob;
      return a.digits < b.digits;
    });
    if ((int)next.size() > beam_width) next.resize(beam_width);
    beam = std::move(next);
  }
  std::vector<BeamCandidate> out;
  for (const auto& p : beam) {
    BeamCandidate c;
    c.code.base = base;
    c.code.width = width;
    c.code.digits = p.digits;
    c.logprob = p.logprob;
    c.confidence = p.last_prob;
    out.push_back(std::move(c));
  }
  return out;
}

DigitLoss digit_loss(const DigitDistribution& dist, const DigitCode& target) {
  if (dist.base != target.base || dist.width() != target.width)
    throw ShapeMismatch();
  DigitLoss out;
  for (int j = 0; j < target.width; ++j) {
    double p = std::max(dist.rows[j][target.digits[j]], kProbFloor);
    out.per_position.push_back(-std::log(p));
  }
  double sum = 0;
  for (double l : out.per_position) sum += l;
  out.total = sum / target.width;
  return out;
}

DigitLossWithGrad digit_loss_from_logits(
    const std::vector<std::vector<double>>& logits, const DigitCode& target) {
  if ((int)logits.size() != target.width) throw ShapeMismatch();
  DigitLossWithGrad out;
  out.grad_logits.resize(logits.size());
  for (int j = 0; j < target.width; ++j) {
    const auto& row = logits[j];
    if ((int)row.size() != target.base) throw ShapeMismatch();
    double mx = *std::max_element(row.begin(), row.end());
    double sum = 0;
    std::vector<double> p(row.size());
    for (size_t d = 0; d < row.size(); ++d) {
      p[d] = std::exp(row[d] - mx);
      sum += p[d];
    }
    for (auto& x : p) x /= sum;
    out.loss.per_position.push_back(
        -std::log(std::max(p[target.digits[j]], kProbFloor)));
    auto& g = out.grad_logits[j];
    g = p;
    g[target.digits[j]] -= 1.0;
    for (auto& x : g) x /= target.width;  // total is the positional mean
  }
  double s = 0;
  for (double l : out.loss.per_position) s += l;
  out.loss.total = s / target.width;
  return out;
}

double sequence_logprob(const std::vector<double>& step_probs) {
  double s = 0;
  for (double p : step_probs) s += std::log(std::max(p, kProbFloor));
  return s;
}

std::vector<double> path_probs(const DigitStepFn& step_fn,
                               const DigitCode& code) {
  std::vector<double> out;
  std::vector<int> prefix;
  for (int j = 0; j < code.width; ++j) {
    std::vector<double> probs = step_fn(prefix);
    out.push_back(probs[code.digits[j]]);
    prefix.push_back(code.digits[j]);
  }
  return out;
}

}  // namespace costflow
