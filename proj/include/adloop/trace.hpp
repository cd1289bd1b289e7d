#pragma once

// Interleaved thought traces:
//   <think> [text] [<vt> v v .. </vt>] [text] ... </think> <answer> ... END
// Continuous vectors ride alongside the discrete stream, one per VEC
// placeholder token.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "adloop/error.hpp"
#include "adloop/latent_thoughts.hpp"

namespace adloop {

using TokenId = int;

enum class Mode { kVPlus, kVMinus };

std::string_view to_string(Mode mode);

// Text ids occupy [0, text_size); special ids follow.
struct Vocabulary {
  int text_size = 8;
  TokenId think_open = 8;
  TokenId think_close = 9;
  TokenId vt_open = 10;
  TokenId vt_close = 11;
  TokenId answer_sep = 12;
  TokenId end = 13;
  TokenId vec = 14;

  // Synthetic text vocabulary: four actions then four cell classes.
  static Vocabulary standard();

  int size() const { return vec + 1; }
  bool is_text(TokenId t) const { return t >= 0 && t < text_size; }
  bool is_special(TokenId t) const { return t >= text_size && t < size(); }
  void validate() const;
};

struct Segment {
  enum class Kind { kText, kVisual };

  Kind kind = Kind::kText;
  std::vector<TokenId> text_tokens;
  std::vector<Vec> latent_vectors;

  static Segment text(std::vector<TokenId> tokens);
  static Segment visual(std::vector<Vec> vectors);

  bool is_visual() const { return kind == Kind::kVisual; }
  bool operator==(const Segment&) const = default;
};

using Answer = std::variant<std::vector<TokenId>, TokenGrid>;

struct ThoughtTrace {
  std::vector<Segment> segments;
  Answer answer;
  Mode mode = Mode::kVMinus;

  std::size_t num_visual() const;
  bool operator==(const ThoughtTrace&) const = default;
};

// Discrete stream plus the continuous payloads of its VEC placeholders.
// `mode` is the declared sampling mode; absent means "infer from content".
struct TraceStream {
  std::vector<TokenId> tokens;
  std::vector<Vec> vectors;
  std::optional<Mode> mode;

  bool operator==(const TraceStream&) const = default;
};

struct GridShape {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t cells() const { return height * width; }
  bool operator==(const GridShape&) const = default;
};

struct TraceFormat {
  Vocabulary vocab = Vocabulary::standard();
  std::size_t budget_k = 16;
  // Set for tasks whose answer is a token grid.
  std::optional<GridShape> answer_grid;
};

// Throws kStructural when the trace violates its own invariants.
void check_trace(const ThoughtTrace& trace, const TraceFormat& format);

TraceStream render_trace(const ThoughtTrace& trace, const TraceFormat& format);

// Throws Error with kUnbalancedTags, kBudgetExceeded, kMissingAnswer,
// kModeInconsistency or kStructural.
ThoughtTrace parse_trace(const TraceStream& stream, const TraceFormat& format);

bool validate_format(const TraceStream& stream, const TraceFormat& format);

// Best-effort answer extraction that does not require a well-formed stream:
// everything after the last ANSWER_SEP up to END (or the end of the stream).
struct ExtractedAnswer {
  std::vector<TokenId> tokens;
  std::vector<Vec> vectors;
  bool found = false;
};
ExtractedAnswer extract_answer(const TraceStream& stream, const Vocabulary& vocab);

// True when the stream opens at least one visual segment.
bool uses_visual_thoughts(const TraceStream& stream, const Vocabulary& vocab);

// One-line text record, e.g.
//   mode=v+ <think> 0 <vt> [0.5 1] </vt> </think> <answer> 0 <end>
// Text tokens are written as integer ids, vectors as bracketed floats.
std::string format_trace_record(const TraceStream& stream, const Vocabulary& vocab);
TraceStream parse_trace_record(const std::string& line, const Vocabulary& vocab);

}  // namespace adloop
