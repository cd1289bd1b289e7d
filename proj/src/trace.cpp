#include "adloop/trace.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

namespace adloop {

std::string_view to_string(Mode mode) {
  return mode == Mode::kVPlus ? "v+" : "v-";
}

Vocabulary Vocabulary::standard() { return Vocabulary{}; }

void Vocabulary::validate() const {
  const std::vector<TokenId> specials = {think_open, think_close, vt_open, vt_close,
                                         answer_sep, end, vec};
  for (std::size_t i = 0; i < specials.size(); ++i) {
    if (specials[i] < text_size) {
      throw Error(ErrorCode::kInvalidInput, "special id overlaps text ids");
    }
    for (std::size_t j = i + 1; j < specials.size(); ++j) {
      if (specials[i] == specials[j]) {
        throw Error(ErrorCode::kInvalidInput, "special ids are not distinct");
      }
    }
  }
}

Segment Segment::text(std::vector<TokenId> tokens) {
  Segment s;
  s.kind = Kind::kText;
  s.text_tokens = std::move(tokens);
  return s;
}

Segment Segment::visual(std::vector<Vec> vectors) {
  Segment s;
  s.kind = Kind::kVisual;
  s.latent_vectors = std::move(vectors);
  return s;
}

std::size_t ThoughtTrace::num_visual() const {
  return static_cast<std::size_t>(std::count_if(
      segments.begin(), segments.end(), [](const Segment& s) { return s.is_visual(); }));
}

void check_trace(const ThoughtTrace& trace, const TraceFormat& format) {
  const Vocabulary& v = format.vocab;
  for (std::size_t i = 0; i < trace.segments.size(); ++i) {
    const Segment& s = trace.segments[i];
    if (s.is_visual()) {
      if (!s.text_tokens.empty() || s.latent_vectors.empty()) {
        throw Error(ErrorCode::kStructural, "visual segment payload");
      }
      if (s.latent_vectors.size() > format.budget_k) {
        throw Error(ErrorCode::kBudgetExceeded, "visual segment exceeds budget");
      }
    } else {
      if (!s.latent_vectors.empty() || s.text_tokens.empty()) {
        throw Error(ErrorCode::kStructural, "text segment payload");
      }
      if (!std::all_of(s.text_tokens.begin(), s.text_tokens.end(),
                       [&](TokenId t) { return v.is_text(t); })) {
        throw Error(ErrorCode::kStructural, "non-text id in text segment");
      }
      if (i > 0 && !trace.segments[i - 1].is_visual()) {
        throw Error(ErrorCode::kStructural, "adjacent text segments");
      }
    }
  }
  if (const auto* tokens = std::get_if<std::vector<TokenId>>(&trace.answer)) {
    if (format.answer_grid) {
      throw Error(ErrorCode::kStructural, "format expects a grid answer");
    }
    if (tokens->empty()) throw Error(ErrorCode::kMissingAnswer, "empty answer");
    if (!std::all_of(tokens->begin(), tokens->end(),
                     [&](TokenId t) { return v.is_text(t); })) {
      throw Error(ErrorCode::kStructural, "non-text id in answer");
    }
  } else {
    const auto& grid = std::get<TokenGrid>(trace.answer);
    if (!format.answer_grid || grid.height() != format.answer_grid->height ||
        grid.width() != format.answer_grid->width) {
      throw Error(ErrorCode::kStructural, "answer grid shape mismatch");
    }
  }
  const std::size_t visual = trace.num_visual();
  if (trace.mode == Mode::kVMinus && visual > 0) {
    throw Error(ErrorCode::kModeInconsistency, "v- trace carries visual thoughts");
  }
  if (trace.mode == Mode::kVPlus && visual == 0) {
    throw Error(ErrorCode::kModeInconsistency, "v+ trace has no visual thought");
  }
}

TraceStream render_trace(const ThoughtTrace& trace, const TraceFormat& format) {
  check_trace(trace, format);
  const Vocabulary& v = format.vocab;
  TraceStream out;
  out.mode = trace.mode;
  out.tokens.push_back(v.think_open);
  for (const Segment& s : trace.segments) {
    if (s.is_visual()) {
      out.tokens.push_back(v.vt_open);
      for (const Vec& x : s.latent_vectors) {
        out.tokens.push_back(v.vec);
        out.vectors.push_back(x);
      }
      out.tokens.push_back(v.vt_close);
    } else {
      out.tokens.insert(out.tokens.end(), s.text_tokens.begin(), s.text_tokens.end());
    }
  }
  out.tokens.push_back(v.think_close);
  out.tokens.push_back(v.answer_sep);
  if (const auto* tokens = std::get_if<std::vector<TokenId>>(&trace.answer)) {
    out.tokens.insert(out.tokens.end(), tokens->begin(), tokens->end());
  } else {
    for (const Vec& x : std::get<TokenGrid>(trace.answer).tokens()) {
      out.tokens.push_back(v.vec);
      out.vectors.push_back(x);
    }
  }
  out.tokens.push_back(v.end);
  return out;
}

ThoughtTrace parse_trace(const TraceStream& stream, const TraceFormat& format) {
  const Vocabulary& v = format.vocab;
  const auto& tok = stream.tokens;
  const std::size_t n = tok.size();

  const auto vec_count = static_cast<std::size_t>(std::count(tok.begin(), tok.end(), v.vec));
  if (vec_count != stream.vectors.size()) {
    throw Error(ErrorCode::kStructural, "vector payload count does not match placeholders");
  }
  if (n == 0 || tok[0] != v.think_open) {
    throw Error(ErrorCode::kUnbalancedTags, "stream does not open with <think>");
  }

  ThoughtTrace trace;
  std::size_t pos = 1;
  std::size_t next_vec = 0;
  bool closed = false;
  while (pos < n && !closed) {
    const TokenId t = tok[pos];
    if (v.is_text(t)) {
      if (trace.segments.empty() || trace.segments.back().is_visual()) {
        trace.segments.push_back(Segment::text({}));
      }
      trace.segments.back().text_tokens.push_back(t);
      ++pos;
    } else if (t == v.vt_open) {
      ++pos;
      std::vector<Vec> vectors;
      while (pos < n && tok[pos] == v.vec) {
        vectors.push_back(stream.vectors[next_vec++]);
        if (vectors.size() > format.budget_k) {
          throw Error(ErrorCode::kBudgetExceeded,
                      "visual segment exceeds budget " + std::to_string(format.budget_k));
        }
        ++pos;
      }
      if (pos >= n || tok[pos] != v.vt_close) {
        throw Error(ErrorCode::kUnbalancedTags, "<vt> without matching </vt>");
      }
      if (vectors.empty()) throw Error(ErrorCode::kStructural, "empty visual thought");
      trace.segments.push_back(Segment::visual(std::move(vectors)));
      ++pos;
    } else if (t == v.think_close) {
      closed = true;
      ++pos;
    } else if (t == v.vec) {
      throw Error(ErrorCode::kStructural, "vector outside a visual thought");
    } else {
      throw Error(ErrorCode::kUnbalancedTags, "unexpected tag inside <think>");
    }
  }
  if (!closed) throw Error(ErrorCode::kUnbalancedTags, "<think> is never closed");

  if (pos >= n || tok[pos] != v.answer_sep) {
    throw Error(ErrorCode::kMissingAnswer, "no answer after </think>");
  }
  ++pos;
  std::vector<TokenId> answer_tokens;
  std::vector<Vec> answer_vectors;
  while (pos < n && tok[pos] != v.end) {
    const TokenId t = tok[pos];
    if (format.answer_grid && t == v.vec) {
      answer_vectors.push_back(stream.vectors[next_vec++]);
    } else if (!format.answer_grid && v.is_text(t)) {
      answer_tokens.push_back(t);
    } else if (v.is_special(t) && t != v.vec) {
      throw Error(ErrorCode::kUnbalancedTags, "tag inside the answer");
    } else {
      throw Error(ErrorCode::kStructural, "answer payload of the wrong kind");
    }
    ++pos;
  }
  if (pos >= n) throw Error(ErrorCode::kUnbalancedTags, "stream is not terminated by END");
  if (pos + 1 != n) throw Error(ErrorCode::kStructural, "tokens after END");

  if (format.answer_grid) {
    if (answer_vectors.empty()) throw Error(ErrorCode::kMissingAnswer, "empty grid answer");
    if (answer_vectors.size() != format.answer_grid->cells()) {
      throw Error(ErrorCode::kStructural, "grid answer has the wrong number of cells");
    }
    trace.answer = TokenGrid(format.answer_grid->height, format.answer_grid->width,
                             std::move(answer_vectors));
  } else {
    if (answer_tokens.empty()) throw Error(ErrorCode::kMissingAnswer, "empty answer");
    trace.answer = std::move(answer_tokens);
  }

  const std::size_t visual = trace.num_visual();
  if (stream.mode) {
    trace.mode = *stream.mode;
    if (trace.mode == Mode::kVMinus && visual > 0) {
      throw Error(ErrorCode::kModeInconsistency, "v- stream opens a visual thought");
    }
    if (trace.mode == Mode::kVPlus && visual == 0) {
      throw Error(ErrorCode::kModeInconsistency, "v+ stream has no visual thought");
    }
  } else {
    trace.mode = visual > 0 ? Mode::kVPlus : Mode::kVMinus;
  }
  return trace;
}

bool validate_format(const TraceStream& stream, const TraceFormat& format) {
  try {
    parse_trace(stream, format);
    return true;
  } catch (const Error&) {
    return false;
  }
}

ExtractedAnswer extract_answer(const TraceStream& stream, const Vocabulary& vocab) {
  ExtractedAnswer out;
  const auto& tok = stream.tokens;
  const auto sep = std::find(tok.rbegin(), tok.rend(), vocab.answer_sep);
  if (sep == tok.rend()) return out;
  out.found = true;
  // Vector index of the first placeholder after the separator.
  const std::size_t start = static_cast<std::size_t>(tok.rend() - sep);
  auto vec_index = static_cast<std::size_t>(
      std::count(tok.begin(), tok.begin() + static_cast<std::ptrdiff_t>(start), vocab.vec));
  for (std::size_t i = start; i < tok.size() && tok[i] != vocab.end; ++i) {
    if (tok[i] == vocab.vec) {
      if (vec_index < stream.vectors.size()) out.vectors.push_back(stream.vectors[vec_index]);
      ++vec_index;
    } else {
      out.tokens.push_back(tok[i]);
    }
  }
  return out;
}

bool uses_visual_thoughts(const TraceStream& stream, const Vocabulary& vocab) {
  return std::find(stream.tokens.begin(), stream.tokens.end(), vocab.vt_open) !=
         stream.tokens.end();
}

std::string format_trace_record(const TraceStream& stream, const Vocabulary& vocab) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "mode=" << (stream.mode ? to_string(*stream.mode) : std::string_view("auto"));
  std::size_t next_vec = 0;
  for (TokenId t : stream.tokens) {
    out << ' ';
    if (t == vocab.think_open) {
      out << "<think>";
    } else if (t == vocab.think_close) {
      out << "</think>";
    } else if (t == vocab.vt_open) {
      out << "<vt>";
    } else if (t == vocab.vt_close) {
      out << "</vt>";
    } else if (t == vocab.answer_sep) {
      out << "<answer>";
    } else if (t == vocab.end) {
      out << "<end>";
    } else if (t == vocab.vec) {
      const Vec& x = stream.vectors.at(next_vec++);
      out << '[';
      for (std::size_t k = 0; k < x.size(); ++k) {
        if (k) out << ' ';
        out << x[k];
      }
      out << ']';
    } else {
      out << t;
    }
  }
  return out.str();
}

TraceStream parse_trace_record(const std::string& line, const Vocabulary& vocab) {
  TraceStream out;
  std::istringstream in(line);
  std::string word;
  if (!(in >> word) || word.rfind("mode=", 0) != 0) {
    throw Error(ErrorCode::kParse, "trace record must start with mode=");
  }
  const std::string mode = word.substr(5);
  if (mode == "v+") {
    out.mode = Mode::kVPlus;
  } else if (mode == "v-") {
    out.mode = Mode::kVMinus;
  } else if (mode != "auto") {
    throw Error(ErrorCode::kParse, "unknown mode '" + mode + "'");
  }
  while (in >> word) {
    if (word == "<think>") {
      out.tokens.push_back(vocab.think_open);
    } else if (word == "</think>") {
      out.tokens.push_back(vocab.think_close);
    } else if (word == "<vt>") {
      out.tokens.push_back(vocab.vt_open);
    } else if (word == "</vt>") {
      out.tokens.push_back(vocab.vt_close);
    } else if (word == "<answer>") {
      out.tokens.push_back(vocab.answer_sep);
    } else if (word == "<end>") {
      out.tokens.push_back(vocab.end);
    } else if (word.front() == '[') {
      std::string body = word.substr(1);
      while (body.empty() || body.back() != ']') {
        std::string more;
        if (!(in >> more)) throw Error(ErrorCode::kParse, "unterminated vector");
        body += ' ' + more;
      }
      body.pop_back();
      std::istringstream vin(body);
      Vec x;
      double value = 0.0;
      while (vin >> value) x.push_back(value);
      if (!vin.eof()) throw Error(ErrorCode::kParse, "bad vector component");
      out.tokens.push_back(vocab.vec);
      out.vectors.push_back(std::move(x));
    } else {
      std::size_t used = 0;
      int id = 0;
      try {
        id = std::stoi(word, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != word.size() || !vocab.is_text(id)) {
        throw Error(ErrorCode::kParse, "unknown trace token '" + word + "'");
      }
      out.tokens.push_back(id);
    }
  }
  return out;
}

}  // namespace adloop
