#include "adloop/tasks.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <queue>
#include <sstream>

#include "adloop/error.hpp"
#include "adloop/rng.hpp"

namespace adloop {

namespace {

constexpr std::array<Action, 4> kActions = {Action::kUp, Action::kDown,
                                            Action::kLeft, Action::kRight};

// Breadth-first distances over non-hole cells; -1 marks unreachable.
std::vector<int> bfs_distances(const GridMap& map, Cell from) {
  std::vector<int> dist(static_cast<std::size_t>(map.size * map.size), -1);
  auto idx = [&](Cell c) { return static_cast<std::size_t>(c.first * map.size + c.second); };
  if (!map.on_board(from) || map.is_hole(from)) return dist;
  std::queue<Cell> frontier;
  dist[idx(from)] = 0;
  frontier.push(from);
  while (!frontier.empty()) {
    const Cell c = frontier.front();
    frontier.pop();
    for (Action a : kActions) {
      const Cell n = step(c, a);
      if (!map.on_board(n) || map.is_hole(n) || dist[idx(n)] >= 0) continue;
      dist[idx(n)] = dist[idx(c)] + 1;
      frontier.push(n);
    }
  }
  return dist;
}

std::string cell_string(Cell c) {
  return std::to_string(c.first) + "," + std::to_string(c.second);
}

int parse_int(const std::string& s) {
  int value = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw Error(ErrorCode::kParse, "bad integer '" + s + "'");
  }
  return value;
}

Cell parse_cell(const std::string& s) {
  const auto comma = s.find(',');
  if (comma == std::string::npos) throw Error(ErrorCode::kParse, "bad cell '" + s + "'");
  return {parse_int(s.substr(0, comma)), parse_int(s.substr(comma + 1))};
}

std::vector<TokenId> cell_tokens(const std::vector<CellType>& cells) {
  std::vector<TokenId> out;
  out.reserve(cells.size());
  for (CellType c : cells) out.push_back(cell_token(c));
  return out;
}

}  // namespace

Cell step(Cell from, Action a) {
  switch (a) {
    case Action::kUp: return {from.first - 1, from.second};
    case Action::kDown: return {from.first + 1, from.second};
    case Action::kLeft: return {from.first, from.second - 1};
    case Action::kRight: return {from.first, from.second + 1};
  }
  return from;
}

char action_char(Action a) { return "UDLR"[static_cast<int>(a)]; }

TokenId action_token(Action a) { return static_cast<TokenId>(a); }
TokenId cell_token(CellType c) { return kNumActions + static_cast<TokenId>(c); }

std::optional<Action> token_action(TokenId t) {
  if (t < 0 || t >= kNumActions) return std::nullopt;
  return static_cast<Action>(t);
}

StateEncoder::StateEncoder(std::size_t dim, double position_scale)
    : dim_(dim), position_scale_(position_scale) {
  if (dim < static_cast<std::size_t>(kNumCellTypes) + 2) {
    throw Error(ErrorCode::kInvalidInput, "encoder dim must be >= 6");
  }
  if (!(position_scale >= 0.0) || !std::isfinite(position_scale)) {
    throw Error(ErrorCode::kInvalidInput, "position scale must be finite and >= 0");
  }
  // Type k lights every class component j with j % 4 == k; the last two
  // components are reserved for the cell position.
  for (int k = 0; k < kNumCellTypes; ++k) {
    Vec e(dim, 0.0);
    for (std::size_t j = 0; j < type_dims(); ++j) {
      if (static_cast<int>(j % kNumCellTypes) == k) e[j] = 1.0;
    }
    table_.push_back(std::move(e));
  }
}

CellType StateEncoder::nearest(const Vec& v) const {
  if (v.size() != dim_) throw Error(ErrorCode::kInvalidInput, "vector dim mismatch");
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int k = 0; k < kNumCellTypes; ++k) {
    double d = 0.0;
    for (std::size_t j = 0; j < type_dims(); ++j) {
      const double e = v[j] - table_[k][j];
      d += e * e;
    }
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return static_cast<CellType>(best);
}

TokenGrid StateEncoder::encode(const std::vector<CellType>& cells, std::size_t height,
                               std::size_t width) const {
  if (cells.size() != height * width) {
    throw Error(ErrorCode::kInvalidInput, "cell count does not match grid shape");
  }
  const double row_step = height > 1 ? position_scale_ / static_cast<double>(height - 1) : 0.0;
  const double col_step = width > 1 ? position_scale_ / static_cast<double>(width - 1) : 0.0;
  std::vector<Vec> tokens;
  tokens.reserve(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    Vec e = embedding(cells[i]);
    e[dim_ - 2] = static_cast<double>(i / width) * row_step;
    e[dim_ - 1] = static_cast<double>(i % width) * col_step;
    tokens.push_back(std::move(e));
  }
  return TokenGrid(height, width, std::move(tokens));
}

std::string_view to_string(TaskFamily f) {
  return f == TaskFamily::kNavigation ? "nav" : "draft";
}

std::optional<int> shortest_path_length(const GridMap& map) {
  const auto dist = bfs_distances(map, map.start);
  if (!map.on_board(map.destination)) return std::nullopt;
  const int d = dist[static_cast<std::size_t>(map.destination.first * map.size +
                                               map.destination.second)];
  if (d < 0) return std::nullopt;
  return d;
}

GridMap generate_map(std::uint64_t seed, int size, int level) {
  if (size < 3) throw Error(ErrorCode::kInvalidInput, "map size must be >= 3");
  if (level < 1) throw Error(ErrorCode::kInvalidInput, "level must be >= 1");
  if (level > 2 * size) {
    throw Error(ErrorCode::kGenerationFailure, "level exceeds the 2n path bound");
  }
  auto rng = make_rng(seed, "map", {static_cast<std::uint64_t>(size),
                                    static_cast<std::uint64_t>(level)});
  std::uniform_int_distribution<int> coord(0, size - 1);
  std::uniform_int_distribution<int> percent(0, 99);
  constexpr int kHolePercent = 20;
  constexpr int kAttempts = 2000;

  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    GridMap map;
    map.size = size;
    map.level = level;
    for (int r = 0; r < size; ++r) {
      for (int c = 0; c < size; ++c) {
        if (percent(rng) < kHolePercent) map.holes.insert({r, c});
      }
    }
    map.start = {coord(rng), coord(rng)};
    map.holes.erase(map.start);
    const auto dist = bfs_distances(map, map.start);
    std::vector<Cell> candidates;
    for (int r = 0; r < size; ++r) {
      for (int c = 0; c < size; ++c) {
        if (dist[static_cast<std::size_t>(r * size + c)] == level) candidates.push_back({r, c});
      }
    }
    if (candidates.empty()) continue;
    std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
    map.destination = candidates[pick(rng)];
    return map;
  }
  throw Error(ErrorCode::kGenerationFailure,
              "no map with shortest path " + std::to_string(level) + " on a " +
                  std::to_string(size) + "x" + std::to_string(size) + " board");
}

std::vector<CellType> map_cells(const GridMap& map, Cell agent) {
  if (!map.on_board(agent)) throw Error(ErrorCode::kInvalidInput, "agent position off the board");
  std::vector<CellType> cells(static_cast<std::size_t>(map.size * map.size), CellType::kEmpty);
  for (const Cell& h : map.holes) {
    cells[static_cast<std::size_t>(h.first * map.size + h.second)] = CellType::kHole;
  }
  cells[static_cast<std::size_t>(map.destination.first * map.size + map.destination.second)] =
      CellType::kGoal;
  cells[static_cast<std::size_t>(agent.first * map.size + agent.second)] = CellType::kAgent;
  return cells;
}

TokenGrid encode_state(const GridMap& map, Cell agent, const StateEncoder& encoder) {
  const auto n = static_cast<std::size_t>(map.size);
  return encoder.encode(map_cells(map, agent), n, n);
}

double judge_navigation(const GridMap& map, const std::vector<Action>& actions) {
  Cell pos = map.start;
  for (Action a : actions) {
    pos = step(pos, a);
    if (!map.on_board(pos) || map.is_hole(pos)) return 0.0;
  }
  return pos == map.destination ? 1.0 : 0.0;
}

double judge_navigation_tokens(const GridMap& map, const std::vector<TokenId>& tokens) {
  std::vector<Action> actions;
  actions.reserve(tokens.size());
  for (TokenId t : tokens) {
    const auto a = token_action(t);
    if (!a) return 0.0;
    actions.push_back(*a);
  }
  return judge_navigation(map, actions);
}

double judge_drafting(const TokenGrid& produced, const TokenGrid& target,
                      const StateEncoder& encoder) {
  if (produced.height() != target.height() || produced.width() != target.width() ||
      produced.dim() != target.dim()) {
    throw Error(ErrorCode::kInvalidInput, "drafting grids differ in shape");
  }
  std::size_t agree = 0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (encoder.nearest(produced.at(i)) == encoder.nearest(target.at(i))) ++agree;
  }
  return static_cast<double>(agree) / static_cast<double>(target.size());
}

std::vector<Action> oracle_shortest_path(const GridMap& map) {
  // Distances to the destination let a greedy walk pick the first action, in
  // enum order, that stays on some shortest path.
  const auto to_goal = bfs_distances(map, map.destination);
  auto dist = [&](Cell c) {
    return to_goal[static_cast<std::size_t>(c.first * map.size + c.second)];
  };
  if (!map.on_board(map.start) || map.is_hole(map.start) || dist(map.start) < 0) {
    throw Error(ErrorCode::kNoPath, "destination unreachable from start");
  }
  std::vector<Action> path;
  Cell pos = map.start;
  while (pos != map.destination) {
    for (Action a : kActions) {
      const Cell n = step(pos, a);
      if (map.on_board(n) && !map.is_hole(n) && dist(n) == dist(pos) - 1) {
        path.push_back(a);
        pos = n;
        break;
      }
    }
  }
  return path;
}

TaskInstance make_navigation_instance(std::string id, const GridMap& map) {
  TaskInstance inst;
  inst.id = std::move(id);
  inst.family = TaskFamily::kNavigation;
  inst.map = map;
  inst.size = map.size;
  inst.difficulty = map.level;
  inst.prompt_tokens = cell_tokens(map_cells(map, map.start));
  inst.gold_actions = oracle_shortest_path(map);
  if (judge_navigation(map, inst.gold_actions) != 1.0) {
    throw Error(ErrorCode::kInternal, "oracle path failed its own judge");
  }
  return inst;
}

TaskInstance make_drafting_instance(std::string id, int size, std::vector<CellType> cells,
                                    const StateEncoder& encoder) {
  if (size < 1 || cells.size() != static_cast<std::size_t>(size * size)) {
    throw Error(ErrorCode::kInvalidInput, "drafting cells do not match size");
  }
  TaskInstance inst;
  inst.id = std::move(id);
  inst.family = TaskFamily::kDrafting;
  inst.size = size;
  inst.difficulty = static_cast<int>(
      std::count_if(cells.begin(), cells.end(), [](CellType c) { return c != CellType::kEmpty; }));
  inst.prompt_tokens = cell_tokens(cells);
  const auto n = static_cast<std::size_t>(size);
  inst.target_grid = encoder.encode(cells, n, n);
  inst.target_cells = std::move(cells);
  return inst;
}

TaskInstance generate_drafting(std::uint64_t seed, int size, int filled, std::string id,
                               const StateEncoder& encoder) {
  if (size < 1 || filled < 0 || filled > size * size) {
    throw Error(ErrorCode::kInvalidInput, "bad drafting parameters");
  }
  auto rng = make_rng(seed, "draft", {static_cast<std::uint64_t>(size),
                                      static_cast<std::uint64_t>(filled)});
  std::vector<std::size_t> order(static_cast<std::size_t>(size * size));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::uniform_int_distribution<int> kind(1, kNumCellTypes - 1);
  std::vector<CellType> cells(order.size(), CellType::kEmpty);
  for (int i = 0; i < filled; ++i) cells[order[static_cast<std::size_t>(i)]] = static_cast<CellType>(kind(rng));
  return make_drafting_instance(std::move(id), size, std::move(cells), encoder);
}

std::vector<TaskInstance> generate_dataset(const DatasetSpec& spec, const StateEncoder& encoder) {
  if (spec.count < 0 || spec.levels.empty()) {
    throw Error(ErrorCode::kInvalidInput, "dataset needs a count and at least one level");
  }
  std::vector<TaskInstance> out;
  out.reserve(static_cast<std::size_t>(spec.count));
  for (int i = 0; i < spec.count; ++i) {
    const int level = spec.levels[static_cast<std::size_t>(i) % spec.levels.size()];
    const std::uint64_t seed = derive_seed(spec.seed, "data", {static_cast<std::uint64_t>(i)});
    std::ostringstream id;
    id << to_string(spec.family) << '-';
    id.width(5);
    id.fill('0');
    id << i;
    if (spec.family == TaskFamily::kNavigation) {
      out.push_back(make_navigation_instance(id.str(), generate_map(seed, spec.size, level)));
    } else {
      out.push_back(generate_drafting(seed, spec.size, level, id.str(), encoder));
    }
  }
  return out;
}

std::string format_instance(const TaskInstance& inst) {
  std::ostringstream out;
  out << "id=" << inst.id << " family=" << to_string(inst.family) << " size=" << inst.size
      << " level=" << inst.difficulty;
  if (inst.family == TaskFamily::kNavigation) {
    out << " start=" << cell_string(inst.map.start)
        << " dest=" << cell_string(inst.map.destination) << " holes=";
    bool first = true;
    for (const Cell& h : inst.map.holes) {
      out << (first ? "" : ";") << cell_string(h);
      first = false;
    }
    if (inst.map.holes.empty()) out << '-';
    out << " gold=";
    for (Action a : inst.gold_actions) out << action_char(a);
  } else {
    out << " cells=";
    for (CellType c : inst.target_cells) out << static_cast<int>(c);
  }
  return out.str();
}

TaskInstance parse_instance(const std::string& line, const StateEncoder& encoder) {
  std::map<std::string, std::string> kv;
  std::istringstream in(line);
  std::string word;
  while (in >> word) {
    const auto eq = word.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::kParse, "field without '=': " + word);
    kv[word.substr(0, eq)] = word.substr(eq + 1);
  }
  auto field = [&](const std::string& key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) throw Error(ErrorCode::kParse, "missing field '" + key + "'");
    return it->second;
  };
  const int size = parse_int(field("size"));
  const int level = parse_int(field("level"));
  if (field("family") == "nav") {
    GridMap map;
    map.size = size;
    map.level = level;
    map.start = parse_cell(field("start"));
    map.destination = parse_cell(field("dest"));
    const std::string& holes = field("holes");
    if (holes != "-") {
      std::istringstream hs(holes);
      std::string cell;
      while (std::getline(hs, cell, ';')) map.holes.insert(parse_cell(cell));
    }
    TaskInstance inst = make_navigation_instance(field("id"), map);
    std::string gold;
    for (Action a : inst.gold_actions) gold += action_char(a);
    if (gold != field("gold")) {
      throw Error(ErrorCode::kParse, "gold path of " + inst.id + " disagrees with the oracle");
    }
    return inst;
  }
  if (field("family") == "draft") {
    std::vector<CellType> cells;
    for (char c : field("cells")) {
      if (c < '0' || c >= '0' + kNumCellTypes) throw Error(ErrorCode::kParse, "bad cell class");
      cells.push_back(static_cast<CellType>(c - '0'));
    }
    TaskInstance inst = make_drafting_instance(field("id"), size, std::move(cells), encoder);
    inst.difficulty = level;
    return inst;
  }
  throw Error(ErrorCode::kParse, "unknown family '" + field("family") + "'");
}

void save_dataset(const std::string& dir, const std::vector<TaskInstance>& data) {
  std::filesystem::create_directories(dir);
  const std::string path = dir + "/instances.txt";
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  for (const TaskInstance& inst : data) out << format_instance(inst) << '\n';
}

std::vector<TaskInstance> load_dataset(const std::string& dir, const StateEncoder& encoder) {
  const std::string path = dir + "/instances.txt";
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  std::vector<TaskInstance> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(parse_instance(line, encoder));
    } catch (const Error& e) {
      throw Error(e.code(), path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace adloop
