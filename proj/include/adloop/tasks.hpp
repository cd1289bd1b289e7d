#pragma once

// Synthetic task families: hole-avoiding grid navigation (rule-checked) and
// grid drafting (cell-class agreement), plus the breadth-first oracle.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "adloop/latent_thoughts.hpp"
#include "adloop/trace.hpp"

namespace adloop {

using Cell = std::pair<int, int>;  // (row, col)

enum class Action { kUp = 0, kDown = 1, kLeft = 2, kRight = 3 };
enum class CellType { kEmpty = 0, kHole = 1, kAgent = 2, kGoal = 3 };

inline constexpr int kNumActions = 4;
inline constexpr int kNumCellTypes = 4;

Cell step(Cell from, Action a);
char action_char(Action a);

// Text token ids of the synthetic vocabulary.
TokenId action_token(Action a);
TokenId cell_token(CellType c);
std::optional<Action> token_action(TokenId t);

struct GridMap {
  int size = 0;
  Cell start{0, 0};
  Cell destination{0, 0};
  std::set<Cell> holes;
  int level = 0;

  bool on_board(Cell c) const {
    return c.first >= 0 && c.second >= 0 && c.first < size && c.second < size;
  }
  bool is_hole(Cell c) const { return holes.count(c) != 0; }
  bool operator==(const GridMap&) const = default;
};

// Fixed stand-in for a frozen latent encoder: a cell-class embedding plus
// two components holding the scaled (row, col) position of the cell.
class StateEncoder {
 public:
  explicit StateEncoder(std::size_t dim = 8, double position_scale = 0.25);

  std::size_t dim() const { return dim_; }
  double position_scale() const { return position_scale_; }
  std::size_t type_dims() const { return dim_ - 2; }
  // Class embedding with zero position components.
  const Vec& embedding(CellType c) const { return table_[static_cast<int>(c)]; }
  // Cell type whose class components are nearest to `v` (ties to the lower type).
  CellType nearest(const Vec& v) const;

  TokenGrid encode(const std::vector<CellType>& cells, std::size_t height,
                   std::size_t width) const;

 private:
  std::size_t dim_;
  double position_scale_;
  std::vector<Vec> table_;
};

enum class TaskFamily { kNavigation, kDrafting };
std::string_view to_string(TaskFamily f);

struct TaskInstance {
  std::string id;
  TaskFamily family = TaskFamily::kNavigation;
  std::vector<TokenId> prompt_tokens;
  GridMap map;                        // navigation
  std::vector<CellType> target_cells;  // drafting, row-major
  int size = 0;
  std::vector<Action> gold_actions;   // navigation
  TokenGrid target_grid;              // drafting (also the gold answer)
  int difficulty = 0;
};

// Shortest hole-avoiding path has exactly `level` moves; deterministic per seed.
GridMap generate_map(std::uint64_t seed, int size, int level);

// Cell types of the map with the agent drawn at `agent`.
std::vector<CellType> map_cells(const GridMap& map, Cell agent);
TokenGrid encode_state(const GridMap& map, Cell agent, const StateEncoder& encoder);

// 1.0 iff the actions walk start -> destination staying on the board and out
// of holes, ending on the destination.
double judge_navigation(const GridMap& map, const std::vector<Action>& actions);
double judge_navigation_tokens(const GridMap& map, const std::vector<TokenId>& tokens);

// Fraction of cells whose nearest embedding class equals the target class.
double judge_drafting(const TokenGrid& produced, const TokenGrid& target,
                      const StateEncoder& encoder);

// Lexicographically smallest shortest path under up < down < left < right.
std::vector<Action> oracle_shortest_path(const GridMap& map);
// Breadth-first distance from start to destination, or nullopt.
std::optional<int> shortest_path_length(const GridMap& map);

TaskInstance make_navigation_instance(std::string id, const GridMap& map);
TaskInstance make_drafting_instance(std::string id, int size,
                                    std::vector<CellType> cells,
                                    const StateEncoder& encoder);
// Random class layout with `filled` non-empty cells.
TaskInstance generate_drafting(std::uint64_t seed, int size, int filled,
                               std::string id, const StateEncoder& encoder);

struct DatasetSpec {
  TaskFamily family = TaskFamily::kNavigation;
  int count = 0;
  int size = 5;
  std::vector<int> levels{3};
  std::uint64_t seed = 42;
};

std::vector<TaskInstance> generate_dataset(const DatasetSpec& spec,
                                           const StateEncoder& encoder);

// One instance per line of "key=value" fields.
std::string format_instance(const TaskInstance& inst);
TaskInstance parse_instance(const std::string& line, const StateEncoder& encoder);

void save_dataset(const std::string& dir, const std::vector<TaskInstance>& data);
std::vector<TaskInstance> load_dataset(const std::string& dir,
                                       const StateEncoder& encoder);

}  // namespace adloop
