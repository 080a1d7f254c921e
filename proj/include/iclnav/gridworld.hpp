#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "iclnav/errors.hpp"
#include "iclnav/instruction.hpp"
#include "iclnav/rng.hpp"

namespace iclnav {

enum class Terrain : uint8_t { Floor, Wall, Furniture };
enum class ReceptacleKind : uint8_t { Fridge, Sink, Table, Countertop, Shelf, CoffeeMachine };
enum class Heading : uint8_t { North, East, South, West };
enum class Action : uint8_t { MoveAhead, RotateLeft, RotateRight, Pickup, Place };

constexpr int kActionCount = 5;
constexpr int kTerrainKinds = 3;
constexpr int kReceptacleKinds = 6;

inline const char* action_name(Action a) {
    switch (a) {
        case Action::MoveAhead: return "MoveAhead";
        case Action::RotateLeft: return "RotateLeft";
        case Action::RotateRight: return "RotateRight";
        case Action::Pickup: return "Pickup";
        case Action::Place: return "Place";
    }
    return "?";
}

inline const char* receptacle_kind_name(ReceptacleKind k) {
    switch (k) {
        case ReceptacleKind::Fridge: return "Fridge";
        case ReceptacleKind::Sink: return "Sink";
        case ReceptacleKind::Table: return "Table";
        case ReceptacleKind::Countertop: return "Countertop";
        case ReceptacleKind::Shelf: return "Shelf";
        case ReceptacleKind::CoffeeMachine: return "CoffeeMachine";
    }
    return "?";
}

inline std::optional<ReceptacleKind> parse_receptacle_kind(const std::string& s) {
    std::string low = detail::lower(s);
    for (int i = 0; i < kReceptacleKinds; ++i) {
        auto k = static_cast<ReceptacleKind>(i);
        if (low == detail::lower(receptacle_kind_name(k))) return k;
    }
    return std::nullopt;
}

/// Objects can be taken out of open-surface receptacles; closed ones are
/// terminal storage for an episode.
inline bool open_surface(ReceptacleKind k) {
    return k == ReceptacleKind::Table || k == ReceptacleKind::Countertop ||
           k == ReceptacleKind::Shelf;
}

struct Cell {
    int x = 0;
    int y = 0;
    bool operator==(const Cell&) const = default;
};

struct Receptacle {
    ReceptacleKind kind;
    Cell cell;
    std::string name;
};

struct SpawnGroup {
    std::string kind;            // lowercase object kind
    std::vector<Cell> cells;     // allowed spawn cells, file order
};

struct GridMap {
    int width = 0;
    int height = 0;
    std::vector<Terrain> cells;  // row-major, y * width + x
    std::vector<Receptacle> receptacles;
    std::vector<SpawnGroup> object_spawns;

    bool inside(Cell c) const { return c.x >= 0 && c.x < width && c.y >= 0 && c.y < height; }

    /// Out-of-grid reads as Wall so the window encoding needs no special case.
    Terrain at(Cell c) const {
        return inside(c) ? cells[static_cast<size_t>(c.y) * width + c.x] : Terrain::Wall;
    }

    const Receptacle* receptacle_at(Cell c) const {
        for (const auto& r : receptacles)
            if (r.cell == c) return &r;
        return nullptr;
    }

    const SpawnGroup* spawn_group(const std::string& kind) const {
        for (const auto& g : object_spawns)
            if (g.kind == kind) return &g;
        return nullptr;
    }

    bool has_receptacle_kind(ReceptacleKind k) const {
        for (const auto& r : receptacles)
            if (r.kind == k) return true;
        return false;
    }

    /// Sorted so the observation schema does not depend on file line order.
    std::vector<std::string> sorted_object_kinds() const {
        std::vector<std::string> kinds;
        for (const auto& g : object_spawns) kinds.push_back(g.kind);
        std::sort(kinds.begin(), kinds.end());
        return kinds;
    }
};

struct AgentPose {
    Cell cell;
    Heading heading = Heading::North;
};

struct ObjectLocation {
    enum class Type : uint8_t { Cell, Held, InsideReceptacle };
    Type type = Type::Cell;
    Cell cell;               // when type == Cell
    std::string receptacle;  // when type == InsideReceptacle
};

struct WorldObject {
    std::string kind;
    ObjectLocation loc;
};

struct WorldState {
    const GridMap* map = nullptr;
    AgentPose agent;
    std::vector<WorldObject> objects;
    std::optional<std::string> held;
    int steps_taken = 0;
    Rng rng{0};
    uint32_t subgoals_emitted = 0;  // bit k-1 set once SubGoalReached(k) fired
    bool done = false;
};

struct Event {
    enum class Kind : uint8_t { SubGoalReached, Collision, InvalidInteraction };
    Kind kind;
    int stage = 0;  // SubGoalReached only
    bool operator==(const Event&) const = default;
};

struct Observation {
    std::vector<uint8_t> bits;
};

struct StepOutcome {
    Observation observation;
    double reward = 0.0;
    bool terminal = false;
    bool success = false;
    std::vector<Event> events;
};

inline Cell heading_forward(Heading h) {
    switch (h) {
        case Heading::North: return {0, -1};
        case Heading::East: return {1, 0};
        case Heading::South: return {0, 1};
        case Heading::West: return {-1, 0};
    }
    return {0, 0};
}

// The cell one step to the agent's right; spans the lateral window axis.
inline Cell heading_right(Heading h) {
    switch (h) {
        case Heading::North: return {1, 0};
        case Heading::East: return {0, 1};
        case Heading::South: return {-1, 0};
        case Heading::West: return {0, -1};
    }
    return {0, 0};
}

inline Heading rotate_left(Heading h) { return static_cast<Heading>((static_cast<int>(h) + 3) % 4); }
inline Heading rotate_right(Heading h) { return static_cast<Heading>((static_cast<int>(h) + 1) % 4); }

inline Cell faced_cell(const AgentPose& p) {
    Cell f = heading_forward(p.heading);
    return {p.cell.x + f.x, p.cell.y + f.y};
}

/// Map file: `grid W H` header, H rows of terrain glyphs (. # F), then
/// `recept <kind> <name> <x> <y>` and `spawn <objectkind> <x> <y>` lines.
/// Coordinates are 0-based, x rightward, y downward. Lines starting with //
/// and blank lines outside the row block are skipped.
inline GridMap load_map(const std::string& text) {
    GridMap map;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    auto fail = [&](const std::string& msg) {
        return ParseError("map line " + std::to_string(lineno) + ": " + msg);
    };
    auto next_meaningful = [&](std::string& out) {
        while (std::getline(in, line)) {
            ++lineno;
            std::string t = detail::trim(line);
            if (t.empty() || t.rfind("//", 0) == 0) continue;
            out = t;
            return true;
        }
        return false;
    };

    std::string header;
    if (!next_meaningful(header)) throw ParseError("map is empty");
    {
        std::istringstream hs(header);
        std::string word;
        hs >> word;
        if (word != "grid") throw fail("expected 'grid W H', got '" + header + "'");
        if (!(hs >> map.width >> map.height) || map.width < 1 || map.height < 1)
            throw fail("bad grid dimensions");
    }

    map.cells.reserve(static_cast<size_t>(map.width) * map.height);
    for (int y = 0; y < map.height; ++y) {
        if (!std::getline(in, line)) throw ParseError("map row " + std::to_string(y) + " missing");
        ++lineno;
        std::string row = detail::trim(line);
        if (static_cast<int>(row.size()) != map.width)
            throw fail("row has " + std::to_string(row.size()) + " glyphs, expected " +
                       std::to_string(map.width));
        for (char g : row) {
            switch (g) {
                case '.': map.cells.push_back(Terrain::Floor); break;
                case '#': map.cells.push_back(Terrain::Wall); break;
                case 'F': map.cells.push_back(Terrain::Furniture); break;
                default: throw fail(std::string("unknown glyph '") + g + "'");
            }
        }
    }

    std::string entry;
    while (next_meaningful(entry)) {
        std::istringstream es(entry);
        std::string word;
        es >> word;
        if (word == "recept") {
            std::string kind, name;
            Cell c;
            if (!(es >> kind >> name >> c.x >> c.y)) throw fail("recept needs: kind name x y");
            auto parsed = parse_receptacle_kind(kind);
            if (!parsed) throw fail("unknown receptacle kind '" + kind + "'");
            if (!map.inside(c))
                throw ValidationError("map line " + std::to_string(lineno) + ": receptacle '" + name +
                                      "' outside grid");
            if (map.at(c) == Terrain::Wall)
                throw ValidationError("map line " + std::to_string(lineno) + ": receptacle '" + name +
                                      "' on a Wall cell");
            for (const auto& r : map.receptacles)
                if (r.name == name)
                    throw ValidationError("map line " + std::to_string(lineno) +
                                          ": duplicate receptacle name '" + name + "'");
            map.receptacles.push_back({*parsed, c, name});
        } else if (word == "spawn") {
            std::string kind;
            Cell c;
            if (!(es >> kind >> c.x >> c.y)) throw fail("spawn needs: objectkind x y");
            if (!map.inside(c))
                throw ValidationError("map line " + std::to_string(lineno) + ": spawn '" + kind +
                                      "' outside grid");
            if (map.at(c) == Terrain::Wall)
                throw ValidationError("map line " + std::to_string(lineno) + ": spawn '" + kind +
                                      "' on a Wall cell");
            std::string low = detail::lower(kind);
            SpawnGroup* group = nullptr;
            for (auto& g : map.object_spawns)
                if (g.kind == low) group = &g;
            if (!group) {
                map.object_spawns.push_back({low, {}});
                group = &map.object_spawns.back();
            }
            group->cells.push_back(c);
        } else {
            throw fail("unknown directive '" + word + "'");
        }
    }

    bool any_floor = false;
    for (Terrain t : map.cells) any_floor |= (t == Terrain::Floor);
    if (!any_floor) throw ValidationError("map has no Floor cell for the agent");
    return map;
}

/// Fixed encoding schema for one (map, window) combination.
struct ObservationSpec {
    int depth = 3;
    int width = 3;
    std::vector<std::string> object_kinds;  // sorted

    static ObservationSpec for_map(const GridMap& map, int depth = 3, int width = 3) {
        if (depth < 1) throw ValidationError("observation window depth must be >= 1");
        if (width < 1 || width % 2 == 0)
            throw ValidationError("observation window width must be odd and >= 1");
        ObservationSpec spec;
        spec.depth = depth;
        spec.width = width;
        spec.object_kinds = map.sorted_object_kinds();
        return spec;
    }

    int kinds() const { return static_cast<int>(object_kinds.size()); }
    int per_cell() const { return kTerrainKinds + kinds() + kReceptacleKinds; }
    int dim() const { return depth * width * per_cell() + kinds(); }

    int kind_index(const std::string& kind) const {
        for (int i = 0; i < kinds(); ++i)
            if (object_kinds[i] == kind) return i;
        return -1;
    }
};

/// Egocentric window: depth rows d = 1..D (near to far), lateral offsets
/// l = -(W-1)/2 .. +(W-1)/2 (left to right) within each row. Each window cell
/// carries one-hot terrain, one-hot visible object kinds, one-hot receptacle
/// kind; a held-object one-hot follows the window. Out-of-grid cells encode
/// as Wall. Contents of open-surface receptacles are visible on their cell;
/// closed receptacles hide theirs.
inline Observation observe(const WorldState& state, const ObservationSpec& spec) {
    const GridMap& map = *state.map;
    Observation obs;
    obs.bits.assign(spec.dim(), 0);
    Cell fwd = heading_forward(state.agent.heading);
    Cell right = heading_right(state.agent.heading);
    int half = (spec.width - 1) / 2;
    int slot = 0;
    for (int d = 1; d <= spec.depth; ++d) {
        for (int l = -half; l <= half; ++l, ++slot) {
            Cell c{state.agent.cell.x + d * fwd.x + l * right.x,
                   state.agent.cell.y + d * fwd.y + l * right.y};
            int base = slot * spec.per_cell();
            obs.bits[base + static_cast<int>(map.at(c))] = 1;
            if (!map.inside(c)) continue;
            const Receptacle* recept = map.receptacle_at(c);
            for (const auto& obj : state.objects) {
                bool visible =
                    (obj.loc.type == ObjectLocation::Type::Cell && obj.loc.cell == c) ||
                    (obj.loc.type == ObjectLocation::Type::InsideReceptacle && recept &&
                     recept->name == obj.loc.receptacle && open_surface(recept->kind));
                if (!visible) continue;
                int k = spec.kind_index(obj.kind);
                if (k >= 0) obs.bits[base + kTerrainKinds + k] = 1;
            }
            if (recept)
                obs.bits[base + kTerrainKinds + spec.kinds() + static_cast<int>(recept->kind)] = 1;
        }
    }
    if (state.held) {
        int k = spec.kind_index(*state.held);
        if (k >= 0) obs.bits[spec.depth * spec.width * spec.per_cell() + k] = 1;
    }
    return obs;
}

/// Stage goal tests, cumulative task prefixes:
///   1 — facing the target object's cell
///   2 — holding the target object
///   3 — holding it while facing a receptacle of the target kind
///   4 — target object inside a receptacle of the target kind
inline bool success_predicate(const WorldState& state, int stage, const InstructionTask& task) {
    if (stage < 1 || stage > task.stage_count)
        throw IndexOutOfRange("success_predicate: stage " + std::to_string(stage) + " of " +
                              std::to_string(task.stage_count));
    const GridMap& map = *state.map;
    switch (stage) {
        case 1: {
            Cell f = faced_cell(state.agent);
            for (const auto& obj : state.objects)
                if (obj.kind == task.target_object && obj.loc.type == ObjectLocation::Type::Cell &&
                    obj.loc.cell == f)
                    return true;
            return false;
        }
        case 2:
            return state.held.has_value() && *state.held == task.target_object;
        case 3: {
            if (!state.held || *state.held != task.target_object) return false;
            if (!task.target_receptacle) return false;
            auto want = parse_receptacle_kind(*task.target_receptacle);
            if (!want) return false;
            const Receptacle* r = map.receptacle_at(faced_cell(state.agent));
            return r && r->kind == *want;
        }
        case 4: {
            if (!task.target_receptacle) return false;
            auto want = parse_receptacle_kind(*task.target_receptacle);
            if (!want) return false;
            for (const auto& obj : state.objects) {
                if (obj.kind != task.target_object ||
                    obj.loc.type != ObjectLocation::Type::InsideReceptacle)
                    continue;
                for (const auto& r : map.receptacles)
                    if (r.name == obj.loc.receptacle && r.kind == *want) return true;
            }
            return false;
        }
        default:
            return false;
    }
}

/// Reward assembly is injected so the environment stays independent of the
/// curriculum's stage arithmetic and shaping variants.
using RewardFn = std::function<double(const std::vector<Event>&, bool success)>;

struct EnvConfig {
    int maxtime = 100;
    int window_depth = 3;
    int window_width = 3;
    int goal_stage = 0;  // 0 means the task's full stage count
};

class Env {
public:
    Env(const GridMap& map, InstructionTask task, EnvConfig cfg, RewardFn reward)
        : map_(&map), task_(std::move(task)), cfg_(cfg), reward_(std::move(reward)) {
        spec_ = ObservationSpec::for_map(map, cfg.window_depth, cfg.window_width);
        if (cfg_.maxtime < 1) throw ValidationError("maxtime must be >= 1");
        if (cfg_.goal_stage == 0) cfg_.goal_stage = task_.stage_count;
        if (cfg_.goal_stage < 1 || cfg_.goal_stage > task_.stage_count)
            throw ValidationError("goal stage " + std::to_string(cfg_.goal_stage) +
                                  " outside task's " + std::to_string(task_.stage_count));
        if (!map.spawn_group(task_.target_object))
            throw TaskMapMismatch("object '" + task_.target_object + "' never spawns on this map");
        if (task_.target_receptacle) {
            auto kind = parse_receptacle_kind(*task_.target_receptacle);
            if (!kind || !map.has_receptacle_kind(*kind))
                throw TaskMapMismatch("receptacle '" + *task_.target_receptacle +
                                      "' absent from this map");
        } else if (cfg_.goal_stage >= 3) {
            throw TaskMapMismatch("stage " + std::to_string(cfg_.goal_stage) +
                                  " goal needs a target receptacle");
        }
        if (!reward_) reward_ = [](const std::vector<Event>&, bool) { return 0.0; };
    }

    /// Uniform agent pose over Floor cells x 4 headings, then one object per
    /// spawn group placed uniformly over its allowed cells, drawn in that
    /// pinned order from the seed.
    Observation reset(uint64_t seed) {
        state_ = WorldState{};
        state_.map = map_;
        state_.rng = Rng(seed);
        std::vector<Cell> floor;
        for (int y = 0; y < map_->height; ++y)
            for (int x = 0; x < map_->width; ++x)
                if (map_->at({x, y}) == Terrain::Floor) floor.push_back({x, y});
        state_.agent.cell = floor[state_.rng.uniform_below(static_cast<int>(floor.size()))];
        state_.agent.heading = static_cast<Heading>(state_.rng.uniform_below(4));
        for (const auto& group : map_->object_spawns) {
            Cell c = group.cells[state_.rng.uniform_below(static_cast<int>(group.cells.size()))];
            state_.objects.push_back({group.kind, {ObjectLocation::Type::Cell, c, {}}});
        }
        return observe(state_, spec_);
    }

    StepOutcome step(Action action) {
        if (state_.done) throw SteppedAfterTerminal("episode already ended");
        StepOutcome out;
        switch (action) {
            case Action::MoveAhead: {
                Cell target = faced_cell(state_.agent);
                if (map_->at(target) == Terrain::Floor)
                    state_.agent.cell = target;
                else
                    out.events.push_back({Event::Kind::Collision, 0});
                break;
            }
            case Action::RotateLeft:
                state_.agent.heading = rotate_left(state_.agent.heading);
                break;
            case Action::RotateRight:
                state_.agent.heading = rotate_right(state_.agent.heading);
                break;
            case Action::Pickup: {
                WorldObject* grab = nullptr;
                Cell f = faced_cell(state_.agent);
                if (!state_.held) {
                    for (auto& obj : state_.objects)
                        if (obj.loc.type == ObjectLocation::Type::Cell && obj.loc.cell == f) {
                            grab = &obj;
                            break;
                        }
                    if (!grab) {
                        const Receptacle* r = map_->receptacle_at(f);
                        if (r && open_surface(r->kind))
                            for (auto& obj : state_.objects)
                                if (obj.loc.type == ObjectLocation::Type::InsideReceptacle &&
                                    obj.loc.receptacle == r->name) {
                                    grab = &obj;
                                    break;
                                }
                    }
                }
                if (grab) {
                    grab->loc = {ObjectLocation::Type::Held, {}, {}};
                    state_.held = grab->kind;
                } else {
                    out.events.push_back({Event::Kind::InvalidInteraction, 0});
                }
                break;
            }
            case Action::Place: {
                const Receptacle* r = map_->receptacle_at(faced_cell(state_.agent));
                if (state_.held && r) {
                    for (auto& obj : state_.objects)
                        if (obj.loc.type == ObjectLocation::Type::Held) {
                            obj.loc = {ObjectLocation::Type::InsideReceptacle, {}, r->name};
                            break;
                        }
                    state_.held.reset();
                } else {
                    out.events.push_back({Event::Kind::InvalidInteraction, 0});
                }
                break;
            }
        }
        ++state_.steps_taken;
        for (int k = 1; k <= task_.stage_count; ++k) {
            uint32_t bit = 1u << (k - 1);
            if ((state_.subgoals_emitted & bit) == 0 && success_predicate(state_, k, task_)) {
                out.events.push_back({Event::Kind::SubGoalReached, k});
                state_.subgoals_emitted |= bit;
            }
        }
        out.success = success_predicate(state_, cfg_.goal_stage, task_);
        out.terminal = out.success || state_.steps_taken >= cfg_.maxtime;
        state_.done = out.terminal;
        out.reward = reward_(out.events, out.success);
        out.observation = observe(state_, spec_);
        return out;
    }

    const WorldState& state() const { return state_; }
    WorldState& mutable_state() { return state_; }
    const InstructionTask& task() const { return task_; }
    const ObservationSpec& observation_spec() const { return spec_; }
    const GridMap& map() const { return *map_; }
    int goal_stage() const { return cfg_.goal_stage; }
    int maxtime() const { return cfg_.maxtime; }

private:
    const GridMap* map_;
    InstructionTask task_;
    EnvConfig cfg_;
    RewardFn reward_;
    ObservationSpec spec_;
    WorldState state_;
};

}  // namespace iclnav
