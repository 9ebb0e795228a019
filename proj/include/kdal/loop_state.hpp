#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "kdal/error.hpp"

namespace kdal {

enum class Strategy { random, topn, cluster };

// Where the current iteration stands; lets a restored snapshot resume
// mid-iteration instead of redoing completed work.
enum class Phase { idle, selected, distilled, verifying, verified };

namespace detail {

template <typename E, std::size_t N>
std::string_view enum_name(E value, const std::array<std::string_view, N>& names) {
    return names.at(static_cast<std::size_t>(value));
}

template <typename E, std::size_t N>
E enum_parse(std::string_view text, const std::array<std::string_view, N>& names, std::string_view what) {
    for (std::size_t i = 0; i < N; ++i) {
        if (names[i] == text) return static_cast<E>(i);
    }
    throw InvalidInput("unknown " + std::string(what) + " '" + std::string(text) + "'");
}

inline constexpr std::array<std::string_view, 3> strategy_names{"random", "topn", "cluster"};
inline constexpr std::array<std::string_view, 5> phase_names{"idle", "selected", "distilled", "verifying",
                                                             "verified"};

}  // namespace detail

inline std::string_view to_string(Strategy s) { return detail::enum_name(s, detail::strategy_names); }
inline std::string_view to_string(Phase p) { return detail::enum_name(p, detail::phase_names); }

inline Strategy parse_strategy(std::string_view s) {
    return detail::enum_parse<Strategy>(s, detail::strategy_names, "strategy");
}
inline Phase parse_phase(std::string_view s) { return detail::enum_parse<Phase>(s, detail::phase_names, "phase"); }

// Control state of the acquisition loop. budget_remaining drops by exactly
// batch_size per completed iteration.
struct LoopState {
    std::int64_t budget_initial = 0;
    std::int64_t budget_remaining = 0;
    std::int64_t batch_size = 20;
    std::int64_t clusters = 10;
    std::int64_t iteration = 0;
    Strategy strategy = Strategy::cluster;
    std::string learner_revision = "base";
    std::uint64_t rng_seed = 0;

    bool bootstrapped = false;
    std::int64_t bootstrap_n = 0;
    std::vector<std::string> bootstrap_ids;
    Phase phase = Phase::idle;
    std::vector<std::string> current_selection;
    // Informativeness of the current selection, shown to verifiers.
    std::map<std::string, double> selection_scores;
    std::int64_t rejected_total = 0;

    bool operator==(const LoopState&) const = default;
};

inline void to_json(nlohmann::json& j, const LoopState& s) {
    j = nlohmann::json{{"budget_initial", s.budget_initial},
                       {"budget_remaining", s.budget_remaining},
                       {"batch_size", s.batch_size},
                       {"clusters", s.clusters},
                       {"iteration", s.iteration},
                       {"strategy", to_string(s.strategy)},
                       {"learner_revision", s.learner_revision},
                       {"rng_seed", s.rng_seed},
                       {"bootstrapped", s.bootstrapped},
                       {"bootstrap_n", s.bootstrap_n},
                       {"bootstrap_ids", s.bootstrap_ids},
                       {"phase", to_string(s.phase)},
                       {"current_selection", s.current_selection},
                       {"selection_scores", s.selection_scores},
                       {"rejected_total", s.rejected_total}};
}

inline void from_json(const nlohmann::json& j, LoopState& s) {
    j.at("budget_initial").get_to(s.budget_initial);
    j.at("budget_remaining").get_to(s.budget_remaining);
    j.at("batch_size").get_to(s.batch_size);
    j.at("clusters").get_to(s.clusters);
    j.at("iteration").get_to(s.iteration);
    s.strategy = parse_strategy(j.at("strategy").get<std::string>());
    j.at("learner_revision").get_to(s.learner_revision);
    j.at("rng_seed").get_to(s.rng_seed);
    j.at("bootstrapped").get_to(s.bootstrapped);
    j.at("bootstrap_n").get_to(s.bootstrap_n);
    j.at("bootstrap_ids").get_to(s.bootstrap_ids);
    s.phase = parse_phase(j.at("phase").get<std::string>());
    j.at("current_selection").get_to(s.current_selection);
    s.selection_scores = j.value("selection_scores", std::map<std::string, double>{});
    j.at("rejected_total").get_to(s.rejected_total);
}

}  // namespace kdal
