#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "skillnet/allocation.hpp"
#include "skillnet/errors.hpp"

namespace skillnet {

// Tasks sharing one skill subset. key[j] == '1' iff skill j is active.
struct TaskGroup {
    std::string key;
    std::vector<std::size_t> skills;
    std::vector<std::string> tasks;
};

inline std::string subset_key(const std::vector<std::uint8_t>& row) {
    std::string key(row.size(), '0');
    for (std::size_t j = 0; j < row.size(); ++j) {
        if (row[j]) key[j] = '1';
    }
    return key;
}

// Groups ordered by their sorted skill-index lists, tasks by name.
inline std::vector<TaskGroup> group_tasks(const BinaryMatrix& z, const std::vector<std::string>& names) {
    if (names.size() != z.rows()) throw ShapeError("export_hierarchy: one name per row required");
    std::map<std::vector<std::size_t>, TaskGroup> by_subset;
    for (std::size_t i = 0; i < z.rows(); ++i) {
        const auto row = z.row(i);
        std::vector<std::size_t> skills;
        for (std::size_t j = 0; j < row.size(); ++j) {
            if (row[j]) skills.push_back(j);
        }
        TaskGroup& g = by_subset[skills];
        g.key = subset_key(row);
        g.skills = skills;
        g.tasks.push_back(names[i]);
    }
    std::vector<TaskGroup> groups;
    for (auto& [_, g] : by_subset) {
        std::sort(g.tasks.begin(), g.tasks.end());
        groups.push_back(std::move(g));
    }
    return groups;
}

inline nlohmann::ordered_json hierarchy_json(const std::vector<TaskGroup>& groups) {
    nlohmann::ordered_json doc = nlohmann::ordered_json::object();
    for (const auto& g : groups) doc[g.key] = g.tasks;
    return doc;
}

inline bool strict_superset(const TaskGroup& a, const TaskGroup& b) {
    return a.skills.size() > b.skills.size() &&
           std::includes(a.skills.begin(), a.skills.end(), b.skills.begin(), b.skills.end());
}

// Containment order as an indented cover list: each group is followed by the
// groups it immediately contains. Largest subsets first.
inline std::string render_hierarchy(const std::vector<TaskGroup>& groups) {
    std::vector<std::size_t> order(groups.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return groups[a].skills.size() > groups[b].skills.size(); });
    auto label = [](const TaskGroup& g) {
        std::string s = g.key + " {";
        for (std::size_t k = 0; k < g.skills.size(); ++k) s += (k ? "," : "") + std::to_string(g.skills[k]);
        return s + "}";
    };
    std::string out;
    for (std::size_t i : order) {
        const TaskGroup& g = groups[i];
        out += label(g) + ":";
        for (const auto& t : g.tasks) out += " " + t;
        out += "\n";
        for (std::size_t j : order) {
            if (!strict_superset(g, groups[j])) continue;
            bool covered = true;
            for (std::size_t k : order) {
                if (k != j && strict_superset(g, groups[k]) && strict_superset(groups[k], groups[j])) covered = false;
            }
            if (covered) out += "  > " + label(groups[j]) + "\n";
        }
    }
    return out;
}

}  // namespace skillnet
