#include "topicrag/topic_graph.hpp"

#include <algorithm>
#include <deque>
#include <set>

#include "topicrag/error.hpp"

namespace topicrag {

TopicGraph::TopicGraph(std::vector<TopicNode> nodes, std::vector<std::string> labels)
    : nodes_(std::move(nodes)) {
  if (nodes_.empty()) throw ValidationError("taxonomy has no nodes");
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& id = nodes_[i].id;
    if (id.empty()) throw ValidationError("taxonomy node #" + std::to_string(i) + " has an empty id");
    if (!index_.emplace(id, i).second) throw ValidationError("duplicate topic id '" + id + "'");
  }

  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  parent_.assign(nodes_.size(), kNone);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    for (const auto& child : nodes_[i].children) {
      auto it = index_.find(child);
      if (it == index_.end()) {
        throw ValidationError("topic '" + nodes_[i].id + "' lists unknown child '" + child + "'");
      }
      const std::size_t c = it->second;
      if (c == i) throw ValidationError("topic '" + child + "' is its own child (cycle)");
      if (parent_[c] != kNone) {
        throw ValidationError("topic '" + child + "' has more than one parent ('" + nodes_[parent_[c]].id +
                              "' and '" + nodes_[i].id + "')");
      }
      parent_[c] = i;
    }
  }

  std::vector<std::size_t> roots;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (parent_[i] == kNone) roots.push_back(i);
  }
  if (roots.empty()) {
    throw ValidationError("taxonomy has no root; topic '" + nodes_[0].id + "' lies on a cycle");
  }
  if (roots.size() > 1) {
    throw ValidationError("topic '" + nodes_[roots[1]].id + "' is disconnected from root '" +
                          nodes_[roots[0]].id + "'");
  }
  root_ = roots[0];
  parent_[root_] = root_;

  // BFS from the root assigns depths; anything left unvisited sits on a cycle
  // detached from the root.
  depth_.assign(nodes_.size(), kNone);
  depth_[root_] = 0;
  std::deque<std::size_t> queue{root_};
  while (!queue.empty()) {
    const std::size_t u = queue.front();
    queue.pop_front();
    for (const auto& child : nodes_[u].children) {
      const std::size_t c = index_.at(child);
      depth_[c] = depth_[u] + 1;
      queue.push_back(c);
    }
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (depth_[i] == kNone) {
      throw ValidationError("topic '" + nodes_[i].id + "' lies on a cycle unreachable from the root");
    }
  }

  if (labels.empty()) {
    const auto& top = nodes_[root_].children;
    labels = top.empty() ? std::vector<std::string>{nodes_[root_].id} : top;
  }
  std::set<std::string> seen;
  for (const auto& l : labels) {
    if (!contains(l)) throw ValidationError("label '" + l + "' is not a taxonomy node");
    if (!seen.insert(l).second) throw ValidationError("label '" + l + "' listed twice");
  }
  labels_ = std::move(labels);
}

TopicGraph TopicGraph::from_json(const Json& doc) {
  if (!doc.is_object() || !doc.contains("nodes") || !doc["nodes"].is_array()) {
    throw ValidationError("taxonomy document needs a \"nodes\" array");
  }
  std::vector<TopicNode> nodes;
  for (const auto& n : doc["nodes"]) {
    if (!n.is_object() || !n.contains("id") || !n["id"].is_string()) {
      throw ValidationError("taxonomy node without a string \"id\": " + n.dump());
    }
    TopicNode node;
    node.id = n["id"].get<std::string>();
    node.name = n.value("name", node.id);
    if (n.contains("children")) {
      for (const auto& c : n["children"]) {
        if (!c.is_string()) throw ValidationError("topic '" + node.id + "' has a non-string child entry");
        node.children.push_back(c.get<std::string>());
      }
    }
    nodes.push_back(std::move(node));
  }
  std::vector<std::string> labels;
  if (doc.contains("labels")) labels = doc["labels"].get<std::vector<std::string>>();
  return TopicGraph(std::move(nodes), std::move(labels));
}

TopicGraph TopicGraph::load(const std::filesystem::path& path) {
  Json doc;
  try {
    doc = Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    throw ValidationError("taxonomy " + path.string() + ": " + e.what());
  }
  return from_json(doc);
}

Json TopicGraph::to_json() const {
  Json nodes = Json::array();
  for (const auto& n : nodes_) nodes.push_back({{"id", n.id}, {"name", n.name}, {"children", n.children}});
  return {{"nodes", nodes}, {"labels", labels_}};
}

std::size_t TopicGraph::require(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw ValidationError("unknown topic '" + id + "'");
  return it->second;
}

const TopicNode& TopicGraph::node(const std::string& id) const { return nodes_[require(id)]; }

std::size_t TopicGraph::label_index(const std::string& id) const {
  auto it = std::find(labels_.begin(), labels_.end(), id);
  if (it == labels_.end()) throw ValidationError("topic '" + id + "' is not in the label set");
  return static_cast<std::size_t>(it - labels_.begin());
}

std::size_t TopicGraph::depth(const std::string& id) const { return depth_[require(id)]; }

std::size_t TopicGraph::distance(const std::string& a, const std::string& b) const {
  std::size_t u = require(a), v = require(b);
  std::size_t d = 0;
  while (depth_[u] > depth_[v]) u = parent_[u], ++d;
  while (depth_[v] > depth_[u]) v = parent_[v], ++d;
  while (u != v) u = parent_[u], v = parent_[v], d += 2;
  return d;
}

std::vector<std::string> TopicGraph::within(const std::string& id, std::size_t radius) const {
  const std::size_t start = require(id);
  std::vector<std::size_t> dist(nodes_.size(), static_cast<std::size_t>(-1));
  dist[start] = 0;
  std::deque<std::size_t> queue{start};
  std::vector<std::string> out;
  while (!queue.empty()) {
    const std::size_t u = queue.front();
    queue.pop_front();
    out.push_back(nodes_[u].id);
    if (dist[u] == radius) continue;
    auto visit = [&](std::size_t w) {
      if (dist[w] == static_cast<std::size_t>(-1)) {
        dist[w] = dist[u] + 1;
        queue.push_back(w);
      }
    };
    if (u != root_) visit(parent_[u]);
    for (const auto& c : nodes_[u].children) visit(index_.at(c));
  }
  std::sort(out.begin(), out.end());
  return out;
}

TopicGraph default_taxonomy(bool include_dietary_advice) {
  std::vector<TopicNode> nodes = {
      {"food", "Food", {"dietary_science", "food_flavor", "food_safety", "food_recipes", "healthy_eating"}},
      {"dietary_science", "Dietary Science", {"nutrients", "metabolism", "food_composition"}},
      {"food_flavor", "Food Flavor Profiles", {"taste", "aroma", "texture"}},
      {"food_safety", "Food Safety Measures", {"contamination", "storage", "additives"}},
      {"food_recipes", "Food Recipes", {"cuisines", "cooking_techniques", "ingredients"}},
      {"healthy_eating", "Healthy Eating Principles",
       {"chronic_disease_diet", "weight_management", "special_populations"}},
      {"nutrients", "Nutrients", {}},
      {"metabolism", "Metabolism", {}},
      {"food_composition", "Food Composition", {}},
      {"taste", "Taste", {}},
      {"aroma", "Aroma", {}},
      {"texture", "Texture", {}},
      {"contamination", "Contamination", {}},
      {"storage", "Storage", {}},
      {"additives", "Additives", {}},
      {"cuisines", "Cuisines", {}},
      {"cooking_techniques", "Cooking Techniques", {}},
      {"ingredients", "Ingredients", {}},
      {"chronic_disease_diet", "Chronic Disease Diet", {}},
      {"weight_management", "Weight Management", {}},
      {"special_populations", "Special Populations", {}},
  };
  if (include_dietary_advice) {
    nodes[0].children.push_back("dietary_advice");
    nodes.push_back({"dietary_advice", "Dietary Advice", {"meal_planning", "supplements"}});
    nodes.push_back({"meal_planning", "Meal Planning", {}});
    nodes.push_back({"supplements", "Supplements", {}});
  }
  return TopicGraph(std::move(nodes));
}

}  // namespace topicrag
