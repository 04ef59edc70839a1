#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "topicrag/io.hpp"

namespace topicrag {

struct TopicNode {
  std::string id;
  std::string name;
  std::vector<std::string> children;
};

// Food-topic taxonomy. Always a single rooted tree; immutable after
// construction and safe to share between threads.
//
// File schema (JSON):
//   {
//     "nodes":  [ {"id": "...", "name": "...", "children": ["child-id", ...]}, ... ],
//     "labels": ["id", ...]          // optional classifier label set
//   }
// When "labels" is absent the label set is the root's children in file order,
// or the root itself for a single-node taxonomy.
class TopicGraph {
 public:
  // Validates and builds. Throws ValidationError naming the offending node on
  // duplicate ids, unknown child references, a node with two parents, cycles,
  // or nodes unreachable from the root.
  TopicGraph(std::vector<TopicNode> nodes, std::vector<std::string> labels = {});

  static TopicGraph from_json(const Json& doc);
  static TopicGraph load(const std::filesystem::path& path);
  Json to_json() const;

  std::size_t size() const noexcept { return nodes_.size(); }
  bool contains(const std::string& id) const { return index_.count(id) != 0; }
  const TopicNode& node(const std::string& id) const;
  const std::vector<TopicNode>& nodes() const noexcept { return nodes_; }
  const std::string& root() const { return nodes_[root_].id; }

  const std::vector<std::string>& labels() const noexcept { return labels_; }
  std::size_t label_count() const noexcept { return labels_.size(); }
  // Position of a topic in the label set; throws ValidationError otherwise.
  std::size_t label_index(const std::string& id) const;

  std::size_t depth(const std::string& id) const;
  // Shortest path length in edges. Throws ValidationError for unknown ids.
  std::size_t distance(const std::string& a, const std::string& b) const;
  // Every node within `radius` edges of `id`, sorted by id.
  std::vector<std::string> within(const std::string& id, std::size_t radius) const;

 private:
  std::size_t require(const std::string& id) const;

  std::vector<TopicNode> nodes_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::size_t> parent_;  // root's parent is itself
  std::vector<std::size_t> depth_;
  std::size_t root_ = 0;
  std::vector<std::string> labels_;
};

// Built-in taxonomy: a "food" root with five evaluation categories and a few
// subtopics each. With `include_dietary_advice` a sixth category is added and
// joins the label set.
TopicGraph default_taxonomy(bool include_dietary_advice = false);

}  // namespace topicrag
