#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "msgt/concept_pool.hpp"
#include "msgt/embedding.hpp"
#include "msgt/parameter.hpp"
#include "msgt/tape.hpp"

namespace msgt::graphs {

enum class NodeKind : std::uint8_t { Concept, AnswerWord, QuestionWord };
std::string to_string(NodeKind kind);

/// Scalar -> bucket index: clip to [0, d_max], then B uniform buckets.
struct BucketSpec {
  double d_max = 64.0;
  std::size_t buckets = 32;

  std::size_t bucket(double x) const;
};

/// A learned bucketed scalar map: B x H table, one value per bucket per head,
/// zero-initialized.
Parameter& make_psi(ParameterStore& store, const std::string& name, const BucketSpec& spec, std::size_t heads);

/// Value of a bucketed map at x for one head.
double psi_value(const Parameter& psi, const BucketSpec& spec, double x, std::size_t head);

/// l_v * ((xi - xj)^2 + (yi - yj)^2)
double spatial_edge(double xi, double yi, double xj, double yj, double l_v);
/// l_a * (i - j)^2 over 0-based token positions.
double order_edge(std::size_t i, std::size_t j, double l_a);

/// Intra-side distance between nodes i and j.
using EdgeRule = std::function<double(std::size_t, std::size_t)>;

EdgeRule spatial_rule(std::vector<std::array<double, 2>> centers, double l_v);
EdgeRule order_rule(double l_a);
/// Fallback when concepts have no coordinates: l_v * |f_i - f_j|^2.
EdgeRule embedding_rule(Tensor features, double l_v);

struct GraphSide {
  Tensor features;  // n x d
  NodeKind kind = NodeKind::Concept;
  EdgeRule rule;
  Parameter* psi = nullptr;
};

enum class EdgeTable : std::uint8_t { SideA = 0, SideB = 1, Cross = 2 };

/// Two-partition graph with a per-head structural prior matrix.
struct HeteroGraph {
  Tensor node_features;  // (n1 + n2) x d
  std::vector<NodeKind> node_kinds;
  std::size_t n1 = 0;
  std::size_t n2 = 0;
  Tensor distances;                 // raw D; cross entries are 1
  std::vector<std::size_t> buckets; // row-major n x n
  std::vector<EdgeTable> tables;    // row-major n x n
  std::vector<Tensor> structural;   // per head, n x n, Psi values at build time
  std::array<Parameter*, 3> psi{};
  BucketSpec spec;

  std::size_t size() const noexcept { return n1 + n2; }
  std::size_t heads() const noexcept { return structural.size(); }
  std::vector<std::size_t> rows_of(NodeKind kind) const;
};

/// Intra-side entries embed the side's edge rule through the side's Psi;
/// cross-side entries embed the constant 1 through psi_cross. psi_cross may
/// be null when side b is empty.
HeteroGraph build_graph(const GraphSide& a, const GraphSide& b, Parameter* psi_cross, const BucketSpec& spec);

/// Per-head structural prior recorded on the tape, differentiable in the
/// Psi tables.
std::vector<Var> embed_structure(Tape& tape, const HeteroGraph& graph);

/// Graph over answer words with features concat(T_a, ac-guided, aq-guided)
/// (columns [0,d), [d,2d), [2d,3d)); aq-guided is omitted when absent.
/// Structure is the word-order rule through psi.
HeteroGraph build_reasoning_graph(const Tensor& answer_text, const Tensor& ac_answer,
                                  const std::optional<Tensor>& aq_answer, Parameter& psi, double l_a,
                                  const BucketSpec& spec);

struct QAPair {
  std::vector<std::string> question_tokens;
  std::vector<std::string> answer_tokens;
  Tensor question_features;
  Tensor answer_features;
};

std::vector<std::string> tokenize(std::string_view text);

/// Fixed question template; the answer lists the selected concept names.
QAPair generate_qa(std::span<const std::string> concept_names, std::span<const std::size_t> selected,
                   const io::TextEncoder& encoder);
QAPair generate_qa(const pool::ConceptPool& pool, std::span<const std::size_t> selected,
                   const io::TextEncoder& encoder);

const std::vector<std::string>& question_template();

nlohmann::json graph_to_json(const HeteroGraph& graph);

}  // namespace msgt::graphs
