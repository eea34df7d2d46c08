#include "msgt/graphs.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "msgt/ops.hpp"

namespace msgt::graphs {

std::string to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::Concept: return "concept";
    case NodeKind::AnswerWord: return "answer-word";
    case NodeKind::QuestionWord: return "question-word";
  }
  return "unknown";
}

std::size_t BucketSpec::bucket(double x) const {
  if (buckets == 0 || !(d_max > 0)) throw std::invalid_argument("bucket spec needs d_max > 0 and at least one bucket");
  if (std::isnan(x)) throw std::invalid_argument("bucket of NaN");
  const double clipped = std::clamp(x, 0.0, d_max);
  const auto b = static_cast<std::size_t>(std::floor(clipped / d_max * static_cast<double>(buckets)));
  return std::min(b, buckets - 1);
}

Parameter& make_psi(ParameterStore& store, const std::string& name, const BucketSpec& spec, std::size_t heads) {
  return store.add(name, Tensor::matrix(spec.buckets, heads));
}

double psi_value(const Parameter& psi, const BucketSpec& spec, double x, std::size_t head) {
  return psi.value(spec.bucket(x), head);
}

double spatial_edge(double xi, double yi, double xj, double yj, double l_v) {
  if (!(l_v > 0)) throw std::invalid_argument("spatial_edge: l_v must be positive");
  return l_v * ((xi - xj) * (xi - xj) + (yi - yj) * (yi - yj));
}

double order_edge(std::size_t i, std::size_t j, double l_a) {
  if (!(l_a > 0)) throw std::invalid_argument("order_edge: l_a must be positive");
  const double diff = static_cast<double>(i) - static_cast<double>(j);
  return l_a * diff * diff;
}

EdgeRule spatial_rule(std::vector<std::array<double, 2>> centers, double l_v) {
  return [centers = std::move(centers), l_v](std::size_t i, std::size_t j) {
    return spatial_edge(centers.at(i)[0], centers.at(i)[1], centers.at(j)[0], centers.at(j)[1], l_v);
  };
}

EdgeRule order_rule(double l_a) {
  return [l_a](std::size_t i, std::size_t j) { return order_edge(i, j, l_a); };
}

EdgeRule embedding_rule(Tensor features, double l_v) {
  if (!(l_v > 0)) throw std::invalid_argument("embedding_rule: l_v must be positive");
  return [f = std::move(features), l_v](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t c = 0; c < f.cols(); ++c) {
      const double d = f(i, c) - f(j, c);
      s += d * d;
    }
    return l_v * s;
  };
}

std::vector<std::size_t> HeteroGraph::rows_of(NodeKind kind) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < node_kinds.size(); ++i)
    if (node_kinds[i] == kind) out.push_back(i);
  return out;
}

HeteroGraph build_graph(const GraphSide& a, const GraphSide& b, Parameter* psi_cross, const BucketSpec& spec) {
  const std::size_t n1 = a.features.rank() == 2 ? a.features.rows() : 0;
  const std::size_t n2 = b.features.rank() == 2 ? b.features.rows() : 0;
  if (n1 > 0 && n2 > 0 && a.features.cols() != b.features.cols())
    throw std::invalid_argument("build_graph: feature dimension mismatch (" + std::to_string(a.features.cols()) +
                                " vs " + std::to_string(b.features.cols()) + ")");
  if (n1 + n2 == 0) throw std::invalid_argument("build_graph: empty graph");
  if ((n1 > 0 && (a.psi == nullptr || !a.rule)) || (n2 > 0 && (b.psi == nullptr || !b.rule)))
    throw std::invalid_argument("build_graph: a non-empty side needs an edge rule and a Psi table");
  if (n1 > 0 && n2 > 0 && psi_cross == nullptr) throw std::invalid_argument("build_graph: missing cross Psi table");

  const std::size_t heads = (n1 > 0 ? a.psi : b.psi)->value.cols();
  for (const Parameter* p : {a.psi, b.psi, psi_cross})
    if (p != nullptr && (p->value.cols() != heads || p->value.rows() != spec.buckets))
      throw std::invalid_argument("build_graph: Psi table shape does not match bucket spec / head count");

  HeteroGraph g;
  g.n1 = n1;
  g.n2 = n2;
  g.spec = spec;
  g.psi = {a.psi, b.psi, psi_cross};
  const std::size_t n = n1 + n2;
  const std::size_t d = n1 > 0 ? a.features.cols() : b.features.cols();
  g.node_features = Tensor::matrix(n, d);
  for (std::size_t i = 0; i < n1; ++i) std::copy_n(a.features.row_span(i).begin(), d, g.node_features.row_span(i).begin());
  for (std::size_t i = 0; i < n2; ++i)
    std::copy_n(b.features.row_span(i).begin(), d, g.node_features.row_span(n1 + i).begin());
  g.node_kinds.assign(n1, a.kind);
  g.node_kinds.insert(g.node_kinds.end(), n2, b.kind);

  g.distances = Tensor::matrix(n, n);
  g.buckets.assign(n * n, 0);
  g.tables.assign(n * n, EdgeTable::Cross);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const bool ia = i < n1, ja = j < n1;
      double dist = 1.0;
      EdgeTable table = EdgeTable::Cross;
      if (ia && ja) {
        dist = a.rule(i, j);
        table = EdgeTable::SideA;
      } else if (!ia && !ja) {
        dist = b.rule(i - n1, j - n1);
        table = EdgeTable::SideB;
      }
      if (!std::isfinite(dist)) throw std::invalid_argument("build_graph: non-finite edge distance");
      g.distances(i, j) = dist;
      g.buckets[i * n + j] = spec.bucket(dist);
      g.tables[i * n + j] = table;
    }

  g.structural.assign(heads, Tensor::matrix(n, n));
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t idx = 0; idx < n * n; ++idx)
      g.structural[h][idx] = g.psi[static_cast<std::size_t>(g.tables[idx])]->value(g.buckets[idx], h);
  return g;
}

std::vector<Var> embed_structure(Tape& tape, const HeteroGraph& graph) {
  // Stack the three tables so one gather per head covers every entry.
  std::vector<Var> tables;
  std::array<std::size_t, 3> offset{};
  std::size_t rows = 0;
  for (std::size_t t = 0; t < 3; ++t) {
    offset[t] = rows;
    if (graph.psi[t] == nullptr) continue;
    tables.push_back(tape.param(*graph.psi[t]));
    rows += graph.spec.buckets;
  }
  Var stacked = tables.size() == 1 ? tables.front() : concat_rows(tables);
  std::vector<std::size_t> index(graph.buckets.size());
  for (std::size_t i = 0; i < index.size(); ++i)
    index[i] = offset[static_cast<std::size_t>(graph.tables[i])] + graph.buckets[i];
  std::vector<Var> out;
  for (std::size_t h = 0; h < graph.heads(); ++h) out.push_back(bucket_gather(stacked, index, graph.size(), h));
  return out;
}

HeteroGraph build_reasoning_graph(const Tensor& answer_text, const Tensor& ac_answer,
                                  const std::optional<Tensor>& aq_answer, Parameter& psi, double l_a,
                                  const BucketSpec& spec) {
  const std::size_t n = answer_text.rows();
  if (ac_answer.rows() != n || (aq_answer && aq_answer->rows() != n))
    throw std::invalid_argument("build_reasoning_graph: answer row counts differ");
  std::vector<const Tensor*> blocks{&answer_text, &ac_answer};
  if (aq_answer) blocks.push_back(&*aq_answer);
  std::size_t width = 0;
  for (const auto* b : blocks) width += b->cols();
  Tensor features = Tensor::matrix(n, width);
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t off = 0;
    for (const auto* b : blocks) {
      std::copy_n(b->row_span(r).begin(), b->cols(), features.row_span(r).begin() + static_cast<std::ptrdiff_t>(off));
      off += b->cols();
    }
  }
  GraphSide words{std::move(features), NodeKind::AnswerWord, order_rule(l_a), &psi};
  return build_graph(words, GraphSide{}, nullptr, spec);
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

const std::vector<std::string>& question_template() {
  static const std::vector<std::string> q{"which", "findings", "are", "present"};
  return q;
}

QAPair generate_qa(std::span<const std::string> concept_names, std::span<const std::size_t> selected,
                   const io::TextEncoder& encoder) {
  if (selected.empty()) throw std::invalid_argument("generate_qa: no concepts selected");
  QAPair qa;
  qa.question_tokens = question_template();
  for (auto k : selected) {
    if (k >= concept_names.size()) throw std::out_of_range("generate_qa: concept index out of range");
    for (auto& tok : tokenize(concept_names[k])) qa.answer_tokens.push_back(std::move(tok));
  }
  if (qa.answer_tokens.empty()) throw std::invalid_argument("generate_qa: selected concept names are blank");
  qa.question_features = encoder.embed_all(qa.question_tokens);
  qa.answer_features = encoder.embed_all(qa.answer_tokens);
  return qa;
}

QAPair generate_qa(const pool::ConceptPool& pool, std::span<const std::size_t> selected,
                   const io::TextEncoder& encoder) {
  const auto names = pool.names();
  return generate_qa(names, selected, encoder);
}

nlohmann::json graph_to_json(const HeteroGraph& graph) {
  nlohmann::json doc;
  std::vector<std::string> kinds;
  for (auto k : graph.node_kinds) kinds.push_back(to_string(k));
  doc["node_kinds"] = kinds;
  doc["n1"] = graph.n1;
  doc["n2"] = graph.n2;
  const std::size_t n = graph.size();
  auto matrix = [n](auto get) {
    nlohmann::json m = nlohmann::json::array();
    for (std::size_t i = 0; i < n; ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (std::size_t j = 0; j < n; ++j) row.push_back(get(i, j));
      m.push_back(row);
    }
    return m;
  };
  doc["distances"] = matrix([&](std::size_t i, std::size_t j) { return graph.distances(i, j); });
  doc["buckets"] = matrix([&](std::size_t i, std::size_t j) { return graph.buckets[i * n + j]; });
  nlohmann::json heads = nlohmann::json::array();
  for (const auto& s : graph.structural) heads.push_back(matrix([&](std::size_t i, std::size_t j) { return s(i, j); }));
  doc["structural"] = heads;
  return doc;
}

}  // namespace msgt::graphs
