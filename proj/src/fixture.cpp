#include "msgt/fixture.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "msgt/rng.hpp"

namespace msgt::fixture {

namespace {

// Names 0-3 are the pool the fixture is built to select; the rest exercise
// dedup and relevance.
const std::vector<std::string> kConcepts{"pleural effusion", "edema", "fracture", "nodule"};
const std::vector<std::string> kClasses{"congestion", "injury"};

std::vector<std::vector<double>> orthonormal(std::size_t count, std::size_t dim, std::uint64_t seed) {
  if (count > dim) throw std::invalid_argument("fixture: more directions than dimensions");
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < count; ++i) {
    auto v = io::pseudo_embed("direction " + std::to_string(i), dim, seed);
    for (const auto& u : out) {
      double dot = 0.0;
      for (std::size_t j = 0; j < dim; ++j) dot += v[j] * u[j];
      for (std::size_t j = 0; j < dim; ++j) v[j] -= dot * u[j];
    }
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    for (auto& x : v) x /= n;
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<double> unit(std::vector<double> v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (auto& x : v) x /= n;
  return v;
}

io::EmbeddingTable table(const std::vector<std::string>& names, const std::vector<std::vector<double>>& rows) {
  Tensor t = Tensor::matrix(rows.size(), rows.empty() ? 0 : rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), t.row_span(i).begin());
  return io::EmbeddingTable(names, std::move(t), true);
}

// Tables are persisted as float32; round-trip here so the in-memory
// fixture equals what a reader of the files sees.
io::EmbeddingTable as_stored(const io::EmbeddingTable& t) {
  return io::parse_embedding_bytes(io::serialize_embedding_table(t));
}

}  // namespace

Fixture make_separable(const FixtureSpec& spec) {
  if (spec.dim < 7) throw std::invalid_argument("fixture: dim must be at least 7");
  Fixture fx;
  const auto dir = orthonormal(7, spec.dim, spec.seed);
  // 0-3 pool concepts, 4 "device", 5 "cardiomegaly", 6 perturbation axis.
  std::vector<std::vector<double>> cand_rows;
  fx.candidates = {"pleural effusion", "edema", "lung edema", "fracture", "device", "nodule", "cardiomegaly"};
  for (const auto& name : fx.candidates) {
    if (name == "lung edema") {
      std::vector<double> v = dir[1];
      for (std::size_t j = 0; j < spec.dim; ++j) v[j] += 0.2 * dir[6][j];
      cand_rows.push_back(unit(v));  // cosine with "edema" ~0.98
      continue;
    }
    if (name == "device") { cand_rows.push_back(dir[4]); continue; }
    if (name == "cardiomegaly") { cand_rows.push_back(dir[5]); continue; }
    const auto idx = static_cast<std::size_t>(std::find(kConcepts.begin(), kConcepts.end(), name) - kConcepts.begin());
    cand_rows.push_back(dir[idx]);
  }
  fx.candidate_embeddings = as_stored(table(fx.candidates, cand_rows));

  std::vector<std::vector<double>> label_rows(2, std::vector<double>(spec.dim));
  for (std::size_t j = 0; j < spec.dim; ++j) {
    label_rows[0][j] = dir[0][j] + dir[1][j];
    label_rows[1][j] = dir[2][j] + dir[3][j];
  }
  fx.label_embeddings = as_stored(table(kClasses, {unit(label_rows[0]), unit(label_rows[1])}));
  // renormalized in double exactly as `msgt pool build` does after loading
  fx.pool = pool::build_pool(fx.candidate_embeddings.unit_normalized(), fx.label_embeddings.unit_normalized(), fx.tau_c,
                            fx.tau_r, fx.k);

  Rng rng(spec.seed);
  std::vector<std::string> view_names;
  std::vector<std::vector<double>> view_rows;
  fx.manifest.task = io::TaskKind::SingleLabel;
  fx.manifest.label_names = kClasses;
  fx.manifest.concept_names = fx.pool.names();
  fx.manifest.embeddings = "views.emb";
  std::size_t serial = 0;
  for (const std::string split : {"train", "test"}) {
    const std::size_t per_class = split == "train" ? spec.train_per_class : spec.test_per_class;
    for (std::size_t i = 0; i < per_class; ++i)
      for (std::size_t cls = 0; cls < 2; ++cls) {
        io::Sample s;
        s.id = split + "-" + std::to_string(serial++);
        s.split = split;
        s.labels = {cls};
        for (std::size_t m = 0; m < spec.views_per_sample; ++m) {
          std::vector<double> v(spec.dim);
          const double wa = rng.uniform(0.5, 1.0), wb = rng.uniform(0.5, 1.0);
          for (std::size_t j = 0; j < spec.dim; ++j)
            v[j] = wa * dir[2 * cls][j] + wb * dir[2 * cls + 1][j] + spec.noise * rng.normal();
          view_names.push_back(s.id + "/view" + std::to_string(m));
          view_rows.push_back(unit(v));
          s.views.push_back(view_names.back());
        }
        fx.manifest.samples.push_back(std::move(s));
      }
  }
  fx.view_embeddings = as_stored(table(view_names, view_rows));

  // A few optional fields so every input path is exercised.
  const std::size_t k = fx.pool.size();
  auto& s0 = fx.manifest.samples[0];
  s0.annotations = std::vector<io::Annotation>(k, io::Annotation::Unknown);
  (*s0.annotations)[0] = io::Annotation::Present;
  auto& s1 = fx.manifest.samples[1];
  s1.hint_text = fx.pool.names()[2];
  auto& s2 = fx.manifest.samples[2];
  s2.region_centers = std::vector<std::array<double, 2>>{};
  for (std::size_t i = 0; i < k; ++i) s2.region_centers->push_back({static_cast<double>(i), static_cast<double>(2 * i)});

  auto& c = fx.config;
  c.model.dim = spec.dim;
  c.model.heads = 2;
  c.model.seed = spec.seed;
  c.model.text_seed = spec.seed;
  c.epochs = 200;
  c.learning_rate = 1e-3;
  c.model.answer_concepts = 4;
  c.batch_size = 4;

  const std::string first_test = fx.manifest.split("test").front()->id;
  fx.intervention = {{"sample_id", first_test},
                     {"clamps", {{{"concept_name", fx.pool.names()[0]}, {"value", 1}},
                                 {{"concept_index", 2}, {"value", 0}}}}};
  return fx;
}

io::Dataset dataset(const Fixture& fx) { return io::make_dataset(fx.manifest, fx.view_embeddings); }

void write_fixture(const Fixture& fx, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "candidates.txt");
    for (const auto& c : fx.candidates) out << c << '\n';
  }
  io::save_embedding_file(fx.candidate_embeddings, dir / "candidates.emb");
  io::save_embedding_file(fx.label_embeddings, dir / "labels.emb");
  io::save_embedding_file(fx.view_embeddings, dir / "views.emb");
  pool::save_pool(fx.pool, dir / "pool.json");
  auto write_json = [&](const char* name, const nlohmann::json& doc) {
    std::ofstream out(dir / name);
    out << doc.dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
  };
  write_json("manifest.json", io::manifest_to_json(fx.manifest));
  write_json("train_config.json", train::config_to_json(fx.config));
  write_json("intervention.json", fx.intervention);
}

}  // namespace msgt::fixture
