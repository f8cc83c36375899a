#include "dcap/embedding.hpp"

#include <cmath>
#include <string>

namespace dcap {

EmbeddingTable init_embedding(const std::vector<std::size_t>& vocab_sizes,
                              std::size_t d, Rng& rng) {
  if (d < 1) throw ConfigError("embedding dim must be >= 1");
  EmbeddingTable table;
  table.dim = d;
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t rows : vocab_sizes) {
    Tensor m({rows, d});
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(-bound, bound);
    table.fields.push_back(std::move(m));
  }
  return table;
}

Var embed(Tape& tape, const EncodedSample& sample, std::span<const Var> field_vars) {
  if (sample.feature_ids.size() != field_vars.size())
    throw ShapeError("sample has " + std::to_string(sample.feature_ids.size()) +
                     " ids for " + std::to_string(field_vars.size()) + " fields");
  std::vector<Var> rows;
  rows.reserve(field_vars.size());
  for (std::size_t f = 0; f < field_vars.size(); ++f) {
    const Tensor& table = tape.value(field_vars[f]);
    const std::uint32_t id = sample.feature_ids[f];
    if (id >= table.dim(0))
      throw DataError("field " + std::to_string(f) + ": id " + std::to_string(id) +
                      " outside table with " + std::to_string(table.dim(0)) + " rows");
    rows.push_back(tape.gather_rows(field_vars[f], {id}));
  }
  return tape.concat(rows, 0);
}

Var embed_multivalent(Tape& tape, const std::vector<std::uint32_t>& ids, Var table) {
  if (ids.empty()) throw ContractError("multivalent field needs at least one id");
  return tape.reduce(tape.gather_rows(table, ids), 0, Reduce::sum);
}

}  // namespace dcap
