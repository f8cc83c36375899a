#pragma once

#include <span>
#include <vector>

#include "dcap/featurestore.hpp"
#include "dcap/rng.hpp"
#include "dcap/tape.hpp"

namespace dcap {

/// One |vocab_i| x d matrix per field, all sharing the embedding width.
struct EmbeddingTable {
  std::vector<Tensor> fields;
  std::size_t dim = 0;
};

/// Entries drawn uniformly from [-1/sqrt(d), 1/sqrt(d)].
EmbeddingTable init_embedding(const std::vector<std::size_t>& vocab_sizes,
                              std::size_t d, Rng& rng);

/// Stacks the selected row of every field table into an n x d matrix.
/// field_vars holds one tape var per field table, in field order.
Var embed(Tape& tape, const EncodedSample& sample, std::span<const Var> field_vars);

/// Sum of the selected rows of a single field table (multivalent fields).
Var embed_multivalent(Tape& tape, const std::vector<std::uint32_t>& ids, Var table);

}  // namespace dcap
