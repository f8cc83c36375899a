#include "dcap/featurestore.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "binio.hpp"
#include "dcap/rng.hpp"

namespace dcap {
namespace {

using binio::get_bytes;
using binio::get_string;
using binio::put_bytes;
using binio::put_string;

std::vector<std::string> split(const std::string& line, const std::string& sep) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    std::size_t next = line.find(sep, pos);
    if (next == std::string::npos) {
      out.push_back(line.substr(pos));
      return out;
    }
    out.push_back(line.substr(pos, next - pos));
    pos = next + sep.size();
  }
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

std::ifstream open_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return in;
}

constexpr char kDatasetMagic[] = "DCAPDS1";

}  // namespace

std::uint32_t FieldSchema::encode(const std::string& token) const {
  auto it = vocabulary.find(token);
  return it == vocabulary.end() ? unknown_index : it->second;
}

std::string FieldSchema::decode(std::uint32_t index) const {
  if (index == unknown_index) return kUnknownToken;
  for (const auto& [token, idx] : vocabulary)
    if (idx == index) return token;
  throw DataError("field " + name + ": index " + std::to_string(index) +
                  " outside vocabulary");
}

std::size_t EncodedDataset::feature_dimension() const {
  std::size_t total = 0;
  for (const auto& schema : schemas) total += schema.size();
  return total;
}

FieldSchema build_vocabulary(const std::vector<std::vector<std::string>>& records,
                             std::size_t field, std::size_t min_frequency,
                             std::string name, FieldKind kind) {
  if (min_frequency < 1) throw ContractError("min_frequency must be >= 1");
  if (records.empty()) throw DataError("empty dataset: no records to build vocabulary");
  std::map<std::string, std::size_t> counts;
  for (const auto& row : records) {
    if (field >= row.size())
      throw DataError("record has no field " + std::to_string(field));
    if (row[field] != kUnknownToken) ++counts[row[field]];
  }
  FieldSchema schema;
  schema.name = std::move(name);
  schema.kind = kind;
  std::uint32_t next = 0;
  for (const auto& [token, count] : counts)  // std::map iterates lexicographically
    if (count >= min_frequency) schema.vocabulary.emplace(token, next++);
  schema.unknown_index = next;
  return schema;
}

std::int64_t transform_numeric(double z) {
  if (!std::isfinite(z) || z < 0.0)
    throw ContractError("transform_numeric requires a finite non-negative value");
  if (z > 2.0) {
    double l = std::log(z);
    return static_cast<std::int64_t>(std::floor(l * l));
  }
  return static_cast<std::int64_t>(std::max(0.0, std::floor(z)));
}

std::uint8_t binarize_rating(int rating) {
  if (rating < 1 || rating > 5)
    throw DataError("rating " + std::to_string(rating) + " outside 1..5");
  return rating >= 4 ? 1 : 0;
}

EncodedDataset encode_dataset(const RawDataset& raw, std::size_t min_frequency) {
  if (raw.rows.empty()) throw DataError("empty dataset: nothing to encode");
  if (raw.rows.size() != raw.labels.size())
    throw DataError("row/label count mismatch");
  EncodedDataset out;
  out.skipped = raw.skipped;
  const std::size_t n = raw.field_names.size();
  out.schemas.reserve(n);
  for (std::size_t f = 0; f < n; ++f)
    out.schemas.push_back(build_vocabulary(raw.rows, f, min_frequency,
                                           raw.field_names[f], raw.field_kinds[f]));
  out.samples.reserve(raw.rows.size());
  for (std::size_t r = 0; r < raw.rows.size(); ++r) {
    EncodedSample sample;
    sample.feature_ids.reserve(n);
    for (std::size_t f = 0; f < n; ++f)
      sample.feature_ids.push_back(out.schemas[f].encode(raw.rows[r][f]));
    sample.label = raw.labels[r];
    out.samples.push_back(std::move(sample));
  }
  return out;
}

DatasetSplit split_dataset(std::vector<EncodedSample> samples, std::uint64_t seed) {
  if (samples.size() < 10)
    throw DataError("empty dataset: need at least 10 samples to split");
  DatasetSplit out;
  out.seed = seed;
  Rng rng(derive_seed(seed, {fnv1a64("split")}));
  rng.shuffle(samples);
  const std::size_t n = samples.size();
  const std::size_t n_train = n * 8 / 10;
  const std::size_t n_val = (n - n_train) / 2;
  auto begin = samples.begin();
  out.train.assign(begin, begin + static_cast<std::ptrdiff_t>(n_train));
  out.validation.assign(begin + static_cast<std::ptrdiff_t>(n_train),
                        begin + static_cast<std::ptrdiff_t>(n_train + n_val));
  out.test.assign(begin + static_cast<std::ptrdiff_t>(n_train + n_val), samples.end());
  return out;
}

RawDataset load_movielens_raw(const std::string& ratings_path,
                              const std::string& users_path,
                              const std::string& movies_path) {
  RawDataset raw;
  raw.field_names = {"UserID", "MovieID", "Gender", "Age", "Occupation"};
  raw.field_kinds.assign(5, FieldKind::categorical);

  std::unordered_map<std::string, std::array<std::string, 3>> users;
  {
    auto in = open_text(users_path);
    std::string line;
    while (std::getline(in, line)) {
      line = strip_cr(line);
      if (line.empty()) continue;
      auto parts = split(line, "::");
      if (parts.size() < 4) {
        ++raw.skipped;
        continue;
      }
      users[parts[0]] = {parts[1], parts[2], parts[3]};
    }
  }
  {
    // Only presence matters here; ratings carry every field we encode.
    auto in = open_text(movies_path);
  }
  auto in = open_text(ratings_path);
  std::string line;
  while (std::getline(in, line)) {
    line = strip_cr(line);
    if (line.empty()) continue;
    auto parts = split(line, "::");
    int rating = 0;
    if (parts.size() < 3) {
      ++raw.skipped;
      continue;
    }
    try {
      rating = std::stoi(parts[2]);
    } catch (const std::exception&) {
      ++raw.skipped;
      continue;
    }
    auto user = users.find(parts[0]);
    if (user == users.end() || rating < 1 || rating > 5) {
      ++raw.skipped;
      continue;
    }
    raw.rows.push_back({parts[0], parts[1], user->second[0], user->second[1],
                        user->second[2]});
    raw.labels.push_back(binarize_rating(rating));
  }
  if (raw.rows.empty()) throw DataError("empty dataset: no usable ratings");
  return raw;
}

EncodedDataset load_movielens(const std::string& ratings_path,
                              const std::string& users_path,
                              const std::string& movies_path) {
  return encode_dataset(load_movielens_raw(ratings_path, users_path, movies_path), 1);
}

RawDataset load_delimited_raw(const std::string& data_path,
                              const std::string& schema_path, char delimiter) {
  struct Column {
    std::string name;
    bool is_label = false;
    FieldKind kind = FieldKind::categorical;
  };
  std::vector<Column> columns;
  std::size_t label_column = 0, label_count = 0;
  {
    auto in = open_text(schema_path);
    std::string line;
    while (std::getline(in, line)) {
      line = strip_cr(line);
      if (line.empty()) continue;
      auto parts = split(line, "\t");
      if (parts.size() != 2)
        throw ConfigError("schema line must be <name><TAB><kind>: " + line);
      Column col;
      col.name = parts[0];
      if (parts[1] == "label") {
        col.is_label = true;
        label_column = columns.size();
        ++label_count;
      } else if (parts[1] == "categorical") {
        col.kind = FieldKind::categorical;
      } else if (parts[1] == "numerical") {
        col.kind = FieldKind::numerical;
      } else {
        throw ConfigError("unknown column kind: " + parts[1]);
      }
      columns.push_back(std::move(col));
    }
  }
  if (label_count != 1)
    throw ConfigError("schema must declare exactly one label column");

  RawDataset raw;
  for (const auto& col : columns) {
    if (col.is_label) continue;
    raw.field_names.push_back(col.name);
    raw.field_kinds.push_back(col.kind);
  }

  auto in = open_text(data_path);
  std::string line;
  const std::string sep(1, delimiter);
  while (std::getline(in, line)) {
    line = strip_cr(line);
    if (line.empty()) continue;
    auto parts = split(line, sep);
    if (parts.size() != columns.size()) {
      ++raw.skipped;
      continue;
    }
    const std::string& label_token = parts[label_column];
    if (label_token != "0" && label_token != "1") {
      ++raw.skipped;
      continue;
    }
    std::vector<std::string> row;
    row.reserve(columns.size() - 1);
    for (std::size_t c = 0; c < columns.size(); ++c) {
      if (c == label_column) continue;
      if (columns[c].kind == FieldKind::numerical) {
        double z = 0.0;
        try {
          z = std::stod(parts[c]);
        } catch (const std::exception&) {
          z = -1.0;  // forces the unknown token below
        }
        if (std::isfinite(z) && z >= 0.0)
          row.push_back(std::to_string(transform_numeric(z)));
        else
          row.push_back(kUnknownToken);
      } else {
        row.push_back(parts[c].empty() ? kUnknownToken : parts[c]);
      }
    }
    raw.rows.push_back(std::move(row));
    raw.labels.push_back(label_token == "1" ? 1 : 0);
  }
  if (raw.rows.empty()) throw DataError("empty dataset: no usable rows");
  return raw;
}

EncodedDataset load_delimited(const std::string& data_path,
                              const std::string& schema_path, char delimiter,
                              std::size_t min_frequency) {
  return encode_dataset(load_delimited_raw(data_path, schema_path, delimiter),
                        min_frequency);
}

std::vector<std::vector<std::uint32_t>> minibatches(std::size_t sample_count,
                                                    std::size_t batch_size,
                                                    std::uint64_t seed,
                                                    std::uint64_t epoch) {
  if (batch_size < 1) throw ContractError("batch_size must be >= 1");
  std::vector<std::uint32_t> order(sample_count);
  std::iota(order.begin(), order.end(), 0u);
  Rng rng(derive_seed(seed, {fnv1a64("minibatch"), epoch}));
  rng.shuffle(order);
  std::vector<std::vector<std::uint32_t>> blocks;
  for (std::size_t start = 0; start < sample_count; start += batch_size) {
    std::size_t stop = std::min(sample_count, start + batch_size);
    blocks.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                        order.begin() + static_cast<std::ptrdiff_t>(stop));
  }
  return blocks;
}

void save_dataset(const std::string& path, const EncodedDataset& data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  os.write(kDatasetMagic, 7);
  put_bytes(os, data.schemas.size(), 4);
  put_bytes(os, data.samples.size(), 8);
  put_bytes(os, data.skipped, 8);
  for (const auto& schema : data.schemas) {
    put_string(os, schema.name);
    put_bytes(os, static_cast<std::uint64_t>(schema.kind), 1);
    put_bytes(os, schema.vocabulary.size(), 4);
    put_bytes(os, schema.unknown_index, 4);
    std::vector<std::string> tokens(schema.vocabulary.size());
    for (const auto& [token, index] : schema.vocabulary) tokens[index] = token;
    for (const auto& token : tokens) put_string(os, token);
  }
  for (const auto& sample : data.samples) {
    for (std::uint32_t id : sample.feature_ids) put_bytes(os, id, 4);
    put_bytes(os, sample.label, 1);
  }
  if (!os) throw IoError("write failed for " + path);
}

EncodedDataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  char magic[7];
  is.read(magic, 7);
  if (is.gcount() != 7 || std::string(magic, 7) != kDatasetMagic)
    throw DataError(path + " is not a dataset cache (bad magic)");
  EncodedDataset data;
  const std::size_t field_count = static_cast<std::size_t>(get_bytes<DataError>(is, 4));
  const std::size_t sample_count = static_cast<std::size_t>(get_bytes<DataError>(is, 8));
  data.skipped = static_cast<std::size_t>(get_bytes<DataError>(is, 8));
  data.schemas.resize(field_count);
  for (auto& schema : data.schemas) {
    schema.name = get_string<DataError>(is);
    schema.kind = static_cast<FieldKind>(get_bytes<DataError>(is, 1));
    const std::size_t vocab_size = static_cast<std::size_t>(get_bytes<DataError>(is, 4));
    schema.unknown_index = static_cast<std::uint32_t>(get_bytes<DataError>(is, 4));
    for (std::uint32_t i = 0; i < vocab_size; ++i)
      schema.vocabulary.emplace(get_string<DataError>(is), i);
    if (schema.unknown_index != vocab_size)
      throw DataError("dataset cache: unknown slot must follow the vocabulary");
  }
  data.samples.resize(sample_count);
  for (auto& sample : data.samples) {
    sample.feature_ids.resize(field_count);
    for (auto& id : sample.feature_ids) {
      id = static_cast<std::uint32_t>(get_bytes<DataError>(is, 4));
    }
    sample.label = static_cast<std::uint8_t>(get_bytes<DataError>(is, 1));
  }
  return data;
}

}  // namespace dcap
