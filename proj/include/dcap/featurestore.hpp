#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "dcap/error.hpp"

namespace dcap {

enum class FieldKind : std::uint8_t { categorical = 0, numerical = 1 };

inline constexpr const char* kUnknownToken = "<unknown>";

// One field's token -> dense index mapping. Indices cover 0..size()-1 and the
// reserved unknown slot is always the last one.
struct FieldSchema {
  std::string name;
  FieldKind kind = FieldKind::categorical;
  std::unordered_map<std::string, std::uint32_t> vocabulary;
  std::uint32_t unknown_index = 0;

  std::size_t size() const { return vocabulary.size() + 1; }
  std::uint32_t encode(const std::string& token) const;
  // Inverse of encode for known indices; unknown_index yields the sentinel.
  std::string decode(std::uint32_t index) const;
};

struct EncodedSample {
  std::vector<std::uint32_t> feature_ids;  // one per field
  std::uint8_t label = 0;

  bool operator==(const EncodedSample&) const = default;
};

struct EncodedDataset {
  std::vector<FieldSchema> schemas;
  std::vector<EncodedSample> samples;
  std::size_t skipped = 0;  // malformed input lines dropped during loading

  std::size_t field_count() const { return schemas.size(); }
  std::size_t feature_dimension() const;
};

struct DatasetSplit {
  std::vector<EncodedSample> train;
  std::vector<EncodedSample> validation;
  std::vector<EncodedSample> test;
  std::uint64_t seed = 0;
};

// Raw token rows prior to vocabulary assignment; labels kept alongside.
struct RawDataset {
  std::vector<std::string> field_names;
  std::vector<FieldKind> field_kinds;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::uint8_t> labels;
  std::size_t skipped = 0;
};

FieldSchema build_vocabulary(const std::vector<std::vector<std::string>>& records,
                             std::size_t field, std::size_t min_frequency,
                             std::string name = {},
                             FieldKind kind = FieldKind::categorical);

std::int64_t transform_numeric(double z);

std::uint8_t binarize_rating(int rating);

EncodedDataset encode_dataset(const RawDataset& raw, std::size_t min_frequency);

DatasetSplit split_dataset(std::vector<EncodedSample> samples, std::uint64_t seed);

RawDataset load_movielens_raw(const std::string& ratings_path,
                              const std::string& users_path,
                              const std::string& movies_path);

EncodedDataset load_movielens(const std::string& ratings_path,
                              const std::string& users_path,
                              const std::string& movies_path);

// Delimited file + schema side-file ingestion. The side-file lists one column
// per line as "<name><TAB><kind>" with kind in {label, categorical, numerical};
// exactly one label column is required.
RawDataset load_delimited_raw(const std::string& data_path,
                              const std::string& schema_path, char delimiter);

EncodedDataset load_delimited(const std::string& data_path,
                              const std::string& schema_path, char delimiter,
                              std::size_t min_frequency);

std::vector<std::vector<std::uint32_t>> minibatches(std::size_t sample_count,
                                                    std::size_t batch_size,
                                                    std::uint64_t seed,
                                                    std::uint64_t epoch);

void save_dataset(const std::string& path, const EncodedDataset& data);
EncodedDataset load_dataset(const std::string& path);

}  // namespace dcap
