#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tdlab/tokens.hpp"

namespace tdlab {

/// Fixed-length byte sequences with a seeded 99:1 train/validation split.
struct PackedCorpus {
  Vocab vocab = Vocab::bytes();
  std::size_t seq_len = 0;
  std::vector<std::vector<TokenId>> sequences;
  std::vector<std::size_t> train;       // indices into `sequences`
  std::vector<std::size_t> validation;  // indices into `sequences`, fixed order
  std::uint64_t epoch_seed_base = 0;
  std::size_t dropped_bytes = 0;

  std::size_t train_size() const { return train.size(); }
  std::size_t validation_size() const { return validation.size(); }

  /// Sequences `train[order[first..first+count)]` stacked into a [count, seq_len] matrix.
  TokenMatrix train_batch(std::span<const std::size_t> order, std::size_t first, std::size_t count) const;
  /// Validation sequences [first, first+count) as a matrix.
  TokenMatrix validation_batch(std::size_t first, std::size_t count) const;

  /// FNV-1a digest of the split assignment, hex-encoded.
  std::string split_digest() const;
};

/// Packs non-overlapping `seq_len`-byte windows (remainder dropped) and assigns
/// floor(n/100) of them to validation by a permutation seeded with `seed`.
PackedCorpus ingest(std::span<const std::uint8_t> raw_bytes, std::size_t seq_len, std::uint64_t seed = 0);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

/// Training order for `epoch`: a permutation of [0, train_size()) seeded by
/// (epoch_seed_base, epoch).
std::vector<std::size_t> epoch_order(const PackedCorpus& corpus, std::uint64_t epoch);

std::vector<std::uint8_t> detokenize(std::span<const TokenId> ids);

/// Deterministic English-like text, used for demos and the desk-scale experiments
/// when no corpus file is supplied.
std::string synthetic_corpus(std::size_t n_bytes, std::uint64_t seed);

}  // namespace tdlab
