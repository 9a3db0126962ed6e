#include "tdlab/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "tdlab/rng.hpp"

namespace tdlab {

namespace {

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

std::size_t sample_zipf(std::span<const double> cdf, Rng& rng) {
  const double u = rng.uniform() * cdf.back();
  std::size_t lo = 0, hi = cdf.size() - 1;
  while (lo < hi) {
    const std::size_t mid = (lo + hi) / 2;
    if (cdf[mid] > u) hi = mid; else lo = mid + 1;
  }
  return lo;
}

std::vector<double> zipf_cdf(std::size_t n, double exponent) {
  std::vector<double> cdf(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) cdf[i] = acc += 1.0 / std::pow(static_cast<double>(i + 1), exponent);
  return cdf;
}

}  // namespace

TokenMatrix PackedCorpus::train_batch(std::span<const std::size_t> order, std::size_t first, std::size_t count) const {
  if (first + count > order.size())
    throw std::out_of_range("train_batch: rows [" + std::to_string(first) + ", " + std::to_string(first + count) +
                            ") exceed an order of " + std::to_string(order.size()));
  TokenMatrix out(count, seq_len);
  for (std::size_t r = 0; r < count; ++r) {
    const auto& seq = sequences[train[order[first + r]]];
    std::copy(seq.begin(), seq.end(), out.row(r).begin());
  }
  return out;
}

TokenMatrix PackedCorpus::validation_batch(std::size_t first, std::size_t count) const {
  if (first + count > validation.size())
    throw std::out_of_range("validation_batch: rows beyond the " + std::to_string(validation.size()) +
                            " validation sequences");
  TokenMatrix out(count, seq_len);
  for (std::size_t r = 0; r < count; ++r) {
    const auto& seq = sequences[validation[first + r]];
    std::copy(seq.begin(), seq.end(), out.row(r).begin());
  }
  return out;
}

std::string PackedCorpus::split_digest() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  };
  mix(seq_len);
  mix(train.size());
  for (auto i : train) mix(i);
  mix(validation.size());
  for (auto i : validation) mix(i);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

PackedCorpus ingest(std::span<const std::uint8_t> raw_bytes, std::size_t seq_len, std::uint64_t seed) {
  if (seq_len == 0) throw std::invalid_argument("ingest: seq_len must be positive");
  if (raw_bytes.size() < seq_len)
    throw std::invalid_argument("ingest: input of " + std::to_string(raw_bytes.size()) +
                                " bytes is shorter than one window of " + std::to_string(seq_len));
  PackedCorpus c;
  c.seq_len = seq_len;
  const std::size_t n = raw_bytes.size() / seq_len;
  c.dropped_bytes = raw_bytes.size() - n * seq_len;
  c.sequences.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    c.sequences.emplace_back(raw_bytes.begin() + static_cast<std::ptrdiff_t>(i * seq_len),
                             raw_bytes.begin() + static_cast<std::ptrdiff_t>((i + 1) * seq_len));

  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng = Rng::derive(seed, {0x5917});
  shuffle(perm, rng);
  const std::size_t n_val = n / 100;
  c.validation.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
  c.train.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());
  std::sort(c.validation.begin(), c.validation.end());
  std::sort(c.train.begin(), c.train.end());
  c.epoch_seed_base = splitmix64(seed ^ 0xe90c);
  return c;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open corpus file " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::size_t> epoch_order(const PackedCorpus& corpus, std::uint64_t epoch) {
  std::vector<std::size_t> order(corpus.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng = Rng::derive(corpus.epoch_seed_base, {epoch});
  shuffle(order, rng);
  return order;
}

std::vector<std::uint8_t> detokenize(std::span<const TokenId> ids) {
  std::vector<std::uint8_t> out;
  out.reserve(ids.size());
  for (TokenId id : ids) {
    if (id < 0 || id > 255) throw std::invalid_argument("detokenize: non-byte token " + std::to_string(id));
    out.push_back(static_cast<std::uint8_t>(id));
  }
  return out;
}

std::string synthetic_corpus(std::size_t n_bytes, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, {0xc0b5});
  static constexpr std::string_view kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r",
                                                 "s", "t", "v", "z", "th", "sh", "br", "st", "pl", "gr"};
  static constexpr std::string_view kVowels[] = {"a", "e", "i", "o", "u", "ai", "ou", "ea"};

  constexpr std::size_t kWords = 600;
  constexpr std::size_t kFollowers = 12;
  std::vector<std::string> words(kWords);
  for (auto& w : words) {
    const std::size_t syllables = 1 + rng.below(3);
    for (std::size_t s = 0; s < syllables; ++s) {
      w += kOnsets[rng.below(std::size(kOnsets))];
      w += kVowels[rng.below(std::size(kVowels))];
    }
    if (rng.bernoulli(0.3)) w += kOnsets[rng.below(10)];
  }
  const auto word_cdf = zipf_cdf(kWords, 1.0);
  const auto follow_cdf = zipf_cdf(kFollowers, 1.2);
  std::vector<std::vector<std::size_t>> followers(kWords, std::vector<std::size_t>(kFollowers));
  for (auto& f : followers)
    for (auto& w : f) w = sample_zipf(word_cdf, rng);

  std::string out;
  out.reserve(n_bytes + 128);
  while (out.size() < n_bytes) {
    const std::size_t len = 4 + rng.below(9);
    std::size_t w = sample_zipf(word_cdf, rng);
    for (std::size_t i = 0; i < len; ++i) {
      std::string word = words[w];
      if (i == 0) word[0] = static_cast<char>(word[0] - 'a' + 'A');
      out += word;
      if (i + 1 < len) out += (rng.bernoulli(0.08) ? ", " : " ");
      w = rng.bernoulli(0.85) ? followers[w][sample_zipf(follow_cdf, rng)] : sample_zipf(word_cdf, rng);
    }
    out += rng.bernoulli(0.15) ? ".\n" : ". ";
  }
  out.resize(n_bytes);
  return out;
}

}  // namespace tdlab
