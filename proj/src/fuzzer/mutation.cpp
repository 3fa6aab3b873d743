#include <algorithm>

#include "threadfuzz/fuzzer.hpp"

namespace threadfuzz::fuzz {

std::string to_string(MutationOp op) {
  switch (op) {
    case MutationOp::BitFlip: return "bitflip";
    case MutationOp::ByteFlip: return "byteflip";
    case MutationOp::RandomByte: return "random-byte";
    case MutationOp::Arith: return "arith";
    case MutationOp::Interesting: return "interesting";
    case MutationOp::DeleteBlock: return "delete";
    case MutationOp::DuplicateBlock: return "duplicate";
    case MutationOp::Splice: return "splice";
  }
  return "?";
}

namespace {

void store_le(Bytes& out, std::size_t pos, std::uint64_t value, std::size_t width) {
  for (std::size_t i = 0; i < width; ++i) out[pos + i] = static_cast<std::uint8_t>(value >> (8 * i));
}

std::uint64_t load_le(const Bytes& in, std::size_t pos, std::size_t width) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(in[pos + i]) << (8 * i);
  return v;
}

}  // namespace

Bytes apply_mutation(MutationOp op, std::span<const std::uint8_t> input, Rng& rng, std::span<const Bytes> pool,
                     const MutationLimits& limits) {
  Bytes out(input.begin(), input.end());
  if (out.empty()) out.push_back(0);
  const std::size_t len = out.size();
  switch (op) {
    case MutationOp::BitFlip: {
      const auto bit = rng.below(len * 8);
      out[bit / 8] ^= static_cast<std::uint8_t>(0x80u >> (bit % 8));
      break;
    }
    case MutationOp::ByteFlip:
      out[rng.below(len)] ^= 0xff;
      break;
    case MutationOp::RandomByte: {
      const auto pos = rng.below(len);
      out[pos] ^= static_cast<std::uint8_t>(1 + rng.below(255));  // always changes the byte
      break;
    }
    case MutationOp::Arith: {
      static constexpr std::size_t kWidths[] = {1, 2, 4};
      std::size_t width = kWidths[rng.below(3)];
      if (width > len) width = 1;
      const auto pos = rng.below(len - width + 1);
      const auto delta = static_cast<std::uint64_t>(1 + rng.below(kArithMax));
      const bool sub = rng.below(2) == 1;
      const std::uint64_t v = load_le(out, pos, width);
      store_le(out, pos, sub ? v - delta : v + delta, width);
      break;
    }
    case MutationOp::Interesting: {
      const std::int64_t value = kInterestingValues[rng.below(std::size(kInterestingValues))];
      const bool wide = value < -128 || value > 255;
      const std::size_t width = wide && len >= 2 ? 2 : 1;
      const auto pos = rng.below(len - width + 1);
      store_le(out, pos, static_cast<std::uint64_t>(value), width);
      break;
    }
    case MutationOp::DeleteBlock: {
      if (len == 1) break;
      const auto n = 1 + rng.below(std::min(len - 1, kMaxBlock));
      const auto pos = rng.below(len - n + 1);
      out.erase(out.begin() + static_cast<std::ptrdiff_t>(pos), out.begin() + static_cast<std::ptrdiff_t>(pos + n));
      break;
    }
    case MutationOp::DuplicateBlock: {
      const auto n = 1 + rng.below(std::min(len, kMaxBlock));
      const auto from = rng.below(len - n + 1);
      const auto to = rng.below(len + 1);
      const Bytes block(out.begin() + static_cast<std::ptrdiff_t>(from),
                        out.begin() + static_cast<std::ptrdiff_t>(from + n));
      out.insert(out.begin() + static_cast<std::ptrdiff_t>(to), block.begin(), block.end());
      break;
    }
    case MutationOp::Splice: {
      if (pool.empty()) break;
      const Bytes& other = pool[rng.below(pool.size())];
      const auto cut_a = 1 + rng.below(len);
      const auto cut_b = other.empty() ? 0 : rng.below(other.size());
      out.resize(cut_a);
      out.insert(out.end(), other.begin() + static_cast<std::ptrdiff_t>(cut_b), other.end());
      break;
    }
  }
  if (out.size() > limits.max_len) out.resize(std::max<std::size_t>(limits.max_len, 1));
  return out;
}

Bytes mutate(std::span<const std::uint8_t> input, Rng& rng, std::span<const Bytes> pool,
             const MutationLimits& limits, MutationOp* chosen) {
  const auto op = static_cast<MutationOp>(rng.below(kMutationOpCount));
  if (chosen) *chosen = op;
  return apply_mutation(op, input, rng, pool, limits);
}

}  // namespace threadfuzz::fuzz
