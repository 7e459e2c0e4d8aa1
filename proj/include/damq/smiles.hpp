#pragma once

#include <compare>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "damq/molgraph.hpp"

namespace damq {

enum class SmilesErrorKind {
  UnclosedRing,
  UnbalancedParen,
  UnsupportedElement,
  ValenceViolation,
  Syntax,  // anything else outside the supported subset
};

const char* to_string(SmilesErrorKind kind);

class SmilesError : public std::runtime_error {
 public:
  SmilesError(SmilesErrorKind kind, std::size_t offset, const std::string& detail);

  SmilesErrorKind kind() const noexcept { return kind_; }
  // Byte offset into the input where the problem was detected.
  std::size_t offset() const noexcept { return offset_; }

 private:
  SmilesErrorKind kind_;
  std::size_t offset_;
};

// Canonical SMILES text. Two molecules are isomorphic (element- and
// bond-order-preserving) iff their CanonicalSmiles compare equal.
class CanonicalSmiles {
 public:
  CanonicalSmiles() = default;
  explicit CanonicalSmiles(std::string text) : text_(std::move(text)) {}

  const std::string& str() const { return text_; }

  friend auto operator<=>(const CanonicalSmiles&, const CanonicalSmiles&) = default;
  friend bool operator==(const CanonicalSmiles&, const CanonicalSmiles&) = default;

 private:
  std::string text_;
};

// Parses the C/N/O SMILES subset documented in docs/smiles-subset.md.
// Aromatic (lowercase) input is kekulized. Throws SmilesError.
MolGraph parse_smiles(std::string_view text);

CanonicalSmiles write_smiles(const MolGraph& mol);

// Canonical atom order used by write_smiles: result[i] is the canonical rank
// of atom i. Isomorphic molecules map to identical ranked graphs.
std::vector<int> canonical_ranks(const MolGraph& mol);

// Non-canonical SMILES following atom index order (DFS from atom 0). Handy for
// debugging and for round-trip tests of the parser on arbitrary atom orders.
std::string write_smiles_in_order(const MolGraph& mol);

}  // namespace damq

template <>
struct std::hash<damq::CanonicalSmiles> {
  std::size_t operator()(const damq::CanonicalSmiles& s) const noexcept { return std::hash<std::string>{}(s.str()); }
};
