#include "damq/smiles.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <set>
#include <tuple>
#include <utility>

namespace damq {

const char* to_string(SmilesErrorKind kind) {
  switch (kind) {
    case SmilesErrorKind::UnclosedRing: return "UnclosedRing";
    case SmilesErrorKind::UnbalancedParen: return "UnbalancedParen";
    case SmilesErrorKind::UnsupportedElement: return "UnsupportedElement";
    case SmilesErrorKind::ValenceViolation: return "ValenceViolation";
    case SmilesErrorKind::Syntax: return "Syntax";
  }
  return "Unknown";
}

SmilesError::SmilesError(SmilesErrorKind kind, std::size_t offset, const std::string& detail)
    : std::runtime_error(std::string(to_string(kind)) + " at offset " + std::to_string(offset) + ": " + detail),
      kind_(kind),
      offset_(offset) {}

namespace {

struct ParsedAtom {
  Element element;
  bool aromatic = false;
  int bracket_h = -1;  // -1 for organic-subset atoms (implicit H)
  std::size_t offset = 0;
};

struct ParsedBond {
  int a = 0;
  int b = 0;
  int order = 1;
  bool aromatic = false;
};

struct RingOpening {
  bool open = false;
  int atom = -1;
  int order = 0;  // 0 = unspecified
  std::size_t offset = 0;
};

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  MolGraph run() {
    while (pos_ < text_.size()) step();
    if (pending_order_ != 0) fail(SmilesErrorKind::Syntax, pending_offset_, "bond symbol without a following atom");
    if (!branches_.empty()) fail(SmilesErrorKind::UnbalancedParen, branches_.back().second, "unclosed branch");
    for (const auto& ring : rings_) {
      if (ring.open) fail(SmilesErrorKind::UnclosedRing, ring.offset, "ring bond never closed");
    }
    if (atoms_.empty()) fail(SmilesErrorKind::Syntax, 0, "no atoms");
    kekulize();
    return build();
  }

 private:
  [[noreturn]] void fail(SmilesErrorKind kind, std::size_t offset, const std::string& detail) const {
    throw SmilesError(kind, offset, detail);
  }

  void step() {
    const char c = text_[pos_];
    switch (c) {
      case 'C':
        if (peek(1) == 'l') fail(SmilesErrorKind::UnsupportedElement, pos_, "element Cl");
        add_atom(Element::C, false, -1, pos_++);
        return;
      case 'N': add_atom(Element::N, false, -1, pos_++); return;
      case 'O': add_atom(Element::O, false, -1, pos_++); return;
      case 'c': add_atom(Element::C, true, -1, pos_++); return;
      case 'n': add_atom(Element::N, true, -1, pos_++); return;
      case 'o': add_atom(Element::O, true, -1, pos_++); return;
      case '[': bracket_atom(); return;
      case '-':
      case '=':
      case '#':
        if (pending_order_ != 0) fail(SmilesErrorKind::Syntax, pos_, "two consecutive bond symbols");
        if (prev_ < 0) fail(SmilesErrorKind::Syntax, pos_, "bond symbol before any atom");
        pending_order_ = c == '-' ? 1 : (c == '=' ? 2 : 3);
        pending_offset_ = pos_++;
        return;
      case '(':
        if (prev_ < 0) fail(SmilesErrorKind::Syntax, pos_, "branch before any atom");
        if (pending_order_ != 0) fail(SmilesErrorKind::Syntax, pos_, "bond symbol before branch");
        if (peek(1) == ')') fail(SmilesErrorKind::Syntax, pos_, "empty branch");
        branches_.emplace_back(prev_, pos_++);
        return;
      case ')':
        if (branches_.empty()) fail(SmilesErrorKind::UnbalancedParen, pos_, "')' without matching '('");
        if (pending_order_ != 0) fail(SmilesErrorKind::Syntax, pending_offset_, "bond symbol without a following atom");
        prev_ = branches_.back().first;
        branches_.pop_back();
        ++pos_;
        return;
      default:
        break;
    }
    if (c >= '1' && c <= '9') {
      ring_digit(c - '0', 1);
      return;
    }
    if (c == '%') {
      const char d1 = peek(1), d2 = peek(2);
      if (d1 < '0' || d1 > '9' || d2 < '0' || d2 > '9') fail(SmilesErrorKind::Syntax, pos_, "'%' needs two digits");
      ring_digit((d1 - '0') * 10 + (d2 - '0'), 3);
      return;
    }
    if ((c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z')) {
      fail(SmilesErrorKind::UnsupportedElement, pos_, std::string("element symbol starting with '") + c + "'");
    }
    fail(SmilesErrorKind::Syntax, pos_, std::string("unsupported character '") + c + "'");
  }

  char peek(std::size_t ahead) const { return pos_ + ahead < text_.size() ? text_[pos_ + ahead] : '\0'; }

  void bracket_atom() {
    const std::size_t start = pos_++;
    if (pos_ < text_.size() && text_[pos_] >= '0' && text_[pos_] <= '9') {
      fail(SmilesErrorKind::Syntax, pos_, "isotopes are not supported");
    }
    if (pos_ >= text_.size()) fail(SmilesErrorKind::Syntax, start, "unterminated bracket atom");
    const char e = text_[pos_];
    Element element;
    bool aromatic = false;
    switch (e) {
      case 'C': element = Element::C; break;
      case 'N': element = Element::N; break;
      case 'O': element = Element::O; break;
      case 'c': element = Element::C; aromatic = true; break;
      case 'n': element = Element::N; aromatic = true; break;
      case 'o': element = Element::O; aromatic = true; break;
      default:
        if ((e >= 'A' && e <= 'Z') || (e >= 'a' && e <= 'z') || e == '*') {
          fail(SmilesErrorKind::UnsupportedElement, pos_, std::string("element symbol starting with '") + e + "'");
        }
        fail(SmilesErrorKind::Syntax, pos_, "expected element symbol in bracket atom");
    }
    if (!aromatic && peek(1) >= 'a' && peek(1) <= 'z') {
      fail(SmilesErrorKind::UnsupportedElement, pos_, std::string("element ") + e + peek(1));
    }
    ++pos_;
    int h = 0;
    if (pos_ < text_.size() && text_[pos_] == '@') fail(SmilesErrorKind::Syntax, pos_, "chirality is not supported");
    if (pos_ < text_.size() && text_[pos_] == 'H') {
      ++pos_;
      h = 1;
      if (pos_ < text_.size() && text_[pos_] >= '0' && text_[pos_] <= '9') h = text_[pos_++] - '0';
    }
    if (pos_ >= text_.size()) fail(SmilesErrorKind::Syntax, start, "unterminated bracket atom");
    if (text_[pos_] == '+' || text_[pos_] == '-') fail(SmilesErrorKind::Syntax, pos_, "charges are not supported");
    if (text_[pos_] != ']') fail(SmilesErrorKind::Syntax, pos_, "unsupported bracket atom content");
    ++pos_;
    add_atom(element, aromatic, h, start);
  }

  void add_atom(Element element, bool aromatic, int bracket_h, std::size_t offset) {
    const int idx = static_cast<int>(atoms_.size());
    atoms_.push_back({element, aromatic, bracket_h, offset});
    if (prev_ >= 0) {
      add_bond(prev_, idx, pending_order_, offset);
    } else if (pending_order_ != 0) {
      fail(SmilesErrorKind::Syntax, pending_offset_, "bond symbol before any atom");
    }
    pending_order_ = 0;
    prev_ = idx;
  }

  void add_bond(int a, int b, int explicit_order, std::size_t offset) {
    if (a == b) fail(SmilesErrorKind::Syntax, offset, "ring closure bonds an atom to itself");
    auto key = std::minmax(a, b);
    if (!bond_keys_.insert(key).second) fail(SmilesErrorKind::Syntax, offset, "duplicate bond");
    ParsedBond bond{a, b, explicit_order == 0 ? 1 : explicit_order, false};
    if (explicit_order == 0 && atoms_[a].aromatic && atoms_[b].aromatic) bond.aromatic = true;
    bonds_.push_back(bond);
  }

  void ring_digit(int digit, std::size_t width) {
    if (prev_ < 0) fail(SmilesErrorKind::Syntax, pos_, "ring bond before any atom");
    auto& ring = rings_[digit];
    if (!ring.open) {
      ring = {true, prev_, pending_order_, pos_};
    } else {
      int order = ring.order;
      if (pending_order_ != 0) {
        if (order != 0 && order != pending_order_) fail(SmilesErrorKind::Syntax, pos_, "conflicting ring bond orders");
        order = pending_order_;
      }
      add_bond(ring.atom, prev_, order, pos_);
      ring = {};
    }
    pending_order_ = 0;
    pos_ += width;
  }

  // Assigns alternating single/double bonds to aromatic bonds: every aromatic
  // atom with a spare valence and no exocyclic double bond gets exactly one
  // double bond. Solved as a perfect matching by backtracking.
  void kekulize() {
    const int n = static_cast<int>(atoms_.size());
    std::vector<int> fixed_sum(n, 0), arom_degree(n, 0);
    std::vector<bool> has_double(n, false);
    for (const auto& bond : bonds_) {
      for (int x : {bond.a, bond.b}) {
        if (bond.aromatic) {
          ++arom_degree[x];
        } else {
          fixed_sum[x] += bond.order;
          if (bond.order >= 2) has_double[x] = true;
        }
      }
    }
    need_.assign(n, false);
    bool any = false;
    for (int i = 0; i < n; ++i) {
      if (!atoms_[i].aromatic) continue;
      const int h = std::max(atoms_[i].bracket_h, 0);
      const int spare = max_valence(atoms_[i].element) - fixed_sum[i] - arom_degree[i] - h;
      if (spare < 0) fail(SmilesErrorKind::ValenceViolation, atoms_[i].offset, "aromatic atom exceeds its valence");
      need_[i] = spare >= 1 && !has_double[i];
      any = any || need_[i];
    }
    if (!any) return;

    candidates_.assign(n, {});
    for (int e = 0; e < static_cast<int>(bonds_.size()); ++e) {
      const auto& bond = bonds_[e];
      if (bond.aromatic && need_[bond.a] && need_[bond.b]) {
        candidates_[bond.a].push_back(e);
        candidates_[bond.b].push_back(e);
      }
    }
    mate_.assign(n, -1);
    if (!match()) {
      for (int i = 0; i < n; ++i) {
        if (need_[i] && mate_[i] < 0) fail(SmilesErrorKind::ValenceViolation, atoms_[i].offset, "cannot kekulize aromatic system");
      }
      fail(SmilesErrorKind::ValenceViolation, 0, "cannot kekulize aromatic system");
    }
    for (int i = 0; i < n; ++i) {
      if (mate_[i] >= 0) bonds_[mate_[i]].order = 2;
    }
  }

  bool match() {
    // Unmatched atom with the fewest remaining options first.
    int best = -1, best_options = 1 << 30;
    for (int i = 0; i < static_cast<int>(atoms_.size()); ++i) {
      if (!need_[i] || mate_[i] >= 0) continue;
      int options = 0;
      for (int e : candidates_[i]) {
        int other = bonds_[e].a == i ? bonds_[e].b : bonds_[e].a;
        if (mate_[other] < 0) ++options;
      }
      if (options < best_options) {
        best = i;
        best_options = options;
      }
    }
    if (best < 0) return true;
    if (best_options == 0) return false;
    for (int e : candidates_[best]) {
      int other = bonds_[e].a == best ? bonds_[e].b : bonds_[e].a;
      if (mate_[other] >= 0) continue;
      mate_[best] = mate_[other] = e;
      if (match()) return true;
      mate_[best] = mate_[other] = -1;
    }
    return false;
  }

  MolGraph build() {
    const int n = static_cast<int>(atoms_.size());
    std::vector<int> sum(n, 0);
    for (const auto& bond : bonds_) {
      sum[bond.a] += bond.order;
      sum[bond.b] += bond.order;
    }
    std::vector<Element> elements;
    elements.reserve(n);
    for (int i = 0; i < n; ++i) {
      const auto& atom = atoms_[i];
      const int free = max_valence(atom.element) - sum[i];
      if (free < 0) fail(SmilesErrorKind::ValenceViolation, atom.offset, "atom exceeds its valence");
      if (atom.bracket_h >= 0 && atom.bracket_h != free) {
        fail(SmilesErrorKind::ValenceViolation, atom.offset,
             "bracket hydrogen count does not match the atom's remaining valence");
      }
      elements.push_back(atom.element);
    }
    std::vector<Bond> bonds;
    bonds.reserve(bonds_.size());
    for (const auto& bond : bonds_) bonds.push_back({bond.a, bond.b, bond.order});
    return MolGraph(std::move(elements), std::move(bonds));
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  int prev_ = -1;
  int pending_order_ = 0;
  std::size_t pending_offset_ = 0;
  std::vector<std::pair<int, std::size_t>> branches_;
  std::array<RingOpening, 100> rings_{};
  std::vector<ParsedAtom> atoms_;
  std::vector<ParsedBond> bonds_;
  std::set<std::pair<int, int>> bond_keys_;
  std::vector<bool> need_;
  std::vector<std::vector<int>> candidates_;
  std::vector<int> mate_;
};

const char* bond_symbol(int order) { return order == 2 ? "=" : (order == 3 ? "#" : ""); }

// Writes a SMILES string by depth-first traversal, starting at the atom with
// the lowest rank and visiting neighbors in rank order.
class Writer {
 public:
  Writer(const MolGraph& mol, const std::vector<int>& ranks) : mol_(mol), ranks_(ranks), atoms_(mol.atom_count()) {
    const int n = mol.atom_count();
    for (int i = 0; i < n; ++i) {
      auto& slot = atoms_[i];
      for (const auto& nb : mol.neighbors(i)) slot.nbr[slot.nn++] = nb;
      std::sort(slot.nbr.begin(), slot.nbr.begin() + slot.nn,
                [&](const Neighbor& x, const Neighbor& y) { return ranks_[x.atom] < ranks_[y.atom]; });
    }
  }

  std::string run() {
    const int n = mol_.atom_count();
    int start = 0;
    for (int i = 1; i < n; ++i) {
      if (ranks_[i] < ranks_[start]) start = i;
    }
    explore(start, -1);
    out_.clear();
    out_.reserve(2 * n);
    free_digits_.fill(true);
    emit(start);
    return out_;
  }

 private:
  // Valence caps every atom at four neighbors.
  struct Closure {
    int partner;
    int order;
    bool opening;
    int digit;
  };
  struct Slot {
    std::array<Neighbor, 4> nbr;
    std::array<Neighbor, 4> kids;
    std::array<Closure, 4> closures;
    int nn = 0;
    int nk = 0;
    int nc = 0;
    int visit = -1;
  };

  void explore(int u, int parent) {
    atoms_[u].visit = counter_++;
    for (int k = 0; k < atoms_[u].nn; ++k) {
      const Neighbor nb = atoms_[u].nbr[k];
      const int v = nb.atom;
      if (v == parent) continue;
      if (atoms_[v].visit >= 0) {
        // Back edge to an ancestor: opens at v, closes at u. The same edge seen
        // later from v (u is then a finished descendant) is skipped.
        if (atoms_[v].visit < atoms_[u].visit) {
          atoms_[v].closures[atoms_[v].nc++] = {u, nb.order, true, 0};
          atoms_[u].closures[atoms_[u].nc++] = {v, nb.order, false, 0};
        }
        continue;
      }
      atoms_[u].kids[atoms_[u].nk++] = nb;
      explore(v, u);
    }
  }

  void emit(int u) {
    out_ += element_symbol(mol_.element(u));
    Slot& slot = atoms_[u];
    std::stable_sort(slot.closures.begin(), slot.closures.begin() + slot.nc, [&](const Closure& x, const Closure& y) {
      if (x.opening != y.opening) return !x.opening;  // closings first
      if (!x.opening) return atoms_[x.partner].visit < atoms_[y.partner].visit;
      return ranks_[x.partner] < ranks_[y.partner];
    });
    for (int k = 0; k < slot.nc; ++k) {
      const Closure& c = slot.closures[k];
      if (!c.opening) {
        put_digit(c.digit);
        free_digits_[c.digit] = true;
      } else {
        int digit = 1;
        while (digit <= 99 && !free_digits_[digit]) ++digit;
        if (digit > 99) throw std::runtime_error("more than 99 simultaneously open ring bonds");
        free_digits_[digit] = false;
        Slot& closer = atoms_[c.partner];
        for (int j = 0; j < closer.nc; ++j) {
          if (closer.closures[j].partner == u) closer.closures[j].digit = digit;
        }
        out_ += bond_symbol(c.order);
        put_digit(digit);
      }
    }
    for (int i = 0; i < slot.nk; ++i) {
      const bool branch = i + 1 < slot.nk;
      if (branch) out_ += '(';
      out_ += bond_symbol(slot.kids[i].order);
      emit(slot.kids[i].atom);
      if (branch) out_ += ')';
    }
  }

  void put_digit(int digit) {
    if (digit >= 10) {
      out_ += '%';
      out_ += static_cast<char>('0' + digit / 10);
      digit %= 10;
    }
    out_ += static_cast<char>('0' + digit);
  }

  const MolGraph& mol_;
  const std::vector<int>& ranks_;
  std::vector<Slot> atoms_;
  int counter_ = 0;
  std::string out_;
  std::array<bool, 100> free_digits_{};
};

// Individualization-refinement canonical labeling. Ranks are refined by
// neighbor multisets until stable; remaining ties are split by trying every
// member of the first non-singleton cell (skipping interchangeable twins), and
// the lexicographically smallest resulting SMILES wins.
// Packed refinement signatures hold ranks in 14 bits.
constexpr int kMaxCanonicalAtoms = 16000;

class Canonicalizer {
 public:
  explicit Canonicalizer(const MolGraph& mol) : mol_(mol), n_(mol.atom_count()) {}

  void run() {
    std::vector<std::tuple<int, int, int>> keys(n_);
    for (int i = 0; i < n_; ++i) {
      keys[i] = {static_cast<int>(mol_.element(i)), mol_.degree(i), mol_.bond_order_sum(i)};
    }
    std::vector<int> order(n_);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return keys[a] < keys[b]; });
    std::vector<int> ranks(n_);
    int r = 0;
    for (int i = 0; i < n_; ++i) {
      if (i > 0 && keys[order[i]] != keys[order[i - 1]]) ++r;
      ranks[order[i]] = r;
    }
    search(refine(std::move(ranks)));
  }

  const std::string& smiles() const { return best_; }
  const std::vector<int>& ranks() const { return best_ranks_; }

 private:
  // Neighbor signature packed into one word: up to four (rank, order) codes,
  // sorted, first code in the high bits. Missing slots are zero, so shorter
  // signatures order before longer ones sharing their prefix.
  std::uint64_t signature(int atom, const std::vector<int>& ranks) const {
    std::array<std::uint64_t, 4> codes{};
    int k = 0;
    for (const auto& nb : mol_.neighbors(atom)) codes[k++] = static_cast<std::uint64_t>(ranks[nb.atom]) * 4 + nb.order + 1;
    std::sort(codes.begin(), codes.begin() + k);
    std::uint64_t sig = 0;
    for (int i = 0; i < 4; ++i) sig = (sig << 16) | codes[i];
    return sig;
  }

  std::vector<int> refine(std::vector<int> ranks) const {
    std::vector<int> distinct(ranks);
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    for (int& r : ranks) r = static_cast<int>(std::lower_bound(distinct.begin(), distinct.end(), r) - distinct.begin());
    int classes = static_cast<int>(distinct.size());
    struct Key {
      int rank;
      std::uint64_t sig;
      int atom;
    };
    std::vector<Key> keys(n_);
    while (classes < n_) {
      for (int i = 0; i < n_; ++i) keys[i] = {ranks[i], signature(i, ranks), i};
      auto less = [](const Key& a, const Key& b) { return a.rank != b.rank ? a.rank < b.rank : a.sig < b.sig; };
      std::sort(keys.begin(), keys.end(), less);
      int r = 0;
      for (int i = 0; i < n_; ++i) {
        if (i > 0 && less(keys[i - 1], keys[i])) ++r;
        ranks[keys[i].atom] = r;
      }
      const int next_classes = r + 1;
      if (next_classes == classes) break;
      classes = next_classes;
    }
    return ranks;
  }

  bool twins(int u, int v) const {
    auto strip = [&](int a, int other) {
      std::vector<Neighbor> out;
      for (const auto& nb : mol_.neighbors(a)) {
        if (nb.atom != other) out.push_back(nb);
      }
      return out;
    };
    auto nu = strip(u, v), nv = strip(v, u);
    if (nu.size() != nv.size()) return false;
    for (std::size_t i = 0; i < nu.size(); ++i) {
      if (nu[i].atom != nv[i].atom || nu[i].order != nv[i].order) return false;
    }
    return true;
  }

  void search(const std::vector<int>& ranks) {
    const int classes = 1 + *std::max_element(ranks.begin(), ranks.end());
    if (classes == n_) {
      std::string s = Writer(mol_, ranks).run();
      if (best_ranks_.empty() || s < best_) {
        best_ = std::move(s);
        best_ranks_ = ranks;
      }
      return;
    }
    std::vector<int> count(classes, 0);
    for (int r : ranks) ++count[r];
    int cell = 0;
    while (count[cell] == 1) ++cell;
    std::vector<int> tried;
    for (int v = 0; v < n_; ++v) {
      if (ranks[v] != cell) continue;
      bool redundant = false;
      for (int u : tried) {
        if (twins(u, v)) {
          redundant = true;
          break;
        }
      }
      if (redundant) continue;
      tried.push_back(v);
      std::vector<int> split(n_);
      for (int a = 0; a < n_; ++a) split[a] = 2 * ranks[a] + ((ranks[a] == cell && a != v) ? 1 : 0);
      search(refine(std::move(split)));
    }
  }

  const MolGraph& mol_;
  int n_;
  std::string best_;
  std::vector<int> best_ranks_;
};

}  // namespace

MolGraph parse_smiles(std::string_view text) { return Parser(text).run(); }

CanonicalSmiles write_smiles(const MolGraph& mol) {
  if (mol.atom_count() > kMaxCanonicalAtoms) throw std::invalid_argument("write_smiles: molecule too large");
  Canonicalizer canon(mol);
  canon.run();
  return CanonicalSmiles(canon.smiles());
}

std::vector<int> canonical_ranks(const MolGraph& mol) {
  if (mol.atom_count() > kMaxCanonicalAtoms) throw std::invalid_argument("canonical_ranks: molecule too large");
  Canonicalizer canon(mol);
  canon.run();
  return canon.ranks();
}

std::string write_smiles_in_order(const MolGraph& mol) {
  std::vector<int> ranks(mol.atom_count());
  std::iota(ranks.begin(), ranks.end(), 0);
  return Writer(mol, ranks).run();
}

}  // namespace damq
