#pragma once

// Temporal formulas over a fixed proposition table: parsing, canonical
// negation normal form, fragment classification and dualization.

#include <algorithm>
#include <compare>
#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ltlshield {

inline constexpr int kMaxAtoms = 16;

class LtlError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SyntaxError : public LtlError {
 public:
  SyntaxError(std::size_t position, const std::string& what)
      : LtlError("syntax error at " + std::to_string(position) + ": " + what), position_(position)
  {
  }
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

class UnknownAtom : public LtlError {
 public:
  explicit UnknownAtom(std::string name) : LtlError("unknown atom '" + name + "'"), name_(std::move(name)) {}
  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
};

/// One input symbol: the set of atoms that hold, as a bitmask (bit i = atom i).
struct Assignment {
  std::uint32_t bits = 0;

  constexpr bool has(int atom) const noexcept { return (bits >> atom) & 1U; }
  constexpr Assignment with(int atom) const noexcept { return Assignment{bits | (1U << atom)}; }
  friend constexpr bool operator==(Assignment, Assignment) = default;
};

class PropositionTable {
 public:
  PropositionTable() = default;
  explicit PropositionTable(std::vector<std::string> names) : names_(std::move(names))
  {
    if (names_.size() > static_cast<std::size_t>(kMaxAtoms))
      throw LtlError("at most " + std::to_string(kMaxAtoms) + " atomic propositions are supported");
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (names_[i].empty()) throw LtlError("empty proposition name");
      for (std::size_t j = 0; j < i; ++j)
        if (names_[i] == names_[j]) throw LtlError("duplicate proposition '" + names_[i] + "'");
    }
  }

  std::size_t size() const noexcept { return names_.size(); }
  std::size_t alphabet_size() const noexcept { return std::size_t{1} << names_.size(); }
  const std::string& name(int index) const { return names_.at(static_cast<std::size_t>(index)); }
  const std::vector<std::string>& names() const noexcept { return names_; }

  std::optional<int> find(std::string_view name) const
  {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return static_cast<int>(i);
    return std::nullopt;
  }

  int index(std::string_view name) const
  {
    if (auto i = find(name)) return *i;
    throw UnknownAtom(std::string(name));
  }

  Assignment assignment(std::span<const std::string> atoms) const
  {
    Assignment a;
    for (const auto& n : atoms) a = a.with(index(n));
    return a;
  }

  std::vector<std::string> names_of(Assignment a) const
  {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (a.has(static_cast<int>(i))) out.push_back(names_[i]);
    return out;
  }

  friend bool operator==(const PropositionTable&, const PropositionTable&) = default;

 private:
  std::vector<std::string> names_;
};

enum class Kind : std::uint8_t { True, False, Atom, NotAtom, And, Or, Next, Until, Eventually, Globally };

/// Immutable formula in canonical negation normal form. Every value is built
/// through the smart constructors below, so structurally equal formulas are
/// equal and And/Or children are flattened, deduplicated and sorted.
class Formula {
 public:
  static Formula tt() { return make(Kind::True, -1, {}); }
  static Formula ff() { return make(Kind::False, -1, {}); }
  static Formula atom(int index) { return make(Kind::Atom, index, {}); }
  static Formula not_atom(int index) { return make(Kind::NotAtom, index, {}); }

  static Formula next(Formula f) { return make(Kind::Next, -1, {std::move(f)}); }

  static Formula eventually(Formula f)
  {
    switch (f.kind()) {
      case Kind::True:
      case Kind::False:
      case Kind::Eventually: return f;
      default: return make(Kind::Eventually, -1, {std::move(f)});
    }
  }

  static Formula globally(Formula f)
  {
    switch (f.kind()) {
      case Kind::True:
      case Kind::False:
      case Kind::Globally: return f;
      default: return make(Kind::Globally, -1, {std::move(f)});
    }
  }

  static Formula until(Formula lhs, Formula rhs)
  {
    if (rhs.is_true() || rhs.is_false()) return rhs;
    if (lhs.is_false()) return rhs;
    if (lhs.is_true()) return eventually(std::move(rhs));
    if (lhs == rhs) return rhs;
    return make(Kind::Until, -1, {std::move(lhs), std::move(rhs)});
  }

  static Formula conj(std::vector<Formula> parts) { return junction(Kind::And, std::move(parts)); }
  static Formula disj(std::vector<Formula> parts) { return junction(Kind::Or, std::move(parts)); }

  Kind kind() const noexcept { return node_->kind; }
  int atom_index() const noexcept { return node_->atom; }
  std::span<const Formula> children() const noexcept { return node_->children; }
  const Formula& child(std::size_t i) const { return node_->children.at(i); }
  std::uint64_t hash() const noexcept { return node_->hash; }
  std::size_t size() const noexcept { return node_->size; }

  bool is_true() const noexcept { return kind() == Kind::True; }
  bool is_false() const noexcept { return kind() == Kind::False; }

  friend bool operator==(const Formula& a, const Formula& b) { return compare(a, b) == 0; }
  friend std::strong_ordering operator<=>(const Formula& a, const Formula& b) { return compare(a, b) <=> 0; }

  struct Hasher {
    std::size_t operator()(const Formula& f) const noexcept { return static_cast<std::size_t>(f.hash()); }
  };

 private:
  struct Node {
    Kind kind;
    int atom;
    std::vector<Formula> children;
    std::uint64_t hash;
    std::size_t size;
  };

  explicit Formula(std::shared_ptr<const Node> n) : node_(std::move(n)) {}

  static std::uint64_t mix(std::uint64_t h, std::uint64_t v)
  {
    h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    h *= 0xff51afd7ed558ccdULL;
    return h ^ (h >> 33);
  }

  static Formula make(Kind k, int atom, std::vector<Formula> children)
  {
    std::uint64_t h = mix(0x1234567ULL, static_cast<std::uint64_t>(k));
    h = mix(h, static_cast<std::uint64_t>(atom + 1));
    std::size_t size = 1;
    for (const auto& c : children) {
      h = mix(h, c.hash());
      size += c.size();
    }
    return Formula(std::make_shared<const Node>(Node{k, atom, std::move(children), h, size}));
  }

  // Total order: structural hash first, structure second.
  static int compare(const Formula& a, const Formula& b)
  {
    if (a.node_ == b.node_) return 0;
    if (a.hash() != b.hash()) return a.hash() < b.hash() ? -1 : 1;
    if (a.kind() != b.kind()) return a.kind() < b.kind() ? -1 : 1;
    if (a.atom_index() != b.atom_index()) return a.atom_index() < b.atom_index() ? -1 : 1;
    const auto ca = a.children();
    const auto cb = b.children();
    if (ca.size() != cb.size()) return ca.size() < cb.size() ? -1 : 1;
    for (std::size_t i = 0; i < ca.size(); ++i)
      if (int c = compare(ca[i], cb[i]); c != 0) return c;
    return 0;
  }

  static Formula junction(Kind k, std::vector<Formula> parts)
  {
    const Kind unit = k == Kind::And ? Kind::True : Kind::False;
    const Kind zero = k == Kind::And ? Kind::False : Kind::True;
    std::vector<Formula> flat;
    flat.reserve(parts.size());
    for (auto& p : parts) {
      if (p.kind() == unit) continue;
      if (p.kind() == zero) return p;
      if (p.kind() == k) {
        for (const auto& c : p.children()) flat.push_back(c);
      } else {
        flat.push_back(std::move(p));
      }
    }
    std::sort(flat.begin(), flat.end());
    flat.erase(std::unique(flat.begin(), flat.end()), flat.end());
    // p together with !p
    for (const auto& f : flat) {
      if (f.kind() != Kind::Atom) continue;
      for (const auto& g : flat)
        if (g.kind() == Kind::NotAtom && g.atom_index() == f.atom_index())
          return k == Kind::And ? ff() : tt();
    }
    if (flat.empty()) return k == Kind::And ? tt() : ff();
    if (flat.size() == 1) return flat.front();
    return make(k, -1, std::move(flat));
  }

  std::shared_ptr<const Node> node_;
};

/// Raw syntax tree as written by a user, before normalization. `Not` may
/// appear anywhere and And/Or are binary.
struct Syntax {
  enum class Op : std::uint8_t { True, False, Atom, Not, And, Or, Next, Until, Eventually, Globally };
  Op op = Op::True;
  int atom = -1;
  std::vector<Syntax> args;

  static Syntax leaf(Op op, int atom = -1) { return Syntax{op, atom, {}}; }
  static Syntax unary(Op op, Syntax a) { return Syntax{op, -1, {std::move(a)}}; }
  static Syntax binary(Op op, Syntax a, Syntax b) { return Syntax{op, -1, {std::move(a), std::move(b)}}; }
};

enum class FragmentClass { CoSafe, Safe, Neither };

inline const char* to_string(FragmentClass c)
{
  switch (c) {
    case FragmentClass::CoSafe: return "co-safe";
    case FragmentClass::Safe: return "safe";
    default: return "neither";
  }
}

namespace detail {

inline bool contains_kind(const Formula& f, Kind k)
{
  if (f.kind() == k) return true;
  return std::any_of(f.children().begin(), f.children().end(),
                     [k](const Formula& c) { return contains_kind(c, k); });
}

}  // namespace detail

/// No Globally in the NNF.
inline bool is_co_safe(const Formula& f) { return !detail::contains_kind(f, Kind::Globally); }

/// No Until and no Eventually in the NNF.
inline bool is_safe(const Formula& f)
{
  return !detail::contains_kind(f, Kind::Until) && !detail::contains_kind(f, Kind::Eventually);
}

/// Formulas without temporal operators are in both fragments; they are
/// reported as co-safe.
inline FragmentClass classify(const Formula& f)
{
  if (is_co_safe(f)) return FragmentClass::CoSafe;
  if (is_safe(f)) return FragmentClass::Safe;
  return FragmentClass::Neither;
}

/// NNF of the negation. Until has no dual operator in this fragment and is
/// expanded as !(a U b) = (!b U (!a & !b)) | G !b.
inline Formula negate(const Formula& f)
{
  switch (f.kind()) {
    case Kind::True: return Formula::ff();
    case Kind::False: return Formula::tt();
    case Kind::Atom: return Formula::not_atom(f.atom_index());
    case Kind::NotAtom: return Formula::atom(f.atom_index());
    case Kind::And:
    case Kind::Or: {
      std::vector<Formula> parts;
      parts.reserve(f.children().size());
      for (const auto& c : f.children()) parts.push_back(negate(c));
      return f.kind() == Kind::And ? Formula::disj(std::move(parts)) : Formula::conj(std::move(parts));
    }
    case Kind::Next: return Formula::next(negate(f.child(0)));
    case Kind::Eventually: return Formula::globally(negate(f.child(0)));
    case Kind::Globally: return Formula::eventually(negate(f.child(0)));
    case Kind::Until: {
      Formula na = negate(f.child(0));
      Formula nb = negate(f.child(1));
      return Formula::disj({Formula::until(nb, Formula::conj({na, nb})), Formula::globally(nb)});
    }
  }
  return f;
}

inline Formula conjoin(const Formula& a, const Formula& b) { return Formula::conj({a, b}); }

// Negations are pushed down while walking the syntax, so !!x is x.
inline Formula canonicalize(const Syntax& s, bool positive = true)
{
  using Op = Syntax::Op;
  auto sub = [&](std::size_t i, bool pol) { return canonicalize(s.args.at(i), pol); };
  switch (s.op) {
    case Op::True: return positive ? Formula::tt() : Formula::ff();
    case Op::False: return positive ? Formula::ff() : Formula::tt();
    case Op::Atom: return positive ? Formula::atom(s.atom) : Formula::not_atom(s.atom);
    case Op::Not: return sub(0, !positive);
    case Op::And:
    case Op::Or: {
      std::vector<Formula> parts;
      for (std::size_t i = 0; i < s.args.size(); ++i) parts.push_back(sub(i, positive));
      return (s.op == Op::And) == positive ? Formula::conj(std::move(parts)) : Formula::disj(std::move(parts));
    }
    case Op::Next: return Formula::next(sub(0, positive));
    case Op::Eventually: return positive ? Formula::eventually(sub(0, true)) : Formula::globally(sub(0, false));
    case Op::Globally: return positive ? Formula::globally(sub(0, true)) : Formula::eventually(sub(0, false));
    case Op::Until: {
      if (positive) return Formula::until(sub(0, true), sub(1, true));
      Formula na = sub(0, false);
      Formula nb = sub(1, false);
      return Formula::disj({Formula::until(nb, Formula::conj({na, nb})), Formula::globally(nb)});
    }
  }
  throw LtlError("bad syntax node");
}

inline Syntax to_syntax(const Formula& f)
{
  using Op = Syntax::Op;
  switch (f.kind()) {
    case Kind::True: return Syntax::leaf(Op::True);
    case Kind::False: return Syntax::leaf(Op::False);
    case Kind::Atom: return Syntax::leaf(Op::Atom, f.atom_index());
    case Kind::NotAtom: return Syntax::unary(Op::Not, Syntax::leaf(Op::Atom, f.atom_index()));
    case Kind::And:
    case Kind::Or: {
      Syntax s{f.kind() == Kind::And ? Op::And : Op::Or, -1, {}};
      for (const auto& c : f.children()) s.args.push_back(to_syntax(c));
      return s;
    }
    case Kind::Next: return Syntax::unary(Op::Next, to_syntax(f.child(0)));
    case Kind::Eventually: return Syntax::unary(Op::Eventually, to_syntax(f.child(0)));
    case Kind::Globally: return Syntax::unary(Op::Globally, to_syntax(f.child(0)));
    case Kind::Until: return Syntax::binary(Op::Until, to_syntax(f.child(0)), to_syntax(f.child(1)));
  }
  throw LtlError("bad formula node");
}

inline Formula canonicalize(const Formula& f) { return canonicalize(to_syntax(f)); }

namespace detail {

struct Token {
  enum class Type { Ident, True, False, Not, And, Or, Next, Eventually, Globally, Until, LParen, RParen, End };
  Type type;
  std::size_t pos;
  std::string text;
};

inline std::vector<Token> tokenize(std::string_view text)
{
  using T = Token::Type;
  std::vector<Token> out;
  std::size_t i = 0;
  auto ident_start = [](char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_'; };
  auto ident_char = [&](char c) { return ident_start(c) || (c >= '0' && c <= '9'); };
  while (i < text.size()) {
    const char c = text[i];
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      ++i;
      continue;
    }
    const std::size_t start = i;
    switch (c) {
      case '!': out.push_back({T::Not, start, "!"}); ++i; continue;
      case '&': out.push_back({T::And, start, "&"}); ++i; continue;
      case '|': out.push_back({T::Or, start, "|"}); ++i; continue;
      case '(': out.push_back({T::LParen, start, "("}); ++i; continue;
      case ')': out.push_back({T::RParen, start, ")"}); ++i; continue;
      default: break;
    }
    if (!ident_start(c)) throw SyntaxError(start, std::string("unexpected character '") + c + "'");
    while (i < text.size() && ident_char(text[i])) ++i;
    std::string word(text.substr(start, i - start));
    T type = T::Ident;
    if (word == "X") type = T::Next;
    else if (word == "F") type = T::Eventually;
    else if (word == "G") type = T::Globally;
    else if (word == "U") type = T::Until;
    else if (word == "true") type = T::True;
    else if (word == "false") type = T::False;
    out.push_back({type, start, std::move(word)});
  }
  out.push_back({T::End, text.size(), ""});
  return out;
}

// Precedence: unary (! X F G) > U > & > |, with U right-associative.
class Parser {
 public:
  Parser(std::string_view text, const PropositionTable& table) : tokens_(tokenize(text)), table_(table) {}

  Syntax parse()
  {
    Syntax s = parse_or();
    if (peek().type != Token::Type::End) throw SyntaxError(peek().pos, "unexpected '" + peek().text + "'");
    return s;
  }

 private:
  using T = Token::Type;
  const Token& peek() const { return tokens_[pos_]; }
  const Token& take() { return tokens_[pos_++]; }

  Syntax parse_or()
  {
    Syntax lhs = parse_and();
    while (peek().type == T::Or) {
      take();
      lhs = Syntax::binary(Syntax::Op::Or, std::move(lhs), parse_and());
    }
    return lhs;
  }

  Syntax parse_and()
  {
    Syntax lhs = parse_until();
    while (peek().type == T::And) {
      take();
      lhs = Syntax::binary(Syntax::Op::And, std::move(lhs), parse_until());
    }
    return lhs;
  }

  Syntax parse_until()
  {
    Syntax lhs = parse_unary();
    if (peek().type == T::Until) {
      take();
      return Syntax::binary(Syntax::Op::Until, std::move(lhs), parse_until());
    }
    return lhs;
  }

  Syntax parse_unary()
  {
    switch (peek().type) {
      case T::Not: take(); return Syntax::unary(Syntax::Op::Not, parse_unary());
      case T::Next: take(); return Syntax::unary(Syntax::Op::Next, parse_unary());
      case T::Eventually: take(); return Syntax::unary(Syntax::Op::Eventually, parse_unary());
      case T::Globally: take(); return Syntax::unary(Syntax::Op::Globally, parse_unary());
      default: return parse_primary();
    }
  }

  Syntax parse_primary()
  {
    const Token& t = peek();
    switch (t.type) {
      case T::True: take(); return Syntax::leaf(Syntax::Op::True);
      case T::False: take(); return Syntax::leaf(Syntax::Op::False);
      case T::Ident: {
        take();
        auto index = table_.find(t.text);
        if (!index) throw UnknownAtom(t.text);
        return Syntax::leaf(Syntax::Op::Atom, *index);
      }
      case T::LParen: {
        take();
        Syntax inner = parse_or();
        if (peek().type != T::RParen) throw SyntaxError(peek().pos, "expected ')'");
        take();
        return inner;
      }
      case T::End: throw SyntaxError(t.pos, "unexpected end of input");
      default: throw SyntaxError(t.pos, "unexpected '" + t.text + "'");
    }
  }

  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
  const PropositionTable& table_;
};

}  // namespace detail

inline Syntax parse_syntax(std::string_view text, const PropositionTable& table)
{
  return detail::Parser(text, table).parse();
}

/// Parse and canonicalize. Throws SyntaxError or UnknownAtom.
inline Formula parse(std::string_view text, const PropositionTable& table)
{
  return canonicalize(parse_syntax(text, table));
}

/// Fully parenthesized rendering that parses back to the same formula.
inline std::string to_string(const Formula& f, const PropositionTable& table)
{
  switch (f.kind()) {
    case Kind::True: return "true";
    case Kind::False: return "false";
    case Kind::Atom: return table.name(f.atom_index());
    case Kind::NotAtom: return "!" + table.name(f.atom_index());
    case Kind::And:
    case Kind::Or: {
      std::string out = "(";
      const char* sep = f.kind() == Kind::And ? " & " : " | ";
      for (std::size_t i = 0; i < f.children().size(); ++i) {
        if (i) out += sep;
        out += to_string(f.children()[i], table);
      }
      return out + ")";
    }
    case Kind::Next: return "X " + to_string(f.child(0), table);
    case Kind::Eventually: return "F " + to_string(f.child(0), table);
    case Kind::Globally: return "G " + to_string(f.child(0), table);
    case Kind::Until: return "(" + to_string(f.child(0), table) + " U " + to_string(f.child(1), table) + ")";
  }
  return "?";
}

/// Strip `#` comments from a spec file body.
inline std::string strip_comments(std::string_view text)
{
  std::string out;
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t eol = text.find('\n', i);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(i, eol - i);
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    out.append(line);
    out.push_back('\n');
    i = eol + 1;
  }
  return out;
}

inline std::string read_spec_file(const std::string& path)
{
  std::ifstream in(path);
  if (!in) throw LtlError("cannot open spec file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return strip_comments(ss.str());
}

}  // namespace ltlshield
