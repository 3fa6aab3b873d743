#include <algorithm>
#include <cctype>
#include <charconv>
#include <map>

#include "threadfuzz/mtir.hpp"

namespace threadfuzz::ir {

namespace {

enum class Tok { Ident, Int, String, Newline, LBrace, RBrace, LParen, RParen, Comma, Colon, Equals, At, End };

struct Token {
  Tok kind = Tok::End;
  std::string text;
  std::int64_t value = 0;
  int line = 1;
  int col = 1;
};

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    while (true) {
      skip_blanks();
      Token t;
      t.line = line_;
      t.col = col_;
      if (pos_ >= src_.size()) {
        t.kind = Tok::End;
        out.push_back(t);
        return out;
      }
      const char c = src_[pos_];
      if (c == '\n' || c == ';') {
        t.kind = Tok::Newline;
        advance();
      } else if (c == '{' || c == '}' || c == '(' || c == ')' || c == ',' || c == ':' || c == '=' || c == '@') {
        static const std::map<char, Tok> punct = {{'{', Tok::LBrace}, {'}', Tok::RBrace}, {'(', Tok::LParen},
                                                  {')', Tok::RParen}, {',', Tok::Comma},  {':', Tok::Colon},
                                                  {'=', Tok::Equals}, {'@', Tok::At}};
        t.kind = punct.at(c);
        t.text = std::string(1, c);
        advance();
      } else if (std::isdigit(static_cast<unsigned char>(c)) ||
                 (c == '-' && pos_ + 1 < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_ + 1])))) {
        const std::size_t start = pos_;
        advance();
        while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) advance();
        t.kind = Tok::Int;
        t.text = std::string(src_.substr(start, pos_ - start));
        auto [ptr, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), t.value);
        if (ec != std::errc() || ptr != t.text.data() + t.text.size()) {
          throw SyntaxError(t.line, t.col, "integer literal out of range: " + t.text);
        }
      } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        const std::size_t start = pos_;
        while (pos_ < src_.size() && (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_' ||
                                      src_[pos_] == '.')) {
          advance();
        }
        t.kind = Tok::Ident;
        t.text = std::string(src_.substr(start, pos_ - start));
      } else if (c == '"') {
        advance();
        std::string s;
        while (true) {
          if (pos_ >= src_.size() || src_[pos_] == '\n') throw SyntaxError(t.line, t.col, "unterminated string");
          char d = src_[pos_];
          advance();
          if (d == '"') break;
          if (d == '\\') {
            if (pos_ >= src_.size()) throw SyntaxError(t.line, t.col, "unterminated string");
            d = src_[pos_];
            advance();
          }
          s += d;
        }
        t.kind = Tok::String;
        t.text = std::move(s);
      } else {
        throw SyntaxError(line_, col_, std::string("unexpected character '") + c + "'");
      }
      out.push_back(std::move(t));
    }
  }

 private:
  void advance() {
    if (src_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  void skip_blanks() {
    while (pos_ < src_.size()) {
      const char c = src_[pos_];
      if (c == ' ' || c == '\t' || c == '\r') {
        advance();
      } else if (c == '#') {
        while (pos_ < src_.size() && src_[pos_] != '\n') advance();
      } else {
        break;
      }
    }
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
};

// Names that are resolved once the whole program has been read.
struct PendingRef {
  std::uint32_t function;
  std::uint32_t block;
  std::uint32_t index;
  std::string then_label;
  std::string else_label;
  int line;
  int col;
};

class Parser {
 public:
  explicit Parser(std::vector<Token> toks) : toks_(std::move(toks)) {}

  Program run() {
    skip_newlines();
    while (peek().kind == Tok::Ident && peek().text != "fn") {
      header();
      skip_newlines();
    }
    while (peek().kind != Tok::End) {
      if (peek().kind != Tok::Ident || peek().text != "fn") fail(peek(), "expected 'fn'");
      function();
      skip_newlines();
    }
    if (prog_.functions.empty()) fail(peek(), "program has no functions");
    std::sort(prog_.mutexes.begin(), prog_.mutexes.end());
    if (std::adjacent_find(prog_.mutexes.begin(), prog_.mutexes.end()) != prog_.mutexes.end()) {
      throw ValidationError("duplicate mutex declaration");
    }
    resolve();
    prog_.reindex();
    validate(prog_);
    return std::move(prog_);
  }

 private:
  [[noreturn]] void fail(const Token& t, const std::string& msg) {
    throw SyntaxError(t.line, t.col, msg + (t.kind == Tok::End ? " at end of input" : " near '" + t.text + "'"));
  }

  const Token& peek(std::size_t ahead = 0) const { return toks_[std::min(pos_ + ahead, toks_.size() - 1)]; }
  const Token& next() {
    const Token& t = toks_[pos_];
    if (pos_ + 1 < toks_.size()) ++pos_;
    return t;
  }
  const Token& expect(Tok kind, const char* what) {
    if (peek().kind != kind) fail(peek(), std::string("expected ") + what);
    return next();
  }
  bool accept(Tok kind) {
    if (peek().kind != kind) return false;
    next();
    return true;
  }
  void skip_newlines() {
    while (peek().kind == Tok::Newline) next();
  }
  void end_of_instruction() {
    if (peek().kind == Tok::Newline) {
      skip_newlines();
    } else if (peek().kind != Tok::RBrace) {
      fail(peek(), "expected end of instruction");
    }
  }

  void header() {
    const Token& kw = next();
    if (kw.text == "mutex") {
      const Token& id = expect(Tok::Int, "mutex id");
      if (id.value < 0 || id.value > 0xffff) fail(id, "mutex id out of range");
      prog_.mutexes.push_back(static_cast<std::uint32_t>(id.value));
    } else if (kw.text == "global") {
      const Token& name = expect(Tok::Ident, "global name");
      expect(Tok::Equals, "'='");
      const Token& v = expect(Tok::Int, "initial value");
      if (prog_.find_global(name.text)) throw ValidationError("duplicate global '" + name.text + "'");
      prog_.globals.push_back({name.text, v.value});
    } else if (kw.text == "entry") {
      entry_name_ = expect(Tok::Ident, "function name").text;
    } else {
      fail(kw, "expected 'mutex', 'global', 'entry' or 'fn'");
    }
    if (peek().kind != Tok::End && peek().kind != Tok::Newline) fail(peek(), "expected end of line");
  }

  std::uint32_t local_slot(Function& fn, const std::string& name) {
    for (std::uint32_t i = 0; i < fn.locals.size(); ++i) {
      if (fn.locals[i] == name) return i;
    }
    fn.locals.push_back(name);
    return static_cast<std::uint32_t>(fn.locals.size() - 1);
  }

  Operand operand(Function& fn) {
    const Token& t = peek();
    if (t.kind == Tok::Int) return Operand::immediate(next().value);
    if (t.kind == Tok::Ident && !is_keyword(t.text)) return Operand::local(local_slot(fn, next().text));
    fail(t, "expected operand");
  }

  static bool is_keyword(const std::string& s) {
    static const char* kws[] = {"const", "load", "store", "input", "inputlen", "call", "fork", "join", "lock",
                                "unlock", "nop", "br", "jmp", "ret", "exit", "crash", "fn"};
    return std::any_of(std::begin(kws), std::end(kws), [&](const char* k) { return s == k; }) ||
           parse_arith(s).has_value();
  }

  std::uint32_t global_ref(const std::string& name) {
    auto g = prog_.find_global(name);
    return g ? *g : kUndeclaredGlobal;
  }

  void function() {
    next();  // fn
    Function fn;
    const Token& name = expect(Tok::Ident, "function name");
    fn.name = name.text;
    if (is_keyword(fn.name)) fail(name, "reserved word used as function name");
    if (accept(Tok::LParen)) {
      if (!accept(Tok::RParen)) {
        do {
          const Token& p = expect(Tok::Ident, "parameter name");
          if (std::find(fn.params.begin(), fn.params.end(), p.text) != fn.params.end()) {
            throw ValidationError("duplicate parameter '" + p.text + "' in '" + fn.name + "'");
          }
          fn.params.push_back(p.text);
        } while (accept(Tok::Comma));
        expect(Tok::RParen, "')'");
      }
    }
    fn.locals = fn.params;
    skip_newlines();
    expect(Tok::LBrace, "'{'");
    skip_newlines();
    const auto fn_index = static_cast<std::uint32_t>(prog_.functions.size());
    std::map<std::string, std::uint32_t> labels;
    std::vector<PendingRef> pending;
    while (peek().kind != Tok::RBrace) {
      const Token& label = expect(Tok::Ident, "block label");
      expect(Tok::Colon, "':' after block label");
      if (labels.count(label.text)) throw ValidationError("duplicate block '" + label.text + "' in '" + fn.name + "'");
      labels[label.text] = static_cast<std::uint32_t>(fn.blocks.size());
      BasicBlock block;
      block.id = label.text;
      skip_newlines();
      while (true) {
        if (peek().kind == Tok::RBrace || peek().kind == Tok::End) break;
        if (peek().kind == Tok::Ident && peek(1).kind == Tok::Colon) break;
        auto inst = instruction(fn, pending, fn_index, static_cast<std::uint32_t>(fn.blocks.size()),
                                static_cast<std::uint32_t>(block.instructions.size()));
        block.instructions.push_back(std::move(inst));
        end_of_instruction();
      }
      if (block.instructions.empty()) throw ValidationError("block '" + block.id + "' in '" + fn.name + "' is empty");
      fn.blocks.push_back(std::move(block));
    }
    expect(Tok::RBrace, "'}'");
    if (fn.blocks.empty()) throw ValidationError("function '" + fn.name + "' has no blocks");
    for (auto& ref : pending) {
      auto& inst = fn.blocks[ref.block].instructions[ref.index];
      auto then_it = labels.find(ref.then_label);
      if (then_it == labels.end()) {
        throw ValidationError(std::to_string(ref.line) + ":" + std::to_string(ref.col) + ": branch to undefined block '" +
                              ref.then_label + "' in '" + fn.name + "'");
      }
      inst.then_block = then_it->second;
      if (inst.op == Opcode::Branch) {
        auto else_it = labels.find(ref.else_label);
        if (else_it == labels.end()) {
          throw ValidationError(std::to_string(ref.line) + ":" + std::to_string(ref.col) +
                                ": branch to undefined block '" + ref.else_label + "' in '" + fn.name + "'");
        }
        inst.else_block = else_it->second;
      }
    }
    if (prog_.find_function(fn.name)) throw ValidationError("duplicate function '" + fn.name + "'");
    prog_.functions.push_back(std::move(fn));
  }

  Instruction instruction(Function& fn, std::vector<PendingRef>& pending, std::uint32_t fi, std::uint32_t bi,
                          std::uint32_t ii) {
    Instruction inst;
    const Token& first = peek();
    inst.line = first.line;
    if (first.kind != Tok::Ident) fail(first, "expected instruction");

    if (peek(1).kind == Tok::Equals && !is_keyword(first.text) ) {
      const std::string dst_name = next().text;
      next();  // '='
      const Token& op = expect(Tok::Ident, "operation");
      inst.dst = local_slot(fn, dst_name);
      if (op.text == "const") {
        inst.op = Opcode::Const;
        inst.operands.push_back(Operand::immediate(expect(Tok::Int, "integer").value));
      } else if (auto a = parse_arith(op.text)) {
        inst.op = Opcode::Arith;
        inst.arith = a;
        inst.operands.push_back(operand(fn));
        inst.operands.push_back(operand(fn));
      } else if (op.text == "load") {
        inst.op = Opcode::LoadShared;
        inst.symbol = expect(Tok::Ident, "global name").text;
        inst.target = global_ref(inst.symbol);
      } else if (op.text == "input") {
        inst.op = Opcode::LoadInput;
        inst.operands.push_back(operand(fn));
        if (inst.operands[0].kind == Operand::Kind::Imm && inst.operands[0].imm < 0) {
          throw ValidationError(std::to_string(op.line) + ": negative input offset");
        }
      } else if (op.text == "inputlen") {
        inst.op = Opcode::InputLen;
      } else if (op.text == "call" || op.text == "fork") {
        call_like(fn, inst, op.text == "call" ? Opcode::Call : Opcode::Fork);
      } else {
        fail(op, "unknown operation");
      }
      return inst;
    }

    const Token& kw = next();
    const std::string& k = kw.text;
    if (k == "store") {
      inst.op = Opcode::StoreShared;
      inst.symbol = expect(Tok::Ident, "global name").text;
      inst.target = global_ref(inst.symbol);
      expect(Tok::Equals, "'='");
      auto soperand = [&]() {
        if (accept(Tok::At)) {
          const Token& g = expect(Tok::Ident, "global name after '@'");
          if (g.text != inst.symbol) fail(g, "'@' may only name the stored global");
          return Operand::shared(inst.target);
        }
        return operand(fn);
      };
      if (peek().kind == Tok::Ident && parse_arith(peek().text) && peek(1).kind != Tok::Newline &&
          peek(1).kind != Tok::RBrace) {
        inst.arith = parse_arith(next().text);
        inst.operands.push_back(soperand());
        inst.operands.push_back(soperand());
      } else {
        inst.operands.push_back(soperand());
      }
    } else if (k == "call" || k == "fork") {
      call_like(fn, inst, k == "call" ? Opcode::Call : Opcode::Fork);
    } else if (k == "join") {
      inst.op = Opcode::Join;
      inst.operands.push_back(operand(fn));
    } else if (k == "lock" || k == "unlock") {
      inst.op = k == "lock" ? Opcode::Lock : Opcode::Unlock;
      const Token& id = expect(Tok::Int, "mutex id");
      if (id.value < 0 || id.value > 0xffff) fail(id, "mutex id out of range");
      inst.target = static_cast<std::uint32_t>(id.value);
    } else if (k == "nop") {
      inst.op = Opcode::Nop;
    } else if (k == "br") {
      inst.op = Opcode::Branch;
      inst.operands.push_back(operand(fn));
      const Token& t = expect(Tok::Ident, "then label");
      const Token& e = expect(Tok::Ident, "else label");
      pending.push_back({fi, bi, ii, t.text, e.text, t.line, t.col});
    } else if (k == "jmp") {
      inst.op = Opcode::Jump;
      const Token& t = expect(Tok::Ident, "jump label");
      pending.push_back({fi, bi, ii, t.text, {}, t.line, t.col});
    } else if (k == "ret") {
      inst.op = Opcode::Return;
      if (peek().kind == Tok::Int || (peek().kind == Tok::Ident && !is_keyword(peek().text) && peek(1).kind != Tok::Colon &&
                                      peek(1).kind != Tok::Equals)) {
        inst.operands.push_back(operand(fn));
      }
    } else if (k == "exit") {
      inst.op = Opcode::Exit;
      inst.operands.push_back(operand(fn));
    } else if (k == "crash") {
      inst.op = Opcode::Crash;
      const Token& tag = peek();
      if (tag.kind != Tok::String && tag.kind != Tok::Ident) fail(tag, "expected crash tag");
      inst.symbol = next().text;
    } else {
      fail(kw, "unknown instruction");
    }
    return inst;
  }

  void call_like(Function& fn, Instruction& inst, Opcode op) {
    inst.op = op;
    const Token& callee = expect(Tok::Ident, "function name");
    inst.symbol = callee.text;
    expect(Tok::LParen, "'('");
    if (!accept(Tok::RParen)) {
      do {
        inst.operands.push_back(operand(fn));
      } while (accept(Tok::Comma));
      expect(Tok::RParen, "')'");
    }
  }

  void resolve() {
    for (auto& f : prog_.functions) {
      for (auto& b : f.blocks) {
        for (auto& inst : b.instructions) {
          if (inst.op == Opcode::Call || inst.op == Opcode::Fork) {
            auto idx = prog_.find_function(inst.symbol);
            if (!idx) throw ValidationError("line " + std::to_string(inst.line) + ": undefined function '" + inst.symbol + "'");
            inst.target = *idx;
          }
        }
      }
    }
    auto entry = prog_.find_function(entry_name_);
    if (!entry) throw ValidationError("entry function '" + entry_name_ + "' is not defined");
    prog_.entry = *entry;
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
  Program prog_;
  std::string entry_name_ = "main";
};

}  // namespace

Program parse_program(std::string_view text) {
  Lexer lexer(text);
  Parser parser(lexer.run());
  return parser.run();
}

}  // namespace threadfuzz::ir
