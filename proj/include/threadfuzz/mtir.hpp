// Concurrent mini-IR: program model, text parser, printer and validator.
//
// A program is a set of functions over 64-bit wrapping integers. Shared
// state lives in globals; thread creation, joining and mutexes are
// first-class instructions so static analysis needs no pointer analysis.
// See docs/mtir-grammar.md for the concrete syntax.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace threadfuzz::ir {

class SyntaxError : public std::runtime_error {
 public:
  SyntaxError(int line, int col, const std::string& msg);
  int line() const { return line_; }
  int col() const { return col_; }

 private:
  int line_;
  int col_;
};

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Opcode : std::uint8_t {
  Const,
  Arith,
  LoadShared,
  StoreShared,
  LoadInput,
  InputLen,
  Branch,
  Jump,
  Call,
  Return,
  Exit,
  Crash,
  Fork,
  Join,
  Lock,
  Unlock,
  Nop,
};

enum class ArithOp : std::uint8_t {
  Add, Sub, Mul, Div, Rem, And, Or, Xor, Shl, Shr, Eq, Ne, Lt, Le, Gt, Ge,
};

std::string_view opcode_name(Opcode op);
std::string_view arith_name(ArithOp op);
std::optional<ArithOp> parse_arith(std::string_view name);

bool is_terminator(Opcode op);
// LoadShared, StoreShared and LoadInput: the N_m(b) numerator.
bool is_memory_op(Opcode op);

struct Operand {
  enum class Kind : std::uint8_t { Imm, Local, Shared };
  Kind kind = Kind::Imm;
  std::int64_t imm = 0;
  std::uint32_t index = 0;  // local slot or global index

  static Operand immediate(std::int64_t v) { return {Kind::Imm, v, 0}; }
  static Operand local(std::uint32_t slot) { return {Kind::Local, 0, slot}; }
  static Operand shared(std::uint32_t global) { return {Kind::Shared, 0, global}; }
  friend bool operator==(const Operand&, const Operand&) = default;
};

inline constexpr std::uint32_t kUndeclaredGlobal = 0xffffffffu;

struct Instruction {
  Opcode op = Opcode::Nop;
  std::optional<ArithOp> arith;          // Arith; StoreShared with a binary expression
  std::optional<std::uint32_t> dst;      // destination local slot
  std::vector<Operand> operands;
  // Global index (Load/StoreShared), callee index (Call/Fork) or mutex id
  // (Lock/Unlock). kUndeclaredGlobal for a global that was never declared.
  std::uint32_t target = 0;
  std::string symbol;                    // global name, callee name or crash tag
  std::uint32_t then_block = 0;          // Branch then / Jump target
  std::uint32_t else_block = 0;
  int line = 0;

  friend bool operator==(const Instruction& a, const Instruction& b) {
    return a.op == b.op && a.arith == b.arith && a.dst == b.dst &&
           a.operands == b.operands && a.target == b.target && a.symbol == b.symbol &&
           a.then_block == b.then_block && a.else_block == b.else_block;
  }
};

struct BasicBlock {
  std::string id;
  std::vector<Instruction> instructions;

  const Instruction& terminator() const { return instructions.back(); }
  friend bool operator==(const BasicBlock&, const BasicBlock&) = default;
};

struct Function {
  std::string name;
  std::vector<std::string> params;
  std::vector<std::string> locals;  // params occupy the first slots
  std::vector<BasicBlock> blocks;
  std::uint32_t entry_block = 0;

  // Successor block indices of block b (deduplicated, in branch order).
  std::vector<std::uint32_t> successors(std::uint32_t b) const;
  std::size_t instruction_count() const;
  friend bool operator==(const Function&, const Function&) = default;
};

struct GlobalVar {
  std::string name;
  std::int64_t initial = 0;
  friend bool operator==(const GlobalVar&, const GlobalVar&) = default;
};

// Position of one instruction inside a program.
struct InstrId {
  std::uint32_t function = 0;
  std::uint32_t block = 0;
  std::uint32_t index = 0;
  friend auto operator<=>(const InstrId&, const InstrId&) = default;
};

struct Program {
  std::vector<Function> functions;  // declaration order
  std::vector<GlobalVar> globals;
  std::vector<std::uint32_t> mutexes;  // declared mutex ids, sorted
  std::uint32_t entry = 0;             // index of the entry function

  std::optional<std::uint32_t> find_function(std::string_view name) const;
  std::optional<std::uint32_t> find_global(std::string_view name) const;
  const Instruction& at(InstrId id) const;
  bool has_mutex(std::uint32_t id) const;

  // Dense numbering of all instructions in declaration order.
  std::size_t instruction_count() const { return flat_ids_.size(); }
  std::uint32_t flat_index(InstrId id) const;
  InstrId from_flat(std::uint32_t flat) const { return flat_ids_[flat]; }
  std::string describe(InstrId id) const;  // "fn:block:index"

  // Recomputes the flat numbering; called by the parser after construction.
  void reindex();

  friend bool operator==(const Program& a, const Program& b) {
    return a.functions == b.functions && a.globals == b.globals && a.mutexes == b.mutexes &&
           a.entry == b.entry;
  }

 private:
  std::vector<InstrId> flat_ids_;
  std::vector<std::vector<std::uint32_t>> block_offsets_;  // [fn][block] -> first flat id
};

// Parses and validates. Throws SyntaxError or ValidationError.
Program parse_program(std::string_view text);
Program load_program_file(const std::string& path);

// Checks the structural invariants. Throws ValidationError.
void validate(const Program& program);

// Canonical text form; parse_program(print_program(p)) == p.
std::string print_program(const Program& program);
std::string print_instruction(const Program& program, const Function& fn, const Instruction& inst);

struct BlockCounts {
  std::size_t instructions = 0;         // N(b)
  std::size_t memory_instructions = 0;  // N_m(b)
};

struct FunctionCounts {
  std::size_t blocks = 0;
  std::size_t instructions = 0;
  std::vector<BlockCounts> per_block;
};

FunctionCounts count_instructions(const Function& fn);

}  // namespace threadfuzz::ir
