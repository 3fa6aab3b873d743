#include "threadfuzz/mtir.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <set>
#include <sstream>

namespace threadfuzz::ir {

SyntaxError::SyntaxError(int line, int col, const std::string& msg)
    : std::runtime_error(std::to_string(line) + ":" + std::to_string(col) + ": " + msg),
      line_(line),
      col_(col) {}

namespace {

constexpr std::array<std::string_view, 17> kOpcodeNames = {
    "const", "arith", "load", "store", "input", "inputlen", "br", "jmp", "call",
    "ret",   "exit",  "crash", "fork", "join",  "lock",     "unlock", "nop",
};

constexpr std::array<std::string_view, 16> kArithNames = {
    "add", "sub", "mul", "div", "rem", "and", "or", "xor",
    "shl", "shr", "eq",  "ne",  "lt",  "le",  "gt", "ge",
};

}  // namespace

std::string_view opcode_name(Opcode op) { return kOpcodeNames[static_cast<std::size_t>(op)]; }

std::string_view arith_name(ArithOp op) { return kArithNames[static_cast<std::size_t>(op)]; }

std::optional<ArithOp> parse_arith(std::string_view name) {
  for (std::size_t i = 0; i < kArithNames.size(); ++i) {
    if (kArithNames[i] == name) return static_cast<ArithOp>(i);
  }
  return std::nullopt;
}

bool is_terminator(Opcode op) {
  switch (op) {
    case Opcode::Branch:
    case Opcode::Jump:
    case Opcode::Return:
    case Opcode::Exit:
    case Opcode::Crash:
      return true;
    default:
      return false;
  }
}

bool is_memory_op(Opcode op) {
  return op == Opcode::LoadShared || op == Opcode::StoreShared || op == Opcode::LoadInput;
}

std::vector<std::uint32_t> Function::successors(std::uint32_t b) const {
  const Instruction& t = blocks[b].terminator();
  switch (t.op) {
    case Opcode::Branch:
      if (t.then_block == t.else_block) return {t.then_block};
      return {t.then_block, t.else_block};
    case Opcode::Jump:
      return {t.then_block};
    default:
      return {};
  }
}

std::size_t Function::instruction_count() const {
  std::size_t n = 0;
  for (const auto& b : blocks) n += b.instructions.size();
  return n;
}

std::optional<std::uint32_t> Program::find_function(std::string_view name) const {
  for (std::uint32_t i = 0; i < functions.size(); ++i) {
    if (functions[i].name == name) return i;
  }
  return std::nullopt;
}

std::optional<std::uint32_t> Program::find_global(std::string_view name) const {
  for (std::uint32_t i = 0; i < globals.size(); ++i) {
    if (globals[i].name == name) return i;
  }
  return std::nullopt;
}

const Instruction& Program::at(InstrId id) const {
  return functions[id.function].blocks[id.block].instructions[id.index];
}

bool Program::has_mutex(std::uint32_t id) const {
  return std::binary_search(mutexes.begin(), mutexes.end(), id);
}

std::uint32_t Program::flat_index(InstrId id) const {
  return block_offsets_[id.function][id.block] + id.index;
}

std::string Program::describe(InstrId id) const {
  const Function& f = functions[id.function];
  return f.name + ":" + f.blocks[id.block].id + ":" + std::to_string(id.index);
}

void Program::reindex() {
  flat_ids_.clear();
  block_offsets_.assign(functions.size(), {});
  for (std::uint32_t f = 0; f < functions.size(); ++f) {
    for (std::uint32_t b = 0; b < functions[f].blocks.size(); ++b) {
      block_offsets_[f].push_back(static_cast<std::uint32_t>(flat_ids_.size()));
      for (std::uint32_t i = 0; i < functions[f].blocks[b].instructions.size(); ++i) {
        flat_ids_.push_back({f, b, i});
      }
    }
  }
}

void validate(const Program& program) {
  if (program.functions.empty()) throw ValidationError("program has no functions");
  if (program.entry >= program.functions.size()) throw ValidationError("entry function out of range");
  if (!program.functions[program.entry].params.empty()) {
    throw ValidationError("entry function '" + program.functions[program.entry].name +
                          "' must take no parameters");
  }
  std::set<std::string> fn_names;
  for (const auto& f : program.functions) {
    if (!fn_names.insert(f.name).second) throw ValidationError("duplicate function '" + f.name + "'");
  }
  std::set<std::string> global_names;
  for (const auto& g : program.globals) {
    if (!global_names.insert(g.name).second) throw ValidationError("duplicate global '" + g.name + "'");
  }
  for (std::size_t i = 1; i < program.mutexes.size(); ++i) {
    if (program.mutexes[i - 1] >= program.mutexes[i]) throw ValidationError("mutex ids must be unique and sorted");
  }

  for (const auto& f : program.functions) {
    const std::string where = "function '" + f.name + "'";
    if (f.blocks.empty()) throw ValidationError(where + " has no blocks");
    if (f.entry_block >= f.blocks.size()) throw ValidationError(where + " entry block out of range");
    if (f.locals.size() < f.params.size()) throw ValidationError(where + " has fewer locals than params");
    std::set<std::string> block_ids;
    for (const auto& b : f.blocks) {
      const std::string bwhere = where + " block '" + b.id + "'";
      if (!block_ids.insert(b.id).second) throw ValidationError(where + " has duplicate block '" + b.id + "'");
      if (b.instructions.empty()) throw ValidationError(bwhere + " is empty");
      for (std::size_t i = 0; i < b.instructions.size(); ++i) {
        const Instruction& inst = b.instructions[i];
        const bool last = i + 1 == b.instructions.size();
        if (is_terminator(inst.op) != last) {
          throw ValidationError(bwhere + (last ? " does not end with a terminator"
                                               : " has a terminator before its end"));
        }
        if (inst.dst && *inst.dst >= f.locals.size()) throw ValidationError(bwhere + " local slot out of range");
        for (const auto& o : inst.operands) {
          if (o.kind == Operand::Kind::Local && o.index >= f.locals.size()) {
            throw ValidationError(bwhere + " local slot out of range");
          }
          if (o.kind == Operand::Kind::Shared &&
              (inst.op != Opcode::StoreShared || o.index != inst.target)) {
            throw ValidationError(bwhere + ": '@' may only name the stored global");
          }
        }
        switch (inst.op) {
          case Opcode::Branch:
            if (inst.then_block >= f.blocks.size() || inst.else_block >= f.blocks.size()) {
              throw ValidationError(bwhere + " branches to an undefined block");
            }
            break;
          case Opcode::Jump:
            if (inst.then_block >= f.blocks.size()) throw ValidationError(bwhere + " jumps to an undefined block");
            break;
          case Opcode::Call:
          case Opcode::Fork: {
            if (inst.target >= program.functions.size()) {
              throw ValidationError(bwhere + " calls undefined function '" + inst.symbol + "'");
            }
            const Function& callee = program.functions[inst.target];
            if (inst.op == Opcode::Call && inst.operands.size() != callee.params.size()) {
              throw ValidationError(bwhere + " passes " + std::to_string(inst.operands.size()) +
                                    " arguments to '" + callee.name + "'");
            }
            if (inst.op == Opcode::Fork && (inst.operands.size() != 1 || callee.params.size() > 1)) {
              throw ValidationError(bwhere + " forks '" + callee.name + "' which must take at most one parameter");
            }
            break;
          }
          case Opcode::Lock:
          case Opcode::Unlock:
            if (!program.has_mutex(inst.target)) {
              throw ValidationError(bwhere + " uses undeclared mutex " + std::to_string(inst.target));
            }
            break;
          case Opcode::LoadInput:
            if (inst.operands.size() != 1 ||
                (inst.operands[0].kind == Operand::Kind::Imm && inst.operands[0].imm < 0)) {
              throw ValidationError(bwhere + " has a negative input offset");
            }
            break;
          case Opcode::LoadShared:
          case Opcode::StoreShared:
            if (inst.target != kUndeclaredGlobal && inst.target >= program.globals.size()) {
              throw ValidationError(bwhere + " global index out of range");
            }
            break;
          default:
            break;
        }
      }
    }
  }
}

FunctionCounts count_instructions(const Function& fn) {
  FunctionCounts counts;
  counts.blocks = fn.blocks.size();
  for (const auto& b : fn.blocks) {
    BlockCounts bc;
    bc.instructions = b.instructions.size();
    bc.memory_instructions = static_cast<std::size_t>(std::count_if(
        b.instructions.begin(), b.instructions.end(), [](const Instruction& i) { return is_memory_op(i.op); }));
    counts.instructions += bc.instructions;
    counts.per_block.push_back(bc);
  }
  return counts;
}

Program load_program_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_program(ss.str());
}

// ---------------------------------------------------------------------------
// Printing

namespace {

std::string operand_text(const Program& p, const Function& fn, const Operand& o) {
  switch (o.kind) {
    case Operand::Kind::Imm:
      return std::to_string(o.imm);
    case Operand::Kind::Local:
      return fn.locals[o.index];
    case Operand::Kind::Shared:
      return "@" + (o.index < p.globals.size() ? p.globals[o.index].name : std::string("?"));
  }
  return {};
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string print_instruction(const Program& p, const Function& fn, const Instruction& inst) {
  std::string out;
  if (inst.dst) out = fn.locals[*inst.dst] + " = ";
  auto opnd = [&](std::size_t i) { return operand_text(p, fn, inst.operands[i]); };
  switch (inst.op) {
    case Opcode::Const:
      return out + "const " + opnd(0);
    case Opcode::Arith:
      return out + std::string(arith_name(*inst.arith)) + " " + opnd(0) + " " + opnd(1);
    case Opcode::LoadShared:
      return out + "load " + inst.symbol;
    case Opcode::StoreShared:
      out = "store " + inst.symbol + " = ";
      if (inst.arith) return out + std::string(arith_name(*inst.arith)) + " " + opnd(0) + " " + opnd(1);
      return out + opnd(0);
    case Opcode::LoadInput:
      return out + "input " + opnd(0);
    case Opcode::InputLen:
      return out + "inputlen";
    case Opcode::Call:
    case Opcode::Fork: {
      out += inst.op == Opcode::Call ? "call " : "fork ";
      out += inst.symbol + "(";
      for (std::size_t i = 0; i < inst.operands.size(); ++i) {
        if (i) out += ", ";
        out += opnd(i);
      }
      return out + ")";
    }
    case Opcode::Join:
      return "join " + opnd(0);
    case Opcode::Lock:
      return "lock " + std::to_string(inst.target);
    case Opcode::Unlock:
      return "unlock " + std::to_string(inst.target);
    case Opcode::Nop:
      return "nop";
    case Opcode::Branch:
      return "br " + opnd(0) + " " + fn.blocks[inst.then_block].id + " " + fn.blocks[inst.else_block].id;
    case Opcode::Jump:
      return "jmp " + fn.blocks[inst.then_block].id;
    case Opcode::Return:
      return inst.operands.empty() ? "ret" : "ret " + opnd(0);
    case Opcode::Exit:
      return "exit " + opnd(0);
    case Opcode::Crash:
      return "crash " + quote(inst.symbol);
  }
  return out;
}

std::string print_program(const Program& p) {
  std::ostringstream out;
  for (auto m : p.mutexes) out << "mutex " << m << "\n";
  for (const auto& g : p.globals) out << "global " << g.name << " = " << g.initial << "\n";
  if (p.functions[p.entry].name != "main") out << "entry " << p.functions[p.entry].name << "\n";
  for (const auto& f : p.functions) {
    out << "\nfn " << f.name << "(";
    for (std::size_t i = 0; i < f.params.size(); ++i) out << (i ? ", " : "") << f.params[i];
    out << ") {\n";
    // The entry block is printed first so that reparsing keeps entry_block.
    std::vector<std::uint32_t> order{f.entry_block};
    for (std::uint32_t b = 0; b < f.blocks.size(); ++b) {
      if (b != f.entry_block) order.push_back(b);
    }
    for (auto b : order) {
      out << f.blocks[b].id << ":\n";
      for (const auto& inst : f.blocks[b].instructions) out << "  " << print_instruction(p, f, inst) << "\n";
    }
    out << "}\n";
  }
  return out.str();
}

}  // namespace threadfuzz::ir
