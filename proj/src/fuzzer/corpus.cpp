#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iterator>

#include "json.hpp"
#include "threadfuzz/fuzzer.hpp"

namespace threadfuzz::fuzz {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Bytes read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_bytes(const fs::path& p, std::span<const std::uint8_t> data) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t fnv(std::string_view s) {
  std::uint64_t h = vm::kFnvOffsetBasis;
  for (unsigned char c : s) h = (h ^ c) * vm::kFnvPrime;
  return h;
}

json seed_json(const Seed& s) {
  json j;
  j["id"] = s.id;
  j["parent"] = s.parent ? json(*s.parent) : json(nullptr);
  j["initial"] = s.initial;
  j["length"] = s.bytes.size();
  j["is_mt"] = s.is_mt;
  j["c_m"] = s.c_m;
  j["n_c"] = s.n_c;
  j["avg_exec_steps"] = s.avg_exec_steps;
  j["discovered_at"] = s.discovered_at;
  j["covered_new_trace"] = s.covered_new_trace;
  j["covered_new_mt_ctx"] = s.covered_new_mt_ctx;
  j["schedule_seed"] = s.schedule_seed;
  return j;
}

}  // namespace

std::string seed_file_name(std::uint32_t id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "id_%06u", id);
  return buf;
}

std::string crash_dir_name(const std::string& key) { return "key_" + hex64(fnv(key)); }

void write_corpus(const fs::path& dir, const CampaignReport& report) {
  fs::create_directories(dir / "queue");
  fs::create_directories(dir / "crashes");
  for (const auto& s : report.queue) {
    const auto base = dir / "queue" / seed_file_name(s.id);
    write_bytes(base, s.bytes);
    std::ofstream(base.string() + ".json") << seed_json(s).dump(2) << "\n";
  }
  for (const auto& c : report.crashes) {
    const auto cdir = dir / "crashes" / crash_dir_name(c.key);
    fs::create_directories(cdir);
    write_bytes(cdir / "input", c.input);
    json j;
    j["key"] = c.key;
    j["tag"] = c.tag;
    j["frames"] = c.frames;
    j["is_mt"] = c.is_mt;
    j["found_at"] = c.found_at;
    j["schedule_seed"] = c.schedule_seed;
    j["hits"] = c.hits;
    std::ofstream(cdir / "info.json") << j.dump(2) << "\n";
  }
}

std::vector<InitialSeed> read_seed_dir(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() != ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<InitialSeed> out;
  for (const auto& f : files) out.push_back({read_bytes(f), std::nullopt});
  return out;
}

std::vector<Seed> read_queue(const fs::path& corpus) {
  std::vector<Seed> out;
  const auto qdir = corpus / "queue";
  if (!fs::exists(qdir)) return out;
  std::vector<fs::path> sidecars;
  for (const auto& e : fs::directory_iterator(qdir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") sidecars.push_back(e.path());
  }
  std::sort(sidecars.begin(), sidecars.end());
  for (const auto& sc : sidecars) {
    std::ifstream in(sc);
    const json j = json::parse(in);
    Seed s;
    s.id = j.at("id").get<std::uint32_t>();
    if (!j.at("parent").is_null()) s.parent = j.at("parent").get<std::uint32_t>();
    s.initial = j.at("initial").get<bool>();
    s.is_mt = j.at("is_mt").get<bool>();
    s.c_m = j.at("c_m").get<std::uint32_t>();
    s.n_c = j.at("n_c").get<std::uint32_t>();
    s.avg_exec_steps = j.at("avg_exec_steps").get<double>();
    s.discovered_at = j.at("discovered_at").get<std::uint64_t>();
    s.covered_new_trace = j.at("covered_new_trace").get<bool>();
    s.covered_new_mt_ctx = j.at("covered_new_mt_ctx").get<bool>();
    s.schedule_seed = j.at("schedule_seed").get<std::uint64_t>();
    auto data = sc;
    data.replace_extension();
    s.bytes = read_bytes(data);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace threadfuzz::fuzz
