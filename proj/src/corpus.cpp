#include "incline/corpus.hpp"

#include <algorithm>
#include <sstream>

#include "incline/ioutil.hpp"
#include "incline/rng.hpp"

namespace incline {

namespace {

// stream tags so every draw family is independent of the others
constexpr uint64_t kStreamTaskPerm = 101;
constexpr uint64_t kStreamShiftPerm = 102;
constexpr uint64_t kStreamTrain = 1;
constexpr uint64_t kStreamVal = 2;
constexpr uint64_t kStreamTest = 3;
constexpr uint64_t kStreamParallelTask = 10;
constexpr uint64_t kStreamParallelShift = 11;

void validate_spec(const BilingualSpec& s) {
  auto bad = [](const std::string& msg) { throw Error(ErrorCode::InvalidSpec, msg); };
  if (s.n_content_tokens < 4 || s.n_content_tokens % 2 != 0) {
    bad("n_content_tokens must be even and >= 4");
  }
  if (s.task == TaskKind::MajorityVote && (s.seq_len < 1 || s.seq_len % 2 == 0)) {
    bad("MajorityVote needs an odd seq_len so no item can tie");
  }
  if (s.task == TaskKind::AntisymmetricPair && s.seq_len < 2) {
    bad("AntisymmetricPair needs seq_len >= 2");
  }
  if (s.n_train < 1 || s.n_val < 1 || s.n_test < 1 || s.n_parallel < 1) {
    bad("split sizes must be >= 1");
  }
}

struct Pools {
  int n;             // tokens per language pool
  int a_task;        // first A task content id
  int b_task;
  int a_shift;
  int b_shift;
};

Pools pools_of(const BilingualSpec& s) {
  const int n = s.n_content_tokens;
  return Pools{n, 2, 2 + n, 2 + 2 * n, 2 + 3 * n};
}

std::vector<int> permutation(uint64_t seed, uint64_t stream, int n) {
  std::vector<int> perm(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
  CounterRng rng(derive_seed(seed, stream));
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.below(static_cast<uint64_t>(i) + 1));
    std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
  }
  return perm;
}

std::vector<TaskItem> gen_majority_items(const BilingualSpec& s, uint64_t stream, int count,
                                         int pool_base) {
  const Pools p = pools_of(s);
  const int half = p.n / 2;
  CounterRng rng(derive_seed(s.mapping_seed, stream));
  std::vector<TaskItem> items;
  items.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    const int target = i % 2;  // alternate gold classes: exact balance
    std::vector<int> bits(static_cast<size_t>(s.seq_len));
    int ones = 0;
    for (auto& b : bits) {
      b = static_cast<int>(rng.below(2));
      ones += b;
    }
    const int majority = (2 * ones > s.seq_len) ? 1 : 0;
    if (majority != target) {
      for (auto& b : bits) b = 1 - b;
    }
    TaskItem item;
    item.tokens.resize(static_cast<size_t>(s.seq_len));
    for (int j = 0; j < s.seq_len; ++j) {
      const int cls = bits[static_cast<size_t>(j)];
      item.tokens[static_cast<size_t>(j)] =
          pool_base + cls * half + static_cast<int>(rng.below(static_cast<uint64_t>(half)));
    }
    item.answer_position = s.seq_len - 1;
    item.gold = target == 1 ? kAnswerToken1 : kAnswerToken0;
    items.push_back(std::move(item));
  }
  return items;
}

// A base draw is one filler token plus seq_len/2 unordered pairs; each base
// is emitted twice, once per orientation, so the two classes see exactly the
// same token multisets and only the within-pair order separates them.
std::vector<TaskItem> gen_antisym_items(const BilingualSpec& s, uint64_t stream, int count,
                                        int pool_base) {
  const Pools p = pools_of(s);
  CounterRng rng(derive_seed(s.mapping_seed, stream));
  const int n_pairs = s.seq_len / 2;
  const bool filler = s.seq_len % 2 == 1;
  std::vector<TaskItem> items;
  items.reserve(static_cast<size_t>(count));

  std::vector<std::pair<int, int>> base(static_cast<size_t>(n_pairs));
  int base_filler = 0;
  for (int i = 0; i < count; ++i) {
    const int orient = i % 2;  // 0 ascending (class 0), 1 descending (class 1)
    if (orient == 0) {
      if (filler) base_filler = pool_base + static_cast<int>(rng.below(static_cast<uint64_t>(p.n)));
      for (auto& pr : base) {
        const int u = pool_base + static_cast<int>(rng.below(static_cast<uint64_t>(p.n)));
        int v = u;
        while (v == u) v = pool_base + static_cast<int>(rng.below(static_cast<uint64_t>(p.n)));
        pr = {std::min(u, v), std::max(u, v)};
      }
    }
    TaskItem item;
    item.tokens.reserve(static_cast<size_t>(s.seq_len));
    if (filler) item.tokens.push_back(base_filler);
    for (const auto& pr : base) {
      if (orient == 0) {
        item.tokens.push_back(pr.first);
        item.tokens.push_back(pr.second);
      } else {
        item.tokens.push_back(pr.second);
        item.tokens.push_back(pr.first);
      }
    }
    item.answer_position = s.seq_len - 1;
    item.gold = orient == 1 ? kAnswerToken1 : kAnswerToken0;
    items.push_back(std::move(item));
  }
  return items;
}

std::vector<TaskItem> gen_items(const BilingualSpec& s, uint64_t stream, int count) {
  const Pools p = pools_of(s);
  return s.task == TaskKind::MajorityVote ? gen_majority_items(s, stream, count, p.a_task)
                                          : gen_antisym_items(s, stream, count, p.a_task);
}

// Parallel sentences follow the task's item distribution (or the shifted
// pool's version of it); they carry no labels.
std::vector<std::vector<int>> gen_sentences(const BilingualSpec& s, int pool_base, uint64_t stream,
                                            int count) {
  const auto items = s.task == TaskKind::MajorityVote
                         ? gen_majority_items(s, stream, count, pool_base)
                         : gen_antisym_items(s, stream, count, pool_base);
  std::vector<std::vector<int>> out;
  out.reserve(items.size());
  for (const auto& item : items) out.push_back(item.tokens);
  return out;
}

std::vector<int> split_ints(LineReader& reader, const std::string& text) {
  std::istringstream in(text);
  std::vector<int> out;
  std::string tok;
  while (in >> tok) {
    try {
      size_t used = 0;
      const int v = std::stoi(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      if (v < 0) reader.fail("negative token id " + tok);
      out.push_back(v);
    } catch (const std::logic_error&) {
      reader.fail("expected token id, got '" + tok + "'");
    }
  }
  return out;
}

}  // namespace

const char* task_kind_name(TaskKind kind) {
  return kind == TaskKind::MajorityVote ? "majority" : "antisym";
}

TaskKind parse_task_kind(const std::string& name) {
  if (name == "majority") return TaskKind::MajorityVote;
  if (name == "antisym") return TaskKind::AntisymmetricPair;
  throw Error(ErrorCode::ParseError, "unknown task kind '" + name + "'");
}

int min_vocab_size(const BilingualSpec& spec) { return 2 + 4 * spec.n_content_tokens; }

int token_map(const BilingualSpec& spec, int a_token) {
  validate_spec(spec);
  if (a_token == kAnswerToken0 || a_token == kAnswerToken1) return a_token;
  const Pools p = pools_of(spec);
  if (a_token >= p.a_task && a_token < p.a_task + p.n) {
    const auto perm = permutation(spec.mapping_seed, kStreamTaskPerm, p.n);
    return p.b_task + perm[static_cast<size_t>(a_token - p.a_task)];
  }
  if (a_token >= p.a_shift && a_token < p.a_shift + p.n) {
    const auto perm = permutation(spec.mapping_seed, kStreamShiftPerm, p.n);
    return p.b_shift + perm[static_cast<size_t>(a_token - p.a_shift)];
  }
  throw Error(ErrorCode::NotALanguageAToken, "token id " + std::to_string(a_token));
}

int token_unmap(const BilingualSpec& spec, int b_token) {
  validate_spec(spec);
  if (b_token == kAnswerToken0 || b_token == kAnswerToken1) return b_token;
  const Pools p = pools_of(spec);
  auto invert = [](const std::vector<int>& perm, int offset) {
    std::vector<int> inv(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) inv[static_cast<size_t>(perm[i])] = static_cast<int>(i);
    return inv[static_cast<size_t>(offset)];
  };
  if (b_token >= p.b_task && b_token < p.b_task + p.n) {
    const auto perm = permutation(spec.mapping_seed, kStreamTaskPerm, p.n);
    return p.a_task + invert(perm, b_token - p.b_task);
  }
  if (b_token >= p.b_shift && b_token < p.b_shift + p.n) {
    const auto perm = permutation(spec.mapping_seed, kStreamShiftPerm, p.n);
    return p.a_shift + invert(perm, b_token - p.b_shift);
  }
  throw Error(ErrorCode::NotALanguageAToken, "token id " + std::to_string(b_token) + " is not a language-B token");
}

BilingualData gen_bilingual(const BilingualSpec& spec) {
  validate_spec(spec);
  const Pools p = pools_of(spec);
  const auto task_perm = permutation(spec.mapping_seed, kStreamTaskPerm, p.n);
  const auto shift_perm = permutation(spec.mapping_seed, kStreamShiftPerm, p.n);

  // fast in-loop version of token_map (the permutations are precomputed)
  auto map_token = [&](int t) {
    if (t == kAnswerToken0 || t == kAnswerToken1) return t;
    if (t >= p.a_task && t < p.a_task + p.n) {
      return p.b_task + task_perm[static_cast<size_t>(t - p.a_task)];
    }
    return p.b_shift + shift_perm[static_cast<size_t>(t - p.a_shift)];
  };
  auto map_items = [&](const std::vector<TaskItem>& items) {
    std::vector<TaskItem> out = items;
    for (auto& item : out) {
      for (auto& t : item.tokens) t = map_token(t);
      item.gold = map_token(item.gold);
    }
    return out;
  };

  BilingualData data;
  data.a_train = TaskDataset{"a", spec.task, gen_items(spec, kStreamTrain, spec.n_train), {kAnswerToken0, kAnswerToken1}};
  data.a_val = TaskDataset{"a", spec.task, gen_items(spec, kStreamVal, spec.n_val), {kAnswerToken0, kAnswerToken1}};
  data.a_test = TaskDataset{"a", spec.task, gen_items(spec, kStreamTest, spec.n_test), {kAnswerToken0, kAnswerToken1}};
  data.b_val = TaskDataset{"b", spec.task, map_items(data.a_val.items), {kAnswerToken0, kAnswerToken1}};
  data.b_test = TaskDataset{"b", spec.task, map_items(data.a_test.items), {kAnswerToken0, kAnswerToken1}};

  const bool shifted = spec.domain == DomainTag::ShiftedDomain;
  const auto sentences = gen_sentences(spec, shifted ? p.a_shift : p.a_task,
                                       shifted ? kStreamParallelShift : kStreamParallelTask,
                                       spec.n_parallel);
  data.parallel.src_lang = "b";
  data.parallel.tgt_lang = "a";
  data.parallel.pairs.reserve(sentences.size());
  for (const auto& tgt : sentences) {
    std::vector<int> src = tgt;
    for (auto& t : src) t = map_token(t);
    data.parallel.pairs.emplace_back(std::move(src), tgt);
  }
  return data;
}

std::string serialize_dataset(const TaskDataset& ds) {
  std::string out = "corpus v1 " + ds.language + " " + std::string(task_kind_name(ds.task)) + "\n";
  for (const auto& item : ds.items) {
    for (size_t i = 0; i < item.tokens.size(); ++i) {
      if (i) out += ' ';
      out += std::to_string(item.tokens[i]);
    }
    out += " | " + std::to_string(item.answer_position) + " " + std::to_string(item.gold) + "\n";
  }
  return out;
}

TaskDataset parse_dataset(const std::string& text) {
  LineReader reader(text);
  std::string line;
  if (!reader.next(line)) throw Error(ErrorCode::FormatVersionMismatch, "empty corpus file");
  std::istringstream header(line);
  std::string magic, version, lang, task;
  header >> magic >> version >> lang >> task;
  if (magic != "corpus" || version != "v1") {
    throw Error(ErrorCode::FormatVersionMismatch, "expected 'corpus v1' header, got '" + line + "'");
  }
  if (lang.empty() || task.empty()) reader.fail("corpus header missing language or task");

  TaskDataset ds;
  ds.language = lang;
  ds.task = parse_task_kind(task);
  while (reader.next(line)) {
    if (line.empty()) continue;
    const size_t sep = line.find(" | ");
    if (sep == std::string::npos) reader.fail("missing ' | ' separator");
    TaskItem item;
    item.tokens = split_ints(reader, line.substr(0, sep));
    if (item.tokens.empty()) reader.fail("item has no tokens");
    const auto tail = split_ints(reader, line.substr(sep + 3));
    if (tail.size() != 2) reader.fail("expected 'answer_pos gold' after separator");
    item.answer_position = tail[0];
    item.gold = tail[1];
    if (item.answer_position < 0 ||
        static_cast<size_t>(item.answer_position) >= item.tokens.size()) {
      reader.fail("answer position out of range");
    }
    ds.items.push_back(std::move(item));
  }
  return ds;
}

void save_dataset(const std::string& path, const TaskDataset& ds) {
  write_file_atomic(path, serialize_dataset(ds));
}

TaskDataset load_dataset(const std::string& path) { return parse_dataset(read_file(path)); }

std::string serialize_parallel(const ParallelCorpus& pc) {
  std::string out = "parallel v1 " + pc.src_lang + " " + pc.tgt_lang + "\n";
  for (const auto& [src, tgt] : pc.pairs) {
    for (size_t i = 0; i < src.size(); ++i) {
      if (i) out += ' ';
      out += std::to_string(src[i]);
    }
    out += " ->";
    for (int t : tgt) out += ' ' + std::to_string(t);
    out += '\n';
  }
  return out;
}

ParallelCorpus parse_parallel(const std::string& text) {
  LineReader reader(text);
  std::string line;
  if (!reader.next(line)) throw Error(ErrorCode::FormatVersionMismatch, "empty parallel file");
  std::istringstream header(line);
  std::string magic, version, src, tgt;
  header >> magic >> version >> src >> tgt;
  if (magic != "parallel" || version != "v1") {
    throw Error(ErrorCode::FormatVersionMismatch, "expected 'parallel v1' header, got '" + line + "'");
  }
  if (src.empty() || tgt.empty()) reader.fail("parallel header missing language tags");

  ParallelCorpus pc;
  pc.src_lang = src;
  pc.tgt_lang = tgt;
  while (reader.next(line)) {
    if (line.empty()) continue;
    const size_t sep = line.find(" -> ");
    if (sep == std::string::npos) reader.fail("missing ' -> ' separator");
    auto src_ids = split_ints(reader, line.substr(0, sep));
    auto tgt_ids = split_ints(reader, line.substr(sep + 4));
    if (src_ids.empty() || tgt_ids.empty()) reader.fail("empty side in parallel pair");
    pc.pairs.emplace_back(std::move(src_ids), std::move(tgt_ids));
  }
  return pc;
}

void save_parallel(const std::string& path, const ParallelCorpus& pc) {
  write_file_atomic(path, serialize_parallel(pc));
}

ParallelCorpus load_parallel(const std::string& path) { return parse_parallel(read_file(path)); }

}  // namespace incline
