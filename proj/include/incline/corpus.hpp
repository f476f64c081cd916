#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "incline/model.hpp"

namespace incline {

// ===== synthetic bilingual tasks =====
//
// A "language" here is a content-token namespace. Language A and language B
// content tokens are disjoint id ranges related by a seeded bijection, while
// the two answer tokens are shared by both languages (the way multiple-choice
// answer letters stay the same across scripts). Token id layout:
//
//   0, 1                                answer tokens (class 0 / class 1)
//   2            .. 2+n-1               language A task content
//   2+n          .. 2+2n-1              language B task content
//   2+2n         .. 2+3n-1              language A shifted-domain content
//   2+3n         .. 2+4n-1              language B shifted-domain content
//
// with n = n_content_tokens. The shifted pools exist so an out-of-domain
// alignment corpus can be drawn from content the task never touches.

constexpr int kAnswerToken0 = 0;
constexpr int kAnswerToken1 = 1;

enum class TaskKind {
  MajorityVote,       // gold = answer token of the majority class pool
  AntisymmetricPair,  // gold = orientation of token pairs; both classes share
                      // the same bag-of-token distribution by construction
};

enum class DomainTag { TaskDomain, ShiftedDomain };

const char* task_kind_name(TaskKind kind);
TaskKind parse_task_kind(const std::string& name);

struct BilingualSpec {
  int n_content_tokens = 20;
  int seq_len = 9;
  int n_train = 2000;
  int n_val = 200;
  int n_test = 500;
  int n_parallel = 500;
  TaskKind task = TaskKind::MajorityVote;
  DomainTag domain = DomainTag::TaskDomain;
  uint64_t mapping_seed = 1;
};

int min_vocab_size(const BilingualSpec& spec);

using TaskItem = TrainItem;

struct TaskDataset {
  std::string language;  // "a" or "b"
  TaskKind task = TaskKind::MajorityVote;
  std::vector<TaskItem> items;
  std::vector<int> answer_tokens{kAnswerToken0, kAnswerToken1};
};

// pairs run (source tokens, target tokens) = (language B, language A): the
// source side is the language the intervention is meant to help.
struct ParallelCorpus {
  std::string src_lang = "b";
  std::string tgt_lang = "a";
  std::vector<std::pair<std::vector<int>, std::vector<int>>> pairs;
};

struct BilingualData {
  TaskDataset a_train, a_val, a_test;
  TaskDataset b_val, b_test;  // never used for model training
  ParallelCorpus parallel;
};

// Deterministic bijection between language-A tokens and language-B tokens
// derived from mapping_seed. Answer tokens map to the (shared) language-B
// answer tokens, i.e. to themselves. Throws NotALanguageAToken otherwise.
int token_map(const BilingualSpec& spec, int a_token);
int token_unmap(const BilingualSpec& spec, int b_token);

// Generates the full task suite: A train/val/test, the token-mapped B twins
// of val/test (same item order, so correctness can be compared item by item)
// and the parallel corpus for spec.domain. Byte-deterministic in the spec.
BilingualData gen_bilingual(const BilingualSpec& spec);

// ===== text formats =====
//
// corpus v1 <lang> <task>        one item per line: "ids... | answer_pos gold"
// parallel v1 <src> <tgt>        one pair per line: "ids... -> ids..."

std::string serialize_dataset(const TaskDataset& ds);
TaskDataset parse_dataset(const std::string& text);
void save_dataset(const std::string& path, const TaskDataset& ds);
TaskDataset load_dataset(const std::string& path);

std::string serialize_parallel(const ParallelCorpus& pc);
ParallelCorpus parse_parallel(const std::string& text);
void save_parallel(const std::string& path, const ParallelCorpus& pc);
ParallelCorpus load_parallel(const std::string& path);

}  // namespace incline
