#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "kteval/dataset.hpp"
#include "kteval/util.hpp"
#include "test_support.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

using namespace kteval;

namespace {

std::vector<std::string> learner_ids(const std::vector<LearnerSequence>& sequences) {
  std::vector<std::string> ids;
  for (const auto& sequence : sequences) {
    ids.push_back(sequence.learner_id);
  }
  return ids;
}

Interaction make_interaction(std::string q, std::vector<std::string> kcs,
                             std::optional<std::string> opt, int y) {
  Interaction interaction;
  interaction.question_id = std::move(q);
  interaction.kc_ids = std::move(kcs);
  interaction.selected_option = std::move(opt);
  interaction.correct = y;
  return interaction;
}

// True when `subset` ids appear in `full` in the same relative order.
bool is_subsequence(const std::vector<std::string>& subset, const std::vector<std::string>& full) {
  std::size_t pos = 0;
  for (const auto& id : subset) {
    while (pos < full.size() && full[pos] != id) {
      ++pos;
    }
    if (pos == full.size()) {
      return false;
    }
    ++pos;
  }
  return true;
}

}  // namespace

TEST_CASE("assist09 parse: ordering, duplicate merge, drops, option handling") {
  const auto result = parse_dataset(DatasetFormat::Assist09, ktest::data_dir() / "assist09_toy.csv");

  CHECK(result.dropped_rows == 1);       // non-binary correctness label
  CHECK(result.merged_duplicates == 1);  // second skill row of (u1, 10, q1)
  REQUIRE(result.sequences.size() == 3);
  CHECK(learner_ids(result.sequences) == std::vector<std::string>{"u1", "u2", "u3"});

  // Numeric order keys: 9 < 10 < 101 despite "101" < "10" lexicographically.
  const std::vector<Interaction> u1_expected{
      make_interaction("q2", {"s1"}, "b", 0),
      make_interaction("q1", {"s1", "s2"}, "a", 1),
      make_interaction("q3", {"s2"}, "d", 1),
  };
  CHECK(result.sequences[0].interactions == u1_expected);

  // "NaN" option normalizes to absent.
  const std::vector<Interaction> u2_expected{
      make_interaction("q1", {"s3"}, std::nullopt, 1),
      make_interaction("q3", {"s1"}, "c", 0),
  };
  CHECK(result.sequences[1].interactions == u2_expected);

  // Empty skill cell yields an empty kc list, row is still kept.
  const std::vector<Interaction> u3_expected{
      make_interaction("q2", {"s1"}, "a", 0),
      make_interaction("q1", {}, "b", 1),
  };
  CHECK(result.sequences[2].interactions == u3_expected);
}

TEST_CASE("dbekt22 parse: quoted cells, kc trimming, timestamp order") {
  const auto result = parse_dataset(DatasetFormat::Dbekt22, ktest::data_dir() / "dbekt22_toy.csv");

  CHECK(result.dropped_rows == 1);  // is_correct "maybe"
  CHECK(result.merged_duplicates == 0);
  REQUIRE(result.sequences.size() == 2);
  CHECK(learner_ids(result.sequences) == std::vector<std::string>{"w1", "w2"});

  const std::vector<Interaction> w1_expected{
      make_interaction("p6", {"k3"}, std::nullopt, 0),        // option "nan" -> absent
      make_interaction("p5", {"k1", "k2"}, "b", 1),           // quoted "k1; k2" cell
      make_interaction("p7", {"k1", "k4"}, "c", 1),           // empty ";;" piece dropped
  };
  CHECK(result.sequences[0].interactions == w1_expected);

  const std::vector<Interaction> w2_expected{
      make_interaction("p5", {"k2"}, "a", 0),
      make_interaction("p8", {}, "d", 1),
  };
  CHECK(result.sequences[1].interactions == w2_expected);
}

TEST_CASE("ednet parse: per-learner files, numeric timestamps") {
  const auto result = parse_dataset(DatasetFormat::Ednet, ktest::data_dir() / "ednet_toy");

  CHECK(result.dropped_rows == 0);
  REQUIRE(result.sequences.size() == 2);
  CHECK(learner_ids(result.sequences) == std::vector<std::string>{"u7", "u8"});

  const std::vector<Interaction> u7_expected{
      make_interaction("q901", {"t3"}, "b", 0),
      make_interaction("q900", {"t1", "t2"}, "c", 1),
      make_interaction("q902", {"t1"}, "a", 1),
  };
  CHECK(result.sequences[0].interactions == u7_expected);

  const std::vector<Interaction> u8_expected{
      make_interaction("q900", {"t2"}, "d", 0),
      make_interaction("q903", {"t4", "t5"}, std::nullopt, 1),
  };
  CHECK(result.sequences[1].interactions == u8_expected);

  SUBCASE("a plain file is rejected for this format") {
    CHECK_THROWS_AS(parse_dataset(DatasetFormat::Ednet, ktest::data_dir() / "assist09_toy.csv"),
                    DatasetError);
  }
}

TEST_CASE("dataset format tags") {
  CHECK(parse_dataset_format("assist09") == DatasetFormat::Assist09);
  CHECK(parse_dataset_format(" ASSIST09 ") == DatasetFormat::Assist09);
  CHECK(parse_dataset_format("dbekt22") == DatasetFormat::Dbekt22);
  CHECK(parse_dataset_format("Ednet") == DatasetFormat::Ednet);
  CHECK_THROWS_AS(parse_dataset_format("csv"), DatasetError);

  CHECK(dataset_format_name(DatasetFormat::Assist09) == "assist09");
  CHECK(dataset_format_name(DatasetFormat::Dbekt22) == "dbekt22");
  CHECK(dataset_format_name(DatasetFormat::Ednet) == "ednet");
}

TEST_CASE("dataset parse errors") {
  CHECK_THROWS_AS(parse_dataset(DatasetFormat::Assist09, ktest::data_dir() / "missing.csv"),
                  DatasetError);
  // Header-only file parses to zero usable rows.
  CHECK_THROWS_AS(parse_dataset(DatasetFormat::Assist09, ktest::data_dir() / "assist09_empty.csv"),
                  DatasetError);
}

TEST_CASE("normalized jsonl: exact encoding, golden, round trip") {
  SUBCASE("hand-checked encoding of one sequence") {
    LearnerSequence sequence;
    sequence.learner_id = "z1";
    sequence.interactions = {
        make_interaction("7", {"a", "b"}, "c", 1),
        make_interaction("8", {}, std::nullopt, 0),
    };
    const std::string expected =
        "{\"learner_id\":\"z1\",\"interactions\":["
        "{\"q\":\"7\",\"kcs\":[\"a\",\"b\"],\"opt\":\"c\",\"y\":1},"
        "{\"q\":\"8\",\"kcs\":[],\"opt\":null,\"y\":0}]}\n";
    CHECK(to_normalized_jsonl({sequence}) == expected);
  }

  const auto parsed = parse_dataset(DatasetFormat::Assist09, ktest::data_dir() / "assist09_toy.csv");
  const std::string encoded = to_normalized_jsonl(parsed.sequences);

  SUBCASE("golden") {
    const std::string diff = ktest::check_golden("assist09_toy_normalized.jsonl", encoded);
    CHECK_MESSAGE(diff.empty(), diff);
  }

  SUBCASE("round trip is lossless and re-encode is byte-stable") {
    const auto decoded = from_normalized_jsonl(encoded);
    CHECK(decoded == parsed.sequences);
    CHECK(to_normalized_jsonl(decoded) == encoded);
  }

  SUBCASE("blank lines are skipped on decode") {
    const auto decoded = from_normalized_jsonl("\n" + encoded + "\n\n");
    CHECK(decoded == parsed.sequences);
  }
}

TEST_CASE("split_learners: sizing, determinism, disjointness, order") {
  const auto sequences = ktest::synth_sequences(6, 5, 11);

  // lround(0.75 * 6) = 5 train learners.
  const auto [train, eval] = split_learners(sequences, 0.75, 7);
  CHECK(train.size() == 5);
  CHECK(eval.size() == 1);

  SUBCASE("same seed reproduces the partition") {
    const auto again = split_learners(sequences, 0.75, 7);
    CHECK(again.first == train);
    CHECK(again.second == eval);
  }

  SUBCASE("partition covers all learners exactly once") {
    std::set<std::string> seen;
    for (const auto& sequence : train) {
      seen.insert(sequence.learner_id);
    }
    for (const auto& sequence : eval) {
      CHECK(seen.count(sequence.learner_id) == 0);
      seen.insert(sequence.learner_id);
    }
    CHECK(seen.size() == sequences.size());
  }

  SUBCASE("both sides preserve source order") {
    const auto full = learner_ids(sequences);
    CHECK(is_subsequence(learner_ids(train), full));
    CHECK(is_subsequence(learner_ids(eval), full));
  }

  SUBCASE("seed varies the membership") {
    std::set<std::string> eval_pick;
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
      const auto split = split_learners(sequences, 0.75, seed);
      REQUIRE(split.second.size() == 1);
      eval_pick.insert(split.second[0].learner_id);
    }
    CHECK(eval_pick.size() >= 2);
  }

  SUBCASE("invalid arguments") {
    CHECK_THROWS_AS(split_learners(sequences, 0.0, 1), DatasetError);
    CHECK_THROWS_AS(split_learners(sequences, 1.0, 1), DatasetError);
    CHECK_THROWS_AS(split_learners(sequences, 1.5, 1), DatasetError);
    const std::vector<LearnerSequence> single(sequences.begin(), sequences.begin() + 1);
    CHECK_THROWS_AS(split_learners(single, 0.5, 1), DatasetError);
  }
}

TEST_CASE("subsample_learners") {
  const auto sequences = ktest::synth_sequences(8, 4, 3);

  SUBCASE("n equal to size keeps everything in order") {
    CHECK(subsample_learners(sequences, 8, 99) == sequences);
  }

  SUBCASE("proper subset, deterministic, source order") {
    const auto picked = subsample_learners(sequences, 3, 5);
    REQUIRE(picked.size() == 3);
    CHECK(is_subsequence(learner_ids(picked), learner_ids(sequences)));
    CHECK(subsample_learners(sequences, 3, 5) == picked);
  }

  SUBCASE("n zero gives an empty list") {
    CHECK(subsample_learners(sequences, 0, 5).empty());
  }

  SUBCASE("oversampling throws") {
    CHECK_THROWS_AS(subsample_learners(sequences, 9, 5), DatasetError);
  }
}

TEST_CASE("build_instances: windows, ids, targets") {
  const auto parsed = parse_dataset(DatasetFormat::Assist09, ktest::data_dir() / "assist09_toy.csv");

  SUBCASE("one instance per position with history") {
    const auto instances = build_instances(parsed.sequences, 10);
    REQUIRE(instances.size() == 4);  // u1 has 3 interactions, u2 and u3 have 2
    std::vector<std::string> ids;
    for (const auto& instance : instances) {
      ids.push_back(instance.instance_id);
    }
    CHECK(ids == std::vector<std::string>{"u1:1", "u1:2", "u2:1", "u3:1"});

    const EvalInstance& u1_last = instances[1];
    CHECK(u1_last.learner_id == "u1");
    CHECK(u1_last.history == std::vector<Interaction>{parsed.sequences[0].interactions[0],
                                                      parsed.sequences[0].interactions[1]});
    CHECK(u1_last.target == TargetItem{"q3", {"s2"}});
    CHECK(u1_last.target_correct == 1);
  }

  SUBCASE("history window is capped at history_len") {
    const auto instances = build_instances(parsed.sequences, 1);
    REQUIRE(instances.size() == 4);
    CHECK(instances[1].history == std::vector<Interaction>{parsed.sequences[0].interactions[1]});
  }

  SUBCASE("last_k_positions keeps only the tail") {
    const auto sequences = ktest::synth_sequences(1, 12, 21);
    const auto tail = build_instances(sequences, 6, 3);
    REQUIRE(tail.size() == 3);
    CHECK(tail[0].instance_id == sequences[0].learner_id + ":9");
    CHECK(tail[2].instance_id == sequences[0].learner_id + ":11");
    CHECK(tail[0].history.size() == 6);  // window still capped by history_len

    // k larger than the available positions changes nothing.
    CHECK(build_instances(sequences, 6, 20) == build_instances(sequences, 6));
  }

  SUBCASE("single-interaction learners produce no instances") {
    const auto sequences = ktest::synth_sequences(1, 1, 4);
    CHECK(build_instances(sequences, 10).empty());
  }

  SUBCASE("history_len must be positive") {
    CHECK_THROWS_AS(build_instances(parsed.sequences, 0), DatasetError);
  }
}

TEST_CASE("cap_instances") {
  const auto sequences = ktest::synth_sequences(2, 7, 31);
  const auto instances = build_instances(sequences, 5);
  REQUIRE(instances.size() == 12);

  SUBCASE("cap zero or oversized keeps the list unchanged") {
    CHECK(cap_instances(instances, 0, 1) == instances);
    CHECK(cap_instances(instances, 12, 1) == instances);
    CHECK(cap_instances(instances, 50, 1) == instances);
  }

  SUBCASE("proper cap: deterministic subset in source order") {
    const auto capped = cap_instances(instances, 5, 17);
    REQUIRE(capped.size() == 5);
    CHECK(cap_instances(instances, 5, 17) == capped);

    std::vector<std::string> full_ids;
    for (const auto& instance : instances) {
      full_ids.push_back(instance.instance_id);
    }
    std::vector<std::string> capped_ids;
    for (const auto& instance : capped) {
      capped_ids.push_back(instance.instance_id);
    }
    CHECK(is_subsequence(capped_ids, full_ids));
  }
}

TEST_CASE("compute_option_stats: selection frequencies over the training split") {
  std::vector<LearnerSequence> train(2);
  train[0].learner_id = "a";
  train[0].interactions = {
      make_interaction("q1", {}, "a", 1),
      make_interaction("q1", {}, "b", 0),
      make_interaction("q1", {}, std::nullopt, 1),
      make_interaction("q2", {}, "a", 1),
  };
  train[1].learner_id = "b";
  train[1].interactions = {
      make_interaction("q1", {}, "a", 0),
      make_interaction("q2", {}, std::nullopt, 1),
  };

  const OptionWeightTable table = compute_option_stats(train);

  // q1 seen 4 times: a twice, b once, one row without an option.
  CHECK(table.lookup("q1", "a") == 0.5);
  CHECK(table.lookup("q1", "b") == 0.25);
  CHECK(table.lookup("q1", "c") == 0.0);  // observed question, never-picked option
  // q2 seen twice, a once.
  CHECK(table.lookup("q2", "a") == 0.5);
  CHECK(table.lookup("q2", "b") == 0.0);
  // Unseen question stays unknown rather than zero.
  CHECK_FALSE(table.lookup("q3", "a").has_value());

  CHECK(table.question_seen("q1"));
  CHECK(table.question_seen("q2"));
  CHECK_FALSE(table.question_seen("q3"));
  CHECK(table.frequencies().size() == 3);
}

TEST_CASE("hashing primitives") {
  // Published SHA-256 vectors.
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");

  // Reference output of the splitmix64 finalizer from state 0.
  CHECK(splitmix64(0) == UINT64_C(0xe220a8397b1dcdaf));

  SUBCASE("mix_hash folds words left to right through splitmix64") {
    const std::uint64_t a = 0x1234, b = 0x9999;
    const std::uint64_t acc0 = UINT64_C(0x51a2bd37f29c1e4d);
    const std::uint64_t acc1 = splitmix64(acc0 ^ a);
    CHECK(mix_hash({a}) == acc1);
    CHECK(mix_hash({a, b}) == splitmix64(acc1 ^ b));
    CHECK(mix_hash({a, b}) != mix_hash({b, a}));
  }

  SUBCASE("fnv1a64 reference vectors") {
    CHECK(fnv1a64("") == UINT64_C(0xcbf29ce484222325));
    CHECK(fnv1a64("a") == UINT64_C(0xaf63dc4c8601ec8c));
  }

  SUBCASE("unit_interval maps words into [0, 1)") {
    CHECK(unit_interval(0) == 0.0);
    for (std::uint64_t w : {UINT64_C(1), UINT64_C(0xffffffffffffffff), UINT64_C(0x8000000000000000)}) {
      const double x = unit_interval(w);
      CHECK(x >= 0.0);
      CHECK(x < 1.0);
    }
  }

  SUBCASE("bounded_rand") {
    std::uint64_t state = 42;
    for (int i = 0; i < 100; ++i) {
      CHECK(bounded_rand(state, 7) < 7);
    }
    std::uint64_t s1 = 5, s2 = 5;
    const auto r1 = bounded_rand(s1, 1000);
    const auto r2 = bounded_rand(s2, 1000);
    CHECK(r1 == r2);
    CHECK(s1 == s2);
    CHECK(bounded_rand(s1, 1) == 0);
    CHECK_THROWS_AS(bounded_rand(s1, 0), std::invalid_argument);
  }

  SUBCASE("shuffled_indices is a deterministic permutation") {
    const auto perm = shuffled_indices(10, 3);
    REQUIRE(perm.size() == 10);
    auto sorted = perm;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::size_t> iota(10);
    std::iota(iota.begin(), iota.end(), 0);
    CHECK(sorted == iota);
    CHECK(shuffled_indices(10, 3) == perm);
    CHECK(shuffled_indices(10, 4) != perm);
    CHECK(shuffled_indices(0, 3).empty());
    CHECK(shuffled_indices(1, 3) == std::vector<std::size_t>{0});
  }
}

TEST_CASE("string helpers") {
  CHECK(trim("  x\t") == "x");
  CHECK(trim("") == "");
  CHECK(trim(" \n ") == "");
  CHECK(to_lower("AbC") == "abc");
  CHECK(split("a;;b", ';') == std::vector<std::string>{"a", "", "b"});
  CHECK(split("", ';') == std::vector<std::string>{""});
  CHECK(starts_with_icase("PREDICTION: yes", "prediction"));
  CHECK_FALSE(starts_with_icase("pre", "prediction"));

  CHECK(approx_token_count("a b  c\n d\t") == 4);
  CHECK(approx_token_count("") == 0);
  CHECK(approx_token_count("   ") == 0);

  CHECK(truncate_tokens("a  b\tc d", 3) == "a b c");
  CHECK(truncate_tokens("a b", 5) == "a b");
  CHECK(truncate_tokens("", 3) == "");
  CHECK(truncate_tokens("a b c", 0) == "");
}

TEST_CASE("file helpers") {
  const auto dir = ktest::fresh_scratch("dataset-files");
  const auto path = dir / "sample.txt";

  write_file_atomic(path, "a\r\nb\n");
  CHECK(read_file(path) == "a\r\nb\n");
  CHECK(read_lines(path) == std::vector<std::string>{"a", "b"});

  // The temp file used for atomic replacement must not linger.
  std::size_t entries = 0;
  for ([[maybe_unused]] const auto& entry : std::filesystem::directory_iterator(dir)) {
    ++entries;
  }
  CHECK(entries == 1);

  append_line(path, "c");
  CHECK(read_lines(path) == std::vector<std::string>{"a", "b", "c"});

  CHECK_THROWS_AS(read_file(dir / "missing.txt"), std::runtime_error);
}
