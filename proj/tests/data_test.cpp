#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "finsent/data.hpp"
#include "finsent/errors.hpp"

using namespace finsent;

namespace {

namespace fs = std::filesystem;

struct TempDir {
    fs::path path;
    TempDir() : path(fs::temp_directory_path() / ("finsent_data_" + std::to_string(::getpid()))) {
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name, const std::string& content) const {
        const fs::path p = path / name;
        std::ofstream out(p, std::ios::binary);
        out << content;
        return p.string();
    }
};

Vocabulary toy_vocab() {
    std::vector<std::string> tokens = Vocabulary::special_tokens();
    for (const char* w : {"profit", "rose", "fell", "sharply", "the", "bank", "a", "b", "c"}) {
        tokens.push_back(w);
    }
    return Vocabulary(std::move(tokens));
}

}  // namespace

TEST_CASE("load_labeled tsv and at-separated formats") {
    TempDir tmp;
    const std::string tsv =
        tmp.file("train.tsv", "profit rose sharply\tpositive\nthe bank fell\tnegative\n");
    const auto examples = load_labeled(tsv, LabeledFormat::Tsv);
    REQUIRE(examples.size() == 2);
    CHECK(examples[0].text == "profit rose sharply");
    CHECK(examples[0].label == Label::Positive);
    CHECK(!examples[0].score.has_value());
    CHECK(examples[0].guid == "train-1");
    CHECK(examples[1].label == Label::Negative);

    const std::string at =
        tmp.file("legacy.txt", "profits@up rose@positive\nthe bank fell@negative\n");
    const auto legacy = load_labeled(at, LabeledFormat::AtSeparated);
    REQUIRE(legacy.size() == 2);
    CHECK(legacy[0].text == "profits@up rose");  // last '@' wins
    CHECK(legacy[0].label == Label::Positive);
}

TEST_CASE("load_labeled errors carry line numbers") {
    TempDir tmp;
    const std::string bad = tmp.file("bad.tsv", "fine\tpositive\nodd line\tbullish\n");
    CHECK_THROWS_WITH_AS(load_labeled(bad, LabeledFormat::Tsv), doctest::Contains(":2"),
                         DataError);
    const std::string empty = tmp.file("empty.tsv", "");
    CHECK_THROWS_AS(load_labeled(empty, LabeledFormat::Tsv), DataError);
    const std::string no_tab = tmp.file("notab.tsv", "just text\n");
    CHECK_THROWS_AS(load_labeled(no_tab, LabeledFormat::Tsv), DataError);
    CHECK_THROWS_AS(load_labeled((tmp.path / "missing.tsv").string(), LabeledFormat::Tsv),
                    DataError);
}

TEST_CASE("load_scored parses and validates score range") {
    TempDir tmp;
    const std::string ok = tmp.file("fiqa.tsv", "shares plunge\t-0.85\nflat day\t0\n");
    const auto examples = load_scored(ok);
    REQUIRE(examples.size() == 2);
    CHECK(examples[0].score == doctest::Approx(-0.85f));
    CHECK(examples[1].score == doctest::Approx(0.0f));
    CHECK(!examples[0].label.has_value());

    const std::string out_of_range = tmp.file("range.tsv", "too much\t2.0\n");
    CHECK_THROWS_WITH_AS(load_scored(out_of_range), doctest::Contains(":1"), DataError);
    const std::string not_number = tmp.file("nan.tsv", "what\tvery\n");
    CHECK_THROWS_AS(load_scored(not_number), DataError);
}

TEST_CASE("load_corpus_documents splits on blank lines") {
    TempDir tmp;
    const std::string path = tmp.file(
        "corpus.txt", "first sentence\nsecond sentence\n\nother doc one\nother doc two\n\n\n");
    const auto docs = load_corpus_documents(path);
    REQUIRE(docs.size() == 2);
    CHECK(docs[0].size() == 2);
    CHECK(docs[1][1] == "other doc two");
    CHECK(flatten_documents(docs).size() == 4);

    const std::string blank = tmp.file("blank.txt", "\n\n");
    CHECK_THROWS_AS(load_corpus_documents(blank), DataError);
}

TEST_CASE("make_mlm_example edge configurations") {
    const Vocabulary vocab = toy_vocab();
    const std::vector<int> ids = {Vocabulary::kClsId, 5, 6, 7, Vocabulary::kSepId,
                                  Vocabulary::kPadId};

    MaskingConfig none;
    none.mask_percent = 0.0;
    Rng rng(1);
    const auto [c0, t0] = make_mlm_example(ids, none, vocab, rng);
    CHECK(c0 == ids);
    CHECK(t0 == std::vector<int>(ids.size(), kMlmIgnoreId));

    MaskingConfig all;
    all.mask_percent = 100.0;
    all.replace_with_mask = 1.0;
    all.replace_with_random = 0.0;
    all.keep_original = 0.0;
    const auto [c1, t1] = make_mlm_example(ids, all, vocab, rng);
    CHECK(c1 == std::vector<int>{Vocabulary::kClsId, Vocabulary::kMaskId, Vocabulary::kMaskId,
                                 Vocabulary::kMaskId, Vocabulary::kSepId, Vocabulary::kPadId});
    CHECK(t1 == std::vector<int>{kMlmIgnoreId, 5, 6, 7, kMlmIgnoreId, kMlmIgnoreId});

    MaskingConfig broken;
    broken.replace_with_mask = 0.9;
    CHECK_THROWS_AS(make_mlm_example(ids, broken, vocab, rng), ConfigError);
}

TEST_CASE("make_mlm_example selection rate within 3 sigma") {
    const Vocabulary vocab = toy_vocab();
    std::vector<int> ids(10000, 5);
    MaskingConfig cfg;  // 15% default
    Rng rng(42);
    const auto [corrupted, targets] = make_mlm_example(ids, cfg, vocab, rng);
    int selected = 0;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (targets[i] != kMlmIgnoreId) {
            ++selected;
            CHECK(targets[i] == 5);
        } else {
            CHECK(corrupted[i] == 5);
        }
    }
    const double n = static_cast<double>(ids.size());
    const double sigma = std::sqrt(0.15 * 0.85 * n);
    CHECK(std::fabs(selected - 0.15 * n) < 3.0 * sigma);

    // corrupted tokens are never special except [MASK]
    for (size_t i = 0; i < ids.size(); ++i) {
        if (corrupted[i] != 5) {
            CHECK((corrupted[i] == Vocabulary::kMaskId || corrupted[i] >= Vocabulary::kNumSpecial));
        }
    }
}

TEST_CASE("make_mlm_example never selects special positions") {
    const Vocabulary vocab = toy_vocab();
    std::vector<int> ids;
    for (int i = 0; i < 300; ++i) {
        ids.push_back(Vocabulary::kClsId);
        ids.push_back(5);
        ids.push_back(Vocabulary::kSepId);
        ids.push_back(Vocabulary::kPadId);
    }
    MaskingConfig cfg;
    cfg.mask_percent = 100.0;
    Rng rng(7);
    const auto [corrupted, targets] = make_mlm_example(ids, cfg, vocab, rng);
    CHECK(corrupted.size() == ids.size());
    CHECK(targets.size() == ids.size());
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] != 5) {
            CHECK(corrupted[i] == ids[i]);
            CHECK(targets[i] == kMlmIgnoreId);
        }
    }
}

TEST_CASE("make_nsp_pairs precondition, balance and determinism") {
    Rng rng(3);
    CHECK_THROWS_AS(make_nsp_pairs({{"one", "two"}}, rng), DataError);
    CHECK_THROWS_AS(make_nsp_pairs({{"one"}, {"two"}}, rng), DataError);

    const std::vector<std::vector<std::string>> docs = {
        {"a1", "a2", "a3"}, {"b1", "b2"}, {"c1", "c2", "c3", "c4"}};
    Rng rng_a(11);
    const auto pairs = make_nsp_pairs(docs, rng_a);
    CHECK(pairs.size() == 6);  // 2 + 1 + 3 anchors
    int positives = 0;
    for (const auto& p : pairs) positives += p.is_next;
    CHECK(std::abs(2 * positives - static_cast<int>(pairs.size())) <= 1);

    for (const auto& p : pairs) {
        if (p.is_next == 0) {
            // negative text_b comes from a different document
            const char doc_of_a = p.text_a[0];
            CHECK(p.text_b[0] != doc_of_a);
        }
    }

    Rng rng_b(11);
    const auto again = make_nsp_pairs(docs, rng_b);
    for (size_t i = 0; i < pairs.size(); ++i) {
        CHECK(pairs[i].text_a == again[i].text_a);
        CHECK(pairs[i].text_b == again[i].text_b);
        CHECK(pairs[i].is_next == again[i].is_next);
    }
}

TEST_CASE("make_loader batch arithmetic") {
    const Vocabulary vocab = toy_vocab();
    auto make_examples = [](int n) {
        std::vector<Example> out;
        for (int i = 0; i < n; ++i) {
            Example ex;
            ex.guid = "ex-" + std::to_string(i);
            ex.text = "the bank";
            ex.label = static_cast<Label>(i % 3);
            out.push_back(ex);
        }
        return out;
    };

    const auto small = make_loader(make_examples(10), vocab, 8, 64, false, 1);
    REQUIRE(small.size() == 1);
    CHECK(small[0].size() == 10);

    const auto split = make_loader(make_examples(130), vocab, 8, 64, false, 1);
    REQUIRE(split.size() == 3);
    CHECK(split[0].size() == 64);
    CHECK(split[1].size() == 64);
    CHECK(split[2].size() == 2);

    // unshuffled order is preserved
    const auto ordered = make_loader(make_examples(9), vocab, 8, 4, false, 1);
    CHECK(ordered[0].labels == std::vector<int>{0, 1, 2, 0});
    CHECK(ordered[1].labels == std::vector<int>{1, 2, 0, 1});
    CHECK(ordered[2].labels == std::vector<int>{2});

    CHECK_THROWS_AS(make_loader(make_examples(4), vocab, 8, 0, false, 1), ConfigError);
}

TEST_CASE("make_loader shuffles deterministically and covers every example") {
    const Vocabulary vocab = toy_vocab();
    std::vector<Example> examples;
    for (int i = 0; i < 57; ++i) {
        Example ex;
        ex.guid = "g-" + std::to_string(i);
        ex.text = "a b c";
        ex.score = (i % 11) / 10.0f;
        examples.push_back(ex);
    }
    const auto run = [&](uint64_t seed) {
        std::vector<float> seen;
        for (const Batch& b : make_loader(examples, vocab, 8, 16, true, seed)) {
            seen.insert(seen.end(), b.scores.begin(), b.scores.end());
        }
        return seen;
    };
    const auto a = run(5);
    CHECK(a == run(5));
    CHECK(a != run(6));

    auto sorted_a = a;
    std::sort(sorted_a.begin(), sorted_a.end());
    std::vector<float> want;
    for (const auto& ex : examples) want.push_back(*ex.score);
    std::sort(want.begin(), want.end());
    CHECK(sorted_a == want);
}

TEST_CASE("split_examples is a deterministic partition") {
    std::vector<Example> examples;
    for (int i = 0; i < 500; ++i) {
        Example ex;
        ex.guid = "id-" + std::to_string(i);
        ex.text = "x";
        examples.push_back(ex);
    }
    const SplitExamples s = split_examples(examples, 0.8, 0.1, 0.1);
    CHECK(s.train.size() + s.validation.size() + s.test.size() == 500);
    CHECK(s.train.size() > 300);  // roughly 0.8, hash-bucketed
    const SplitExamples again = split_examples(examples, 0.8, 0.1, 0.1);
    CHECK(s.train.size() == again.train.size());
    for (size_t i = 0; i < s.train.size(); ++i) CHECK(s.train[i].guid == again.train[i].guid);

    CHECK_THROWS_AS(split_examples(examples, 0.8, 0.3, 0.1), ConfigError);
}
