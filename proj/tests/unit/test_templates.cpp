#include <doctest.h>

#include "uq/core.hpp"
#include "uq/hash.hpp"
#include "uq/templates.hpp"

#include "testkit.hpp"

using namespace uq;

// Prompt resources are frozen: any edit changes fingerprints of cached runs.
TEST_CASE("built-in template checksums are frozen") {
  const std::map<std::string, std::string> expected{
      {"adequacy_kbqa", "bc2d7d97a1e7fbd48147f7303236e9662d343d7eaddf2a6fc16e336a70a00e32"},
      {"adequacy_nwp", "eda1a922e487c35ac0c8471001875682c39343268ec1adb0e782251977d04756"},
      {"correctness_kbqa", "22573880fab9e0c64fbf83a88e015149827078b207c27e3847efb0b84b1ee288"},
      {"correctness_rcqa", "8d0eddbaf4bb5f431d77ed67f154e17cabf2a710ae6c6fad2140a28e5ec20e09"},
      {"declarative", "119dc903c11ba73520b8ba00c71395fab7417b1fdd31697bd270b75b35d21051"},
      {"equivalence_lm", "81872c50b3125139dbd19a6e6355b87da0f7291ba0202c3dc503e0b21acfe1d7"},
      {"kbqa_10shot", "669f3f66287e808d36fdb7525a891bf389b14c2d55796d511c41beb4468707d4"},
      {"lm_1_step_cot", "94fef028982b9c06519eba3fb0676b9da5a0bb7b44def9b6a9088e4a553c8067"},
      {"lm_1_step_plausible", "ad1e0f44875114f1ac12823afa74526d6a80effd7fba92e2514bd07bafed9ac0"},
      {"lm_1_step_support", "a05205a356523144c216c067c9c24207dff4175dec29cbd7da3c288f8feafb56"},
      {"lm_2_steps_nocontradiction", "0a0df48428033a860e72af67c3220071c5d2484c2fc1d718425c4e77ea01b19c"},
      {"lm_2_steps_support", "0077e42a2a4e11708373c56d7f2c1d82f965ef3ac52ef53db30c302453894d80"},
      {"lm_2_steps_support_fewshot", "08256d063a8999f42b9752b6f535a755ee0b51fba1af0f7ec94996357765fba1"},
      {"nli_lm_2", "e7399855bc34c2ac70e56980c367298500ab2aa1141e206b3fe9c9730096faf5"},
      {"nli_lm_3", "ee9be88fa0056116befaddb1367b3bd57c9fc21655e28deb47bbc856db2bee8a"},
      {"padequate_kbqa", "9ba66b3fd9a0f90db48c46ecef10fd66e4473c50448d2f3a1d32f990725bdb87"},
      {"padequate_nwp", "880920c579cb48af2ac216a5e8d5932bc243c8fa512cfa8bbbd752206193533a"},
      {"padequate_rcqa", "86f5933c538f87dce190dc711b23e194243df6805c002c712e16adbdb11ee0e3"},
  };
  CHECK(TemplateRegistry::builtin().checksums() == expected);
  for (const auto& id : TemplateRegistry::builtin().ids()) {
    const auto& t = TemplateRegistry::builtin().get(id);
    CHECK(t.checksum == sha256_hex(t.text));
  }
}

TEST_CASE("render substitutes once and does not rescan") {
  CHECK(render("Q: <QUESTION> A: <ANSWER>", {{"QUESTION", "<ANSWER>"}, {"ANSWER", "x"}}) == "Q: <ANSWER> A: x");
  CHECK(render("a <b> <1X> <>", {}) == "a <b> <1X> <>");
  CHECK_THROWS_AS(render("<MISSING>", {}), Error);
}

TEST_CASE("placeholders in first-seen order") {
  CHECK(placeholders("<B> <A> <B> <STRING1>") == std::vector<std::string>{"B", "A", "STRING1"});
  const auto& plausible = TemplateRegistry::builtin().get("lm_1_step_plausible").text;
  CHECK(placeholders(plausible) == std::vector<std::string>{"PASSAGE", "QUESTION", "ANSWER"});
}

TEST_CASE("unknown template id throws") {
  CHECK_THROWS_AS(TemplateRegistry::builtin().get("nope"), Error);
  CHECK_FALSE(TemplateRegistry::builtin().contains("nope"));
}

TEST_CASE("overrides replace and extend built-ins") {
  testkit::TempDir dir;
  write_text_atomic(dir.path() / "lm_1_step_plausible.txt", "Judge <ANSWER>");
  write_text_atomic(dir.path() / "extra.txt", "x");
  write_text_atomic(dir.path() / "ignored.md", "y");
  const auto r = TemplateRegistry::with_overrides(dir.path());
  CHECK(r.get("lm_1_step_plausible").text == "Judge <ANSWER>");
  CHECK(r.get("extra").text == "x");
  CHECK_FALSE(r.contains("ignored"));
  CHECK(r.get("nli_lm_2").checksum == TemplateRegistry::builtin().get("nli_lm_2").checksum);
  CHECK_THROWS_AS(TemplateRegistry::with_overrides(dir.path() / "absent"), Error);
}
