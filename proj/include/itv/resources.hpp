#pragma once

#include <filesystem>
#include <string>

#include "itv/artefacts.hpp"
#include "itv/query.hpp"
#include "itv/retrieve.hpp"

namespace itv {

// The bundled lexical resources, loaded together from one directory.
struct Toolkit {
  PosLexicon lexicon;
  ActionDictionary dictionary;
  Stopwords stopwords;
  QueryDetector detector;
  SymptomLexicon symptoms;

  static Toolkit load(const std::filesystem::path& dir) {
    Toolkit k;
    k.lexicon = PosLexicon::load((dir / "pos_lexicon.tsv").string());
    k.dictionary = ActionDictionary::load((dir / "action_dictionary.json").string());
    k.stopwords = Stopwords::load((dir / "stopwords.txt").string());
    k.detector.triggers = QueryTriggers::load((dir / "query_triggers.json").string());
    const auto seed = load_labeled_corpus((dir / "query_seed.jsonl").string());
    k.detector.nb = train_query_nb(seed);
    k.symptoms = SymptomLexicon::load((dir / "symptom_lexicon.json").string());
    return k;
  }
};

}  // namespace itv
