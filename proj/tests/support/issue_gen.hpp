#pragma once

// Generated incident channel: 6 issue families x 10 variants, each a native
// thread of issue / diagnostic question / resolution. Families come in pairs
// that share their main entity and differ only in the remediation verb, so
// the verb-agreement indicator is what separates them.

#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "itv/embed.hpp"
#include "itv/ingest.hpp"
#include "itv/retrieve.hpp"

namespace itv::testing {

struct IssueFamily {
  std::string name;
  std::vector<std::string> entity_forms;  // canonical first, then misspellings / plurals
  std::vector<std::string> verbs;         // infinitive forms used in requests
  std::vector<std::string> past;          // forms used in the resolution message
  std::vector<std::string> symptoms;      // "{E}" is replaced by the entity
};

inline std::vector<IssueFamily> issue_families() {
  return {
      {"pipeline-restart",
       {"tekton pipeline", "tekon pipeline", "tekton pipelines"},
       {"restart", "reboot", "bounce", "recycle"},
       {"restarted", "rebooted", "bounced"},
       {"the {E} hangs after the build stage", "{E} is stuck and never finishes", "runs of the {E} hang forever",
        "the {E} is frozen since this morning"}},
      {"pipeline-delete",
       {"tekton pipeline", "tekon pipeline", "tekton pipelines"},
       {"delete", "remove", "purge"},
       {"deleted", "removed", "purged"},
       {"the {E} is failing with a duplicate name error", "{E} is broken and blocks the release",
        "a stale {E} fails every commit", "old copies of the {E} are failing"}},
      {"dashboard-upgrade",
       {"grafana dashboard", "graffana dashboard", "grafana dashboards"},
       {"upgrade", "update", "patch"},
       {"upgraded", "updated", "patched"},
       {"the {E} shows a plugin error", "{E} panels fail to render", "the {E} crashes on login",
        "panels on the {E} are broken after the change"}},
      {"dashboard-increase",
       {"grafana dashboard", "graffana dashboard", "grafana dashboards"},
       {"increase", "expand", "extend", "raise"},
       {"increased", "expanded", "raised"},
       {"the {E} times out on the query", "{E} is slow and runs out of memory", "the {E} fails with a quota error",
        "loading the {E} is very slow"}},
      {"replica-scale",
       {"postgres replica", "postgress replica", "postgres replicas"},
       {"scale", "resize"},
       {"scaled", "resized"},
       {"the {E} lags behind under load", "{E} is overloaded and slow", "the {E} has high latency",
        "connections to the {E} time out under load"}},
      {"replica-rollback",
       {"postgres replica", "postgress replica", "postgres replicas"},
       {"rollback", "revert", "downgrade"},
       {"reverted", "downgraded"},
       {"the {E} crashes after the upgrade", "{E} fails since the new version", "the {E} is down after the patch",
        "the new version of the {E} is broken"}},
  };
}

struct IssueFixture {
  ChannelLog log;
  std::vector<std::string> issue_ids;             // first-turn message ids, in family-major order
  std::map<std::string, std::size_t> family_of;   // issue id -> family index
  GoldSets gold;                                  // same family, self excluded
  std::vector<std::string> texts;                 // every message text, for embedding training
};

inline IssueFixture make_issue_fixture(std::uint64_t seed, std::size_t variants = 10) {
  const auto families = issue_families();
  std::mt19937_64 rng(seed);
  auto pick = [&](const std::vector<std::string>& v) {
    return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
  };
  auto fill = [](std::string tmpl, const std::string& e) {
    const auto at = tmpl.find("{E}");
    if (at != std::string::npos) tmpl.replace(at, 3, e);
    return tmpl;
  };
  const std::vector<std::string> requests = {"can someone {V} the {E} ?", "could you {V} the {E} please",
                                             "please {V} the {E}", "we need to {V} the {E}",
                                             "is it safe to {V} the {E} ?"};
  const std::vector<std::string> questions = {"which namespace is this in ?", "when did it start ?",
                                              "could you share the logs ?", "is prod affected too ?"};
  const std::vector<std::string> users = {"amir", "bea", "chen", "dana", "eli", "fatma", "goran", "hana"};

  IssueFixture fx;
  fx.log.channel_id = "C-incidents";
  struct Slot {
    std::size_t family;
    std::size_t variant;
  };
  std::vector<Slot> slots;
  for (std::size_t f = 0; f < families.size(); ++f) {
    for (std::size_t v = 0; v < variants; ++v) slots.push_back({f, v});
  }
  // Interleave families in time so that order carries no signal.
  std::shuffle(slots.begin(), slots.end(), rng);

  std::int64_t t = 1'700'000'000;
  std::size_t seq = 0;
  auto message = [&](const std::string& author, const std::string& text, std::int64_t ts,
                     const std::optional<std::string>& thread) {
    RawMessage m;
    m.id = "m" + std::to_string(++seq);
    m.channel_id = fx.log.channel_id;
    m.author = author;
    m.timestamp = *Timestamp::parse(std::to_string(ts) + ".000100");
    m.text = text;
    m.parent_thread_id = thread;
    fx.texts.push_back(text);
    fx.log.messages.push_back(m);
    return m.id;
  };
  std::map<std::size_t, std::vector<std::string>> members;
  for (const auto& slot : slots) {
    const auto& fam = families[slot.family];
    const std::string entity = slot.variant == 0 ? fam.entity_forms.front() : pick(fam.entity_forms);
    std::string request = fill(pick(requests), entity);
    const auto vat = request.find("{V}");
    request.replace(vat, 3, pick(fam.verbs));
    const std::string first = fill(pick(fam.symptoms), entity) + " . " + request;
    const std::string reporter = pick(users);
    std::string sre = pick(users);
    while (sre == reporter) sre = pick(users);
    const std::string root = message(reporter, first, t, std::nullopt);
    message(sre, pick(questions), t + 60, root);
    message(reporter, "it started after the last deploy", t + 120, root);
    message(sre, pick(fam.past) + " the " + fam.entity_forms.front() + " , should be fine now", t + 600, root);
    t += 6 * 3600;  // beyond the context window, so threads never absorb each other
    fx.issue_ids.push_back(root);
    fx.family_of[root] = slot.family;
    members[slot.family].push_back(root);
  }
  for (const auto& id : fx.issue_ids) {
    std::set<std::string> rel(members[fx.family_of[id]].begin(), members[fx.family_of[id]].end());
    rel.erase(id);
    fx.gold[id] = std::move(rel);
  }
  return fx;
}

// Embedding corpus for the fixture: every message plus topical chatter that
// mentions the family entities in context.
inline embed::Corpus fixture_corpus(const IssueFixture& fx, const embed::Corpus& background) {
  embed::Corpus c = background;
  for (const auto& t : fx.texts) c.push_back(embed::corpus_sentence(t));
  return c;
}

}  // namespace itv::testing
