#pragma once

// Inter-annotator variability: lexical/syntactic/semantic similarity,
// Krippendorff's alpha, substantial-disagreement flags, propagation rates and
// Kendall's tau-b.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "nldar/document.hpp"
#include "nldar/error.hpp"
#include "nldar/resolver.hpp"
#include "nldar/workflow.hpp"

namespace nldar::variability {

// ---------------------------------------------------------------------------
// Token annotation

struct Token {
  std::string text;
  std::string lemma;
  std::string pos;
  bool operator==(const Token&) const = default;
};

// Deterministic tokenizer + lemmatizer + POS tagger. Lemma and POS streams
// have one entry per token.
class TokenAnnotator {
 public:
  virtual ~TokenAnnotator() = default;
  virtual std::vector<Token> annotate(const std::string& text) const = 0;
};

// Word/punctuation tokens, suffix-rule lemmas, closed-class POS lexicon with
// suffix heuristics for open classes.
class NaiveAnnotator : public TokenAnnotator {
 public:
  std::vector<Token> annotate(const std::string& text) const override {
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < text.size()) {
      const auto c = static_cast<unsigned char>(text[i]);
      if (std::isspace(c)) {
        ++i;
        continue;
      }
      std::string word;
      if (std::isalnum(c)) {
        while (i < text.size() && (std::isalnum(static_cast<unsigned char>(text[i])) || text[i] == '-' || text[i] == '\''))
          word += static_cast<char>(std::tolower(static_cast<unsigned char>(text[i++])));
      } else {
        word = text[i++];
      }
      out.push_back({word, lemma(word), tag(word)});
    }
    return out;
  }

  static std::string lemma(const std::string& w) {
    auto ends = [&](std::string_view suf) { return w.size() > suf.size() + 2 && w.ends_with(suf); };
    if (tag(w) != "NOUN" && tag(w) != "VERB" && tag(w) != "ADJ") return w;
    if (ends("ies")) return w.substr(0, w.size() - 3) + "y";
    if (ends("sses")) return w.substr(0, w.size() - 2);
    if (ends("ing")) return w.substr(0, w.size() - 3);
    if (ends("ed")) return w.substr(0, w.size() - 2);
    if (ends("s") && !w.ends_with("ss") && !w.ends_with("us") && !w.ends_with("is")) return w.substr(0, w.size() - 1);
    return w;
  }

  static std::string tag(const std::string& w) {
    static const std::map<std::string, std::string> closed = [] {
      std::map<std::string, std::string> m;
      for (auto d : {"a", "an", "the", "this", "that", "these", "those", "each", "every", "some", "any", "no"})
        m[d] = "DET";
      for (auto p : {"i", "you", "he", "she", "it", "we", "they", "them", "their", "its", "our", "his", "her",
                     "which", "who", "what"})
        m[p] = "PRON";
      for (auto p : {"in", "on", "at", "of", "for", "with", "by", "from", "to", "into", "about", "between", "than",
                     "as", "under", "over", "through", "without", "within"})
        m[p] = "ADP";
      for (auto c : {"and", "or", "but", "nor"}) m[c] = "CCONJ";
      for (auto c : {"if", "because", "while", "although", "whether", "since"}) m[c] = "SCONJ";
      for (auto a : {"is", "are", "was", "were", "be", "been", "being", "has", "have", "had", "do", "does", "did",
                     "can", "could", "may", "might", "must", "should", "would", "will"})
        m[a] = "AUX";
      for (auto p : {"not", "n't"}) m[p] = "PART";
      for (auto a : {"very", "also", "only", "not", "too", "well", "however"}) m.emplace(a, "ADV");
      for (auto y : {"yes"}) m[y] = "INTJ";
      return m;
    }();
    if (auto it = closed.find(w); it != closed.end()) return it->second;
    if (w.empty() || !std::isalnum(static_cast<unsigned char>(w[0]))) return "PUNCT";
    if (std::all_of(w.begin(), w.end(), [](unsigned char c) { return std::isdigit(c) || c == '-'; })) return "NUM";
    auto ends = [&](std::string_view s) { return w.size() > s.size() + 2 && w.ends_with(s); };
    if (ends("ly")) return "ADV";
    if (ends("ing") || ends("ed") || ends("ize") || ends("ise")) return "VERB";
    if (ends("ous") || ends("al") || ends("ive") || ends("ful") || ends("able") || ends("ible") || ends("ic"))
      return "ADJ";
    return "NOUN";
  }
};

// ---------------------------------------------------------------------------
// Embeddings

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::string name() const = 0;
  virtual std::vector<double> embed(const std::string& text) = 0;
};

// Feature-hashed bag of lemma unigrams and bigrams. Offline stand-in for a
// sentence encoder; deterministic across platforms.
class HashingEmbedder : public Embedder {
 public:
  explicit HashingEmbedder(std::size_t dim = 512) : dim_(dim) {}
  std::string name() const override { return "hashing-" + std::to_string(dim_); }

  std::vector<double> embed(const std::string& text) override {
    std::vector<double> v(dim_, 0.0);
    const auto tokens = annotator_.annotate(text);
    auto add = [&](const std::string& feature, double w) {
      const auto h = fnv1a64(feature);
      v[h % dim_] += ((h >> 63) ? -1.0 : 1.0) * w;
    };
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (tokens[i].pos == "PUNCT") continue;
      add("u:" + tokens[i].lemma, 1.0);
      if (i + 1 < tokens.size()) add("b:" + tokens[i].lemma + " " + tokens[i + 1].lemma, 0.5);
    }
    return v;
  }

 private:
  std::size_t dim_;
  NaiveAnnotator annotator_;
};

// OpenAI-compatible /v1/embeddings endpoint.
class HttpEmbedder : public Embedder {
 public:
  explicit HttpEmbedder(ResolverConfig config) : config_(std::move(config)) {
    if (config_.endpoint.empty()) throw Error("embedding endpoint is not configured");
  }
  std::string name() const override { return config_.model.empty() ? "http-embedder" : config_.model; }

  std::vector<double> embed(const std::string& text) override {
    const auto url = split_url(config_.endpoint);
    httplib::Client client(url.scheme_host);
    client.set_read_timeout(config_.timeout_seconds, 0);
    httplib::Headers headers;
    if (const char* key = std::getenv(config_.credential_env.c_str()); key && *key)
      headers.emplace("Authorization", std::string("Bearer ") + key);
    const nlohmann::json body = {{"model", config_.model}, {"input", text}};
    auto res = client.Post(url.path, headers, body.dump(), "application/json");
    if (!res) throw Error("embedder transport failure: " + httplib::to_string(res.error()));
    if (res->status != 200) throw Error("embedder returned HTTP " + std::to_string(res->status));
    try {
      return nlohmann::json::parse(res->body).at("data").at(0).at("embedding").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(std::string("unexpected embedder response: ") + e.what());
    }
  }

 private:
  ResolverConfig config_;
};

// ---------------------------------------------------------------------------
// Similarity

// Jaccard of two sets; two empty sets are identical.
template <class T>
double jaccard(const std::set<T>& a, const std::set<T>& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t common = 0;
  for (const auto& x : a) common += b.count(x);
  return static_cast<double>(common) / static_cast<double>(a.size() + b.size() - common);
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error("embedding dimensions differ");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) throw Error("cannot normalize a zero embedding");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

inline std::set<std::string> lemma_set(const std::vector<Token>& tokens) {
  std::set<std::string> out;
  for (const auto& t : tokens)
    if (t.pos != "PUNCT") out.insert(t.lemma);
  return out;
}

inline std::set<std::string> pos_bigrams(const std::vector<Token>& tokens) {
  std::set<std::string> out;
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i) out.insert(tokens[i].pos + " " + tokens[i + 1].pos);
  return out;
}

struct SimilarityTriple {
  double lexical = 0;
  double syntactic = 0;
  double semantic = 0;
};

// Mean of each metric over all unordered pairs of answers.
// Cosine, except that answers with no content words embed to zero: two such
// answers count as identical, one against a non-empty answer as unrelated.
inline double semantic_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  auto zero = [](const std::vector<double>& v) { return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; }); };
  if (zero(a) || zero(b)) return zero(a) && zero(b) ? 1.0 : 0.0;
  return cosine(a, b);
}

inline SimilarityTriple pairwise_similarity(const std::vector<std::string>& answers, const TokenAnnotator& annotator,
                                            Embedder& embedder) {
  if (answers.size() < 2) throw Error("pairwise similarity needs at least 2 answers");
  std::vector<std::set<std::string>> lemmas, bigrams;
  std::vector<std::vector<double>> vecs;
  for (const auto& a : answers) {
    const auto tokens = annotator.annotate(a);
    lemmas.push_back(lemma_set(tokens));
    bigrams.push_back(pos_bigrams(tokens));
    vecs.push_back(embedder.embed(a));
  }
  SimilarityTriple sum;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < answers.size(); ++i)
    for (std::size_t j = i + 1; j < answers.size(); ++j, ++pairs) {
      sum.lexical += jaccard(lemmas[i], lemmas[j]);
      sum.syntactic += jaccard(bigrams[i], bigrams[j]);
      sum.semantic += semantic_similarity(vecs[i], vecs[j]);
    }
  const auto n = static_cast<double>(pairs);
  return {sum.lexical / n, sum.syntactic / n, sum.semantic / n};
}

// ---------------------------------------------------------------------------
// Krippendorff's alpha (nominal)

// Rows are units, columns raters; nullopt = missing. Units with fewer than two
// ratings are not pairable and drop out.
inline double krippendorff_alpha(const std::vector<std::vector<std::optional<int>>>& units) {
  std::map<std::pair<int, int>, double> o;
  std::size_t pairable = 0;
  for (const auto& unit : units) {
    std::map<int, double> counts;
    double m = 0;
    for (const auto& v : unit)
      if (v) counts[*v] += 1, m += 1;
    if (m < 2) continue;
    ++pairable;
    for (const auto& [c, nc] : counts)
      for (const auto& [k, nk] : counts) o[{c, k}] += (c == k ? nc * (nc - 1) : nc * nk) / (m - 1);
  }
  if (pairable == 0) throw Error("no units with at least two ratings");
  std::map<int, double> marg;
  double n = 0;
  for (const auto& [ck, v] : o) marg[ck.first] += v, n += v;
  double observed = 0, expected = 0;
  for (const auto& [ck, v] : o)
    if (ck.first != ck.second) observed += v;
  for (const auto& [c, nc] : marg)
    for (const auto& [k, nk] : marg)
      if (c != k) expected += nc * nk;
  if (expected == 0) return 1.0;  // a single category throughout: no disagreement possible
  return 1.0 - (n - 1) * observed / expected;
}

struct AgreementMatrix {
  std::vector<std::pair<std::string, std::string>> units;  // (step, document)
  std::vector<std::string> raters;
  std::vector<std::vector<std::optional<int>>> values;
};

// Boolean answers on `steps`, one unit per (step, document), one column per agent.
inline AgreementMatrix boolean_matrix(const std::vector<std::string>& steps,
                                      const std::vector<ExecutionRecord>& executions, bool include_uncertain = true) {
  std::set<std::string> agents;
  std::set<std::pair<std::string, std::string>> units;
  for (const auto& e : executions) {
    agents.insert(e.agent);
    for (const auto& s : steps) units.emplace(s, e.document);
  }
  AgreementMatrix m;
  m.raters.assign(agents.begin(), agents.end());
  m.units.assign(units.begin(), units.end());
  m.values.assign(m.units.size(), std::vector<std::optional<int>>(m.raters.size()));
  for (const auto& e : executions) {
    const auto r = static_cast<std::size_t>(std::lower_bound(m.raters.begin(), m.raters.end(), e.agent) - m.raters.begin());
    for (std::size_t u = 0; u < m.units.size(); ++u) {
      if (m.units[u].second != e.document) continue;
      auto it = e.answers.find(m.units[u].first);
      if (it == e.answers.end() || (it->second.uncertain && !include_uncertain)) continue;
      const auto b = it->second.boolean ? it->second.boolean : leading_yes_no(it->second.text);
      if (b) m.values[u][r] = *b ? 1 : 0;
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Substantial disagreement

struct AgentSimilarity {
  std::string document;
  std::string step;
  std::string agent;
  double similarity = 0;  // mean semantic similarity to the co-annotators
};

struct Flag {
  std::string document;
  std::string step;
  std::string agent;
  bool flagged = false;
  friend bool operator==(const Flag&, const Flag&) = default;
};

// cells: (document, step) -> agent -> answer text.
using AnswerCells = std::map<std::pair<std::string, std::string>, std::map<std::string, std::string>>;

inline AnswerCells text_cells(const Workflow& wf, const std::vector<ExecutionRecord>& executions,
                              bool include_uncertain = true) {
  std::set<std::string> text_steps;
  for (const auto& s : wf.steps)
    if (s.kind != StepKind::read) text_steps.insert(s.id);
  AnswerCells cells;
  for (const auto& e : executions)
    for (const auto& [step, a] : e.answers)
      if (text_steps.count(step) && !a.text.empty() && (include_uncertain || !a.uncertain))
        cells[{e.document, step}][e.agent] = a.text;
  return cells;
}

// Embeds each distinct text once.
class EmbeddingCache {
 public:
  explicit EmbeddingCache(Embedder& e) : embedder_(e) {}
  const std::vector<double>& get(const std::string& text) {
    std::lock_guard lock(m_);
    auto it = cache_.find(text);
    if (it == cache_.end()) it = cache_.emplace(text, embedder_.embed(text)).first;
    return it->second;
  }

 private:
  Embedder& embedder_;
  std::mutex m_;
  std::map<std::string, std::vector<double>> cache_;
};

inline std::vector<AgentSimilarity> agent_similarities(const AnswerCells& cells, EmbeddingCache& emb) {
  std::vector<AgentSimilarity> out;
  for (const auto& [key, answers] : cells) {
    if (answers.size() < 2) continue;
    for (const auto& [agent, text] : answers) {
      double sum = 0;
      for (const auto& [other, other_text] : answers)
        if (other != agent) sum += semantic_similarity(emb.get(text), emb.get(other_text));
      out.push_back({key.first, key.second, agent, sum / static_cast<double>(answers.size() - 1)});
    }
  }
  return out;
}

struct MeanStd {
  double mean = 0;
  double std = 0;  // sample standard deviation
  std::size_t n = 0;
};

inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd r;
  r.n = xs.size();
  if (xs.empty()) return r;
  for (double x : xs) r.mean += x;
  r.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0;
    for (double x : xs) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return r;
}

// Flagged iff below the step's cross-document mean minus one sample std.
// Steps with a single similarity value yield no flags.
inline std::vector<Flag> disagreement_flags(const std::vector<AgentSimilarity>& sims) {
  std::map<std::string, std::vector<double>> by_step;
  for (const auto& s : sims) by_step[s.step].push_back(s.similarity);
  std::map<std::string, MeanStd> stats;
  for (const auto& [step, xs] : by_step) stats[step] = mean_std(xs);
  std::vector<Flag> out;
  for (const auto& s : sims) {
    const auto& st = stats.at(s.step);
    out.push_back({s.document, s.step, s.agent, st.n >= 2 && s.similarity < st.mean - st.std});
  }
  std::sort(out.begin(), out.end(), [](const Flag& a, const Flag& b) {
    return std::tie(a.document, a.step, a.agent) < std::tie(b.document, b.step, b.agent);
  });
  return out;
}

struct PropagationRates {
  double base_rate = 0;
  std::optional<double> conditional_rate;  // absent when no answer has a flagged parent
  std::size_t answers = 0;
  std::size_t flagged = 0;
  std::size_t with_flagged_parent = 0;
  std::size_t flagged_with_flagged_parent = 0;
};

// base = P(flag); conditional = P(flag | >=1 parent answer by the same agent on
// the same document is flagged).
inline PropagationRates disagreement_propagation(const std::vector<Flag>& flags, const Workflow& wf) {
  WorkflowIndex idx(wf);
  std::set<std::tuple<std::string, std::string, std::string>> flagged;
  for (const auto& f : flags)
    if (f.flagged) flagged.emplace(f.document, f.step, f.agent);
  PropagationRates r;
  for (const auto& f : flags) {
    ++r.answers;
    r.flagged += f.flagged;
    bool parent_flagged = false;
    if (idx.contains(f.step))
      for (const auto& p : idx.parent_ids(f.step))
        if (flagged.count({f.document, p, f.agent})) parent_flagged = true;
    if (parent_flagged) {
      ++r.with_flagged_parent;
      r.flagged_with_flagged_parent += f.flagged;
    }
  }
  if (r.answers) r.base_rate = static_cast<double>(r.flagged) / static_cast<double>(r.answers);
  if (r.with_flagged_parent)
    r.conditional_rate = static_cast<double>(r.flagged_with_flagged_parent) / static_cast<double>(r.with_flagged_parent);
  return r;
}

// ---------------------------------------------------------------------------
// Kendall's tau-b

inline double kendall_tau_b(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw Error("tau-b needs paired series");
  if (x.size() < 3) throw Error("tau-b needs at least 3 points");
  double concordant = 0, discordant = 0, ties_x = 0, ties_y = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const double dx = x[i] - x[j], dy = y[i] - y[j];
      if (dx == 0 && dy == 0) continue;
      if (dx == 0)
        ++ties_x;
      else if (dy == 0)
        ++ties_y;
      else if ((dx > 0) == (dy > 0))
        ++concordant;
      else
        ++discordant;
    }
  const double denom = std::sqrt((concordant + discordant + ties_x) * (concordant + discordant + ties_y));
  if (denom == 0) throw Error("tau-b undefined for a constant series");
  return (concordant - discordant) / denom;
}

// tau-b between linearized position and per-step mean similarity, over the
// steps that have a similarity value.
inline double position_similarity_correlation(const std::vector<std::string>& order,
                                              const std::map<std::string, double>& similarity) {
  std::vector<double> pos, sim;
  for (std::size_t i = 0; i < order.size(); ++i)
    if (auto it = similarity.find(order[i]); it != similarity.end()) {
      pos.push_back(static_cast<double>(i));
      sim.push_back(it->second);
    }
  return kendall_tau_b(pos, sim);
}

// ---------------------------------------------------------------------------
// Report

struct CellRow {
  std::string document;
  std::string step;
  std::size_t answers = 0;
  SimilarityTriple similarity;
};

struct Report {
  std::string embedder;
  std::vector<CellRow> cells;
  std::vector<Flag> flags;
  std::optional<double> alpha;
  PropagationRates propagation;
  std::optional<double> mean_semantic;
  std::optional<double> tau;
};

// Full variability analysis over human executions of one workflow.
inline Report variability_report(const Workflow& wf, const std::vector<ExecutionRecord>& executions,
                                 const TokenAnnotator& annotator, Embedder& embedder, bool include_uncertain = true) {
  Report r;
  r.embedder = embedder.name();
  EmbeddingCache cache(embedder);
  struct CachedEmbedder : Embedder {
    EmbeddingCache& c;
    std::string n;
    CachedEmbedder(EmbeddingCache& c, std::string n) : c(c), n(std::move(n)) {}
    std::string name() const override { return n; }
    std::vector<double> embed(const std::string& t) override { return c.get(t); }
  } cached(cache, embedder.name());

  const auto cells = text_cells(wf, executions, include_uncertain);
  std::map<std::string, std::vector<double>> step_semantic;
  std::vector<double> all_semantic;
  for (const auto& [key, answers] : cells) {
    if (answers.size() < 2) continue;
    std::vector<std::string> texts;
    for (const auto& [_, t] : answers) texts.push_back(t);
    const auto triple = pairwise_similarity(texts, annotator, cached);
    r.cells.push_back({key.first, key.second, answers.size(), triple});
    step_semantic[key.second].push_back(triple.semantic);
    all_semantic.push_back(triple.semantic);
  }
  if (!all_semantic.empty()) r.mean_semantic = mean_std(all_semantic).mean;
  r.flags = disagreement_flags(agent_similarities(cells, cache));
  r.propagation = disagreement_propagation(r.flags, wf);

  const auto bwf = boolean_keep_set(wf);
  const auto matrix = boolean_matrix({bwf.begin(), bwf.end()}, executions, include_uncertain);
  try {
    r.alpha = krippendorff_alpha(matrix.values);
  } catch (const Error&) {
  }
  std::map<std::string, double> per_step;
  for (const auto& [step, xs] : step_semantic) per_step[step] = mean_std(xs).mean;
  try {
    r.tau = position_similarity_correlation(linearize(wf), per_step);
  } catch (const Error&) {
  }
  return r;
}

inline nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

inline nlohmann::json to_json(const Report& r) {
  nlohmann::json cells = nlohmann::json::array(), flags = nlohmann::json::array();
  for (const auto& c : r.cells)
    cells.push_back({{"document", c.document},
                     {"step", c.step},
                     {"answers", c.answers},
                     {"lexical", c.similarity.lexical},
                     {"syntactic", c.similarity.syntactic},
                     {"semantic", c.similarity.semantic}});
  for (const auto& f : r.flags)
    flags.push_back({{"document", f.document}, {"step", f.step}, {"agent", f.agent}, {"flagged", f.flagged}});
  return {{"embedder", r.embedder},
          {"cells", cells},
          {"flags", flags},
          {"aggregates",
           {{"alpha", optional_json(r.alpha)},
            {"mean_semantic", optional_json(r.mean_semantic)},
            {"kendall_tau", optional_json(r.tau)},
            {"disagreement_base_rate", r.propagation.base_rate},
            {"disagreement_conditional_rate", optional_json(r.propagation.conditional_rate)}}}};
}

// Long format: one line per (document, step, metric).
inline std::string to_csv(const Report& r) {
  std::ostringstream os;
  os.precision(17);
  os << "document,step,metric,value\n";
  for (const auto& c : r.cells) {
    os << c.document << ',' << c.step << ",lexical," << c.similarity.lexical << '\n';
    os << c.document << ',' << c.step << ",syntactic," << c.similarity.syntactic << '\n';
    os << c.document << ',' << c.step << ",semantic," << c.similarity.semantic << '\n';
  }
  for (const auto& f : r.flags) os << f.document << ',' << f.step << ",flag:" << f.agent << ',' << f.flagged << '\n';
  return os.str();
}

}  // namespace nldar::variability
