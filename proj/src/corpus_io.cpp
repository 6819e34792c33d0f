#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "refpred/corpus.hpp"
#include "text_util.hpp"

namespace refpred {
namespace {

constexpr std::string_view kNone = "-";

std::optional<std::string> optional_field(std::string_view f) {
  if (f == kNone) return std::nullopt;
  return std::string(f);
}

std::string join(const std::vector<std::string>& items, char sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

std::string mention_locus(const Story& story, std::size_t idx, const Mention& m) {
  std::ostringstream os;
  os << "story " << story.id << ", mention " << idx << " (dr " << m.dr_id << ", span "
     << m.start << ":" << m.end << ")";
  return os.str();
}

class Parser {
 public:
  explicit Parser(std::string source) : source_(std::move(source)) {}

  void line(std::string_view raw) {
    ++line_no_;
    std::string_view text = detail::strip_cr(raw);
    if (text.empty() || text.front() == '#') return;
    auto f = detail::split(text, '\t');
    if (f[0] == "SCENARIO") {
      scenario(f);
    } else if (f[0] == "STORY") {
      story(f);
    } else if (f[0] == "TOK") {
      token(f);
    } else if (f[0] == "MEN") {
      mention(f);
    } else {
      fail("unknown record kind '" + std::string(f[0]) + "'");
    }
  }

  Corpus finish() {
    std::map<std::string, ScenarioCorpus> by_id;
    for (auto& sc : scenarios_) by_id[sc.id].scenario = sc;
    for (auto& st : stories_) {
      std::stable_sort(st.mentions.begin(), st.mentions.end(),
                       [](const Mention& a, const Mention& b) { return a.head_index < b.head_index; });
      auto& sc = by_id.at(st.scenario_id);
      validate_story(st, sc.scenario);
      sc.stories.push_back(std::move(st));
    }
    Corpus out;
    for (auto& [id, sc] : by_id) {
      std::sort(sc.stories.begin(), sc.stories.end(),
                [](const Story& a, const Story& b) { return a.id < b.id; });
      out.push_back(std::move(sc));
    }
    return out;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw CorpusParseError(source_, line_no_, what);
  }

  void expect_fields(const std::vector<std::string_view>& f, std::size_t n) const {
    if (f.size() != n) {
      fail("expected " + std::to_string(n) + " fields in " + std::string(f[0]) + " record, got " +
           std::to_string(f.size()));
    }
  }

  int int_field(std::string_view f, const char* name) const {
    auto v = detail::parse_int(f);
    if (!v) fail(std::string("field '") + name + "' is not an integer: '" + std::string(f) + "'");
    return *v;
  }

  std::vector<std::string> label_list(std::string_view f, const char* name) const {
    std::vector<std::string> out;
    std::set<std::string> seen;
    if (f.empty() || f == kNone) fail(std::string(name) + " list is empty");
    for (auto part : detail::split(f, '|')) {
      if (part.empty()) fail(std::string("empty label in ") + name + " list");
      if (!seen.insert(std::string(part)).second) {
        fail(std::string("duplicate label '") + std::string(part) + "' in " + name + " list");
      }
      out.emplace_back(part);
    }
    return out;
  }

  void scenario(const std::vector<std::string_view>& f) {
    expect_fields(f, 4);
    Scenario sc;
    sc.id = std::string(f[1]);
    if (sc.id.empty()) fail("empty scenario id");
    for (const auto& s : scenarios_) {
      if (s.id == sc.id) fail("duplicate scenario '" + sc.id + "'");
    }
    sc.participant_types = label_list(f[2], "participant type");
    sc.event_types = label_list(f[3], "event type");
    scenarios_.push_back(std::move(sc));
  }

  void story(const std::vector<std::string_view>& f) {
    expect_fields(f, 3);
    Story st;
    st.id = std::string(f[1]);
    st.scenario_id = std::string(f[2]);
    if (st.id.empty()) fail("empty story id");
    if (story_index_.count(st.id)) fail("duplicate story '" + st.id + "'");
    if (std::none_of(scenarios_.begin(), scenarios_.end(),
                     [&](const Scenario& s) { return s.id == st.scenario_id; })) {
      fail("story '" + st.id + "' references unknown scenario '" + st.scenario_id + "'");
    }
    story_index_[st.id] = stories_.size();
    stories_.push_back(std::move(st));
  }

  void token(const std::vector<std::string_view>& f) {
    expect_fields(f, 8);
    if (stories_.empty()) fail("TOK record before any STORY record");
    Story& st = stories_.back();
    Token t;
    t.index = int_field(f[1], "index");
    if (t.index != static_cast<int>(st.tokens.size())) {
      fail("token index " + std::to_string(t.index) + " out of sequence (expected " +
           std::to_string(st.tokens.size()) + ")");
    }
    t.surface = std::string(f[2]);
    t.lemma = std::string(f[3]);
    t.sentence_index = int_field(f[4], "sentence_index");
    t.dep_relation = f[5] == kNone ? std::string("none") : std::string(f[5]);
    if (f[6] != kNone) t.head_index = int_field(f[6], "head_index");
    t.event_type = optional_field(f[7]);
    st.tokens.push_back(std::move(t));
  }

  void mention(const std::vector<std::string_view>& f) {
    expect_fields(f, 8);
    Mention m;
    m.story_id = std::string(f[1]);
    auto it = story_index_.find(m.story_id);
    if (it == story_index_.end()) fail("mention references unknown story '" + m.story_id + "'");
    auto span = detail::split(f[2], ':');
    if (span.size() != 2) fail("span must be 'start:end', got '" + std::string(f[2]) + "'");
    m.start = int_field(span[0], "span start");
    m.end = int_field(span[1], "span end");
    m.head_index = int_field(f[3], "head_index");
    m.dr_id = std::string(f[4]);
    if (m.dr_id.empty() || m.dr_id == kNone) fail("mention without dr_id");
    m.participant_type = optional_field(f[5]);
    auto form = parse_re_form(f[6]);
    if (!form) fail("unknown re_form '" + std::string(f[6]) + "'");
    m.re_form = *form;
    auto person = parse_person(f[7]);
    if (!person) fail("unknown person '" + std::string(f[7]) + "'");
    m.person = *person;
    stories_[it->second].mentions.push_back(std::move(m));
  }

  std::string source_;
  std::size_t line_no_ = 0;
  std::vector<Scenario> scenarios_;
  std::vector<Story> stories_;
  std::unordered_map<std::string, std::size_t> story_index_;
};

}  // namespace

CorpusParseError::CorpusParseError(const std::string& file, std::size_t line,
                                   const std::string& what)
    : CorpusError(file + ":" + std::to_string(line) + ": " + what), line_(line) {}

void validate_story(const Story& story, const Scenario& scenario) {
  auto fail = [&](const std::string& what) {
    throw CorpusValidationError("story " + story.id + ": " + what);
  };
  if (story.scenario_id != scenario.id) fail("scenario mismatch");
  if (story.tokens.empty()) fail("story has no tokens");
  const int n = static_cast<int>(story.tokens.size());
  int prev_sentence = 0;
  for (const Token& t : story.tokens) {
    std::string locus = "token " + std::to_string(t.index) + " ('" + t.surface + "')";
    if (t.head_index) {
      if (*t.head_index == t.index) fail(locus + " is its own head");
      if (*t.head_index < 0 || *t.head_index >= n) fail(locus + " has head outside the story");
    }
    if (t.sentence_index < prev_sentence) fail(locus + " has decreasing sentence index");
    prev_sentence = t.sentence_index;
    if (t.event_type && !scenario.has_event_type(*t.event_type)) {
      fail(locus + " has event type '" + *t.event_type + "' not in scenario '" + scenario.id +
           "' inventory");
    }
  }
  std::set<int> heads;
  for (std::size_t i = 0; i < story.mentions.size(); ++i) {
    const Mention& m = story.mentions[i];
    std::string locus = mention_locus(story, i, m);
    if (m.story_id != story.id) throw CorpusValidationError(locus + ": story id mismatch");
    if (m.start < 0 || m.end > n || m.start >= m.end) {
      throw CorpusValidationError(locus + ": span outside the story or empty");
    }
    if (m.head_index < m.start || m.head_index >= m.end) {
      throw CorpusValidationError(locus + ": head " + std::to_string(m.head_index) +
                                  " not inside span");
    }
    if (!heads.insert(m.head_index).second) {
      throw CorpusValidationError(locus + ": head shared with another mention");
    }
    if (m.participant_type && !scenario.has_participant_type(*m.participant_type)) {
      throw CorpusValidationError(locus + ": participant type '" + *m.participant_type +
                                  "' not in scenario '" + scenario.id + "' inventory");
    }
  }
}

Corpus parse_corpus(std::string_view text, const std::string& source_name) {
  Parser parser(source_name);
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) {
      if (pos < text.size()) parser.line(text.substr(pos));
      break;
    }
    parser.line(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  return parser.finish();
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open corpus file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_corpus(buf.str(), path.string());
}

std::string format_corpus(const Corpus& corpus) {
  std::ostringstream os;
  for (const auto& sc : corpus) {
    os << "SCENARIO\t" << sc.scenario.id << '\t' << join(sc.scenario.participant_types, '|')
       << '\t' << join(sc.scenario.event_types, '|') << '\n';
  }
  for (const auto& sc : corpus) {
    for (const auto& st : sc.stories) {
      os << "STORY\t" << st.id << '\t' << st.scenario_id << '\n';
      for (const auto& t : st.tokens) {
        os << "TOK\t" << t.index << '\t' << t.surface << '\t' << t.lemma << '\t'
           << t.sentence_index << '\t' << t.dep_relation << '\t'
           << (t.head_index ? std::to_string(*t.head_index) : std::string(kNone)) << '\t'
           << t.event_type.value_or(std::string(kNone)) << '\n';
      }
      for (const auto& m : st.mentions) {
        os << "MEN\t" << m.story_id << '\t' << m.start << ':' << m.end << '\t' << m.head_index
           << '\t' << m.dr_id << '\t' << m.participant_type.value_or(std::string(kNone)) << '\t'
           << to_string(m.re_form) << '\t' << to_string(m.person) << '\n';
      }
    }
  }
  return os.str();
}

}  // namespace refpred
