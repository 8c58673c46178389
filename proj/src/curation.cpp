// SPDX-License-Identifier: Apache-2.0
#include "moco/curation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <sstream>

#include "json.hpp"
#include "moco/io.hpp"

namespace moco::curation {
namespace {

using nlohmann::json;

std::vector<std::string> lower_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const unsigned char c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c == '\'') {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

bool contains(const std::vector<std::string>& v, const std::string& w) { return std::find(v.begin(), v.end(), w) != v.end(); }

bool is_vowel(char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u'; }

std::set<std::string> inflections(const std::string& base) {
  std::set<std::string> f{base, base + "s", base + "ing"};
  const char last = base.back();
  const auto ends_with = [&](const char* suffix) { return base.ends_with(suffix); };
  if (ends_with("s") || ends_with("x") || ends_with("z") || ends_with("ch") || ends_with("sh") || ends_with("o"))
    f.insert(base + "es");
  if (last == 'e') {
    f.insert(base + "d");
    f.insert(base.substr(0, base.size() - 1) + "ing");
  } else {
    f.insert(base + "ed");
  }
  if (last == 'y' && base.size() > 1 && !is_vowel(base[base.size() - 2])) {
    f.insert(base.substr(0, base.size() - 1) + "ies");
    f.insert(base.substr(0, base.size() - 1) + "ied");
  }
  const std::size_t n = base.size();
  if (n >= 3 && !is_vowel(last) && last != 'w' && last != 'x' && last != 'y' && is_vowel(base[n - 2]) &&
      !is_vowel(base[n - 3])) {
    f.insert(base + last + "ing");
    f.insert(base + last + "ed");
  }
  return f;
}

const std::vector<std::pair<std::string, std::string>>& irregular_forms() {
  static const std::vector<std::pair<std::string, std::string>> forms{
      {"ran", "run"},     {"swam", "swim"},   {"sat", "sit"},     {"stood", "stand"}, {"threw", "throw"},
      {"thrown", "throw"}, {"rode", "ride"},  {"fell", "fall"},   {"spun", "spin"},   {"flew", "fly"},
      {"kicked", "kick"}, {"dove", "dive"},   {"climbed", "climb"}, {"knelt", "kneel"}, {"leapt", "leap"},
      {"swung", "swing"}, {"crept", "creep"}, {"shook", "shake"}, {"lay", "lie"},     {"lying", "lie"}};
  return forms;
}

const std::vector<std::string> kDeterminers{"a", "an", "the", "this", "that", "one", "two", "three", "some", "my", "his", "her", "their", "our"};
const std::vector<std::string> kPossessives{"his", "her", "their", "its", "my", "your", "our", "both"};

}  // namespace

const MotionLexicon& MotionLexicon::standard() {
  static const MotionLexicon lex{
      {"walk",    "run",    "jog",     "sprint", "jump",   "hop",     "skip",    "leap",    "dance",   "spin",
       "turn",    "twirl",  "wave",    "clap",   "kick",   "punch",   "throw",   "catch",   "swing",   "squat",
       "crouch",  "kneel",  "sit",     "stand",  "bend",   "stretch", "lift",    "raise",   "lower",   "push",
       "pull",    "climb",  "crawl",   "roll",   "swim",   "dive",    "ride",    "skate",   "ski",     "lunge",
       "march",   "stomp",  "shuffle", "stride", "stroll", "pace",    "step",    "nod",     "shake",   "bow",
       "reach",   "point",  "fall",    "lie",    "flip",   "box",     "fly",     "creep",   "tiptoe",  "sway"},
      {"man",     "woman",  "person",  "boy",    "girl",   "child",   "kid",     "people",  "dancer",  "athlete",
       "player",  "runner", "someone", "he",     "she",    "they",    "guy",     "lady",    "gentleman", "adult",
       "teenager", "figure", "human",  "individual", "men", "women",  "children", "toddler", "student", "worker"},
      {"up",      "down",   "forward", "forwards", "backward", "backwards", "around", "sideways", "in", "place",
       "hand",    "hands",  "arm",     "arms",   "leg",    "legs",    "foot",    "feet",    "head",    "knee",
       "knees",   "body",   "left",    "right",  "over",   "high",    "low",     "slowly",  "quickly", "fast"}};
  return lex;
}

bool MotionLexicon::is_motion_verb(const std::string& word) const {
  for (const auto& [form, base] : irregular_forms())
    if (form == word && contains(verbs, base)) return true;
  for (const auto& v : verbs)
    if (inflections(v).count(word)) return true;
  return false;
}

ExtractedPrompt extract_motion_prompt(const std::string& prompt, const MotionLexicon& lexicon) {
  const auto words = lower_words(prompt);
  std::size_t first_verb = words.size();
  for (std::size_t i = 0; i < words.size(); ++i)
    if (lexicon.is_motion_verb(words[i])) {
      first_verb = i;
      break;
    }
  if (first_verb == words.size()) return {prompt, true};

  std::vector<std::string> out;
  // Subject: the first person noun before the verb, with an immediately preceding determiner.
  for (std::size_t i = 0; i < first_verb; ++i) {
    if (contains(lexicon.subjects, words[i])) {
      if (i > 0 && contains(kDeterminers, words[i - 1])) out.push_back(words[i - 1]);
      out.push_back(words[i]);
      break;
    }
  }
  bool first_phrase = true;
  for (std::size_t i = first_verb; i < words.size(); ++i) {
    if (!lexicon.is_motion_verb(words[i])) continue;
    if (!first_phrase) out.push_back("and");
    first_phrase = false;
    out.push_back(words[i]);
    std::size_t j = i + 1;
    while (j < words.size()) {
      if (contains(lexicon.complements, words[j])) {
        out.push_back(words[j++]);
      } else if (contains(kPossessives, words[j]) && j + 1 < words.size() &&
                 contains(lexicon.complements, words[j + 1])) {
        out.push_back(words[j++]);
      } else {
        break;
      }
    }
    i = j - 1;
  }
  std::string text;
  for (std::size_t i = 0; i < out.size(); ++i) text += (i ? " " : "") + out[i];
  return {text, false};
}

ExtractedPrompt LanguageModelExtractor::extract(const std::string&) const {
  throw AdapterUnavailable("language-model prompt extractor is not configured (endpoint '" + endpoint_ + "')");
}

void write_keypoints2d(const std::filesystem::path& path, const Keypoints2D& kp) {
  const Shape& s = kp.points.shape();
  if (s.size() != 3 || s[2] != 2) throw ShapeError("keypoints2d must be (T, K, 2), got " + shape_str(s));
  json j;
  j["width"] = kp.width;
  j["height"] = kp.height;
  j["frames"] = s[0];
  j["joints"] = s[1];
  j["points"] = kp.points.data();
  io::write_text(path, j.dump());
}

Keypoints2D read_keypoints2d(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(io::read_text(path));
    Keypoints2D kp;
    kp.width = j.at("width").get<std::size_t>();
    kp.height = j.at("height").get<std::size_t>();
    const std::size_t T = j.at("frames").get<std::size_t>(), K = j.at("joints").get<std::size_t>();
    auto pts = j.at("points").get<std::vector<double>>();
    if (pts.size() != T * K * 2) throw io::IOError("keypoints2d " + path.string() + ": point count mismatch");
    kp.points = Tensor(Shape{T, K, 2}, std::move(pts));
    return kp;
  } catch (const json::exception& e) {
    throw io::IOError("keypoints2d " + path.string() + ": " + e.what());
  }
}

double offset_score(const Tensor& kp) {
  const Shape& s = kp.shape();
  if (s.size() != 3 || s[2] != 2 || s[1] == 0) throw ShapeError("offset_score: expected (T, K, 2), got " + shape_str(s));
  const std::size_t T = s[0], K = s[1];
  if (T < 2) throw InvalidLength("offset_score: need at least 2 frames");
  double total = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    double path = 0.0;
    for (std::size_t t = 1; t < T; ++t) {
      const double du = kp[(t * K + k) * 2] - kp[((t - 1) * K + k) * 2];
      const double dv = kp[(t * K + k) * 2 + 1] - kp[((t - 1) * K + k) * 2 + 1];
      path += std::sqrt(du * du + dv * dv) / std::sqrt(2.0);
    }
    total += path;
  }
  return total / static_cast<double>(K);
}

double whole_body_fraction(const Tensor& kp, const std::vector<std::size_t>& joints) {
  const Shape& s = kp.shape();
  if (s.size() != 3 || s[2] != 2) throw ShapeError("whole_body_fraction: expected (T, K, 2), got " + shape_str(s));
  const std::size_t T = s[0], K = s[1];
  if (T == 0) return 0.0;
  std::vector<std::size_t> idx = joints;
  if (idx.empty())
    for (std::size_t k = 0; k < K; ++k) idx.push_back(k);
  std::size_t good = 0;
  for (std::size_t t = 0; t < T; ++t) {
    bool all = true;
    for (std::size_t k : idx) {
      if (k >= K) throw std::out_of_range("whole_body_fraction: joint index out of range");
      const double u = kp[(t * K + k) * 2], v = kp[(t * K + k) * 2 + 1];
      if (!(u >= 0.0 && u <= 1.0 && v >= 0.0 && v <= 1.0)) all = false;
    }
    good += all ? 1 : 0;
  }
  return static_cast<double>(good) / static_cast<double>(T);
}

ClipRecord filter_clip(ClipRecord r, const FilterOptions& options) {
  r.whole_body = r.whole_body_fraction >= options.min_frame_fraction;
  const bool enough_motion = r.offset_score > options.threshold;
  r.reject_reasons.erase(std::remove_if(r.reject_reasons.begin(), r.reject_reasons.end(),
                                        [](const std::string& s) { return s == "low_offset" || s == "not_whole_body"; }),
                         r.reject_reasons.end());
  if (!enough_motion) r.reject_reasons.push_back("low_offset");
  if (!r.whole_body) r.reject_reasons.push_back("not_whole_body");
  r.accepted = r.reject_reasons.empty();
  return r;
}

std::vector<ClipRecord> curate_corpus(const std::filesystem::path& corpus_dir, const FilterOptions& options) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(corpus_dir)) throw io::IOError("corpus directory not found: " + corpus_dir.string());
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(corpus_dir))
    if (entry.is_directory()) ids.push_back(entry.path().filename().string());
  std::sort(ids.begin(), ids.end());

  std::vector<ClipRecord> records;
  for (const auto& id : ids) {
    const fs::path dir = corpus_dir / id;
    ClipRecord r;
    r.clip_id = id;
    r.keypoint_path = id + "/" + ClipFiles::keypoints2d;
    r.video_path = id + "/" + ClipFiles::video;
    r.mask_path = id + "/" + ClipFiles::mask;
    bool complete = true;
    for (const char* f : {ClipFiles::prompt, ClipFiles::keypoints2d, ClipFiles::video, ClipFiles::mask})
      if (!fs::is_regular_file(dir / f)) complete = false;
    if (complete) {
      try {
        r.prompt = io::read_text(dir / ClipFiles::prompt);
        while (!r.prompt.empty() && (r.prompt.back() == '\n' || r.prompt.back() == '\r')) r.prompt.pop_back();
        const auto p = extract_motion_prompt(r.prompt);
        r.motion_prompt = p.text;
        r.no_motion_verb = p.no_motion_verb;
        const auto kp = read_keypoints2d(dir / ClipFiles::keypoints2d);
        r.offset_score = offset_score(kp.points);
        r.whole_body_fraction = whole_body_fraction(kp.points);
        r = filter_clip(std::move(r), options);
      } catch (const std::exception&) {
        complete = false;
      }
    }
    if (!complete) {
      r.accepted = false;
      r.whole_body = false;
      r.reject_reasons = {"incomplete"};
    }
    records.push_back(std::move(r));
  }
  return records;
}

std::string manifest_text(const std::vector<ClipRecord>& records) {
  std::ostringstream out;
  out << json{{"format", kManifestFormat}}.dump() << '\n';
  for (const auto& r : records) {
    json j;
    j["clip_id"] = r.clip_id;
    j["prompt"] = r.prompt;
    j["motion_prompt"] = r.motion_prompt;
    j["no_motion_verb"] = r.no_motion_verb;
    j["offset_score"] = r.offset_score;
    j["whole_body_fraction"] = r.whole_body_fraction;
    j["whole_body"] = r.whole_body;
    j["accepted"] = r.accepted;
    j["reject_reason"] = r.reject_reasons.empty() ? json(nullptr) : json(r.reject_reasons);
    j["keypoint_path"] = r.keypoint_path;
    j["video_path"] = r.video_path;
    j["mask_path"] = r.mask_path;
    j["quality_scores"] = {{"motion_smoothness", nullptr}, {"dynamic_degree", nullptr}, {"aesthetic_quality", nullptr}};
    out << j.dump() << '\n';
  }
  return out.str();
}

void build_manifest(const std::filesystem::path& corpus_dir, const std::filesystem::path& out,
                    const FilterOptions& options) {
  io::write_text(out, manifest_text(curate_corpus(corpus_dir, options)));
}

std::vector<ClipRecord> read_manifest(const std::filesystem::path& path) {
  std::istringstream in(io::read_text(path));
  std::string line;
  std::vector<ClipRecord> records;
  bool header = false;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      if (!header) {
        if (j.value("format", "") != kManifestFormat) throw io::IOError("manifest " + path.string() + ": bad header");
        header = true;
        continue;
      }
      ClipRecord r;
      r.clip_id = j.at("clip_id").get<std::string>();
      r.prompt = j.at("prompt").get<std::string>();
      r.motion_prompt = j.at("motion_prompt").get<std::string>();
      r.no_motion_verb = j.value("no_motion_verb", false);
      r.offset_score = j.at("offset_score").get<double>();
      r.whole_body_fraction = j.value("whole_body_fraction", 0.0);
      r.whole_body = j.at("whole_body").get<bool>();
      r.accepted = j.at("accepted").get<bool>();
      if (!j.at("reject_reason").is_null()) r.reject_reasons = j.at("reject_reason").get<std::vector<std::string>>();
      r.keypoint_path = j.at("keypoint_path").get<std::string>();
      r.video_path = j.at("video_path").get<std::string>();
      r.mask_path = j.at("mask_path").get<std::string>();
      records.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw io::IOError("manifest " + path.string() + ": " + e.what());
  }
  if (!header) throw io::IOError("manifest " + path.string() + ": missing header");
  return records;
}

}  // namespace moco::curation
