// SPDX-License-Identifier: Apache-2.0
//
// Corpus curation: motion-specific prompt extraction, keypoint offset and
// whole-body filtering, and the line-delimited clip manifest.
#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "moco/tensor.hpp"

namespace moco::curation {

class InvalidLength : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class AdapterUnavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- prompts

struct MotionLexicon {
  std::vector<std::string> verbs;         // base forms
  std::vector<std::string> subjects;      // person nouns and pronouns
  std::vector<std::string> complements;   // body parts, directions and particles kept after a verb

  /// The shipped lexicon (60 motion verbs).
  static const MotionLexicon& standard();
  bool is_motion_verb(const std::string& word) const;
};

struct ExtractedPrompt {
  std::string text;
  bool no_motion_verb = false;
};

/// Keeps the subject phrase and the motion verb phrases, lowercased. Without
/// a motion verb returns the input unchanged with no_motion_verb set.
ExtractedPrompt extract_motion_prompt(const std::string& prompt,
                                      const MotionLexicon& lexicon = MotionLexicon::standard());

class PromptExtractor {
 public:
  virtual ~PromptExtractor() = default;
  virtual ExtractedPrompt extract(const std::string& prompt) const = 0;
};

class LexiconExtractor : public PromptExtractor {
 public:
  ExtractedPrompt extract(const std::string& prompt) const override { return extract_motion_prompt(prompt); }
};

/// Slot for a language-model extractor; always throws AdapterUnavailable.
class LanguageModelExtractor : public PromptExtractor {
 public:
  explicit LanguageModelExtractor(std::string endpoint) : endpoint_(std::move(endpoint)) {}
  ExtractedPrompt extract(const std::string& prompt) const override;

 private:
  std::string endpoint_;
};

// ---------------------------------------------------------------- filtering

/// 2D keypoints (T_v, K, 2) as (x / W, y / H).
struct Keypoints2D {
  Tensor points;
  std::size_t width = 0;
  std::size_t height = 0;
};

void write_keypoints2d(const std::filesystem::path& path, const Keypoints2D& kp);
Keypoints2D read_keypoints2d(const std::filesystem::path& path);

/// Mean over keypoints of the summed consecutive-frame displacement, each
/// step measured as sqrt(du^2 + dv^2) / sqrt(2). Throws InvalidLength for T_v < 2.
double offset_score(const Tensor& keypoints2d);

/// Fraction of frames in which every listed joint lies inside [0, 1]^2 (all joints when empty).
double whole_body_fraction(const Tensor& keypoints2d, const std::vector<std::size_t>& joints = {});

struct ClipRecord {
  std::string clip_id;
  std::string prompt;
  std::string motion_prompt;
  bool no_motion_verb = false;
  std::string keypoint_path;
  std::string video_path;
  std::string mask_path;
  double offset_score = 0.0;
  double whole_body_fraction = 0.0;
  bool whole_body = false;
  bool accepted = false;
  std::vector<std::string> reject_reasons;
};

struct FilterOptions {
  double threshold = 0.1;
  double min_frame_fraction = 0.9;
};

/// accepted iff offset_score > threshold and whole_body_fraction >= min_frame_fraction.
ClipRecord filter_clip(ClipRecord record, const FilterOptions& options = {});

// ---------------------------------------------------------------- manifest

constexpr const char* kManifestFormat = "moco-manifest/1";

/// Clip directory file names.
struct ClipFiles {
  static constexpr const char* prompt = "prompt.txt";
  static constexpr const char* keypoints2d = "keypoints2d.json";
  static constexpr const char* keypoints3d = "keypoints3d.json";
  static constexpr const char* video = "video.arr";
  static constexpr const char* skeleton = "skeleton.arr";
  static constexpr const char* mask = "mask.arr";
  static constexpr const char* tracks = "tracks.json";
};

/// One record per clip subdirectory, sorted by clip id. Clips with missing
/// files are kept as rejected with reason "incomplete".
std::vector<ClipRecord> curate_corpus(const std::filesystem::path& corpus_dir, const FilterOptions& options = {});

/// Header line {"format": ...} followed by one JSON record per line.
std::string manifest_text(const std::vector<ClipRecord>& records);
void build_manifest(const std::filesystem::path& corpus_dir, const std::filesystem::path& out,
                    const FilterOptions& options = {});
std::vector<ClipRecord> read_manifest(const std::filesystem::path& path);

}  // namespace moco::curation
