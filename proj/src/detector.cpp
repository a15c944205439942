#include "airtrace/detector.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <ostream>

#include "airtrace/errors.hpp"

namespace airtrace {

FrameScore frame_score(const std::vector<FrameImage>& input_seq,
                       const std::vector<FrameImage>& output_seq, double t1,
                       const SsimParams& params) {
  if (input_seq.size() != output_seq.size() || input_seq.empty()) {
    throw ContractError("frame_score: sequence lengths differ or empty");
  }
  FrameScore fs;
  fs.image_scores.reserve(input_seq.size());
  double sum = 0.0;
  for (size_t i = 0; i < input_seq.size(); i++) {
    double s = ssim(input_seq[i], output_seq[i], params);
    fs.image_scores.push_back(s);
    sum += s;
  }
  fs.score = sum / static_cast<double>(input_seq.size());
  fs.suspicious = fs.score < t1;
  return fs;
}

double calibrate_t1(std::vector<double> validation_scores, double pct) {
  if (validation_scores.empty()) {
    throw ContractError("calibrate_t1: no validation scores");
  }
  if (pct < 0.0 || pct > 1.0) throw DomainError("calibrate_t1: pct out of range");
  std::sort(validation_scores.begin(), validation_scores.end());
  const size_t n = validation_scores.size();
  double h = pct * static_cast<double>(n - 1);
  size_t lo = static_cast<size_t>(h);
  if (lo + 1 >= n) return validation_scores[n - 1];
  double frac = h - static_cast<double>(lo);
  return validation_scores[lo] +
         frac * (validation_scores[lo + 1] - validation_scores[lo]);
}

Detector::Detector(int w, int t2) : w_(w), t2_(t2) {
  if (w < 1) throw ContractError("detect: w must be positive");
  if (w < t2) throw ContractError("detect: w must be >= t2");
}

bool Detector::push(const FrameScore& score, WindowVerdict* out) {
  if (buf_.size() == static_cast<size_t>(w_)) buf_.erase(buf_.begin());
  buf_.push_back(score);
  seen_++;
  if (buf_.size() < static_cast<size_t>(w_)) return false;

  out->window_end_index = seen_ - 1;
  out->scores.clear();
  out->suspicious_count = 0;
  for (const FrameScore& f : buf_) {
    out->scores.push_back(f.score);
    if (f.suspicious) out->suspicious_count++;
  }
  out->anomalous = out->suspicious_count > t2_;
  return true;
}

std::vector<WindowVerdict> detect(const std::vector<FrameScore>& scores, int w,
                                  int t2) {
  Detector det(w, t2);
  std::vector<WindowVerdict> out;
  WindowVerdict v;
  for (const FrameScore& s : scores) {
    if (det.push(s, &v)) out.push_back(v);
  }
  return out;
}

void write_verdicts_csv(std::ostream& out,
                        const std::vector<WindowVerdict>& verdicts) {
  out << "window_end_index,score_list,suspicious_count,anomalous\n";
  char buf[32];
  for (const WindowVerdict& v : verdicts) {
    out << v.window_end_index << ',';
    // score_list is semicolon separated inside one CSV field.
    for (size_t i = 0; i < v.scores.size(); i++) {
      auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v.scores[i]);
      (void)ec;
      out.write(buf, p - buf);
      if (i + 1 < v.scores.size()) out << ';';
    }
    out << ',' << v.suspicious_count << ',' << (v.anomalous ? 1 : 0) << '\n';
  }
  if (!out) throw IoError("verdicts: write failure");
}

}  // namespace airtrace
