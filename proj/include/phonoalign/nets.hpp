// Copyright 2026 The phonoalign Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef PHONOALIGN_NETS_HPP_
#define PHONOALIGN_NETS_HPP_

#include <filesystem>
#include <string>
#include <vector>

#include "phonoalign/corpus.hpp"
#include "phonoalign/nn/gru.hpp"
#include "phonoalign/nn/linear.hpp"

namespace phonoalign {

struct NetConfig {
  int feature_dim = 39;
  int inventory_size = 1;
  int encoder_hidden = 256;
  int audio_decoder_hidden = 512;
  int text_decoder_hidden = 256;
  int layers = 1;
  int phonetic_dim = 256;
  int speaker_dim = 256;
  int embed_dim = 64;

  void validate() const;
  std::string to_json() const;
  static NetConfig from_json(const std::string& text);
  bool operator==(const NetConfig&) const = default;
};

/// Stacked bidirectional GRU; the final states of both directions of the top
/// layer are concatenated and projected to the output dimension.
struct Encoder {
  std::vector<nn::GruCell<Real>> forward_cells;
  std::vector<nn::GruCell<Real>> backward_cells;
  nn::Linear<Real> projection;

  Encoder() = default;
  Encoder(int input_dim, int hidden, int layers, int out_dim);

  template <typename F>
  void for_each(const std::string& p, F&& f) {
    for (std::size_t l = 0; l < forward_cells.size(); ++l) {
      forward_cells[l].for_each(p + ".fwd" + std::to_string(l), f);
      backward_cells[l].for_each(p + ".bwd" + std::to_string(l), f);
    }
    projection.for_each(p + ".proj", f);
  }
  template <typename F>
  void for_each(const std::string& p, F&& f) const {
    for (std::size_t l = 0; l < forward_cells.size(); ++l) {
      forward_cells[l].for_each(p + ".fwd" + std::to_string(l), f);
      backward_cells[l].for_each(p + ".bwd" + std::to_string(l), f);
    }
    projection.for_each(p + ".proj", f);
  }
};

/// Conditioned GRU decoder. The conditioning vector sets every layer's
/// initial state (tanh of a linear map) and is appended to the first layer's
/// input at every step.
struct Decoder {
  std::vector<nn::Linear<Real>> init;
  std::vector<nn::GruCell<Real>> cells;
  nn::Linear<Real> output;

  Decoder() = default;
  Decoder(int step_input_dim, int cond_dim, int hidden, int layers, int out_dim);

  template <typename F>
  void for_each(const std::string& p, F&& f) {
    for (std::size_t l = 0; l < cells.size(); ++l) {
      init[l].for_each(p + ".init" + std::to_string(l), f);
      cells[l].for_each(p + ".gru" + std::to_string(l), f);
    }
    output.for_each(p + ".out", f);
  }
  template <typename F>
  void for_each(const std::string& p, F&& f) const {
    for (std::size_t l = 0; l < cells.size(); ++l) {
      init[l].for_each(p + ".init" + std::to_string(l), f);
      cells[l].for_each(p + ".gru" + std::to_string(l), f);
    }
    output.for_each(p + ".out", f);
  }
};

/// All trainable parameters: E_p, E_s, E_t, D_a, D_t and the subword
/// embedding table shared by E_t and D_t. A zero-filled copy doubles as the
/// gradient accumulator and as optimizer state.
struct Model {
  NetConfig config;
  Mat embedding;  // embed_dim x (S + 1); column S is BOS
  Encoder phonetic_encoder;
  Encoder speaker_encoder;
  Encoder text_encoder;
  Decoder audio_decoder;
  Decoder text_decoder;

  static Model create(const NetConfig& config, std::uint64_t seed);
  static Model zeros(const NetConfig& config);

  template <typename F>
  void for_each(F&& f) {
    f(std::string("embedding"), embedding);
    phonetic_encoder.for_each("phonetic_encoder", f);
    speaker_encoder.for_each("speaker_encoder", f);
    text_encoder.for_each("text_encoder", f);
    audio_decoder.for_each("audio_decoder", f);
    text_decoder.for_each("text_decoder", f);
  }
  template <typename F>
  void for_each(F&& f) const {
    f(std::string("embedding"), embedding);
    phonetic_encoder.for_each("phonetic_encoder", f);
    speaker_encoder.for_each("speaker_encoder", f);
    text_encoder.for_each("text_encoder", f);
    audio_decoder.for_each("audio_decoder", f);
    text_decoder.for_each("text_decoder", f);
  }

  std::size_t parameter_count() const;
  void set_zero();
  // this += scale * other (same shapes).
  void add_scaled(const Model& other, Real scale);
};

// ---------------------------------------------------------------------------
// Batched forward / backward. Each input or output batch is a vector of
// per-step matrices with one column per item.

struct SequenceBatch {
  std::vector<Mat> steps;
  std::vector<int> lengths;

  int batch_size() const { return static_cast<int>(lengths.size()); }
  int max_length() const { return static_cast<int>(steps.size()); }
};

SequenceBatch audio_inputs(const std::vector<const Mat*>& frames);
SequenceBatch text_inputs(const Model& model,
                          const std::vector<const std::vector<UnitId>*>& units);
/// Scatters gradients w.r.t. looked-up embeddings back into the table.
void accumulate_text_input_grad(const std::vector<Mat>& d_steps,
                                const std::vector<const std::vector<UnitId>*>& units,
                                Mat& d_embedding);

struct EncoderCache {
  std::vector<std::vector<nn::GruStepCache<Real>>> forward;   // [layer][t]
  std::vector<std::vector<nn::GruStepCache<Real>>> backward;  // [layer][t]
  Mat final_states;
  std::vector<int> lengths;
};

Mat encode(const Encoder& enc, const SequenceBatch& in, EncoderCache* cache);
/// Returns input gradients when `want_input_grad`, else an empty vector.
std::vector<Mat> backward_encode(const Encoder& enc, const EncoderCache& cache,
                                 const Mat& d_out, Encoder& grad, bool want_input_grad);

struct AudioDecoderCache {
  Mat cond;
  std::vector<Mat> init_states;                            // [layer]
  std::vector<std::vector<nn::GruStepCache<Real>>> steps;  // [t][layer]
  std::vector<Mat> top;                                    // [t]
};

/// Autoregressive frame generation for `steps` frames; the first step's
/// previous frame is zero. Returns D x B per step.
std::vector<Mat> run_audio_decoder(const Decoder& dec, const Mat& cond, int steps,
                                   AudioDecoderCache* cache);
/// Returns d/d(cond).
Mat backward_audio_decoder(const Decoder& dec, const AudioDecoderCache& cache,
                           const std::vector<Mat>& d_frames, Decoder& grad);

struct TextDecoderCache {
  Mat cond;
  std::vector<Mat> init_states;
  std::vector<std::vector<nn::GruStepCache<Real>>> steps;  // [t][layer]
  std::vector<Mat> top;
  std::vector<std::vector<UnitId>> inputs;  // [t][column] embedding column fed
};

/// Teacher-forced decoding: len(target) + 1 steps per column (units then
/// EOS). Logits are (S + 1) x B; row S is EOS and is -inf at step 0 since
/// every word has at least one unit.
std::vector<Mat> run_text_decoder_teacher(const Model& model, const Mat& cond,
                                          const std::vector<const std::vector<UnitId>*>& targets,
                                          TextDecoderCache* cache);

struct GreedyDecode {
  std::vector<Mat> logits;                // [t] (S + 1) x B
  std::vector<std::vector<UnitId>> units;  // per column, EOS excluded
};

/// Free-running decoding from the argmax of the previous step. A column whose
/// first emission would be empty takes the best unit at step 0.
GreedyDecode run_text_decoder_greedy(const Model& model, const Mat& cond, int max_len,
                                     TextDecoderCache* cache);

/// Gradients flow to decoder parameters, the embedding rows that were fed as
/// inputs, and the conditioning vector (returned). Fed symbols are constants.
Mat backward_text_decoder(const Model& model, const TextDecoderCache& cache,
                          const std::vector<Mat>& d_logits, Model& grad);

// ---------------------------------------------------------------------------
// Item-level operations.

Vec encode_audio_phonetic(const Model& model, const SpokenWord& x);
Vec encode_speaker(const Model& model, const SpokenWord& x);
Vec encode_text(const Model& model, const TextWord& y);
/// Batched variants: one output column per item.
Mat encode_audio_phonetic(const Model& model, const std::vector<const Mat*>& frames);
Mat encode_speaker(const Model& model, const std::vector<const Mat*>& frames);
Mat encode_text(const Model& model, const std::vector<const std::vector<UnitId>*>& units);

/// T x D reconstruction.
Mat decode_audio(const Model& model, const Vec& phonetic, const Vec& speaker, int frames);
/// Per-step distributions over S units + EOS. With a teacher: len + 1 steps;
/// otherwise greedy until EOS or `max_len` steps.
std::vector<Vec> decode_text(const Model& model, const Vec& phonetic,
                             const TextWord* teacher, int max_len);

// ---------------------------------------------------------------------------
// Binary tensor container shared by checkpoints and alignment maps:
// 8-byte magic, u32 version, u32 header length, header bytes (JSON),
// u32 tensor count, then per tensor u32 name length, name, u32 rows,
// u32 cols, row-major float64; finally a u64 FNV-1a checksum of everything
// before it. All integers little endian.

struct TensorFile {
  std::string header;
  std::vector<std::pair<std::string, Mat>> tensors;

  const Mat& at(const std::string& name) const;
};

inline constexpr std::uint32_t kTensorFileVersion = 1;
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file);
TensorFile read_tensor_file(const std::filesystem::path& path);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);
/// Fails with a config-mismatch error unless the stored config equals
/// `expected`.
Model load_checkpoint(const std::filesystem::path& path, const NetConfig& expected);

}  // namespace phonoalign

#endif  // PHONOALIGN_NETS_HPP_
