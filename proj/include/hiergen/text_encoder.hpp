#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include <torch/torch.h>

#include "hiergen/config.hpp"
#include "hiergen/json_io.hpp"

namespace hiergen {

// Lowercased word tokens with punctuation stripped.
std::vector<std::string> tokenize(const std::string& text);

class Vocabulary {
 public:
  static constexpr std::int64_t kPad = 0;
  static constexpr std::int64_t kUnk = 1;
  static constexpr std::int64_t kBos = 2;
  static constexpr std::int64_t kEos = 3;
  static constexpr std::int64_t kNumReserved = 4;

  // Keeps tokens seen at least min_freq times, ordered by descending
  // frequency and then lexicographically.
  static Vocabulary build(const std::vector<std::string>& corpus, int min_freq);

  std::int64_t size() const { return static_cast<std::int64_t>(tokens_.size()); }
  std::int64_t id(const std::string& token) const;
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  const std::string& token(std::int64_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  // Token ids of the text, unseen words mapped to UNK.
  std::vector<std::int64_t> encode(const std::string& text) const;

  Json to_json() const;
  static Vocabulary from_json(const Json& value);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  void add(const std::string& token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int64_t> ids_;
};

// Token embeddings -> LSTM -> linear projection of the final hidden state.
class TextEncoderImpl : public torch::nn::Module {
 public:
  TextEncoderImpl(std::int64_t vocab_size, const TextConfig& config);

  // ids: [N, T] int64, padded with kPad; lengths: per-row token counts (>= 1).
  torch::Tensor forward(const torch::Tensor& ids, const std::vector<std::int64_t>& lengths);
  std::int64_t embedding_dim() const { return embedding_dim_; }

 private:
  std::int64_t embedding_dim_;
  torch::nn::Embedding embed_{nullptr};
  torch::nn::LSTMCell cell_{nullptr};
  torch::nn::Linear project_{nullptr};
};
TORCH_MODULE(TextEncoder);

// Pads token-id lists into a [N, T] tensor.
torch::Tensor pad_token_ids(const std::vector<std::vector<std::int64_t>>& ids, std::vector<std::int64_t>& lengths);

// Embeds whole texts; throws on text without tokens.
torch::Tensor encode_texts(TextEncoder& encoder, const Vocabulary& vocab, const std::vector<std::string>& texts);

}  // namespace hiergen
