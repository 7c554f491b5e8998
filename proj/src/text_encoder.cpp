#include "hiergen/text_encoder.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include "hiergen/error.hpp"

namespace hiergen {

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  for (unsigned char ch : text) {
    if (std::isalnum(ch)) {
      current += static_cast<char>(std::tolower(ch));
    } else if (std::isspace(ch)) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

void Vocabulary::add(const std::string& token) {
  ids_.emplace(token, static_cast<std::int64_t>(tokens_.size()));
  tokens_.push_back(token);
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus, int min_freq) {
  if (corpus.empty()) throw Error(ErrorCode::kInvalidArgument, "cannot build a vocabulary from an empty corpus");
  std::map<std::string, int> freq;
  for (const auto& text : corpus) {
    for (auto& tok : tokenize(text)) ++freq[tok];
  }
  std::vector<std::pair<std::string, int>> kept;
  for (const auto& [tok, n] : freq) {
    if (n >= min_freq) kept.emplace_back(tok, n);
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary vocab;
  for (const char* reserved : {"<pad>", "<unk>", "<bos>", "<eos>"}) vocab.add(reserved);
  for (const auto& [tok, n] : kept) vocab.add(tok);
  return vocab;
}

std::int64_t Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

std::vector<std::int64_t> Vocabulary::encode(const std::string& text) const {
  std::vector<std::int64_t> out;
  for (const auto& tok : tokenize(text)) out.push_back(id(tok));
  return out;
}

Json Vocabulary::to_json() const {
  Json pairs = Json::array();
  for (std::size_t i = 0; i < tokens_.size(); ++i) pairs.push_back(Json::array({tokens_[i], i}));
  return pairs;
}

Vocabulary Vocabulary::from_json(const Json& value) {
  Vocabulary vocab;
  if (!value.is_array()) throw Error(ErrorCode::kParse, "vocabulary must be an array of [token, id] pairs");
  for (std::size_t i = 0; i < value.size(); ++i) {
    const auto& pair = value[i];
    if (!pair.is_array() || pair.size() != 2 || pair[1].get<std::size_t>() != i) {
      throw Error(ErrorCode::kParse, "vocabulary ids must be contiguous from 0", "vocab[" + std::to_string(i) + "]");
    }
    vocab.add(pair[0].get<std::string>());
  }
  if (vocab.size() < kNumReserved) throw Error(ErrorCode::kParse, "vocabulary lacks reserved tokens");
  return vocab;
}

TextEncoderImpl::TextEncoderImpl(std::int64_t vocab_size, const TextConfig& config)
    : embedding_dim_(config.embedding_dim) {
  embed_ = register_module("embed", torch::nn::Embedding(vocab_size, config.token_dim));
  cell_ = register_module("cell", torch::nn::LSTMCell(config.token_dim, config.hidden_dim));
  project_ = register_module("project", torch::nn::Linear(config.hidden_dim, config.embedding_dim));
}

torch::Tensor TextEncoderImpl::forward(const torch::Tensor& ids, const std::vector<std::int64_t>& lengths) {
  const auto n = ids.size(0);
  const auto steps = ids.size(1);
  if (static_cast<std::int64_t>(lengths.size()) != n) throw Error(ErrorCode::kShapeMismatch, "one length per row is required");
  for (auto len : lengths) {
    if (len < 1) throw Error(ErrorCode::kInvalidArgument, "cannot encode empty text");
  }
  const auto opts = project_->weight.options();
  auto h = torch::zeros({n, cell_->options.hidden_size()}, opts);
  auto c = torch::zeros_like(h);
  auto len = torch::tensor(lengths, torch::kInt64);
  auto tokens = embed_(ids);
  for (std::int64_t t = 0; t < steps; ++t) {
    auto [h_new, c_new] = cell_(tokens.select(1, t), std::make_tuple(h, c));
    // Rows whose text has ended keep their final state.
    auto live = (len > t).to(opts.dtype()).unsqueeze(1);
    h = live * h_new + (1 - live) * h;
    c = live * c_new + (1 - live) * c;
  }
  return project_(h);
}

torch::Tensor pad_token_ids(const std::vector<std::vector<std::int64_t>>& ids, std::vector<std::int64_t>& lengths) {
  lengths.clear();
  std::size_t longest = 1;
  for (const auto& row : ids) longest = std::max(longest, row.size());
  auto out = torch::full({static_cast<std::int64_t>(ids.size()), static_cast<std::int64_t>(longest)},
                         Vocabulary::kPad, torch::kInt64);
  auto acc = out.accessor<std::int64_t, 2>();
  for (std::size_t r = 0; r < ids.size(); ++r) {
    for (std::size_t t = 0; t < ids[r].size(); ++t) acc[static_cast<long>(r)][static_cast<long>(t)] = ids[r][t];
    lengths.push_back(static_cast<std::int64_t>(ids[r].size()));
  }
  return out;
}

torch::Tensor encode_texts(TextEncoder& encoder, const Vocabulary& vocab, const std::vector<std::string>& texts) {
  std::vector<std::vector<std::int64_t>> ids;
  for (const auto& t : texts) {
    ids.push_back(vocab.encode(t));
    if (ids.back().empty()) throw Error(ErrorCode::kInvalidArgument, "text has no tokens", "text");
  }
  std::vector<std::int64_t> lengths;
  auto padded = pad_token_ids(ids, lengths);
  return encoder->forward(padded, lengths);
}

}  // namespace hiergen
