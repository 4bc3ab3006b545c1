// Copyright 2026 The DeCoOp Lab Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// key=value line records used inside checkpoints.

#include "decoop/prompt_tuning.hpp"
#include "text_format.hpp"

#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <string_view>

namespace decoop {

inline constexpr int kTrainConfigFields = 7;

class KeyValueReader {
 public:
  /// Consumes exactly `lines` key=value lines from `in`.
  KeyValueReader(std::istream &in, int lines) {
    std::string line;
    for (int i = 0; i < lines; ++i) {
      if (!std::getline(in, line)) throw FormatError("truncated key-value record");
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw FormatError("expected key=value, got '" + line + "'");
      values_[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }

  std::string take(std::string_view key) {
    auto it = values_.find(std::string(key));
    if (it == values_.end()) throw FormatError("missing key '" + std::string(key) + "'");
    std::string v = std::move(it->second);
    values_.erase(it);
    return v;
  }

 private:
  std::map<std::string, std::string> values_;
};

inline void write_train_config(std::ostream &out, const TrainConfig &cfg, std::string_view prefix) {
  out << prefix << "epochs=" << cfg.epochs << '\n'
      << prefix << "lr=" << text::format_double(cfg.lr) << '\n'
      << prefix << "batch_size=" << cfg.batch_size << '\n'
      << prefix << "seed=" << cfg.seed << '\n'
      << prefix << "margin=" << text::format_double(cfg.margin) << '\n'
      << prefix << "prompt_length=" << cfg.prompt_length << '\n'
      << prefix << "init_scale=" << text::format_double(cfg.init_scale) << '\n';
}

inline TrainConfig read_train_config(KeyValueReader &kv, std::string_view prefix) {
  const std::string p(prefix);
  TrainConfig cfg;
  cfg.epochs = text::parse_int<int>(kv.take(p + "epochs"));
  cfg.lr = text::parse_double(kv.take(p + "lr"));
  cfg.batch_size = text::parse_int<int>(kv.take(p + "batch_size"));
  cfg.seed = text::parse_int<std::uint64_t>(kv.take(p + "seed"));
  cfg.margin = text::parse_double(kv.take(p + "margin"));
  cfg.prompt_length = text::parse_int<int>(kv.take(p + "prompt_length"));
  cfg.init_scale = text::parse_double(kv.take(p + "init_scale"));
  cfg.validate();
  return cfg;
}

}  // namespace decoop
