#include "icbir/runconfig.hpp"

#include <json.hpp>

namespace icbir {

using nlohmann::json;

void RunConfig::validate() const {
  if (s < 8) raise(ErrorCode::Config, "config: grid edge s must be >= 8");
  if (h < 1 || l < 1) raise(ErrorCode::Config, "config: h and l must be >= 1");
  if (!(beta >= 0.0f)) raise(ErrorCode::Config, "config: beta must be >= 0");
  if (!(gamma >= 0.0f)) raise(ErrorCode::Config, "config: gamma must be >= 0");
  if (!(lr > 0.0f)) raise(ErrorCode::Config, "config: lr must be > 0");
  if (batch < 1) raise(ErrorCode::Config, "config: batch must be >= 1");
  if (block_n < 1 || block_m < 1) {
    raise(ErrorCode::Config, "config: block n and m must be >= 1");
  }
  if (block_n > s) {
    raise(ErrorCode::Config, "config: block n exceeds the slice count");
  }
  if (class_names.size() < 2) {
    raise(ErrorCode::Config, "config: need at least 2 class names");
  }
  if (xi.empty() || (xi.size() != 1 && xi.size() != class_names.size())) {
    raise(ErrorCode::Config, "config: xi needs 1 value or one per class");
  }
  for (float x : xi) {
    if (!(x >= 0.0f && x <= 1.0f)) {
      raise(ErrorCode::Config, "config: every xi must lie in [0,1]");
    }
  }
  if (r < 1 || r > 3) raise(ErrorCode::Config, "config: r must be 1, 2 or 3");
  if (k < 1) raise(ErrorCode::Config, "config: k must be >= 1");
  if (!(highlight >= 0.0f && highlight <= 1.0f)) {
    raise(ErrorCode::Config, "config: highlight threshold must lie in [0,1]");
  }
  if (!(temperature > 0.0f)) {
    raise(ErrorCode::Config, "config: temperature must be > 0");
  }
  if (normal_class < 1 || static_cast<std::size_t>(normal_class) > class_names.size()) {
    raise(ErrorCode::Config, "config: normal_class out of range");
  }
  if (threads < 0) raise(ErrorCode::Config, "config: threads must be >= 0");
}

std::string RunConfig::to_json() const {
  json j;
  j["s"] = s;
  j["h"] = h;
  j["l"] = l;
  j["beta"] = beta;
  j["gamma"] = gamma;
  j["lr"] = lr;
  j["epochs"] = epochs;
  j["batch"] = batch;
  j["seed"] = seed;
  j["block_n"] = block_n;
  j["block_m"] = block_m;
  j["xi"] = xi;
  j["r"] = r;
  j["k"] = k;
  j["highlight"] = highlight;
  j["temperature"] = temperature;
  j["normal_class"] = normal_class;
  j["class_names"] = class_names;
  j["threads"] = threads;
  return j.dump();
}

RunConfig RunConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    raise(ErrorCode::Format, std::string("config: invalid JSON: ") + e.what());
  }
  try {
    RunConfig c;
    c.s = j.at("s").get<std::size_t>();
    c.h = j.at("h").get<std::size_t>();
    c.l = j.at("l").get<std::size_t>();
    c.beta = j.at("beta").get<float>();
    c.gamma = j.at("gamma").get<float>();
    c.lr = j.at("lr").get<float>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.batch = j.at("batch").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.block_n = j.at("block_n").get<std::size_t>();
    c.block_m = j.at("block_m").get<std::size_t>();
    c.xi = j.at("xi").get<std::vector<float>>();
    c.r = j.at("r").get<int>();
    c.k = j.at("k").get<std::size_t>();
    c.highlight = j.at("highlight").get<float>();
    c.temperature = j.at("temperature").get<float>();
    c.normal_class = j.at("normal_class").get<int>();
    c.class_names = j.at("class_names").get<std::vector<std::string>>();
    c.threads = j.at("threads").get<int>();
    c.validate();
    return c;
  } catch (const json::exception& e) {
    raise(ErrorCode::Format,
          std::string("config: missing or mistyped field: ") + e.what());
  }
}

}  // namespace icbir
