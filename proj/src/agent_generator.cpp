#include <chrono>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "httplib.h"

#include "eafd/agent.hpp"
#include "eafd/core/error.hpp"
#include "eafd/core/text.hpp"

namespace eafd::agent {

using json = nlohmann::json;

std::string render_template(std::string text, const std::map<std::string, std::string>& values) {
  for (const auto& [key, value] : values) {
    const std::string token = "{{" + key + "}}";
    std::size_t pos = 0;
    while ((pos = text.find(token, pos)) != std::string::npos) {
      text.replace(pos, token.size(), value);
      pos += value.size();
    }
  }
  return text;
}

// ---------------------------------------------------------------- spec

void GeneratorSpec::validate() const {
  if (static_cast<bool>(http) == static_cast<bool>(mock)) {
    throw_config("generator: configure exactly one of 'http' and 'mock'");
  }
  if (http) {
    if (http->endpoint.empty()) throw_config("generator: http.endpoint is required");
    if (http->model.empty()) throw_config("generator: http.model is required");
    if (http->max_output_tokens <= 0) throw_config("generator: http.max_output_tokens must be positive");
    if (http->max_attempts < 1) throw_config("generator: http.max_attempts must be >= 1");
    if (!(http->timeout_seconds > 0.0)) throw_config("generator: http.timeout_seconds must be positive");
    if (http->backoff_seconds < 0.0) throw_config("generator: http.backoff_seconds must be >= 0");
  }
  if (mock && mock->script_path.empty()) throw_config("generator: mock.script is required");
}

json GeneratorSpec::to_json() const {
  json j = json::object();
  if (http) {
    j["http"] = {{"endpoint", http->endpoint},
                 {"model", http->model},
                 {"max_output_tokens", http->max_output_tokens},
                 {"temperature", http->temperature},
                 {"timeout_seconds", http->timeout_seconds},
                 {"api_key_env", http->api_key_env},
                 {"max_attempts", http->max_attempts},
                 {"backoff_seconds", http->backoff_seconds}};
  }
  if (mock) j["mock"] = {{"script", mock->script_path}};
  return j;
}

GeneratorSpec GeneratorSpec::from_json(const json& j) {
  if (!j.is_object()) throw_config("generator: expected an object");
  GeneratorSpec s;
  for (const auto& [key, _] : j.items()) {
    if (key != "http" && key != "mock") throw_config("generator: unknown key '" + key + "'");
  }
  if (j.contains("http")) {
    const auto& h = j.at("http");
    HttpGeneratorSpec g;
    g.endpoint = h.value("endpoint", g.endpoint);
    g.model = h.value("model", g.model);
    g.max_output_tokens = h.value("max_output_tokens", g.max_output_tokens);
    g.temperature = h.value("temperature", g.temperature);
    g.timeout_seconds = h.value("timeout_seconds", g.timeout_seconds);
    g.api_key_env = h.value("api_key_env", g.api_key_env);
    g.max_attempts = h.value("max_attempts", g.max_attempts);
    g.backoff_seconds = h.value("backoff_seconds", g.backoff_seconds);
    s.http = g;
  }
  if (j.contains("mock")) s.mock = MockGeneratorSpec{j.at("mock").value("script", std::string())};
  s.validate();
  return s;
}

// ---------------------------------------------------------------- mock

MockScript MockScript::from_json(const json& j) {
  if (!j.is_object()) throw_config("mock script: expected an object");
  MockScript s;
  if (j.contains("iterations")) {
    if (!j["iterations"].is_array()) throw_config("mock script: 'iterations' must be an array");
    for (const auto& it : j["iterations"]) {
      if (!it.is_array() && !it.is_string()) {
        throw_config("mock script: each iteration is an array of candidates or a raw response string");
      }
      s.iterations.push_back(it);
    }
  }
  if (j.contains("repairs")) {
    if (!j["repairs"].is_object()) throw_config("mock script: 'repairs' must be an object");
    for (const auto& [bad, fixed] : j["repairs"].items()) {
      if (!fixed.is_string()) throw_config("mock script: repair for '" + bad + "' must be a string");
      s.repairs[bad] = fixed.get<std::string>();
    }
  }
  return s;
}

MockScript MockScript::load(const std::string& path) {
  const std::string text = read_file(path);
  try {
    return from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw_config("mock script " + path + ": " + e.what());
  }
}

std::string MockGenerator::propose(const ProposeRequest& request) {
  const auto index = static_cast<std::size_t>(request.iteration - 1);
  if (request.iteration < 1 || index >= script_.iterations.size()) return "```json\n[]\n```";
  const auto& entry = script_.iterations[index];
  if (entry.is_string()) return entry.get<std::string>();
  json out = json::array();
  std::size_t j = 0;
  for (const auto& item : entry) {
    ++j;
    if (item.is_string()) {
      out.push_back({{"name", "mock_" + std::to_string(request.iteration) + "_" + std::to_string(j)},
                     {"dsl", item},
                     {"rationale", ""}});
    } else {
      out.push_back(item);
    }
  }
  return "```json\n" + out.dump(2) + "\n```";
}

std::string MockGenerator::repair(const RepairRequest& request) {
  const auto it = script_.repairs.find(request.candidate);
  return it == script_.repairs.end() ? request.candidate : it->second;
}

// ---------------------------------------------------------------- http

namespace {

struct Endpoint {
  std::string base;  // scheme://host[:port]
  std::string path;
};

Endpoint split_endpoint(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw_config("generator: endpoint must start with http:// or https://");
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

}  // namespace

HttpGenerator::HttpGenerator(HttpGeneratorSpec spec) : spec_(std::move(spec)) {
  GeneratorSpec whole;
  whole.http = spec_;
  whole.validate();
  split_endpoint(spec_.endpoint);
}

std::string HttpGenerator::complete(const std::vector<ChatMessage>& messages) {
  const auto ep = split_endpoint(spec_.endpoint);
  json body = {{"model", spec_.model},
               {"temperature", spec_.temperature},
               {"max_tokens", spec_.max_output_tokens},
               {"messages", json::array()}};
  for (const auto& m : messages) body["messages"].push_back({{"role", m.role}, {"content", m.content}});
  httplib::Headers headers;
  if (!spec_.api_key_env.empty()) {
    const char* key = std::getenv(spec_.api_key_env.c_str());
    if (key == nullptr || *key == '\0') throw_config("generator: environment variable " + spec_.api_key_env + " is not set");
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  const auto timeout = std::chrono::milliseconds(static_cast<long long>(spec_.timeout_seconds * 1000.0));
  const std::string payload = body.dump();
  std::string last_error = "no attempt made";
  for (int attempt = 0; attempt < spec_.max_attempts; ++attempt) {
    if (attempt > 0) {
      const double wait = spec_.backoff_seconds * std::pow(2.0, attempt - 1);
      std::this_thread::sleep_for(std::chrono::milliseconds(static_cast<long long>(wait * 1000.0)));
    }
    httplib::Client client(ep.base);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    const auto res = client.Post(ep.path, headers, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "HTTP status " + std::to_string(res->status);
      if (res->status >= 400 && res->status < 500 && res->status != 408 && res->status != 429) break;
      continue;
    }
    try {
      const auto reply = json::parse(res->body);
      return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
      last_error = std::string("malformed completion body: ") + e.what();
    }
  }
  throw Error(ErrorKind::GeneratorUnreachable, "generator unreachable at " + spec_.endpoint + ": " + last_error);
}

std::string HttpGenerator::propose(const ProposeRequest& request) { return complete(request.messages); }

std::string HttpGenerator::repair(const RepairRequest& request) { return complete(request.messages); }

std::unique_ptr<Generator> make_generator(const GeneratorSpec& spec) {
  spec.validate();
  if (spec.http) return std::make_unique<HttpGenerator>(*spec.http);
  return std::make_unique<MockGenerator>(MockScript::load(spec.mock->script_path));
}

// ---------------------------------------------------------------- extraction

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

// Contents of the first ``` fenced block, without its info string.
std::optional<std::string> first_fence(const std::string& text) {
  const auto open = text.find("```");
  if (open == std::string::npos) return std::nullopt;
  const auto line_end = text.find('\n', open + 3);
  if (line_end == std::string::npos) return std::nullopt;
  const auto close = text.find("```", line_end + 1);
  if (close == std::string::npos) return std::nullopt;
  return text.substr(line_end + 1, close - line_end - 1);
}

// End (exclusive) of the bracketed span starting at `open`, honoring JSON strings.
std::optional<std::size_t> matching_bracket(const std::string& text, std::size_t open) {
  int depth = 0;
  bool in_string = false;
  for (std::size_t i = open; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (c == '\\') {
        ++i;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '[') {
      ++depth;
    } else if (c == ']') {
      if (--depth == 0) return i + 1;
    }
  }
  return std::nullopt;
}

std::optional<json> first_array(const std::string& text) {
  for (std::size_t pos = text.find('['); pos != std::string::npos; pos = text.find('[', pos + 1)) {
    const auto end = matching_bracket(text, pos);
    if (!end) continue;
    auto j = json::parse(text.substr(pos, *end - pos), nullptr, false);
    if (!j.is_discarded() && j.is_array()) return j;
  }
  return std::nullopt;
}

std::string string_field(const json& item, const char* key) {
  const auto it = item.find(key);
  return it != item.end() && it->is_string() ? it->get<std::string>() : std::string();
}

}  // namespace

Extraction extract_candidates(const std::string& response, std::size_t limit) {
  Extraction out;
  std::optional<json> array;
  std::string fence_error;
  if (const auto fence = first_fence(response)) {
    try {
      auto j = json::parse(*fence);
      if (j.is_array()) {
        array = std::move(j);
      } else {
        fence_error = "fenced block is JSON but not an array";
      }
    } catch (const json::exception& e) {
      fence_error = std::string("fenced block is not valid JSON: ") + e.what();
    }
  }
  if (!array) array = first_array(response);
  if (!array) {
    out.diagnostic = fence_error.empty() ? "no JSON array of {name, dsl, rationale} found in the response"
                                         : fence_error;
    return out;
  }
  std::size_t unusable = 0;
  for (const auto& item : *array) {
    if (out.candidates.size() >= limit) break;
    if (item.is_string()) {
      out.candidates.push_back({"", item.get<std::string>(), ""});
    } else if (item.is_object() && item.contains("dsl") && item["dsl"].is_string()) {
      out.candidates.push_back({string_field(item, "name"), item["dsl"].get<std::string>(), string_field(item, "rationale")});
    } else {
      ++unusable;
    }
  }
  if (out.candidates.empty() && unusable > 0) {
    out.diagnostic = "array items must be objects with a string 'dsl' field";
  }
  return out;
}

std::string extract_repaired_dsl(const std::string& response) {
  const std::string body = trim(first_fence(response).value_or(response));
  auto j = json::parse(body, nullptr, false);
  if (!j.is_discarded()) {
    if (j.is_array() && !j.empty()) j = j.front();
    if (j.is_string()) return j.get<std::string>();
    if (j.is_object() && j.contains("dsl") && j["dsl"].is_string()) return j["dsl"].get<std::string>();
  }
  return body;
}

}  // namespace eafd::agent
