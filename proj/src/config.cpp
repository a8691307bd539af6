#include "bcsnet/config.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <vector>

#include "bcsnet/errors.hpp"

namespace bcsnet {

void TrainConfig::validate() const {
  if (image_size <= 0 || image_size % 16 != 0) {
    throw ValidationError("image_size must be a positive multiple of 16, got " +
                          std::to_string(image_size));
  }
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (epochs < 0) throw ValidationError("epochs must be >= 0");
  if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ValidationError("adam betas must lie in [0, 1)");
  }
  for (std::int64_t c : encoder_channels) {
    if (c < 1) throw ValidationError("encoder_channels must be positive");
  }
  if (blocks_per_stage < 1) throw ValidationError("blocks_per_stage must be >= 1");
  for (std::int64_t c : decoder_channels) {
    if (c < 0) throw ValidationError("decoder_channels must be non-negative (0 mirrors encoder)");
  }
  if (save_interval < 0) throw ValidationError("save_interval must be >= 0");
  if (data.empty()) throw ValidationError("data must name a dataset root or synthetic:<n>");
}

std::array<std::int64_t, 3> TrainConfig::resolved_decoder_channels() const {
  return {decoder_channels[0] > 0 ? decoder_channels[0] : encoder_channels[3],
          decoder_channels[1] > 0 ? decoder_channels[1] : encoder_channels[2],
          decoder_channels[2] > 0 ? decoder_channels[2] : encoder_channels[1]};
}

namespace {

struct Value {
  std::string raw;
  int line;
};

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

[[noreturn]] void fail(const std::string& key, int line, const std::string& why) {
  throw ValidationError("config line " + std::to_string(line) + ": key '" + key + "' " + why);
}

std::int64_t parse_int(const std::string& key, const Value& v) {
  std::int64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.raw.data(), v.raw.data() + v.raw.size(), out);
  if (ec != std::errc() || ptr != v.raw.data() + v.raw.size()) {
    fail(key, v.line, "expects an integer, got '" + v.raw + "'");
  }
  return out;
}

double parse_double(const std::string& key, const Value& v) {
  try {
    std::size_t pos = 0;
    const double out = std::stod(v.raw, &pos);
    if (pos != v.raw.size()) throw std::invalid_argument("");
    return out;
  } catch (const std::exception&) {
    fail(key, v.line, "expects a number, got '" + v.raw + "'");
  }
}

bool parse_bool(const std::string& key, const Value& v) {
  if (v.raw == "true") return true;
  if (v.raw == "false") return false;
  fail(key, v.line, "expects true or false, got '" + v.raw + "'");
}

std::string parse_string(const std::string& key, const Value& v) {
  if (v.raw.size() >= 2 && v.raw.front() == '"' && v.raw.back() == '"') {
    return v.raw.substr(1, v.raw.size() - 2);
  }
  fail(key, v.line, "expects a quoted string, got '" + v.raw + "'");
}

std::vector<std::int64_t> parse_int_array(const std::string& key, const Value& v,
                                          std::size_t expected) {
  if (v.raw.size() < 2 || v.raw.front() != '[' || v.raw.back() != ']') {
    fail(key, v.line, "expects an array like [1, 2, 3]");
  }
  std::vector<std::int64_t> out;
  std::stringstream ss(v.raw.substr(1, v.raw.size() - 2));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) fail(key, v.line, "has an empty array element");
    out.push_back(parse_int(key, Value{item, v.line}));
  }
  if (out.size() != expected) {
    fail(key, v.line,
         "expects " + std::to_string(expected) + " elements, got " + std::to_string(out.size()));
  }
  return out;
}

}  // namespace

TrainConfig parse_train_config(const std::string& text) {
  std::map<std::string, Value> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    // Strip comments outside quotes.
    bool in_quote = false;
    std::string body;
    for (char c : line) {
      if (c == '"') in_quote = !in_quote;
      if (c == '#' && !in_quote) break;
      body += c;
    }
    body = trim(body);
    if (body.empty()) continue;
    const std::size_t eq = body.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ValidationError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    if (kv.count(key)) {
      throw ValidationError("config line " + std::to_string(lineno) + ": duplicate key '" + key +
                            "'");
    }
    kv[key] = Value{value, lineno};
  }

  TrainConfig c;
  const std::map<std::string, std::function<void(const std::string&, const Value&)>> setters{
      {"image_size", [&](const std::string& k, const Value& v) { c.image_size = parse_int(k, v); }},
      {"batch_size", [&](const std::string& k, const Value& v) { c.batch_size = parse_int(k, v); }},
      {"epochs", [&](const std::string& k, const Value& v) { c.epochs = parse_int(k, v); }},
      {"learning_rate",
       [&](const std::string& k, const Value& v) { c.learning_rate = parse_double(k, v); }},
      {"adam_beta1",
       [&](const std::string& k, const Value& v) { c.adam_beta1 = parse_double(k, v); }},
      {"adam_beta2",
       [&](const std::string& k, const Value& v) { c.adam_beta2 = parse_double(k, v); }},
      {"seed",
       [&](const std::string& k, const Value& v) {
         c.seed = static_cast<std::uint64_t>(parse_int(k, v));
       }},
      {"disable_aggc",
       [&](const std::string& k, const Value& v) { c.disable_aggc = parse_bool(k, v); }},
      {"disable_sg", [&](const std::string& k, const Value& v) { c.disable_sg = parse_bool(k, v); }},
      {"encoder_channels",
       [&](const std::string& k, const Value& v) {
         const auto a = parse_int_array(k, v, 4);
         std::copy(a.begin(), a.end(), c.encoder_channels.begin());
       }},
      {"blocks_per_stage",
       [&](const std::string& k, const Value& v) { c.blocks_per_stage = parse_int(k, v); }},
      {"decoder_channels",
       [&](const std::string& k, const Value& v) {
         const auto a = parse_int_array(k, v, 3);
         std::copy(a.begin(), a.end(), c.decoder_channels.begin());
       }},
      {"data", [&](const std::string& k, const Value& v) { c.data = parse_string(k, v); }},
      {"checkpoint_out",
       [&](const std::string& k, const Value& v) { c.checkpoint_out = parse_string(k, v); }},
      {"save_interval",
       [&](const std::string& k, const Value& v) { c.save_interval = parse_int(k, v); }},
      {"curve_out", [&](const std::string& k, const Value& v) { c.curve_out = parse_string(k, v); }},
  };

  for (const auto& [key, value] : kv) {
    const auto it = setters.find(key);
    if (it == setters.end()) {
      throw ValidationError("config line " + std::to_string(value.line) + ": unknown key '" + key +
                            "'");
    }
    it->second(key, value);
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_train_config(ss.str());
}

std::string serialize_train_config(const TrainConfig& c) {
  std::ostringstream out;
  out.precision(17);
  out << "image_size = " << c.image_size << "\n";
  out << "batch_size = " << c.batch_size << "\n";
  out << "epochs = " << c.epochs << "\n";
  out << "learning_rate = " << c.learning_rate << "\n";
  out << "adam_beta1 = " << c.adam_beta1 << "\n";
  out << "adam_beta2 = " << c.adam_beta2 << "\n";
  out << "seed = " << c.seed << "\n";
  out << "disable_aggc = " << (c.disable_aggc ? "true" : "false") << "\n";
  out << "disable_sg = " << (c.disable_sg ? "true" : "false") << "\n";
  out << "encoder_channels = [" << c.encoder_channels[0] << ", " << c.encoder_channels[1] << ", "
      << c.encoder_channels[2] << ", " << c.encoder_channels[3] << "]\n";
  out << "blocks_per_stage = " << c.blocks_per_stage << "\n";
  out << "decoder_channels = [" << c.decoder_channels[0] << ", " << c.decoder_channels[1] << ", "
      << c.decoder_channels[2] << "]\n";
  out << "data = \"" << c.data << "\"\n";
  out << "checkpoint_out = \"" << c.checkpoint_out << "\"\n";
  out << "save_interval = " << c.save_interval << "\n";
  out << "curve_out = \"" << c.curve_out << "\"\n";
  return out.str();
}

}  // namespace bcsnet
