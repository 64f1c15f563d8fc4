#include <bit>
#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "loadcast/error.hpp"
#include "loadcast/forecaster.hpp"
#include "loadcast/metrics.hpp"

namespace loadcast {

using json = nlohmann::ordered_json;

namespace {

constexpr std::string_view kMagic = "LOADCAST-MODEL";

json hp_to_json(const Hyperparams& hp) {
  return json{{"history_horizon", hp.history_horizon},
              {"forecast_horizon", hp.forecast_horizon},
              {"lstm_hidden", hp.lstm_hidden},
              {"lstm_layers", hp.lstm_layers},
              {"fc_dropout", hp.fc_dropout},
              {"lstm_dropout", hp.lstm_dropout},
              {"leaky_relu_alpha", hp.leaky_relu_alpha},
              {"max_epochs", hp.max_epochs},
              {"batch_size", hp.batch_size},
              {"learning_rate", hp.learning_rate},
              {"seed", hp.seed},
              {"early_stop_patience", hp.early_stop_patience},
              {"variance_floor", hp.variance_floor},
              {"stride_hours", hp.stride_hours},
              {"decoder_weather", hp.decoder_weather},
              {"grad_clip_norm", hp.grad_clip_norm},
              {"utc_offset_hours", hp.utc_offset_hours}};
}

template <typename T>
void read_field(const json& j, const char* key, T& target) {
  if (j.contains(key)) target = j.at(key).get<T>();
}

Hyperparams hp_from_json(const json& j) {
  Hyperparams hp;
  read_field(j, "history_horizon", hp.history_horizon);
  read_field(j, "forecast_horizon", hp.forecast_horizon);
  read_field(j, "lstm_hidden", hp.lstm_hidden);
  read_field(j, "lstm_layers", hp.lstm_layers);
  read_field(j, "fc_dropout", hp.fc_dropout);
  read_field(j, "lstm_dropout", hp.lstm_dropout);
  read_field(j, "leaky_relu_alpha", hp.leaky_relu_alpha);
  read_field(j, "max_epochs", hp.max_epochs);
  read_field(j, "batch_size", hp.batch_size);
  read_field(j, "learning_rate", hp.learning_rate);
  read_field(j, "seed", hp.seed);
  read_field(j, "early_stop_patience", hp.early_stop_patience);
  read_field(j, "variance_floor", hp.variance_floor);
  read_field(j, "stride_hours", hp.stride_hours);
  read_field(j, "decoder_weather", hp.decoder_weather);
  read_field(j, "grad_clip_norm", hp.grad_clip_norm);
  read_field(j, "utc_offset_hours", hp.utc_offset_hours);
  return hp;
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
}

double get_f64(std::string_view in, std::size_t offset) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) {
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[offset + b])) << (8 * b);
  }
  return std::bit_cast<double>(bits);
}

}  // namespace

std::string hyperparams_to_json(const Hyperparams& hp) { return hp_to_json(hp).dump(2) + "\n"; }

Hyperparams hyperparams_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (!j.is_object()) fail(ErrorCode::ConfigError, "hyperparameter config must be a JSON object");
    Hyperparams hp = hp_from_json(j.contains("hyperparams") ? j.at("hyperparams") : j);
    hp.validate();
    return hp;
  } catch (const json::exception& e) {
    fail(ErrorCode::ConfigError, std::string("bad hyperparameter config: ") + e.what());
  }
}

std::string serialize_model(const TrainedModel& model) {
  json header;
  header["format"] = "loadcast-model";
  header["version"] = kModelFormatVersion;
  header["hyperparams"] = hp_to_json(model.hp);
  header["layout"] = {{"scaled", model.layout.scaled}, {"decoder_weather", model.layout.decoder_weather}};
  json scaler = json::array();
  for (std::size_t f = 0; f < model.scaler.names.size(); ++f) {
    scaler.push_back({{"name", model.scaler.names[f]},
                      {"min", model.scaler.min[f]},
                      {"max", model.scaler.max[f]},
                      {"degenerate", static_cast<bool>(model.scaler.degenerate[f])}});
  }
  header["scaler"] = scaler;
  const Provenance& p = model.provenance;
  header["provenance"] = {{"dataset_start", p.dataset_start},   {"dataset_end", p.dataset_end},
                          {"seed", p.seed},                     {"parent_id", p.parent_id},
                          {"epochs_run", p.epochs_run},         {"best_epoch", p.best_epoch},
                          {"training_samples", p.training_samples}, {"validation_samples", p.validation_samples}};
  json log = json::array();
  for (const auto& e : model.log) {
    log.push_back({{"epoch", e.epoch}, {"train_gnll", e.train_gnll}, {"validation_gnll", e.validation_gnll}});
  }
  header["training_log"] = log;
  json tensors = json::array();
  for (std::size_t k = 0; k < model.params.tensors.size(); ++k) {
    tensors.push_back({{"name", k < kParameterCount ? kParameterNames[k] : "extra"},
                       {"rows", model.params.tensors[k].rows()},
                       {"cols", model.params.tensors[k].cols()}});
  }
  header["tensors"] = tensors;
  header["weights_encoding"] = "float64-le";

  const std::string head = header.dump(1);
  std::string out;
  out += kMagic;
  out += "\nversion=" + std::to_string(kModelFormatVersion) + "\nheader_bytes=" + std::to_string(head.size()) + "\n";
  out += head;
  out += "\n";
  for (const auto& t : model.params.tensors) {
    for (double v : t.values()) put_f64(out, v);
  }
  return out;
}

TrainedModel deserialize_model(const std::string& bytes) {
  std::size_t pos = 0;
  const auto next_line = [&]() {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string::npos) fail(ErrorCode::ParseError, "truncated model file");
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  if (next_line() != kMagic) fail(ErrorCode::ParseError, "not a loadcast model file");
  const std::string version_line = next_line();
  if (version_line.rfind("version=", 0) != 0) fail(ErrorCode::ParseError, "model file lacks a version");
  const int version = std::stoi(version_line.substr(8));
  if (version > kModelFormatVersion) {
    fail(ErrorCode::VersionError, "model format version " + std::to_string(version) + " is newer than supported " +
                                      std::to_string(kModelFormatVersion));
  }
  if (version < 1) fail(ErrorCode::ParseError, "invalid model format version");
  const std::string size_line = next_line();
  if (size_line.rfind("header_bytes=", 0) != 0) fail(ErrorCode::ParseError, "model file lacks header size");
  const std::size_t head_size = std::stoull(size_line.substr(13));
  if (pos + head_size + 1 > bytes.size()) fail(ErrorCode::ParseError, "truncated model header");

  TrainedModel model;
  try {
    const json header = json::parse(bytes.substr(pos, head_size));
    pos += head_size + 1;
    model.hp = hp_from_json(header.at("hyperparams"));
    model.layout.scaled = header.at("layout").at("scaled").get<std::vector<std::string>>();
    model.layout.decoder_weather = header.at("layout").at("decoder_weather").get<std::vector<std::string>>();
    for (const auto& f : header.at("scaler")) {
      model.scaler.names.push_back(f.at("name").get<std::string>());
      model.scaler.min.push_back(f.at("min").get<double>());
      model.scaler.max.push_back(f.at("max").get<double>());
      model.scaler.degenerate.push_back(f.at("degenerate").get<bool>());
    }
    const json& p = header.at("provenance");
    model.provenance.dataset_start = p.at("dataset_start").get<std::string>();
    model.provenance.dataset_end = p.at("dataset_end").get<std::string>();
    model.provenance.seed = p.at("seed").get<std::uint64_t>();
    model.provenance.parent_id = p.at("parent_id").get<std::string>();
    model.provenance.epochs_run = p.at("epochs_run").get<int>();
    model.provenance.best_epoch = p.at("best_epoch").get<int>();
    model.provenance.training_samples = p.at("training_samples").get<std::size_t>();
    model.provenance.validation_samples = p.at("validation_samples").get<std::size_t>();
    for (const auto& e : header.at("training_log")) {
      model.log.push_back({e.at("epoch").get<int>(), e.at("train_gnll").get<double>(),
                           e.at("validation_gnll").get<double>()});
    }
    for (const auto& t : header.at("tensors")) {
      const auto rows = t.at("rows").get<std::size_t>();
      const auto cols = t.at("cols").get<std::size_t>();
      Matrix m(rows, cols);
      if (pos + m.size() * 8 > bytes.size()) fail(ErrorCode::ParseError, "truncated model weights");
      for (std::size_t i = 0; i < m.size(); ++i) m[i] = get_f64(bytes, pos + 8 * i);
      pos += m.size() * 8;
      model.params.tensors.push_back(std::move(m));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::ParseError, std::string("malformed model header: ") + e.what());
  }
  if (pos != bytes.size()) fail(ErrorCode::ParseError, "trailing bytes after model weights");
  if (model.params.tensors.size() != kParameterCount) fail(ErrorCode::ParseError, "unexpected tensor count");
  return model;
}

std::string TrainedModel::id() const {
  char buf[24];
  std::snprintf(buf, sizeof buf, "m-%016llx", static_cast<unsigned long long>(fnv1a(serialize_model(*this))));
  return buf;
}

void save_model(const TrainedModel& model, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_model(model));
}

TrainedModel load_model(const std::filesystem::path& path) { return deserialize_model(read_file(path)); }

std::string forecast_to_text(const ForecastRecord& record) {
  std::ostringstream out;
  out << "issue_time=" << format_timestamp(record.issue_time) << "\n";
  out << "model_id=" << record.model_id << "\n";
  out << "level=" << metrics::format_number(record.level) << "\n";
  out << "time,mu,sigma,lower,upper\n";
  for (const auto& s : record.steps) {
    out << format_timestamp(s.time) << ',' << metrics::format_number(s.mu) << ','
        << metrics::format_number(s.sigma) << ',' << metrics::format_number(s.lower) << ','
        << metrics::format_number(s.upper) << "\n";
  }
  return out.str();
}

ForecastRecord forecast_from_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  ForecastRecord r;
  bool table = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (!table) {
      if (line == "time,mu,sigma,lower,upper") {
        table = true;
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) fail(ErrorCode::ParseError, "bad forecast header line: " + line);
      const std::string key = line.substr(0, eq);
      const std::string value = line.substr(eq + 1);
      if (key == "issue_time") r.issue_time = parse_timestamp(value);
      else if (key == "model_id") r.model_id = value;
      else if (key == "level") r.level = std::stod(value);
      continue;
    }
    std::istringstream row(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) fail(ErrorCode::ParseError, "bad forecast row: " + line);
    r.steps.push_back({parse_timestamp(cells[0]), std::stod(cells[1]), std::stod(cells[2]), std::stod(cells[3]),
                       std::stod(cells[4])});
  }
  if (!table) fail(ErrorCode::ParseError, "forecast document lacks its step table");
  return r;
}

void persist_forecast(Store& store, const ForecastRecord& record) {
  store.put_document("forecasts", record.model_id + "_" + format_date(record.issue_time), forecast_to_text(record));
}

std::optional<ForecastRecord> load_forecast(const Store& store, const std::string& model_id, const std::string& date) {
  const auto text = store.get_document("forecasts", model_id + "_" + date);
  if (!text) return std::nullopt;
  return forecast_from_text(*text);
}

}  // namespace loadcast
