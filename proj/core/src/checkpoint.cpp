#include "inflare/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <json.hpp>
#include <string>

#include "inflare/error.hpp"

namespace inflare::checkpoint {

namespace {

using nlohmann::json;

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(std::span<const std::uint8_t> in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

void put_f64(std::vector<std::uint8_t>& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

json encode_g(const Vector& g) {
  json runs = json::array();
  for (std::size_t i = 0; i < g.size();) {
    std::size_t j = i;
    while (j < g.size() && g[j] == g[i]) ++j;
    runs.push_back(json::array({g[i], j - i}));
    i = j;
  }
  return runs;
}

Vector decode_g(const json& runs) {
  Vector g;
  for (const auto& run : runs) {
    const double value = run.at(0).get<double>();
    const auto count = run.at(1).get<std::size_t>();
    g.insert(g.end(), count, value);
  }
  return g;
}

json header_for(const denoiser::TrainedDenoiser& m) {
  json layout = json::array();
  for (const auto& e : m.net.layout())
    layout.push_back({{"name", e.name}, {"offset", e.offset}, {"rows", e.rows}, {"cols", e.cols}});
  const auto& s = m.schedule;
  const auto& f = m.frame;
  const auto& c = m.config;
  return json{
      {"format", "IFLOW1"},
      {"layout", layout},
      {"widths", m.net.widths()},
      {"embed_dim", m.net.embed_dim()},
      {"parameter_count", m.net.parameter_count()},
      {"schedule",
       {{"kind", std::string(schedule::to_string(s.kind()))},
        {"d", s.dim()},
        {"rho", s.rho()},
        {"g", encode_g(s.g())},
        {"t_max", s.t_max()}}},
      {"eigenframe",
       {{"mean", f.mean},
        {"basis", f.basis.storage()},
        {"sigma0_sq", f.sigma0_sq},
        {"floored", f.floored}}},
      {"config",
       {{"learning_rate", c.learning_rate},
        {"batch_size", c.batch_size},
        {"steps", c.steps},
        {"ema_half_life", c.ema_half_life},
        {"t_min", c.t_min},
        {"noise_levels", c.noise_levels},
        {"seed", c.seed},
        {"log_every", c.log_every},
        {"adam_beta1", c.adam_beta1},
        {"adam_beta2", c.adam_beta2},
        {"adam_eps", c.adam_eps}}},
      {"metadata",
       {{"loss_curve", m.meta.loss_curve},
        {"steps_done", m.meta.steps_done},
        {"seconds", m.meta.seconds}}},
  };
}

}  // namespace

std::vector<std::uint8_t> encode(const denoiser::TrainedDenoiser& model) {
  const std::size_t p = model.net.parameter_count();
  detail::require(model.params.size() == p && model.ema.size() == p,
                  "checkpoint: parameter/EMA length does not match the layout");
  const std::string header = header_for(model).dump();
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u64(out, header.size());
  out.insert(out.end(), header.begin(), header.end());
  out.reserve(out.size() + 16 * p);
  for (double v : model.params) put_f64(out, v);
  for (double v : model.ema) put_f64(out, v);
  return out;
}

denoiser::TrainedDenoiser decode(std::span<const std::uint8_t> bytes) {
  constexpr std::size_t kMagicLen = sizeof(kMagic);
  if (bytes.size() < kMagicLen + 8 || std::memcmp(bytes.data(), kMagic, kMagicLen) != 0)
    throw FormatError("checkpoint: missing IFLOW1 magic");
  const std::uint64_t header_len = get_u64(bytes.subspan(kMagicLen, 8));
  const std::size_t body = kMagicLen + 8;
  if (header_len > bytes.size() - body) throw FormatError("checkpoint: truncated header");
  json h;
  try {
    h = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(body),
                    bytes.begin() + static_cast<std::ptrdiff_t>(body + header_len));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
  }

  try {
    auto widths = h.at("widths").get<std::vector<std::size_t>>();
    const auto embed = h.at("embed_dim").get<std::size_t>();
    denoiser::DenoiserNet net = denoiser::DenoiserNet::from_widths(widths, embed);
    const auto p = h.at("parameter_count").get<std::size_t>();
    if (p != net.parameter_count()) throw FormatError("checkpoint: parameter count disagrees with widths");
    const auto& layout = h.at("layout");
    if (layout.size() != net.layout().size()) throw FormatError("checkpoint: layout size mismatch");
    for (std::size_t i = 0; i < layout.size(); ++i) {
      const auto& e = net.layout()[i];
      if (layout[i].at("name").get<std::string>() != e.name ||
          layout[i].at("offset").get<std::size_t>() != e.offset ||
          layout[i].at("rows").get<std::size_t>() != e.rows ||
          layout[i].at("cols").get<std::size_t>() != e.cols)
        throw FormatError("checkpoint: layout entry " + std::to_string(i) + " disagrees with widths");
    }

    const auto& hs = h.at("schedule");
    schedule::InflationSchedule sched(
        schedule::parse_schedule_kind(hs.at("kind").get<std::string>()), hs.at("rho").get<double>(),
        decode_g(hs.at("g")), hs.at("t_max").get<double>());
    if (sched.dim() != hs.at("d").get<std::size_t>()) throw FormatError("checkpoint: schedule d mismatch");

    const auto& hf = h.at("eigenframe");
    datasets::EigenFrame frame;
    frame.mean = hf.at("mean").get<Vector>();
    const std::size_t d = frame.mean.size();
    frame.basis = Matrix(d, d, hf.at("basis").get<Vector>());
    frame.sigma0_sq = hf.at("sigma0_sq").get<Vector>();
    frame.floored = hf.at("floored").get<std::size_t>();

    const auto& hc = h.at("config");
    denoiser::TrainConfig config;
    config.learning_rate = hc.at("learning_rate").get<double>();
    config.batch_size = hc.at("batch_size").get<std::size_t>();
    config.steps = hc.at("steps").get<std::size_t>();
    config.ema_half_life = hc.at("ema_half_life").get<double>();
    config.t_min = hc.at("t_min").get<double>();
    config.noise_levels = hc.at("noise_levels").get<double>();
    config.seed = hc.at("seed").get<std::uint64_t>();
    config.log_every = hc.at("log_every").get<std::size_t>();
    config.adam_beta1 = hc.at("adam_beta1").get<double>();
    config.adam_beta2 = hc.at("adam_beta2").get<double>();
    config.adam_eps = hc.at("adam_eps").get<double>();

    const auto& hm = h.at("metadata");
    denoiser::TrainingMetadata meta{hm.at("loss_curve").get<Vector>(),
                                    hm.at("steps_done").get<std::size_t>(),
                                    hm.at("seconds").get<double>()};

    const std::size_t params_begin = body + header_len;
    if (bytes.size() - params_begin != 16 * p)
      throw FormatError("checkpoint: expected " + std::to_string(16 * p) + " parameter bytes, found " +
                        std::to_string(bytes.size() - params_begin));
    Vector params(p);
    Vector ema(p);
    for (std::size_t i = 0; i < p; ++i) {
      params[i] = std::bit_cast<double>(get_u64(bytes.subspan(params_begin + 8 * i, 8)));
      ema[i] = std::bit_cast<double>(get_u64(bytes.subspan(params_begin + 8 * (p + i), 8)));
    }
    if (net.data_dim() != sched.dim() || frame.basis.rows() != d || frame.sigma0_sq.size() != d ||
        d != sched.dim())
      throw FormatError("checkpoint: dimension mismatch between net, schedule and eigenframe");
    return {std::move(net), std::move(params), std::move(ema), std::move(sched), std::move(frame),
            config, std::move(meta)};
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: bad header field: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("checkpoint: invalid header value: ") + e.what());
  }
}

void save(const std::filesystem::path& path, const denoiser::TrainedDenoiser& model) {
  const auto bytes = encode(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

denoiser::TrainedDenoiser load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return decode(bytes);
}

}  // namespace inflare::checkpoint
