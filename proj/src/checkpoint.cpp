#include "vib/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "vib/config.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoints are stored little-endian");

namespace vib {

namespace {

template <class T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_doubles(std::ofstream& out, const std::vector<double>& v) {
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

template <class T>
T take(std::ifstream& in, const std::string& what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw FormatError("checkpoint truncated in " + what);
  return v;
}

std::vector<double> take_doubles(std::ifstream& in, std::size_t n, const std::string& what) {
  std::vector<double> v(n);
  if (!in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double))))
    throw FormatError("checkpoint truncated in " + what);
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const auto& st = ck.state;
  const std::size_t n = st.model.num_params();
  require(st.ema.size() == n, "save_checkpoint: EMA length mismatch");
  const bool has_adam = !st.adam.m.empty();
  Json header = {{"model", to_json(ck.spec)},
                 {"objective", to_json(ck.objective)},
                 {"train", to_json(ck.train)},
                 {"num_params", n},
                 {"epochs_done", st.epochs_done},
                 {"adam_step", st.adam.step},
                 {"has_adam", has_adam}};
  const std::string text = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put_doubles(out, st.model.params());
  put_doubles(out, st.ema);
  if (has_adam) {
    put_doubles(out, st.adam.m);
    put_doubles(out, st.adam.v);
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw FormatError(path.string() + " is not a checkpoint (bad magic)");
  const auto version = take<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  const auto len = take<std::uint64_t>(in, "header length");
  if (len > (1u << 24)) throw FormatError("checkpoint header length implausible");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw FormatError("checkpoint truncated in header");
  const Json h = Json::parse(text, nullptr, false);
  if (h.is_discarded()) throw FormatError("checkpoint header is not valid JSON");

  Checkpoint ck;
  ck.spec = model_spec_from_json(h.at("model"));
  ck.objective = objective_from_json(h.at("objective"));
  ck.objective.vib.K = ck.spec.K;
  ck.objective.vib.mode = ck.spec.mode;
  ck.objective.vib.sigma_bias = ck.spec.sigma_bias;
  ck.train = train_config_from_json(h.at("train"));
  const std::size_t n = h.at("num_params").get<std::size_t>();

  Rng dummy(0);
  ck.state.model = Model::init(ck.spec, dummy);
  if (ck.state.model.num_params() != n) throw FormatError("checkpoint parameter count does not match its spec");
  ck.state.model.set_params(take_doubles(in, n, "params"));
  ck.state.ema = take_doubles(in, n, "ema");
  if (h.at("has_adam").get<bool>()) {
    ck.state.adam.m = take_doubles(in, n, "adam m");
    ck.state.adam.v = take_doubles(in, n, "adam v");
  }
  ck.state.adam.step = h.at("adam_step").get<std::uint64_t>();
  ck.state.epochs_done = h.at("epochs_done").get<std::size_t>();
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint has trailing bytes");
  return ck;
}

}  // namespace vib
