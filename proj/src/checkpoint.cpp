#include "m2p/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "m2p/errors.hpp"

namespace m2p {

namespace {

constexpr char kMagic[] = "M2PCKPT\n";
constexpr std::size_t kMagicLen = 8;

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_doubles(std::string& out, const std::vector<double>& v) {
  const auto* p = reinterpret_cast<const char*>(v.data());
  out.append(p, p + v.size() * sizeof(double));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const auto layout = param_layout(ck.params.config);
  nlohmann::json blocks = nlohmann::json::array();
  for (const ParamBlock& b : layout) blocks.push_back({{"name", b.name}, {"shape", b.shape}});
  const ModelConfig& mc = ck.params.config;
  nlohmann::json header = {
      {"format", "m2p-checkpoint-1"},
      {"model",
       {{"patch", mc.patch},
        {"channels", mc.channels},
        {"refiner_hidden", mc.refiner_hidden},
        {"feature_offset", mc.feature_offset}}},
      {"blocks", blocks},
      {"seed", ck.seed},
      {"step", ck.step},
      {"config", ck.config},
      {"has_optimizer", ck.optim.has_value()},
  };
  if (ck.optim) header["optimizer_step"] = ck.optim->step;
  const std::string text = header.dump();

  std::string out(kMagic, kMagicLen);
  put_u64(out, text.size());
  out += text;
  put_doubles(out, ck.params.values);
  if (ck.optim) {
    put_doubles(out, ck.optim->m);
    put_doubles(out, ck.optim->v);
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write checkpoint " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open checkpoint " + path.string());
  const std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (data.size() < kMagicLen + 8 || data.compare(0, kMagicLen, kMagic) != 0) {
    throw ParseError("not an m2p checkpoint", 0);
  }
  std::uint64_t hlen = 0;
  for (int i = 0; i < 8; ++i) {
    hlen |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[kMagicLen + i])) << (8 * i);
  }
  std::size_t pos = kMagicLen + 8;
  if (hlen > data.size() - pos) throw ParseError("header length exceeds file size", kMagicLen);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(data.substr(pos, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad checkpoint header: ") + e.what(), pos);
  }
  pos += hlen;

  Checkpoint ck;
  try {
    const auto& m = header.at("model");
    ck.params.config.patch = m.at("patch").get<int>();
    ck.params.config.channels = m.at("channels").get<int>();
    ck.params.config.refiner_hidden = m.at("refiner_hidden").get<int>();
    ck.params.config.feature_offset = m.at("feature_offset").get<double>();
    ck.seed = header.at("seed").get<std::uint64_t>();
    ck.step = header.at("step").get<std::uint64_t>();
    ck.config = header.value("config", nlohmann::json::object());

    const auto layout = param_layout(ck.params.config);
    const auto& blocks = header.at("blocks");
    if (blocks.size() != layout.size()) throw DimMismatch("checkpoint block count does not match model");
    for (std::size_t i = 0; i < layout.size(); ++i) {
      if (blocks[i].at("name").get<std::string>() != layout[i].name ||
          blocks[i].at("shape").get<std::vector<int>>() != layout[i].shape) {
        throw DimMismatch("checkpoint block " + layout[i].name + " has an unexpected shape");
      }
    }
    const std::size_t n = layout.back().offset + layout.back().size;
    const bool has_opt = header.at("has_optimizer").get<bool>();
    const std::size_t expected = n * sizeof(double) * (has_opt ? 3 : 1);
    if (data.size() - pos != expected) {
      throw DimMismatch("checkpoint payload is " + std::to_string(data.size() - pos) + " bytes, expected " +
                        std::to_string(expected));
    }
    auto take = [&](std::vector<double>& v) {
      v.resize(n);
      std::memcpy(v.data(), data.data() + pos, n * sizeof(double));
      pos += n * sizeof(double);
    };
    take(ck.params.values);
    if (has_opt) {
      OptimState st;
      take(st.m);
      take(st.v);
      st.step = header.at("optimizer_step").get<std::uint64_t>();
      ck.optim = std::move(st);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad checkpoint header: ") + e.what(), kMagicLen + 8);
  }
  return ck;
}

}  // namespace m2p
